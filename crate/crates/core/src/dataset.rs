//! Feature/offset pairs from sparse-dense cloud pairs, and the merged
//! training corpus.
//!
//! Corpus file layout (all integers little-endian):
//!
//! ```text
//! "PCSR1"  u32 manifest_len  manifest (UTF-8 text)  records (64 bytes each)
//! record := x y z d_k dx dy dz (f64)  file_id (u32)  tag_id (u16)  rank (u8)  pad (u8)
//! ```
//!
//! The manifest lists tag and file names with their record counts, so any
//! record is reachable by offset without scanning.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{Point3, PointCloud};
use crate::kdtree::KdTree;

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_M: usize = 2;
pub const RECORD_BYTES: usize = 64;
pub const CORPUS_FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 5] = b"PCSR1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cloud too small: need at least {needed} points, got {got}")]
    CloudTooSmall { needed: usize, got: usize },
    #[error("sample of {requested} requested but only {available} records are eligible")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("corrupt corpus: {0}")]
    CorruptCorpus(String),
    #[error("rank {0} out of range 1..=255")]
    InvalidRank(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `[x, y, z, d̄_K, rank]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub mean_neighbor_dist: f64,
    pub rank: u8,
}

impl FeatureVector {
    pub fn new(p: Point3, mean_neighbor_dist: f64, rank: u8) -> Self {
        Self {
            x: p[0],
            y: p[1],
            z: p[2],
            mean_neighbor_dist,
            rank,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.mean_neighbor_dist, self.rank as f64]
    }

    pub fn position(&self) -> Point3 {
        [self.x, self.y, self.z]
    }
}

/// Offset in meters from a sparse point to a dense neighbor.
pub type OffsetLabel = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub feature: FeatureVector,
    pub label: OffsetLabel,
    pub domain_tag: String,
    pub source_file: String,
}

/// Mean distance from `p` to its `k` nearest neighbors in the tree. When
/// `p` is itself in the tree its zero-distance self match is excluded.
pub fn mean_neighbor_distance(tree: &KdTree, p: &Point3, k: usize) -> Result<f64, DatasetError> {
    let mut buf = Vec::with_capacity(k + 1);
    mean_neighbor_distance_with(tree, p, k, &mut buf)
}

fn mean_neighbor_distance_with(
    tree: &KdTree,
    p: &Point3,
    k: usize,
    buf: &mut Vec<(f64, u32)>,
) -> Result<f64, DatasetError> {
    if tree.len() < k + 1 {
        return Err(DatasetError::CloudTooSmall {
            needed: k + 1,
            got: tree.len(),
        });
    }
    tree.knn_into(p, k + 1, buf)
        .expect("k + 1 is positive and within tree size");
    // Any zero-distance hit stands in for self; the sum is the same.
    let skip = if buf[0].0 == 0.0 { 1 } else { 0 };
    let sum: f64 = buf[skip..skip + k].iter().map(|(d2, _)| d2.sqrt()).sum();
    Ok(sum / k as f64)
}

/// d̄_K for every point of `cloud`, in point order.
pub fn mean_neighbor_distances(cloud: &PointCloud, tree: &KdTree, k: usize) -> Result<Vec<f64>, DatasetError> {
    if tree.len() < k + 1 {
        return Err(DatasetError::CloudTooSmall {
            needed: k + 1,
            got: tree.len(),
        });
    }
    cloud
        .points()
        .par_iter()
        .map_init(
            || Vec::with_capacity(k + 1),
            |buf, p| mean_neighbor_distance_with(tree, p, k, buf),
        )
        .collect()
}

/// Emits `m` records per sparse point: rank `r` is the `r`-th nearest dense
/// point, labelled with its displacement from the sparse point.
pub fn extract_pairs(
    sparse: &PointCloud,
    dense: &PointCloud,
    k: usize,
    m: usize,
    tag: &str,
    file: &str,
) -> Result<Vec<TrainingRecord>, DatasetError> {
    if m == 0 || m > 255 {
        return Err(DatasetError::InvalidRank(m));
    }
    if dense.len() < m {
        return Err(DatasetError::CloudTooSmall {
            needed: m,
            got: dense.len(),
        });
    }
    if sparse.len() < k + 1 {
        return Err(DatasetError::CloudTooSmall {
            needed: k + 1,
            got: sparse.len(),
        });
    }
    let sparse_tree = KdTree::build(sparse).expect("non-empty");
    let dense_tree = KdTree::build(dense).expect("non-empty");
    let dense_pts = dense.points();
    let d_bar = mean_neighbor_distances(sparse, &sparse_tree, k)?;

    let nested: Vec<Vec<TrainingRecord>> = sparse
        .points()
        .par_iter()
        .zip(d_bar.par_iter())
        .map_init(
            || Vec::with_capacity(m),
            |buf, (p, &d)| {
                dense_tree.knn_into(p, m, buf).expect("m within dense size");
                buf.iter()
                    .enumerate()
                    .map(|(r, &(_, idx))| {
                        let q = dense_pts[idx as usize];
                        TrainingRecord {
                            feature: FeatureVector::new(*p, d, (r + 1) as u8),
                            label: [q[0] - p[0], q[1] - p[1], q[2] - p[2]],
                            domain_tag: tag.to_string(),
                            source_file: file.to_string(),
                        }
                    })
                    .collect()
            },
        )
        .collect();
    Ok(nested.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PackedRecord {
    feature: [f64; 4],
    label: [f64; 3],
    file_id: u32,
    tag_id: u16,
    rank: u8,
}

/// Append-only record pool with interned tag and file names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    tags: Vec<String>,
    files: Vec<String>,
    tag_counts: Vec<u64>,
    file_counts: Vec<u64>,
    records: Vec<PackedRecord>,
}

fn intern(names: &mut Vec<String>, counts: &mut Vec<u64>, name: &str) -> usize {
    match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            counts.push(0);
            names.len() - 1
        }
    }
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// `(tag, record count)` in first-seen order.
    pub fn tag_counts(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tags
            .iter()
            .map(String::as_str)
            .zip(self.tag_counts.iter().copied())
    }

    pub fn file_counts(&self) -> impl Iterator<Item = (&str, u64)> {
        self.files
            .iter()
            .map(String::as_str)
            .zip(self.file_counts.iter().copied())
    }

    pub fn append(&mut self, records: impl IntoIterator<Item = TrainingRecord>) {
        for r in records {
            let tag_id = intern(&mut self.tags, &mut self.tag_counts, &r.domain_tag);
            let file_id = intern(&mut self.files, &mut self.file_counts, &r.source_file);
            self.tag_counts[tag_id] += 1;
            self.file_counts[file_id] += 1;
            let f = &r.feature;
            self.records.push(PackedRecord {
                feature: [f.x, f.y, f.z, f.mean_neighbor_dist],
                label: r.label,
                file_id: file_id as u32,
                tag_id: tag_id as u16,
                rank: f.rank,
            });
        }
    }

    pub fn get(&self, i: usize) -> Option<TrainingRecord> {
        let p = self.records.get(i)?;
        Some(TrainingRecord {
            feature: FeatureVector {
                x: p.feature[0],
                y: p.feature[1],
                z: p.feature[2],
                mean_neighbor_dist: p.feature[3],
                rank: p.rank,
            },
            label: p.label,
            domain_tag: self.tags[p.tag_id as usize].clone(),
            source_file: self.files[p.file_id as usize].clone(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = TrainingRecord> + '_ {
        (0..self.len()).map(|i| self.get(i).unwrap())
    }

    /// Indices of records whose tag is in `tags`; `None` selects all.
    pub fn indices_with_tags(&self, tags: Option<&[String]>) -> Vec<usize> {
        match tags {
            None => (0..self.len()).collect(),
            Some(wanted) => {
                let ids: Vec<u16> = self
                    .tags
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| wanted.contains(t))
                    .map(|(i, _)| i as u16)
                    .collect();
                (0..self.len())
                    .filter(|&i| ids.contains(&self.records[i].tag_id))
                    .collect()
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let _ = writeln!(manifest, "version {CORPUS_FORMAT_VERSION}");
        let _ = writeln!(manifest, "record_bytes {RECORD_BYTES}");
        let _ = writeln!(manifest, "records {}", self.records.len());
        for (i, (t, c)) in self.tag_counts().enumerate() {
            let _ = writeln!(manifest, "tag {i} {c} {t}");
        }
        for (i, (f, c)) in self.file_counts().enumerate() {
            let _ = writeln!(manifest, "file {i} {c} {f}");
        }
        let mut out = Vec::with_capacity(9 + manifest.len() + self.records.len() * RECORD_BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for r in &self.records {
            for v in r.feature.iter().chain(&r.label) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&r.file_id.to_le_bytes());
            out.extend_from_slice(&r.tag_id.to_le_bytes());
            out.push(r.rank);
            out.push(0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let bad = |m: &str| DatasetError::CorruptCorpus(m.to_string());
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("bad magic"))?;
        let len_bytes = rest.get(..4).ok_or_else(|| bad("truncated manifest length"))?;
        let mlen = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let manifest = rest
            .get(4..4 + mlen)
            .and_then(|m| std::str::from_utf8(m).ok())
            .ok_or_else(|| bad("truncated or non-UTF-8 manifest"))?;
        let body = &rest[4 + mlen..];

        let mut corpus = Corpus::new();
        let mut declared = None;
        for line in manifest.lines() {
            let mut parts = line.splitn(4, ' ');
            match parts.next() {
                Some("version") if parts.next().and_then(|v| v.parse().ok()) == Some(CORPUS_FORMAT_VERSION) => {}
                Some("record_bytes") if parts.next() == Some("64") => {}
                Some("records") => declared = parts.next().and_then(|n| n.parse::<usize>().ok()),
                Some(kind @ ("tag" | "file")) => {
                    let id: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(line))?;
                    let count: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(line))?;
                    let name = parts.next().ok_or_else(|| bad(line))?.to_string();
                    let (names, counts) = if kind == "tag" {
                        (&mut corpus.tags, &mut corpus.tag_counts)
                    } else {
                        (&mut corpus.files, &mut corpus.file_counts)
                    };
                    if id != names.len() {
                        return Err(bad("manifest ids out of order"));
                    }
                    names.push(name);
                    counts.push(count);
                }
                _ => return Err(bad(&format!("unexpected manifest line `{line}`"))),
            }
        }
        let declared = declared.ok_or_else(|| bad("missing record count"))?;
        if body.len() != declared * RECORD_BYTES {
            return Err(bad(&format!(
                "body holds {} bytes, manifest declares {declared} records",
                body.len()
            )));
        }

        let mut tag_seen = vec![0u64; corpus.tags.len()];
        let mut file_seen = vec![0u64; corpus.files.len()];
        corpus.records = body
            .chunks_exact(RECORD_BYTES)
            .map(|c| {
                let f = |i: usize| f64::from_le_bytes(c[i * 8..i * 8 + 8].try_into().unwrap());
                let rec = PackedRecord {
                    feature: [f(0), f(1), f(2), f(3)],
                    label: [f(4), f(5), f(6)],
                    file_id: u32::from_le_bytes(c[56..60].try_into().unwrap()),
                    tag_id: u16::from_le_bytes(c[60..62].try_into().unwrap()),
                    rank: c[62],
                };
                *tag_seen
                    .get_mut(rec.tag_id as usize)
                    .ok_or_else(|| bad("record references unknown tag"))? += 1;
                *file_seen
                    .get_mut(rec.file_id as usize)
                    .ok_or_else(|| bad("record references unknown file"))? += 1;
                Ok(rec)
            })
            .collect::<Result<_, DatasetError>>()?;
        if tag_seen != corpus.tag_counts || file_seen != corpus.file_counts {
            return Err(bad("manifest counts disagree with records"));
        }
        Ok(corpus)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized corpus.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_bytes()).into()
    }
}

pub fn append_corpus(mut corpus: Corpus, records: Vec<TrainingRecord>) -> Corpus {
    corpus.append(records);
    corpus
}

/// Uniform sample of `n` records without replacement, deterministic per seed.
pub fn sample_corpus(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<TrainingRecord>, DatasetError> {
    if n > corpus.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, corpus.len(), n)
        .into_iter()
        .map(|i| corpus.get(i).unwrap())
        .collect())
}

/// Draws disjoint train and test samples. Train records come from
/// `train_tags`, test records from `test_tags` minus the train draw; `None`
/// means every tag. Both draws are uniform and deterministic per seed.
pub fn train_test_split(
    corpus: &Corpus,
    n_train: usize,
    n_test: usize,
    train_tags: Option<&[String]>,
    test_tags: Option<&[String]>,
    seed: u64,
) -> Result<(Vec<TrainingRecord>, Vec<TrainingRecord>), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_pool = corpus.indices_with_tags(train_tags);
    if n_train > train_pool.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: n_train,
            available: train_pool.len(),
        });
    }
    let mut taken = vec![false; corpus.len()];
    let train: Vec<usize> = index::sample(&mut rng, train_pool.len(), n_train)
        .into_iter()
        .map(|i| train_pool[i])
        .collect();
    for &i in &train {
        taken[i] = true;
    }
    let test_pool: Vec<usize> = corpus
        .indices_with_tags(test_tags)
        .into_iter()
        .filter(|&i| !taken[i])
        .collect();
    if n_test > test_pool.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: n_test,
            available: test_pool.len(),
        });
    }
    let test = index::sample(&mut rng, test_pool.len(), n_test)
        .into_iter()
        .map(|i| test_pool[i]);
    let fetch = |i: usize| corpus.get(i).unwrap();
    Ok((train.into_iter().map(fetch).collect(), test.map(fetch).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::dist;
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize, s: f64) -> Vec<Point3> {
        let mut v = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                v.push([i as f64 * s, j as f64 * s, 0.0]);
            }
        }
        v
    }

    #[test]
    fn grid_center_four_neighbors() {
        let pts = grid(5, 5, 0.25);
        let tree = KdTree::from_points(&pts, 16).unwrap();
        let d = mean_neighbor_distance(&tree, &[0.5, 0.5, 0.0], 4).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn coincident_points_and_exhaustive_neighborhood() {
        let c = PointCloud::new(vec![[2.0, 2.0, 2.0]; 20]).unwrap();
        let tree = KdTree::build(&c).unwrap();
        assert_eq!(mean_neighbor_distance(&tree, &[2.0, 2.0, 2.0], 16).unwrap(), 0.0);

        let pts: Vec<Point3> = (0..17).map(|i| [i as f64, 0.0, 0.0]).collect();
        let tree = KdTree::from_points(&pts, 16).unwrap();
        let d = mean_neighbor_distance(&tree, &pts[0], 16).unwrap();
        assert!((d - (1..=16).sum::<usize>() as f64 / 16.0).abs() < 1e-12);
        assert!(matches!(
            mean_neighbor_distance(&KdTree::from_points(&pts[..16], 16).unwrap(), &pts[0], 16),
            Err(DatasetError::CloudTooSmall { needed: 17, got: 16 })
        ));
    }

    #[test]
    fn origin_records_hand_checked() {
        let mut sparse = vec![[0.0, 0.0, 0.0]];
        sparse.extend((0..16).map(|i| [10.0 + i as f64, 10.0, 0.0]));
        let dense = vec![[5.0, 5.0, 5.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let recs = extract_pairs(
            &PointCloud::new(sparse).unwrap(),
            &PointCloud::new(dense).unwrap(),
            16,
            2,
            "Desk",
            "a.ply",
        )
        .unwrap();
        assert_eq!(recs.len(), 34);
        assert_eq!(recs[0].label, [0.0, 0.0, 0.0]);
        assert_eq!(recs[0].feature.rank, 1);
        assert_eq!(recs[1].label, [1.0, 0.0, 0.0]);
        assert_eq!(recs[1].feature.rank, 2);
    }

    #[test]
    fn subset_rank_one_is_zero_offset() {
        let dense = PointCloud::new(grid(20, 10, 0.1)).unwrap();
        let sparse = crate::sampling::downsample_stride(&dense).unwrap();
        let recs = extract_pairs(&sparse, &dense, 16, 2, "T", "f").unwrap();
        assert_eq!(recs.len(), 200);
        for r in recs.iter().filter(|r| r.feature.rank == 1) {
            assert_eq!(r.label, [0.0; 3]);
        }
    }

    fn sample_records(n: usize) -> Vec<TrainingRecord> {
        (0..n)
            .map(|i| TrainingRecord {
                feature: FeatureVector::new([i as f64, 0.5, -1.0], 0.01 * i as f64, (i % 2 + 1) as u8),
                label: [0.001 * i as f64, 0.0, -0.5],
                domain_tag: if i % 3 == 0 { "Office" } else { "LivingRoom" }.into(),
                source_file: format!("scene-{}.ply", i % 4),
            })
            .collect()
    }

    #[test]
    fn corpus_roundtrip_and_manifest() {
        let corpus = append_corpus(Corpus::new(), sample_records(30));
        let back = Corpus::from_bytes(&corpus.to_bytes()).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.iter().collect::<Vec<_>>(), sample_records(30));
        assert_eq!(
            back.tag_counts().collect::<Vec<_>>(),
            vec![("Office", 10), ("LivingRoom", 20)]
        );
        let bytes = corpus.to_bytes();
        assert!(Corpus::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Corpus::from_bytes(&wrong).is_err());
    }

    #[test]
    fn sampling_laws() {
        let corpus = append_corpus(Corpus::new(), sample_records(10));
        let mut all = sample_corpus(&corpus, 10, 4).unwrap();
        all.sort_by(|a, b| a.feature.x.total_cmp(&b.feature.x));
        assert_eq!(all, sample_records(10));
        assert_eq!(
            sample_corpus(&corpus, 6, 9).unwrap(),
            sample_corpus(&corpus, 6, 9).unwrap()
        );
        assert!(matches!(
            sample_corpus(&corpus, 11, 0),
            Err(DatasetError::SampleTooLarge {
                requested: 11,
                available: 10
            })
        ));
    }

    #[test]
    fn split_is_disjoint_and_tag_filtered() {
        let corpus = append_corpus(Corpus::new(), sample_records(300));
        let (train, test) = train_test_split(&corpus, 150, 60, None, None, 11).unwrap();
        let key = |r: &TrainingRecord| r.feature.x as i64;
        let train_keys: std::collections::HashSet<i64> = train.iter().map(key).collect();
        assert_eq!(train_keys.len(), 150);
        assert!(test.iter().all(|r| !train_keys.contains(&key(r))));

        let office = vec!["Office".to_string()];
        let living = vec!["LivingRoom".to_string()];
        let (a, b) = train_test_split(&corpus, 50, 50, Some(&living), Some(&office), 1).unwrap();
        assert!(a.iter().all(|r| r.domain_tag == "LivingRoom"));
        assert!(b.iter().all(|r| r.domain_tag == "Office"));
    }

    fn brute_two(dense: &[Point3], p: &Point3) -> [usize; 2] {
        let mut idx: Vec<usize> = (0..dense.len()).collect();
        idx.sort_by(|&a, &b| dist(p, &dense[a]).total_cmp(&dist(p, &dense[b])).then(a.cmp(&b)));
        [idx[0], idx[1]]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn labels_match_brute_force(
            dense in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 40..400),
        ) {
            let dense_cloud = PointCloud::new(dense.clone()).unwrap();
            let sparse = crate::sampling::downsample_stride(&dense_cloud).unwrap();
            let recs = extract_pairs(&sparse, &dense_cloud, 16, 2, "T", "f").unwrap();
            prop_assert_eq!(recs.len(), 2 * sparse.len());
            for (i, p) in sparse.points().iter().enumerate() {
                let want = brute_two(&dense, p);
                for r in 0..2 {
                    let rec = &recs[2 * i + r];
                    prop_assert_eq!(rec.feature.position(), *p);
                    let q = dense[want[r]];
                    prop_assert_eq!(rec.label, [q[0] - p[0], q[1] - p[1], q[2] - p[2]]);
                    prop_assert!(rec.feature.mean_neighbor_dist >= 0.0);
                }
            }
        }
    }
}
