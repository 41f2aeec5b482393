//! Model file: `PCFM1`, format version byte, config, training manifest,
//! trees as pre-order node arrays, then a SHA-256 of all preceding bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ForestConfig, ForestError, ForestModel, Node, RegressionTree, TrainingManifest};

pub const MODEL_FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 5] = b"PCFM1";
const TAG_SPLIT: u8 = 0;
const TAG_LEAF: u8 = 1;

impl ForestModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = MAGIC.to_vec();
        out.push(MODEL_FORMAT_VERSION);
        for v in [c.n_trees as u64, c.max_depth as u64, c.min_leaf as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&c.bootstrap_fraction.to_le_bytes());
        out.push(c.bootstrap as u8);
        out.extend_from_slice(&(c.features_per_split as u64).to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());

        out.extend_from_slice(&self.manifest.corpus_sha256);
        out.extend_from_slice(&self.manifest.sample_seed.to_le_bytes());
        out.extend_from_slice(&self.manifest.n_records.to_le_bytes());

        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for t in &self.trees {
            out.extend_from_slice(&(t.nodes().len() as u32).to_le_bytes());
            for n in t.nodes() {
                match *n {
                    Node::Split {
                        feature,
                        threshold,
                        right,
                    } => {
                        out.push(TAG_SPLIT);
                        out.push(feature);
                        out.extend_from_slice(&threshold.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                    }
                    Node::Leaf { value, count } => {
                        out.push(TAG_LEAF);
                        for v in value {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                        out.extend_from_slice(&count.to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ForestError> {
        let corrupt = |m: &str| ForestError::CorruptModel(m.to_string());
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        match bytes.get(MAGIC.len()) {
            None => return Err(corrupt("truncated before version")),
            Some(&v) if v != MODEL_FORMAT_VERSION => {
                return Err(ForestError::CorruptModel(format!(
                    "unsupported format version {v}, expected {MODEL_FORMAT_VERSION}"
                )))
            }
            Some(_) => {}
        }
        if bytes.len() < MAGIC.len() + 1 + 32 {
            return Err(corrupt("truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader {
            b: &body[MAGIC.len() + 1..],
        };
        let trunc = || corrupt("truncated");
        let n_trees = r.u64().ok_or_else(trunc)? as usize;
        let config = ForestConfig {
            n_trees,
            max_depth: r.u64().ok_or_else(trunc)? as usize,
            min_leaf: r.u64().ok_or_else(trunc)? as usize,
            bootstrap_fraction: r.f64().ok_or_else(trunc)?,
            bootstrap: r.u8().ok_or_else(trunc)? != 0,
            features_per_split: r.u64().ok_or_else(trunc)? as usize,
            seed: r.u64().ok_or_else(trunc)?,
        };
        let manifest = TrainingManifest {
            corpus_sha256: r.take(32).ok_or_else(trunc)?.try_into().unwrap(),
            sample_seed: r.u64().ok_or_else(trunc)?,
            n_records: r.u64().ok_or_else(trunc)?,
        };
        let count = r.u32().ok_or_else(trunc)? as usize;
        if count != n_trees || count == 0 {
            return Err(corrupt("tree count disagrees with config"));
        }
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let n_nodes = r.u32().ok_or_else(trunc)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                nodes.push(match r.u8().ok_or_else(trunc)? {
                    TAG_SPLIT => Node::Split {
                        feature: r.u8().ok_or_else(trunc)?,
                        threshold: r.f64().ok_or_else(trunc)?,
                        right: r.u32().ok_or_else(trunc)?,
                    },
                    TAG_LEAF => Node::Leaf {
                        value: [
                            r.f64().ok_or_else(trunc)?,
                            r.f64().ok_or_else(trunc)?,
                            r.f64().ok_or_else(trunc)?,
                        ],
                        count: r.u32().ok_or_else(trunc)?,
                    },
                    _ => return Err(corrupt("unknown node tag")),
                });
            }
            trees.push(RegressionTree::from_nodes(nodes).ok_or_else(|| corrupt("malformed tree"))?);
        }
        if !r.b.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            config,
            trees,
            manifest,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    b: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.b.len() < n {
            return None;
        }
        let (head, tail) = self.b.split_at(n);
        self.b = tail;
        Some(head)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{train, ForestConfig};
    use super::*;
    use crate::dataset::{FeatureVector, TrainingRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> ForestModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs: Vec<_> = (0..300)
            .map(|_| {
                let p = [rng.gen(), rng.gen(), rng.gen()];
                TrainingRecord {
                    feature: FeatureVector::new(p, rng.gen(), rng.gen_range(1..=2)),
                    label: [p[0] * 0.01, -p[1], rng.gen()],
                    domain_tag: "T".into(),
                    source_file: "f".into(),
                }
            })
            .collect();
        train(
            &recs,
            &ForestConfig {
                n_trees: 10,
                ..ForestConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_predicts_identically() {
        let m = model();
        let back = ForestModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let x: [f64; 5] = [rng.gen(), rng.gen(), rng.gen(), rng.gen(), rng.gen_range(1..=2) as f64];
            let (a, b) = (m.predict_array(&x), back.predict_array(&x));
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = model().to_bytes();
        for cut in [3, 6, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                ForestModel::from_bytes(&bytes[..cut]),
                Err(ForestError::CorruptModel(_))
            ));
        }
        let mut bumped = bytes.clone();
        bumped[5] += 1;
        match ForestModel::from_bytes(&bumped) {
            Err(ForestError::CorruptModel(m)) => assert!(m.contains("version 2"), "{m}"),
            other => panic!("{other:?}"),
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x40;
        assert!(matches!(
            ForestModel::from_bytes(&flipped),
            Err(ForestError::CorruptModel(_))
        ));
    }
}
