//! Multi-output random forest regressing 3D offsets from 5D features.

mod io;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{FeatureVector, OffsetLabel, TrainingRecord};

pub use io::MODEL_FORMAT_VERSION;
pub use tree::{Node, RegressionTree, N_FEATURES};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("need at least {needed} training records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap_fraction: f64,
    /// Draw each tree's sample with replacement; when false every tree sees
    /// all records.
    pub bootstrap: bool,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 24,
            min_leaf: 4,
            bootstrap_fraction: 1.0,
            bootstrap: true,
            features_per_split: 3,
            seed: 7,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::InvalidConfig(m));
        if self.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be positive".into());
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return bad(format!("bootstrap_fraction {} outside (0, 1]", self.bootstrap_fraction));
        }
        if !(1..=N_FEATURES).contains(&self.features_per_split) {
            return bad(format!("features_per_split {} outside 1..=5", self.features_per_split));
        }
        Ok(())
    }
}

/// Provenance recorded with a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainingManifest {
    pub corpus_sha256: [u8; 32],
    pub sample_seed: u64,
    pub n_records: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    config: ForestConfig,
    trees: Vec<RegressionTree>,
    manifest: TrainingManifest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub mae_mm: f64,
    pub rmse_mm: f64,
    pub n_samples: usize,
}

fn split_records(records: &[TrainingRecord]) -> (Vec<[f64; N_FEATURES]>, Vec<[f64; 3]>) {
    records.iter().map(|r| (r.feature.to_array(), r.label)).unzip()
}

/// Trains `cfg.n_trees` trees, each on its own bootstrap draw with its own
/// RNG stream, so the result does not depend on thread scheduling.
pub fn train(records: &[TrainingRecord], cfg: &ForestConfig) -> Result<ForestModel, ForestError> {
    cfg.validate()?;
    let needed = 2 * cfg.min_leaf;
    if records.len() < needed {
        return Err(ForestError::TooFewRecords {
            needed,
            got: records.len(),
        });
    }
    let (x, y) = split_records(records);
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            tree::TreeBuilder::new(&x, &y, cfg, rng).build()
        })
        .collect();
    Ok(ForestModel {
        config: *cfg,
        trees,
        manifest: TrainingManifest {
            n_records: records.len() as u64,
            ..TrainingManifest::default()
        },
    })
}

impl ForestModel {
    /// A single-tree model that always predicts `offset`.
    pub fn constant(offset: OffsetLabel) -> Self {
        Self {
            config: ForestConfig {
                n_trees: 1,
                ..ForestConfig::default()
            },
            trees: vec![RegressionTree::constant(offset)],
            manifest: TrainingManifest::default(),
        }
    }

    pub fn from_trees(config: ForestConfig, trees: Vec<RegressionTree>, manifest: TrainingManifest) -> Self {
        Self {
            config: ForestConfig {
                n_trees: trees.len(),
                ..config
            },
            trees,
            manifest,
        }
    }

    pub fn with_manifest(mut self, manifest: TrainingManifest) -> Self {
        self.manifest = manifest;
        self
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn manifest(&self) -> &TrainingManifest {
        &self.manifest
    }

    /// Per-axis mean of the tree outputs.
    pub fn predict_array(&self, x: &[f64; N_FEATURES]) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for t in &self.trees {
            let v = t.predict(x);
            acc[0] += v[0];
            acc[1] += v[1];
            acc[2] += v[2];
        }
        let n = self.trees.len() as f64;
        acc.map(|s| s / n)
    }

    pub fn predict(&self, f: &FeatureVector) -> OffsetLabel {
        self.predict_array(&f.to_array())
    }

    pub fn predict_batch(&self, xs: &[[f64; N_FEATURES]]) -> Vec<[f64; 3]> {
        xs.par_iter().map(|x| self.predict_array(x)).collect()
    }
}

/// MAE is the mean absolute per-axis error and RMSE the root of the mean
/// squared per-axis error, both in millimeters.
pub fn evaluate(model: &ForestModel, test: &[TrainingRecord]) -> Result<ErrorReport, ForestError> {
    if test.is_empty() {
        return Err(ForestError::EmptySet);
    }
    let (x, y) = split_records(test);
    let pred = model.predict_batch(&x);
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(&y) {
        for a in 0..3 {
            let e = p[a] - t[a];
            abs += e.abs();
            sq += e * e;
        }
    }
    let n = 3.0 * test.len() as f64;
    Ok(ErrorReport {
        mae_mm: 1e3 * abs / n,
        rmse_mm: 1e3 * (sq / n).sqrt(),
        n_samples: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureVector;
    use rand::Rng;

    fn record(x: [f64; 3], d: f64, rank: u8, label: [f64; 3]) -> TrainingRecord {
        TrainingRecord {
            feature: FeatureVector::new(x, d, rank),
            label,
            domain_tag: "T".into(),
            source_file: "f".into(),
        }
    }

    fn small_cfg() -> ForestConfig {
        ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn constant_labels_collapse() {
        let recs: Vec<_> = (0..50)
            .map(|i| record([i as f64, 0.0, 1.0], 0.1, 1 + (i % 2) as u8, [0.5, 0.0, 0.0]))
            .collect();
        let m = train(&recs, &small_cfg()).unwrap();
        assert!(m.trees().iter().all(|t| t.nodes().len() == 1));
        for r in &recs {
            assert_eq!(m.predict(&r.feature), [0.5, 0.0, 0.0]);
        }
    }

    #[test]
    fn rank_separable_fixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs: Vec<_> = (0..400)
            .map(|i| {
                let rank = 1 + (i % 2) as u8;
                let label = if rank == 1 { [0.0; 3] } else { [1.0, 0.0, 0.0] };
                record([rng.gen(), rng.gen(), rng.gen()], rng.gen(), rank, label)
            })
            .collect();
        let cfg = ForestConfig {
            features_per_split: 5,
            ..small_cfg()
        };
        let m = train(&recs, &cfg).unwrap();
        for r in &recs {
            let p = m.predict(&r.feature);
            for (got, want) in p.iter().zip(&r.label) {
                assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mean_of_two_trees() {
        let m = ForestModel::from_trees(
            ForestConfig::default(),
            vec![
                RegressionTree::constant([0.0; 3]),
                RegressionTree::constant([2.0, 0.0, 0.0]),
            ],
            TrainingManifest::default(),
        );
        assert_eq!(m.predict_array(&[0.3; 5]), [1.0, 0.0, 0.0]);
        assert_eq!(m.config().n_trees, 2);
    }

    #[test]
    fn zero_model_on_unit_labels() {
        let recs: Vec<_> = (0..100)
            .map(|i| {
                let s = if i % 2 == 0 { 1e-3 } else { -1e-3 };
                record([i as f64, 0.0, 0.0], 0.0, 1, [s, -s, s])
            })
            .collect();
        let r = evaluate(&ForestModel::constant([0.0; 3]), &recs).unwrap();
        assert!((r.mae_mm - 1.0).abs() < 1e-12);
        assert!((r.rmse_mm - 1.0).abs() < 1e-12);
        assert!(matches!(
            evaluate(&ForestModel::constant([0.0; 3]), &[]),
            Err(ForestError::EmptySet)
        ));
    }

    #[test]
    fn memorizes_unique_features_without_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let recs: Vec<_> = (0..64)
            .map(|_| {
                record(
                    [rng.gen(), rng.gen(), rng.gen()],
                    rng.gen(),
                    1,
                    [rng.gen(), rng.gen(), rng.gen()],
                )
            })
            .collect();
        let cfg = ForestConfig {
            n_trees: 4,
            min_leaf: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let m = train(&recs, &cfg).unwrap();
        let r = evaluate(&m, &recs).unwrap();
        assert!(r.mae_mm < 1e-9 && r.rmse_mm < 1e-9, "{r:?}");
    }

    #[test]
    fn config_validation_and_too_few() {
        let recs = vec![record([0.0; 3], 0.0, 1, [0.0; 3]); 7];
        assert!(matches!(
            train(&recs, &ForestConfig::default()),
            Err(ForestError::TooFewRecords { needed: 8, got: 7 })
        ));
        let bad = ForestConfig {
            features_per_split: 6,
            ..ForestConfig::default()
        };
        assert!(matches!(train(&recs, &bad), Err(ForestError::InvalidConfig(_))));
    }

    #[test]
    fn large_node_uses_quantile_path_and_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = tree::EXACT_SPLIT_LIMIT + 2000;
        let recs: Vec<_> = (0..n)
            .map(|_| {
                let x: f64 = rng.gen();
                record([x, rng.gen(), 0.0], 0.0, 1, [if x > 0.5 { 1.0 } else { 0.0 }, 0.0, 0.0])
            })
            .collect();
        let cfg = ForestConfig {
            n_trees: 4,
            max_depth: 6,
            min_leaf: 8,
            ..ForestConfig::default()
        };
        let m = train(&recs, &cfg).unwrap();
        for t in m.trees() {
            assert!(t.depth() <= 6);
            assert!(t.leaves().all(|(_, c)| c >= 8));
        }
        let r = evaluate(&m, &recs).unwrap();
        assert!(r.mae_mm < 50.0, "{r:?}");
    }
}
