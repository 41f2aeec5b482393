//! Forest-driven 2x upsampling and its iterated chain.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::dataset::{mean_neighbor_distances, DEFAULT_K};
use crate::forest::ForestModel;
use crate::kdtree::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UpsampleError {
    #[error("cloud too small: need at least {needed} points, got {got}")]
    CloudTooSmall { needed: usize, got: usize },
    #[error("stages must be in 1..=3, got {0}")]
    InvalidStages(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleReport {
    pub input_points: usize,
    pub output_points: usize,
    pub stages: u32,
    pub inference_ms_per_stage: Vec<f64>,
    pub total_ms: f64,
}

/// Predicts rank-1 and rank-2 offsets for every point and emits
/// `p + Δ₁, p + Δ₂` in input order.
pub fn upsample_2x(model: &ForestModel, sparse: &PointCloud, k: usize) -> Result<PointCloud, UpsampleError> {
    if sparse.len() < k + 1 {
        return Err(UpsampleError::CloudTooSmall {
            needed: k + 1,
            got: sparse.len(),
        });
    }
    let tree = KdTree::build(sparse).expect("non-empty");
    let d_bar = mean_neighbor_distances(sparse, &tree, k).expect("size checked above");
    let points = sparse
        .points()
        .par_iter()
        .zip(d_bar.par_iter())
        .flat_map_iter(|(p, &d)| {
            [1.0, 2.0].map(|rank| {
                let off = model.predict_array(&[p[0], p[1], p[2], d, rank]);
                [p[0] + off[0], p[1] + off[1], p[2] + off[2]]
            })
        })
        .collect();
    PointCloud::new(points).map_err(|_| UpsampleError::CloudTooSmall {
        needed: k + 1,
        got: sparse.len(),
    })
}

/// Applies [`upsample_2x`] `stages` times, rebuilding neighborhoods from
/// each intermediate output.
pub fn upsample_chain(
    model: &ForestModel,
    sparse: &PointCloud,
    stages: u32,
) -> Result<(PointCloud, UpsampleReport), UpsampleError> {
    if !(1..=3).contains(&stages) {
        return Err(UpsampleError::InvalidStages(stages));
    }
    let start = Instant::now();
    let mut per_stage = Vec::with_capacity(stages as usize);
    let mut current = sparse.clone();
    for _ in 0..stages {
        let t = Instant::now();
        current = upsample_2x(model, &current, DEFAULT_K)?;
        per_stage.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Some(id) = sparse.source_id() {
        current = current.with_source_id(id);
    }
    let report = UpsampleReport {
        input_points: sparse.len(),
        output_points: current.len(),
        stages,
        inference_ms_per_stage: per_stage,
        total_ms,
    };
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64 * 0.01, (i % 7) as f64 * 0.003, 0.0]).collect()).unwrap()
    }

    #[test]
    fn zero_model_duplicates_in_order() {
        let c = line(40);
        let out = upsample_2x(&ForestModel::constant([0.0; 3]), &c, 16).unwrap();
        assert_eq!(out.len(), 80);
        for (i, p) in c.points().iter().enumerate() {
            assert_eq!(&out.points()[2 * i], p);
            assert_eq!(&out.points()[2 * i + 1], p);
        }
    }

    #[test]
    fn chain_cardinality_and_report() {
        let c = line(50);
        let m = ForestModel::constant([0.001, 0.0, 0.0]);
        let (out, rep) = upsample_chain(&m, &c, 3).unwrap();
        assert_eq!(out.len(), 400);
        assert_eq!(rep.output_points, 400);
        assert_eq!(rep.inference_ms_per_stage.len(), 3);
        assert!(rep.total_ms >= rep.inference_ms_per_stage.iter().sum::<f64>() * 0.99);
        assert_eq!(upsample_chain(&m, &c, 0).unwrap_err(), UpsampleError::InvalidStages(0));
        assert_eq!(
            upsample_2x(&m, &line(16), 16).unwrap_err(),
            UpsampleError::CloudTooSmall { needed: 17, got: 16 }
        );
    }
}
