//! Chamfer and Hausdorff distances between clouds, reported in millimeters.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::kdtree::KdTree;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("unknown chamfer variant `{0}`")]
    UnknownVariant(String),
}

/// How the two directional means combine into one Chamfer value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChamferVariant {
    /// Half the sum of the directional means.
    #[default]
    Mean,
    /// Sum of the directional means.
    Sum,
}

impl FromStr for ChamferVariant {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(MetricsError::UnknownVariant(other.to_string())),
        }
    }
}

impl fmt::Display for ChamferVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Sum => "sum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    pub chamfer_mm: f64,
    pub hausdorff_mm: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Mean and max over `from` of the distance to the nearest point of `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Directional {
    mean: f64,
    max: f64,
}

fn directional(from: &PointCloud, to: &KdTree) -> Directional {
    // collected first so the sum runs in point order and is reproducible
    let d: Vec<f64> = from.points().par_iter().map(|p| to.nearest(p).1).collect();
    Directional {
        mean: d.iter().sum::<f64>() / d.len() as f64,
        max: d.iter().copied().fold(0.0, f64::max),
    }
}

fn both(a: &PointCloud, b: &PointCloud) -> Result<(Directional, Directional), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let ta = KdTree::build(a).expect("non-empty");
    let tb = KdTree::build(b).expect("non-empty");
    Ok(rayon::join(|| directional(a, &tb), || directional(b, &ta)))
}

pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricsError> {
    chamfer_with(a, b, ChamferVariant::Mean)
}

pub fn chamfer_with(a: &PointCloud, b: &PointCloud, variant: ChamferVariant) -> Result<f64, MetricsError> {
    let (ab, ba) = both(a, b)?;
    Ok(combine(ab.mean, ba.mean, variant))
}

fn combine(ab: f64, ba: f64, variant: ChamferVariant) -> f64 {
    let s = (ab + ba) * 1e3;
    match variant {
        ChamferVariant::Mean => s / 2.0,
        ChamferVariant::Sum => s,
    }
}

pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricsError> {
    let (ab, ba) = both(a, b)?;
    Ok(ab.max.max(ba.max) * 1e3)
}

/// Both metrics from a single pair of nearest-neighbor passes.
pub fn similarity(a: &PointCloud, b: &PointCloud, variant: ChamferVariant) -> Result<SimilarityReport, MetricsError> {
    let (ab, ba) = both(a, b)?;
    Ok(SimilarityReport {
        chamfer_mm: combine(ab.mean, ba.mean, variant),
        hausdorff_mm: ab.max.max(ba.max) * 1e3,
        n_a: a.len(),
        n_b: b.len(),
    })
}
