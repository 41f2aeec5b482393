//! Index-stride decimation and the 100/50/25/12.5 % resolution ladder.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cloud::PointCloud;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplingError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("resolution ladder needs at least 8 points, got {0}")]
    TooFewPoints(usize),
    #[error("unknown resolution level `{0}`")]
    UnknownLevel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResolutionLevel {
    Full,
    Half,
    Quarter,
    Eighth,
}

impl ResolutionLevel {
    pub const ALL: [ResolutionLevel; 4] = [Self::Full, Self::Half, Self::Quarter, Self::Eighth];

    /// Number of stride-2 passes from full resolution.
    pub fn halvings(self) -> u32 {
        match self {
            Self::Full => 0,
            Self::Half => 1,
            Self::Quarter => 2,
            Self::Eighth => 3,
        }
    }

    /// Exact fraction of the full point budget as `(numerator, denominator)`.
    pub fn fraction(self) -> (u32, u32) {
        (1, 1 << self.halvings())
    }

    /// Percent label used in file names and reports: `100`, `50`, `25`, `12.5`.
    pub fn percent_label(self) -> &'static str {
        match self {
            Self::Full => "100",
            Self::Half => "50",
            Self::Quarter => "25",
            Self::Eighth => "12.5",
        }
    }

    pub fn from_halvings(n: u32) -> Option<Self> {
        Self::ALL.get(n as usize).copied()
    }
}

impl fmt::Display for ResolutionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.percent_label())
    }
}

impl FromStr for ResolutionLevel {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().trim_end_matches('%') {
            "100" | "full" => Ok(Self::Full),
            "50" | "half" => Ok(Self::Half),
            "25" | "quarter" => Ok(Self::Quarter),
            "12.5" | "eighth" => Ok(Self::Eighth),
            other => Err(SamplingError::UnknownLevel(other.to_string())),
        }
    }
}

/// Keeps the points at even indices, so the output has `ceil(n / 2)` points
/// and the first point always survives.
pub fn downsample_stride(cloud: &PointCloud) -> Result<PointCloud, SamplingError> {
    if cloud.is_empty() {
        return Err(SamplingError::EmptyCloud);
    }
    let points = cloud.points().iter().step_by(2).copied().collect();
    let out = PointCloud::new(points).expect("subset of a finite cloud is finite");
    Ok(match cloud.source_id() {
        Some(id) => out.with_source_id(id),
        None => out,
    })
}

/// Builds all four levels by repeated stride decimation.
pub fn resolution_ladder(cloud: &PointCloud) -> Result<BTreeMap<ResolutionLevel, PointCloud>, SamplingError> {
    if cloud.len() < 8 {
        return Err(SamplingError::TooFewPoints(cloud.len()));
    }
    let mut ladder = BTreeMap::new();
    let mut current = cloud.clone();
    for level in ResolutionLevel::ALL {
        if level != ResolutionLevel::Full {
            current = downsample_stride(&current)?;
        }
        ladder.insert(level, current.clone());
    }
    Ok(ladder)
}

/// Point count after `halvings` stride passes over `n` points.
pub fn ladder_size(n: usize, halvings: u32) -> usize {
    (0..halvings).fold(n, |m, _| m.div_ceil(2))
}
