//! The point cloud type shared by every pipeline stage.

use thiserror::Error;

/// A 3D position in meters.
pub type Point3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
}

/// Ordered list of 3D positions. Point order is significant and is
/// preserved by every stage that does not explicitly reorder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    source_id: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, rejecting NaN and infinite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self, CloudError> {
        if let Some(index) = points
            .iter()
            .position(|p| !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite()))
        {
            return Err(CloudError::NonFinite { index });
        }
        Ok(Self {
            points,
            source_id: None,
        })
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn source_id(&self) -> Option<&str> {
        self.source_id.as_deref()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinate-wise bit equality (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &PointCloud) -> bool {
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (0..3).all(|i| a[i].to_bits() == b[i].to_bits()))
    }
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist2(a, b).sqrt()
}
