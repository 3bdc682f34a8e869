//! Exhaustive grid search for the minimum TDoA residual.

use serde::{Deserialize, Serialize};

use super::{residual_slices, Algorithm, LocationEstimate, LocatorError, Position, SensorArray};
use crate::tdoa::TdoaMeasurement;

/// Rectangular grid of candidate positions, row-major with `x` varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), LocatorError> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max, self.resolution];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(LocatorError::NonFinite);
        }
        if self.resolution <= 0.0 {
            return Err(LocatorError::InvalidGrid("resolution must be positive".into()));
        }
        if self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(LocatorError::InvalidGrid("empty bounds".into()));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.resolution + 1e-9).floor() as usize + 1
    }

    pub fn ny(&self) -> usize {
        ((self.y_max - self.y_min) / self.resolution + 1e-9).floor() as usize + 1
    }

    /// Number of grid points `M`.
    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, k: usize) -> [f64; 2] {
        let nx = self.nx();
        [self.x_min + (k % nx) as f64 * self.resolution, self.y_min + (k / nx) as f64 * self.resolution]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x_min: self.x_min + dx, x_max: self.x_max + dx, y_min: self.y_min + dy, y_max: self.y_max + dy, ..*self }
    }
}

/// Returns the grid point with the smallest TDoA residual; ties go to the
/// lowest index.
pub fn solve_ml_grid(
    sensors: &SensorArray,
    tdoa: &TdoaMeasurement,
    grid: &GridSpec,
) -> Result<LocationEstimate, LocatorError> {
    sensors.check(tdoa)?;
    grid.validate()?;
    if sensors.dim() != 2 {
        return Err(LocatorError::InvalidGrid("grid search is planar; sensors must be 2D".into()));
    }
    let mut best_k = 0;
    let mut best = f64::INFINITY;
    for k in 0..grid.len() {
        let z = grid.point(k);
        let e = residual_slices(&z, sensors.positions(), &tdoa.values);
        if e < best {
            best = e;
            best_k = k;
        }
    }
    let z = grid.point(best_k);
    Ok(LocationEstimate::simple(Position::from_vec(z.to_vec()), Algorithm::Ml, best))
}
