//! Position solvers for TDoA measurements.
//!
//! All solvers share the residual `Σ_j (τ̃_j(x) - τ̂_j)²`, where the
//! predicted TDoA of sensor `j` against the reference (sensor 0) is
//! `(‖x - v_j‖ - ‖x - v_0‖)/c`.

mod bancroft;
mod gauss_newton;
mod grid;

pub use bancroft::solve_ls_bf;
pub use gauss_newton::{jacobian, range_differences, solve_ls_bf_gn, GnOptions, JacobianMode, Region};
pub use grid::{solve_ml_grid, GridSpec};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tdoa::TdoaMeasurement;
use crate::SPEED_OF_LIGHT;

pub type Position = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocatorError {
    #[error("sensor geometry is degenerate (singular linear system)")]
    DegenerateGeometry,
    #[error("range quadratic has no usable root")]
    NoRealRoot,
    #[error("expected {expected} TDoA values, got {got}")]
    MeasurementLength { expected: usize, got: usize },
    #[error("invalid sensor array: {0}")]
    InvalidArray(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cannot average an empty set of estimates")]
    EmptyAverage,
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    LsBf,
    Ml,
    LsBfGn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::LsBf, Algorithm::Ml, Algorithm::LsBfGn];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LsBf => "ls_bf",
            Algorithm::Ml => "ml",
            Algorithm::LsBfGn => "ls_bf_gn",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Sensor coordinates; sensor 0 is the TDoA reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SensorArray {
    positions: Vec<Position>,
}

impl SensorArray {
    pub fn new(positions: Vec<Position>) -> Result<Self, LocatorError> {
        let dim = positions.first().map(|p| p.len()).unwrap_or(0);
        if !(2..=3).contains(&dim) {
            return Err(LocatorError::InvalidArray("positions must be 2D or 3D".into()));
        }
        if positions.iter().any(|p| p.len() != dim) {
            return Err(LocatorError::InvalidArray("mixed dimensions".into()));
        }
        if positions.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(LocatorError::NonFinite);
        }
        if positions.len() < dim + 1 {
            return Err(LocatorError::InvalidArray(format!("need at least {} sensors", dim + 1)));
        }
        // the baselines to the reference must span the space
        let base = &positions[0];
        let cols: Vec<Position> = positions[1..].iter().map(|p| p - base).collect();
        let m = nalgebra::DMatrix::from_columns(&cols);
        let sv = m.singular_values();
        let scale = sv.max();
        if scale == 0.0 || sv.iter().filter(|s| **s > 1e-9 * scale).count() < dim {
            return Err(LocatorError::InvalidArray("sensors are collinear or coincident".into()));
        }
        Ok(Self { positions })
    }

    pub fn from_xy(points: &[(f64, f64)]) -> Result<Self, LocatorError> {
        Self::new(points.iter().map(|&(x, y)| Position::from_vec(vec![x, y])).collect())
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn reference(&self) -> &Position {
        &self.positions[0]
    }

    /// Translated copy.
    pub fn translated(&self, by: &Position) -> Self {
        Self { positions: self.positions.iter().map(|p| p + by).collect() }
    }

    pub(crate) fn check(&self, tdoa: &TdoaMeasurement) -> Result<(), LocatorError> {
        if tdoa.values.len() != self.len() - 1 {
            return Err(LocatorError::MeasurementLength { expected: self.len() - 1, got: tdoa.values.len() });
        }
        if tdoa.values.iter().any(|v| !v.is_finite()) {
            return Err(LocatorError::NonFinite);
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SensorArray {
    type Error = LocatorError;

    fn try_from(points: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::new(points.into_iter().map(Position::from_vec).collect())
    }
}

impl From<SensorArray> for Vec<Vec<f64>> {
    fn from(a: SensorArray) -> Self {
        a.positions.into_iter().map(|p| p.as_slice().to_vec()).collect()
    }
}

/// One position fix.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationEstimate {
    pub position: Position,
    pub algorithm: Algorithm,
    /// TDoA residual sum of squares at `position`, s².
    pub residual: f64,
    /// Gauss-Newton iterations taken (0 for other solvers).
    pub iterations: usize,
    /// Candidate positions considered by the final selection: the quadratic
    /// roots for LS-BF, the Bancroft seed and refined iterate for LS-BF-GN,
    /// the per-round fixes for an averaged estimate.
    pub candidates: Vec<Position>,
    /// Gauss-Newton hit a rank-deficient Jacobian and fell back to its seed.
    pub rank_deficient: bool,
    /// TDoA residual after every accepted Gauss-Newton step, starting with the seed.
    pub residual_history: Vec<f64>,
}

impl LocationEstimate {
    pub(crate) fn simple(position: Position, algorithm: Algorithm, residual: f64) -> Self {
        Self {
            position,
            algorithm,
            residual,
            iterations: 0,
            candidates: Vec::new(),
            rank_deficient: false,
            residual_history: Vec::new(),
        }
    }
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

/// Predicted TDoAs of every non-reference sensor for an emitter at `x`.
pub fn predicted_tdoa(x: &Position, sensors: &SensorArray) -> Vec<f64> {
    let r0 = distance(x.as_slice(), sensors.reference().as_slice());
    sensors.positions[1..].iter().map(|v| (distance(x.as_slice(), v.as_slice()) - r0) / SPEED_OF_LIGHT).collect()
}

/// Noise-free measurement of an emitter at `x`.
pub fn exact_tdoa(x: &Position, sensors: &SensorArray) -> TdoaMeasurement {
    TdoaMeasurement::from_values(predicted_tdoa(x, sensors), 1)
}

pub(crate) fn residual_slices(x: &[f64], sensors: &[Position], values: &[f64]) -> f64 {
    let r0 = distance(x, sensors[0].as_slice());
    let mut acc = 0.0;
    for (v, tau) in sensors[1..].iter().zip(values) {
        let e = (distance(x, v.as_slice()) - r0) / SPEED_OF_LIGHT - tau;
        acc += e * e;
    }
    acc
}

/// TDoA residual sum of squares at `x`, s².
pub fn tdoa_residual(x: &Position, sensors: &SensorArray, tdoa: &TdoaMeasurement) -> f64 {
    residual_slices(x.as_slice(), &sensors.positions, &tdoa.values)
}

/// Component-wise mean of the fixes.
pub fn average_estimates(estimates: &[Position]) -> Result<Position, LocatorError> {
    let first = estimates.first().ok_or(LocatorError::EmptyAverage)?;
    let mut acc = Position::zeros(first.len());
    for e in estimates {
        acc += e;
    }
    Ok(acc / estimates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> SensorArray {
        SensorArray::from_xy(&[(0.0, 0.0), (50.0, 0.0), (0.0, 50.0), (50.0, 50.0)]).unwrap()
    }

    #[test]
    fn residual_vanishes_at_truth() {
        let s = square();
        let x = Position::from_vec(vec![12.5, 31.0]);
        let m = exact_tdoa(&x, &s);
        assert!(tdoa_residual(&x, &s, &m) < 1e-24);
    }

    #[test]
    fn centroid_of_equilateral_array_has_zero_tdoa() {
        let h = 3f64.sqrt() / 2.0 * 40.0;
        let s = SensorArray::from_xy(&[(0.0, 0.0), (40.0, 0.0), (20.0, h)]).unwrap();
        let c = Position::from_vec(vec![20.0, h / 3.0]);
        for v in predicted_tdoa(&c, &s) {
            assert!(v.abs() < 1e-20);
        }
    }

    #[test]
    fn residual_matches_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let pts: Vec<(f64, f64)> =
                (0..5).map(|_| (rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0))).collect();
            let Ok(s) = SensorArray::from_xy(&pts) else { continue };
            let x = Position::from_vec(vec![rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)]);
            let m = TdoaMeasurement::from_values((0..4).map(|_| rng.random_range(-2e-7..2e-7)).collect(), 1);
            let mut expect = 0.0;
            for j in 1..5 {
                let dj = ((x[0] - pts[j].0).powi(2) + (x[1] - pts[j].1).powi(2)).sqrt();
                let d0 = ((x[0] - pts[0].0).powi(2) + (x[1] - pts[0].1).powi(2)).sqrt();
                expect += ((dj - d0) / 299_792_458.0 - m.values[j - 1]).powi(2);
            }
            let got = tdoa_residual(&x, &s, &m);
            assert!((got - expect).abs() <= 1e-12 * expect.max(1e-30), "{got} {expect}");
        }
    }

    #[test]
    fn array_validation() {
        assert!(SensorArray::from_xy(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(SensorArray::from_xy(&[(0.0, 0.0), (1.0, 0.0)]).is_err());
        assert!(SensorArray::new(vec![Position::from_vec(vec![0.0]); 4]).is_err());
    }

    #[test]
    fn averaging() {
        assert_eq!(average_estimates(&[]), Err(LocatorError::EmptyAverage));
        let a = Position::from_vec(vec![3.0, 4.0]);
        assert_eq!(average_estimates(std::slice::from_ref(&a)).unwrap(), a);
        let truth = Position::from_vec(vec![10.0, 20.0]);
        let d = Position::from_vec(vec![1.25, -0.5]);
        let avg = average_estimates(&[&truth + &d, &truth - &d]).unwrap();
        assert_eq!(avg, truth);
    }

    #[test]
    fn measurement_length_checked() {
        let s = square();
        let m = TdoaMeasurement::from_values(vec![0.0; 2], 1);
        assert!(matches!(s.check(&m), Err(LocatorError::MeasurementLength { expected: 3, got: 2 })));
    }
}
