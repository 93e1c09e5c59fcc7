//! Piecewise-linear scalability curves.
//!
//! A curve records measured training throughput (samples/s) at a handful of
//! node counts and answers queries anywhere in between by linear
//! interpolation. Grid points are the measurements; nothing is extrapolated
//! outside `[grid[0], grid[last]]`, and a job running on zero nodes produces
//! zero throughput by definition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("curve needs at least two grid points, got {0}")]
    TooFewPoints(usize),
    #[error("grid must be strictly increasing positive node counts")]
    BadGrid,
    #[error("rates must be non-negative and finite")]
    BadRate,
    #[error("node count {n} outside curve domain [{lo}, {hi}]")]
    OutOfRange { n: u32, lo: u32, hi: u32 },
    #[error("cannot normalize: rate at smallest grid point is zero")]
    ZeroBaseRate,
}

/// Measured throughput at strictly increasing node counts, interpolated
/// linearly in between. Serialized as an array of `[nodes, samples_per_second]`
/// pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct ScalabilityCurve {
    grid: Vec<u32>,
    rates: Vec<f64>,
}

impl ScalabilityCurve {
    pub fn new(grid: Vec<u32>, rates: Vec<f64>) -> Result<Self, CurveError> {
        if grid.len() < 2 {
            return Err(CurveError::TooFewPoints(grid.len()));
        }
        if grid.len() != rates.len() {
            return Err(CurveError::BadGrid);
        }
        if grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CurveError::BadGrid);
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(CurveError::BadRate);
        }
        Ok(Self { grid, rates })
    }

    pub fn from_points(points: &[(u32, f64)]) -> Result<Self, CurveError> {
        let (grid, rates) = points.iter().copied().unzip();
        Self::new(grid, rates)
    }

    pub fn grid(&self) -> &[u32] {
        &self.grid
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_nodes(&self) -> u32 {
        self.grid[0]
    }

    pub fn max_nodes(&self) -> u32 {
        *self.grid.last().unwrap()
    }

    /// Throughput at `n` nodes: zero at `n = 0`, the measured rate at a grid
    /// point, linear interpolation between adjacent grid points.
    pub fn evaluate(&self, n: u32) -> Result<f64, CurveError> {
        if n == 0 {
            return Ok(0.0);
        }
        let i = self.segment(n)?;
        match i {
            Ok(exact) => Ok(self.rates[exact]),
            Err(right) => {
                let (g0, g1) = (self.grid[right - 1], self.grid[right]);
                let (r0, r1) = (self.rates[right - 1], self.rates[right]);
                let t = f64::from(n - g0) / f64::from(g1 - g0);
                Ok(r0 + t * (r1 - r0))
            }
        }
    }

    /// Interpolation weights over the grid for `n`: non-negative, summing to
    /// one, with at most two adjacent nonzero entries, and `Σ w·grid = n`.
    pub fn sos2_weights(&self, n: u32) -> Result<Vec<f64>, CurveError> {
        if n == 0 {
            return Err(CurveError::OutOfRange {
                n,
                lo: self.min_nodes(),
                hi: self.max_nodes(),
            });
        }
        let mut w = vec![0.0; self.grid.len()];
        match self.segment(n)? {
            Ok(exact) => w[exact] = 1.0,
            Err(right) => {
                let (g0, g1) = (self.grid[right - 1], self.grid[right]);
                let t = f64::from(n - g0) / f64::from(g1 - g0);
                w[right - 1] = 1.0 - t;
                w[right] = t;
            }
        }
        Ok(w)
    }

    /// Same grid with rates divided by the rate at the smallest grid point,
    /// turning throughput into speedup relative to the smallest measured size.
    pub fn normalize_speedup(&self) -> Result<ScalabilityCurve, CurveError> {
        let base = self.rates[0];
        if base == 0.0 {
            return Err(CurveError::ZeroBaseRate);
        }
        Ok(ScalabilityCurve {
            grid: self.grid.clone(),
            rates: self.rates.iter().map(|r| r / base).collect(),
        })
    }

    /// `Ok(i)` when `n == grid[i]`, otherwise `Err(i)` with
    /// `grid[i-1] < n < grid[i]`; out-of-domain `n` is an error.
    fn segment(&self, n: u32) -> Result<Result<usize, usize>, CurveError> {
        if n < self.min_nodes() || n > self.max_nodes() {
            return Err(CurveError::OutOfRange {
                n,
                lo: self.min_nodes(),
                hi: self.max_nodes(),
            });
        }
        Ok(self.grid.binary_search(&n))
    }
}

impl TryFrom<Vec<(u32, f64)>> for ScalabilityCurve {
    type Error = CurveError;

    fn try_from(points: Vec<(u32, f64)>) -> Result<Self, Self::Error> {
        Self::from_points(&points)
    }
}

impl From<ScalabilityCurve> for Vec<(u32, f64)> {
    fn from(c: ScalabilityCurve) -> Self {
        c.grid.into_iter().zip(c.rates).collect()
    }
}
