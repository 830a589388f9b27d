//! Communication topologies and gossip.
//!
//! A topology is a doubly stochastic mixing matrix `V` with its second-largest
//! singular value `sigma2`. One gossip round maps agent rows `x` to `V x`;
//! double stochasticity preserves column means, and deviation from consensus
//! contracts by `sigma2` per round.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::error::{Error as CrateError, Result};

/// Tolerance for row/column sums of the mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// First violated condition of the doubly stochastic mixing model.
#[derive(Debug, Error, PartialEq)]
pub enum Violation {
    #[error("entry ({row},{col}) = {value} is negative")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, not 1")]
    RowSum { row: usize, sum: f64 },
    #[error("column {col} sums to {sum}, not 1")]
    ColumnSum { col: usize, sum: f64 },
    #[error("entry ({row},{col}) disagrees with the adjacency structure")]
    Adjacency { row: usize, col: usize },
    #[error("second singular value {sigma2} is not < 1 (network disconnected)")]
    SpectralGap { sigma2: f64 },
}

impl From<Violation> for CrateError {
    fn from(v: Violation) -> Self {
        CrateError::Validation(v.to_string())
    }
}

/// Doubly stochastic mixing matrix with its adjacency and spectral gap.
#[derive(Debug, Clone, PartialEq)]
pub struct CommMatrix {
    weights: DMatrix<f64>,
    adjacency: Vec<bool>,
    sigma2: f64,
}

impl CommMatrix {
    /// Builds from raw weights; adjacency is the nonzero pattern.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let adjacency = weights.iter().map(|&w| w > 0.0).collect();
        let v = Self::assemble(weights, adjacency)?;
        v.validate()?;
        Ok(v)
    }

    /// Builds with an explicit intended adjacency, checked against the
    /// nonzero pattern of the weights.
    pub fn with_adjacency(weights: DMatrix<f64>, adjacency: Vec<bool>) -> Result<Self> {
        let v = Self::assemble(weights, adjacency)?;
        v.validate()?;
        Ok(v)
    }

    pub(crate) fn assemble(weights: DMatrix<f64>, adjacency: Vec<bool>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.nrows() == 0 {
            return Err(CrateError::ShapeMismatch(format!(
                "mixing matrix must be square and nonempty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if adjacency.len() != weights.len() {
            return Err(CrateError::ShapeMismatch(
                "adjacency size differs from weight matrix".into(),
            ));
        }
        let sigma2 = second_singular_value(&weights);
        Ok(Self {
            weights,
            adjacency,
            sigma2,
        })
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.m() + j]
    }

    /// Checks nonnegativity, double stochasticity, adjacency consistency and
    /// the spectral-gap condition; reports the first violation found.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let m = self.m();
        for i in 0..m {
            for j in 0..m {
                let w = self.weights[(i, j)];
                if w < 0.0 {
                    return Err(Violation::NegativeEntry {
                        row: i,
                        col: j,
                        value: w,
                    });
                }
                if (w > 0.0) != self.adjacency[i * m + j] {
                    return Err(Violation::Adjacency { row: i, col: j });
                }
            }
        }
        for i in 0..m {
            let sum: f64 = self.weights.row(i).iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Violation::RowSum { row: i, sum });
            }
        }
        for j in 0..m {
            let sum: f64 = self.weights.column(j).iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Violation::ColumnSum { col: j, sum });
            }
        }
        if self.sigma2 >= 1.0 {
            return Err(Violation::SpectralGap {
                sigma2: self.sigma2,
            });
        }
        Ok(())
    }

    /// One gossip round: `V x`, where row `m` of `x` belongs to agent `m`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.m() {
            return Err(CrateError::ShapeMismatch(format!(
                "gossip input has {} rows, topology has {} agents",
                x.nrows(),
                self.m()
            )));
        }
        Ok(&self.weights * x)
    }
}

/// Fully connected topology: self weight `diag`, all other edges share the
/// remaining mass equally.
pub fn build_fully_connected(m: usize, diag: f64) -> Result<CommMatrix> {
    if m == 0 {
        return Err(CrateError::InvalidArgument("need at least one agent".into()));
    }
    if !(diag > 0.0 && diag <= 1.0) {
        return Err(CrateError::InvalidArgument(format!(
            "diagonal weight must lie in (0,1], got {diag}"
        )));
    }
    if m == 1 {
        if (diag - 1.0).abs() > STOCHASTIC_TOL {
            return Err(CrateError::InvalidArgument(
                "single agent requires diag = 1".into(),
            ));
        }
        // sigma2 of the trivial network is defined as 0 so downstream
        // contraction formulas degrade gracefully.
        return Ok(CommMatrix {
            weights: DMatrix::from_element(1, 1, 1.0),
            adjacency: vec![true],
            sigma2: 0.0,
        });
    }
    let off = (1.0 - diag) / (m - 1) as f64;
    if off < 0.0 {
        return Err(CrateError::InvalidArgument(
            "off-diagonal weight would be negative".into(),
        ));
    }
    let weights = DMatrix::from_fn(m, m, |i, j| if i == j { diag } else { off });
    let v = CommMatrix::from_weights(weights)?;
    if v.sigma2() >= 1.0 {
        return Err(Violation::SpectralGap { sigma2: v.sigma2() }.into());
    }
    Ok(v)
}

/// Ring topology: circulant matrix with self weight `diag` and weight
/// `neighbor` on both ring neighbors.
pub fn build_ring(m: usize, diag: f64, neighbor: f64) -> Result<CommMatrix> {
    if m < 3 {
        return Err(CrateError::InvalidArgument(
            "ring topology needs at least 3 agents".into(),
        ));
    }
    if (diag + 2.0 * neighbor - 1.0).abs() > STOCHASTIC_TOL {
        return Err(CrateError::InvalidArgument(format!(
            "weights must satisfy diag + 2*neighbor = 1, got {}",
            diag + 2.0 * neighbor
        )));
    }
    if diag < 0.0 || neighbor < 0.0 {
        return Err(CrateError::InvalidArgument(
            "ring weights must be nonnegative".into(),
        ));
    }
    let weights = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            diag
        } else if (i + 1) % m == j || (j + 1) % m == i {
            neighbor
        } else {
            0.0
        }
    });
    let v = CommMatrix::from_weights(weights)?;
    if v.sigma2() >= 1.0 {
        return Err(Violation::SpectralGap { sigma2: v.sigma2() }.into());
    }
    Ok(v)
}

/// Second-largest singular value via full SVD (matrices here are small).
pub fn second_singular_value(weights: &DMatrix<f64>) -> f64 {
    if weights.nrows() < 2 {
        return 0.0;
    }
    let svd = weights.clone().svd(false, false);
    let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    values[1]
}

/// Deviation from consensus: subtracts the mean row from every row
/// (the action of `I - (1/M) * ones * ones^T`).
pub fn deviation(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let mean = x.row_mean();
    let mut out = x.clone();
    for i in 0..m {
        let mut row = out.row_mut(i);
        row -= &mean;
    }
    out
}

/// `(||delta x||_F, max_m ||x_m - mean row||)`; callers divide by a reference
/// norm when a relative error is wanted.
pub fn consensus_error(x: &DMatrix<f64>) -> (f64, f64) {
    let dev = deviation(x);
    let frobenius = dev.norm();
    let max_row = (0..dev.nrows())
        .map(|i| dev.row(i).norm())
        .fold(0.0, f64::max);
    (frobenius, max_row)
}
