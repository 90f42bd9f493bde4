//! Sparse Poisson deconvolution: iterative reweighted ℓ1 over an ADMM inner
//! solver, plus the least-squares and plain-ℓ1 baselines.

mod admm;
mod irl1;
mod objective;
mod operator;
mod prox;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admm::admm_weighted_l1;
pub use irl1::{irl1_solve, irl1_weights};
pub use objective::{kl_objective, kl_objective_gradient, model_objective};
pub use operator::{conv3, conv3_adjoint, embed_last_slice, extract_last_slice, x_update, ConvOperator};
pub use prox::{kl_prox, kl_prox_scalar, ls_prox, ls_prox_scalar, shrink_nonneg};

/// Unknown source distribution on the `(m, n, d)` lattice.
pub type Volume = Array3<f64>;
pub type Image = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFit {
    /// Poisson negative log-likelihood (I-divergence).
    Kl,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// `sum |x| / (a + |x|)`, minimized by reweighting.
    NonConvex,
    L1,
}

/// The four model variants compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "kl-nc")]
    KlNc,
    #[serde(rename = "kl-l1")]
    KlL1,
    #[serde(rename = "l2-l1")]
    L2L1,
    #[serde(rename = "l2-nc")]
    L2Nc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::L2L1,
        Algorithm::L2Nc,
        Algorithm::KlL1,
        Algorithm::KlNc,
    ];

    pub fn datafit(self) -> DataFit {
        match self {
            Algorithm::KlNc | Algorithm::KlL1 => DataFit::Kl,
            Algorithm::L2L1 | Algorithm::L2Nc => DataFit::LeastSquares,
        }
    }

    pub fn regularizer(self) -> Regularizer {
        match self {
            Algorithm::KlNc | Algorithm::L2Nc => Regularizer::NonConvex,
            Algorithm::KlL1 | Algorithm::L2L1 => Regularizer::L1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::KlNc => "kl-nc",
            Algorithm::KlL1 => "kl-l1",
            Algorithm::L2L1 => "l2-l1",
            Algorithm::L2Nc => "l2-nc",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Largest admissible dual step, the golden ratio.
pub const RHO_MAX: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Non-convexity scale of `|x| / (a + |x|)`.
    pub a: f64,
    pub mu: f64,
    pub beta0: f64,
    pub beta1: f64,
    /// Dual step length.
    pub rho: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Stop the inner loop once the relative change of `U1` drops below this.
    pub inner_tol: f64,
    pub datafit: DataFit,
    pub regularizer: Regularizer,
    pub background: f64,
}

impl SolverParams {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        let mut params = Self {
            a: 80.0,
            mu: 1.0,
            beta0: 1.0,
            beta1: 1.0,
            rho: 1.618,
            max_outer: 2,
            max_inner: 400,
            inner_tol: 1e-6,
            datafit: algorithm.datafit(),
            regularizer: algorithm.regularizer(),
            background: 5.0,
        };
        if algorithm.regularizer() == Regularizer::L1 {
            params.max_outer = 1;
        }
        params
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.a > 0.0 && self.a.is_finite(), "a must be positive")?;
        check(self.mu > 0.0 && self.mu.is_finite(), "mu must be positive")?;
        check(self.beta0 > 0.0 && self.beta0.is_finite(), "beta0 must be positive")?;
        check(self.beta1 > 0.0 && self.beta1.is_finite(), "beta1 must be positive")?;
        check(
            self.rho > 0.0 && self.rho < RHO_MAX,
            "rho must lie in (0, (1 + sqrt 5) / 2)",
        )?;
        check(self.max_outer >= 1, "max_outer must be at least 1")?;
        check(self.max_inner >= 1, "max_inner must be at least 1")?;
        check(self.inner_tol >= 0.0, "inner_tol must be >= 0")?;
        check(
            self.background >= 0.0 && self.background.is_finite(),
            "background must be >= 0",
        )
    }
}

/// One ADMM iteration's diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    pub inner: usize,
    /// `||U0 - A * X||_F`
    pub gap0: f64,
    /// `||U1 - X||_F`
    pub gap1: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with columns `iteration,gap0,gap1,objective`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,gap0,gap1,objective\n");
        for (i, r) in self.records.iter().enumerate() {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", i + 1, r.gap0, r.gap1, r.objective));
        }
        out
    }
}

pub(crate) fn check_dims(expected: (usize, usize, usize), got: (usize, usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: vec![expected.0, expected.1, expected.2],
            got: vec![got.0, got.1, got.2],
        })
    }
}

pub(crate) fn check_image(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: vec![expected.0, expected.1],
            got: vec![got.0, got.1],
        })
    }
}
