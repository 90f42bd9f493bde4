use ndarray::Array2;

use super::admm::{run_inner, AdmmState};
use super::operator::{check_counts, ConvOperator};
use super::{Regularizer, SolveTrace, SolverParams, Volume};
use crate::error::{Error, Result};
use crate::optics::PsfStack;

/// Weights of the linearized `mu sum x / (a + x)` at `x`:
/// `mu a / (a + |x|)²`.
pub fn irl1_weights(x: &Volume, mu: f64, a: f64) -> Volume {
    x.mapv(|v| mu * a / (a + v.abs()).powi(2))
}

/// Full solve for the variant selected by `params`: reweighted ℓ1 rounds for
/// the non-convex penalty, a single uniform round for plain ℓ1. The ADMM
/// state is carried across rounds.
pub fn irl1_solve(
    counts: &Array2<f64>,
    dict: &PsfStack,
    params: &SolverParams,
) -> Result<(Volume, SolveTrace)> {
    params.validate()?;
    let dims = dict.dims();
    check_counts(dims, counts)?;
    if counts.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::Domain("counts must be finite and >= 0".into()));
    }
    let mut trace = SolveTrace::default();
    if counts.iter().all(|g| *g == 0.0) {
        return Ok((Volume::zeros(dims), trace));
    }
    let mut op = ConvOperator::new(dict);
    let mut state = AdmmState::new(&mut op, &Volume::zeros(dims))?;
    let rounds = match params.regularizer {
        Regularizer::NonConvex => params.max_outer,
        Regularizer::L1 => 1,
    };
    let nd = dims.0 * dims.1 * dims.2;
    for outer in 1..=rounds {
        let weights: Vec<f64> = match params.regularizer {
            Regularizer::NonConvex => state
                .u1()
                .iter()
                .map(|v| params.mu * params.a / (params.a + v.abs()).powi(2))
                .collect(),
            Regularizer::L1 => vec![params.mu; nd],
        };
        run_inner(&mut op, &mut state, counts, &weights, params, outer, &mut trace)?;
    }
    Ok((state.solution(), trace))
}
