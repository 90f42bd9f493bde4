//! ADMM for `D(T(A*X)) + <w, X>` over `X >= 0`, with the splitting
//! `U0 = A*X`, `U1 = X`.
//!
//! `X`, `A*X` and the `U0` multiplier are kept as spectra. The data prox
//! only changes the last slice of `U0`, so its effect on the spectrum is a
//! single plane times a phase ramp along the slice axis, and one iteration
//! costs one forward and one inverse volume transform.

use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex64;

use super::objective::{kl_data_term, ls_data_term, regularizer_sum};
use super::operator::{check_counts, ConvOperator};
use super::prox::{kl_prox_scalar, ls_prox_scalar};
use super::{check_dims, DataFit, SolveTrace, SolverParams, TraceRecord, Volume};
use crate::error::{Error, Result};
use crate::optics::PsfStack;

/// Iterates carried between inner solves.
pub(crate) struct AdmmState {
    dims: (usize, usize, usize),
    x: Vec<f64>,
    /// Spectrum of `A * X`.
    p_hat: Vec<Complex64>,
    eta0_hat: Vec<Complex64>,
    eta1: Vec<f64>,
    u1: Vec<f64>,
}

impl AdmmState {
    /// Starts from `x` with zero multipliers.
    pub(crate) fn new(op: &mut ConvOperator, x: &Volume) -> Result<Self> {
        let dims = op.dims();
        check_dims(dims, x.dim())?;
        let x: Vec<f64> = x.as_standard_layout().iter().copied().collect();
        let len = op.fft.spectrum_len();
        let mut x_hat = vec![Complex64::default(); len];
        op.fft.forward(&x, &mut x_hat);
        let p_hat = x_hat.iter().zip(&op.kernel).map(|(z, k)| z * k).collect();
        let u1 = x.iter().map(|v| v.max(0.0)).collect();
        Ok(Self {
            dims,
            eta1: vec![0.0; x.len()],
            x,
            p_hat,
            eta0_hat: vec![Complex64::default(); len],
            u1,
        })
    }

    /// The nonnegative iterate `U1`.
    pub(crate) fn solution(&self) -> Volume {
        Array3::from_shape_vec(self.dims, self.u1.clone()).expect("state length matches dims")
    }

    pub(crate) fn u1(&self) -> &[f64] {
        &self.u1
    }
}

/// Runs inner iterations from `state` with per-voxel weights `w`, appending
/// to `trace`. Returns the number of iterations taken.
pub(crate) fn run_inner(
    op: &mut ConvOperator,
    state: &mut AdmmState,
    counts: &Array2<f64>,
    weights: &[f64],
    params: &SolverParams,
    outer: usize,
    trace: &mut SolveTrace,
) -> Result<usize> {
    let (m, n, d) = op.dims();
    let h = op.fft.half();
    let mn = m * n;
    let nd = mn * d;
    assert_eq!(weights.len(), nd);
    let b = params.background;
    let (beta0, beta1, rho) = (params.beta0, params.beta1, params.rho);
    let ratio = beta1 / beta0;
    let bin_w: Vec<f64> = (0..h).map(|kf| op.fft.bin_weight(kf)).collect();
    let phases = op.fft.slice_phases(d - 1);
    let thresholds: Vec<f64> = weights.iter().map(|w| w / beta1).collect();
    // The X-update per frequency: x = kc (P + C) + kr R.
    let coef: Vec<(Complex64, f64)> = op
        .kernel
        .iter()
        .map(|k| {
            let inv = 1.0 / (k.norm_sqr() + ratio);
            (k.conj() * inv, ratio * inv)
        })
        .collect();
    let mut u1_new = vec![0.0; nd];
    let mut r = vec![0.0; nd];
    let mut r_hat = vec![Complex64::default(); op.fft.spectrum_len()];
    let mut x_hat = vec![Complex64::default(); op.fft.spectrum_len()];
    let mut correction = Array2::zeros((m, n));

    for t in 0..params.max_inner {
        // U0 = prox(A X + eta0) differs from its argument on the last slice only.
        let xi = op.fft.slice_from_spectra(&[&state.p_hat, &state.eta0_hat], d - 1);
        for ((c, &x), &g) in correction.iter_mut().zip(&xi).zip(counts) {
            let u = match params.datafit {
                DataFit::Kl => kl_prox_scalar(x, g, b, beta0),
                DataFit::LeastSquares => ls_prox_scalar(x, g, b, beta0),
            };
            *c = u - x;
        }
        let plane = op.fft.plane_spectrum(&correction).to_vec();

        let mut change = 0.0;
        let mut prev = 0.0;
        for ((((un, ri), &x), &e), (&th, &uo)) in u1_new
            .iter_mut()
            .zip(r.iter_mut())
            .zip(&state.x)
            .zip(&state.eta1)
            .zip(thresholds.iter().zip(&state.u1))
        {
            let u = (x + e - th).max(0.0);
            change += (u - uo) * (u - uo);
            prev += uo * uo;
            *un = u;
            *ri = u - e;
        }
        op.fft.forward(&r, &mut r_hat);

        let mut gap0 = 0.0;
        for kf in 0..h {
            let span = kf * mn..(kf + 1) * mn;
            let phase = phases[kf];
            let mut acc = 0.0;
            for ((((((&cp, &(kc, kr)), &k), p), e), &rh), xh) in plane
                .iter()
                .zip(&coef[span.clone()])
                .zip(&op.kernel[span.clone()])
                .zip(&mut state.p_hat[span.clone()])
                .zip(&mut state.eta0_hat[span.clone()])
                .zip(&r_hat[span.clone()])
                .zip(&mut x_hat[span])
            {
                let c = cp * phase;
                let pc = *p + c;
                let x_new = kc * pc + kr * rh;
                let p_new = k * x_new;
                let diff = pc + *e - p_new;
                acc += diff.norm_sqr();
                *e -= rho * diff;
                *p = p_new;
                *xh = x_new;
            }
            gap0 += bin_w[kf] * acc;
        }
        let gap0 = (gap0 / nd as f64).sqrt();
        op.fft.inverse(&mut x_hat, &mut state.x);

        let mut gap1 = 0.0;
        for ((&u, &x), e) in u1_new.iter().zip(&state.x).zip(state.eta1.iter_mut()) {
            let diff = u - x;
            gap1 += diff * diff;
            *e -= rho * diff;
        }
        let gap1 = gap1.sqrt();
        std::mem::swap(&mut state.u1, &mut u1_new);

        let image = op.fft.slice_from_spectrum(&state.p_hat, d - 1);
        let data = match params.datafit {
            DataFit::Kl => kl_data_term(&image, counts, b).unwrap_or(f64::INFINITY),
            DataFit::LeastSquares => ls_data_term(&image, counts, b),
        };
        let objective = data + regularizer_sum(&state.x, params.regularizer, params.mu, params.a);
        trace.records.push(TraceRecord {
            outer,
            inner: t + 1,
            gap0,
            gap1,
            objective,
        });
        if !gap0.is_finite() || !gap1.is_finite() || objective.is_nan() {
            return Err(Error::Divergence(format!(
                "non-finite iterate at outer round {outer}, inner iteration {}",
                t + 1
            )));
        }
        if prev > 0.0 && (change / prev).sqrt() < params.inner_tol {
            return Ok(t + 1);
        }
    }
    Ok(params.max_inner)
}

/// One weighted-ℓ1 solve: minimizes the data term plus `<weights, X>` over
/// `X >= 0`, starting from `warm` (or zero).
pub fn admm_weighted_l1(
    counts: &Array2<f64>,
    dict: &PsfStack,
    weights: &Volume,
    params: &SolverParams,
    warm: Option<&Volume>,
) -> Result<(Volume, SolveTrace)> {
    params.validate()?;
    let dims = dict.dims();
    check_counts(dims, counts)?;
    check_dims(dims, weights.dim())?;
    if counts.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::Domain("counts must be finite and >= 0".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Domain("weights must be >= 0".into()));
    }
    if counts.iter().all(|g| *g == 0.0) {
        return Ok((Volume::zeros(dims), SolveTrace::default()));
    }
    let mut op = ConvOperator::new(dict);
    let start = match warm {
        Some(v) => v.clone(),
        None => Volume::zeros(dims),
    };
    let mut state = AdmmState::new(&mut op, &start)?;
    let w: Vec<f64> = weights.as_standard_layout().iter().copied().collect();
    let mut trace = SolveTrace::default();
    run_inner(&mut op, &mut state, counts, &w, params, 1, &mut trace)?;
    Ok((state.solution(), trace))
}
