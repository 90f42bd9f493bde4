use ndarray::{Array2, Axis, Zip};

use super::{check_dims, check_image, Volume};
use crate::error::{Error, Result};

/// Minimizer over `u` of `u - g ln(u + b) + beta/2 (u - xi)²`.
///
/// With `y = u + b` the stationarity condition is the quadratic
/// `beta y² + (1 - beta (b + xi)) y - g = 0`; the nonnegative root is
/// evaluated in whichever form avoids cancellation.
#[inline]
pub fn kl_prox_scalar(xi: f64, g: f64, b: f64, beta: f64) -> f64 {
    let p = 1.0 - beta * (b + xi);
    let disc = (p * p + 4.0 * beta * g).sqrt();
    let y = if p >= 0.0 {
        if p + disc > 0.0 {
            2.0 * g / (p + disc)
        } else {
            0.0
        }
    } else {
        (disc - p) / (2.0 * beta)
    };
    y - b
}

/// Minimizer over `u` of `1/2 (u + b - g)² + beta/2 (u - xi)²`.
#[inline]
pub fn ls_prox_scalar(xi: f64, g: f64, b: f64, beta: f64) -> f64 {
    (beta * xi + g - b) / (1.0 + beta)
}

fn check(xi: &Volume, g: &Array2<f64>, b: f64, beta: f64) -> Result<()> {
    let (m, n, _) = xi.dim();
    check_image((m, n), g.dim())?;
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("prox weight beta = {beta} must be positive")));
    }
    if !(b >= 0.0) {
        return Err(Error::Domain("background must be >= 0".into()));
    }
    Ok(())
}

fn last_slice_prox(
    xi: &Volume,
    g: &Array2<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Volume {
    let d = xi.dim().2;
    let mut out = xi.clone();
    Zip::from(out.index_axis_mut(Axis(2), d - 1))
        .and(g)
        .for_each(|u, &gv| *u = f(*u, gv));
    out
}

/// Proximal map of the KL data term through the snapshot operator: only
/// the last slice is touched.
pub fn kl_prox(xi: &Volume, g: &Array2<f64>, b: f64, beta: f64) -> Result<Volume> {
    check(xi, g, b, beta)?;
    if let Some(v) = g.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("negative count {v}")));
    }
    Ok(last_slice_prox(xi, g, |x, gv| kl_prox_scalar(x, gv, b, beta)))
}

/// Least-squares counterpart of [`kl_prox`].
pub fn ls_prox(xi: &Volume, g: &Array2<f64>, b: f64, beta: f64) -> Result<Volume> {
    check(xi, g, b, beta)?;
    Ok(last_slice_prox(xi, g, |x, gv| ls_prox_scalar(x, gv, b, beta)))
}

/// Elementwise `max(v - t, 0)`.
pub fn shrink_nonneg(v: &Volume, thresholds: &Volume) -> Result<Volume> {
    check_dims(v.dim(), thresholds.dim())?;
    if thresholds.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Domain("thresholds must be >= 0".into()));
    }
    let mut out = v.clone();
    Zip::from(&mut out)
        .and(thresholds)
        .for_each(|x, &t| *x = (*x - t).max(0.0));
    Ok(out)
}
