use ndarray::{Array2, Zip};

use super::operator::{check_counts, ConvOperator};
use super::{DataFit, Regularizer, Volume};
use crate::error::{Error, Result};
use crate::optics::PsfStack;

/// `<1, z - g ln(z + b)>` for the noiseless image `z`.
pub(crate) fn kl_data_term(image: &Array2<f64>, g: &Array2<f64>, b: f64) -> Result<f64> {
    let mut total = 0.0;
    for (z, gv) in image.iter().zip(g) {
        let mean = z + b;
        if *gv > 0.0 {
            if !(mean > 0.0) {
                return Err(Error::Domain(format!(
                    "model intensity {mean} is not positive where counts are {gv}"
                )));
            }
            total += z - gv * mean.ln();
        } else {
            total += z;
        }
    }
    Ok(total)
}

pub(crate) fn ls_data_term(image: &Array2<f64>, g: &Array2<f64>, b: f64) -> f64 {
    0.5 * image
        .iter()
        .zip(g)
        .map(|(z, gv)| (z + b - gv).powi(2))
        .sum::<f64>()
}

pub(crate) fn regularizer_value(vol: &Volume, reg: Regularizer, mu: f64, a: f64) -> f64 {
    match vol.as_slice() {
        Some(s) => regularizer_sum(s, reg, mu, a),
        None => regularizer_sum(&vol.iter().copied().collect::<Vec<_>>(), reg, mu, a),
    }
}

pub(crate) fn regularizer_sum(x: &[f64], reg: Regularizer, mu: f64, a: f64) -> f64 {
    match reg {
        Regularizer::NonConvex => mu * x.iter().map(|v| v.abs() / (a + v.abs())).sum::<f64>(),
        Regularizer::L1 => mu * x.iter().map(|v| v.abs()).sum::<f64>(),
    }
}

fn check_nonneg(vol: &Volume) -> Result<()> {
    match vol.iter().find(|v| !(**v >= 0.0)) {
        Some(v) => Err(Error::Domain(format!("volume entry {v} is negative"))),
        None => Ok(()),
    }
}

/// The non-convex Poisson objective
/// `<1, T(A*X) - G ln(T(A*X) + b)> + mu sum X / (a + X)`.
pub fn kl_objective(
    vol: &Volume,
    dict: &PsfStack,
    g: &Array2<f64>,
    b: f64,
    mu: f64,
    a: f64,
) -> Result<f64> {
    model_objective(vol, dict, g, b, mu, a, DataFit::Kl, Regularizer::NonConvex)
}

/// Objective of any of the four model variants.
#[allow(clippy::too_many_arguments)]
pub fn model_objective(
    vol: &Volume,
    dict: &PsfStack,
    g: &Array2<f64>,
    b: f64,
    mu: f64,
    a: f64,
    datafit: DataFit,
    reg: Regularizer,
) -> Result<f64> {
    super::check_dims(dict.dims(), vol.dim())?;
    check_counts(dict.dims(), g)?;
    check_nonneg(vol)?;
    let image = ConvOperator::new(dict).image_of(vol)?;
    let data = match datafit {
        DataFit::Kl => kl_data_term(&image, g, b)?,
        DataFit::LeastSquares => ls_data_term(&image, g, b),
    };
    Ok(data + regularizer_value(vol, reg, mu, a))
}

/// Gradient of [`kl_objective`] at a strictly positive volume.
pub fn kl_objective_gradient(
    vol: &Volume,
    dict: &PsfStack,
    g: &Array2<f64>,
    b: f64,
    mu: f64,
    a: f64,
) -> Result<Volume> {
    super::check_dims(dict.dims(), vol.dim())?;
    check_counts(dict.dims(), g)?;
    check_nonneg(vol)?;
    let mut op = ConvOperator::new(dict);
    let image = op.image_of(vol)?;
    let mut residual = Array2::zeros(image.dim());
    Zip::from(&mut residual)
        .and(&image)
        .and(g)
        .for_each(|r, &z, &gv| *r = 1.0 - gv / (z + b));
    let d = vol.dim().2;
    let mut grad = op.adjoint(&super::embed_last_slice(&residual, d))?;
    Zip::from(&mut grad)
        .and(vol)
        .for_each(|gr, &x| *gr += mu * a / (a + x).powi(2));
    Ok(grad)
}
