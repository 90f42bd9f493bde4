//! Flux refinement for localized sources under the Poisson model.
//!
//! With `H` the matrix of unit-flux source images, the stationarity condition
//! of `<1, Hf - g ln(Hf + b)>` can be rearranged into the fixed point
//! `f = f_G + K(f)`, where `f_G = H⁺(g - b)` is the least-squares flux and
//! `K(f) = H⁺ [(Hf + b - g) ⊙ Hf / (Hf + b)]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::optics::{OpticsConfig, PsfModel};
use crate::postproc::Detection;

/// Columns are vectorized (row-major) unit-flux images, one per detection.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfMatrix {
    /// `K x M` with `K = m n`.
    pub columns: Array2<f64>,
    pub positions: Vec<Detection>,
}

impl PsfMatrix {
    pub fn num_sources(&self) -> usize {
        self.columns.ncols()
    }

    /// `H f` as a flat image.
    pub fn apply(&self, f: &[f64]) -> Array1<f64> {
        self.columns.dot(&Array1::from(f.to_vec()))
    }
}

pub fn build_h(dets: &[Detection], cfg: &OpticsConfig) -> Result<PsfMatrix> {
    let mut model = PsfModel::new(cfg, None)?;
    build_h_with(dets, &mut model)
}

/// [`build_h`] with a caller-owned optics model, e.g. a degraded one.
pub fn build_h_with(dets: &[Detection], model: &mut PsfModel) -> Result<PsfMatrix> {
    if dets.is_empty() {
        return Err(Error::Domain("no detections to build a PSF matrix from".into()));
    }
    let cfg = model.config().clone();
    let (m, n) = cfg.image_size;
    if dets.len() > m * n {
        return Err(Error::Domain("more sources than pixels".into()));
    }
    let d = cfg.num_slices as f64;
    let (c0, c1) = cfg.center();
    let mut columns = Array2::zeros((m * n, dets.len()));
    for (i, det) in dets.iter().enumerate() {
        let inside = (0.0..=(m - 1) as f64).contains(&det.x)
            && (0.0..=(n - 1) as f64).contains(&det.y)
            && (0.0..=d - 1.0).contains(&det.z);
        if !inside {
            return Err(Error::Domain(format!(
                "detection {i} at ({}, {}, {}) lies outside the volume",
                det.x, det.y, det.z
            )));
        }
        let img = model.slice(cfg.slice_to_zeta(det.z), det.x - c0, det.y - c1);
        columns
            .column_mut(i)
            .assign(&Array1::from_iter(img.iter().copied()));
    }
    Ok(PsfMatrix {
        columns,
        positions: dets.to_vec(),
    })
}

/// Cached normal-equation factorization of a PSF matrix.
struct Normal {
    chol: Cholesky<f64, Dyn>,
}

impl Normal {
    fn new(h: &PsfMatrix) -> Result<Self> {
        let m = h.num_sources();
        let gram = h.columns.t().dot(&h.columns);
        // Near-duplicate columns make the system numerically singular even
        // when the factorization happens to succeed.
        let norms: Vec<f64> = (0..m).map(|i| gram[[i, i]].sqrt()).collect();
        let mut worst = (0, 0, -1.0);
        for i in 0..m {
            for j in i + 1..m {
                let cos = gram[[i, j]] / (norms[i] * norms[j]);
                if cos > worst.2 {
                    worst = (i, j, cos);
                }
            }
        }
        if worst.2 > 1.0 - 1e-10 || norms.iter().any(|v| !(*v > 0.0)) {
            return Err(singular(&norms, worst));
        }
        let g = DMatrix::from_fn(m, m, |i, j| gram[[i, j]]);
        let chol = Cholesky::new(g).ok_or_else(|| singular(&norms, worst))?;
        Ok(Self { chol })
    }

    /// `(HᵀH)⁻¹ Hᵀ v`
    fn pinv(&self, h: &PsfMatrix, v: &Array1<f64>) -> Vec<f64> {
        let rhs = h.columns.t().dot(v);
        self.chol
            .solve(&DVector::from_vec(rhs.to_vec()))
            .iter()
            .copied()
            .collect()
    }
}

fn singular(norms: &[f64], worst: (usize, usize, f64)) -> Error {
    if let Some(i) = norms.iter().position(|v| !(*v > 0.0)) {
        return Error::Singular { first: i, second: i };
    }
    Error::Singular {
        first: worst.0,
        second: worst.1,
    }
}

fn check_image(h: &PsfMatrix, g: &Array2<f64>) -> Result<Array1<f64>> {
    let k = h.columns.nrows();
    if g.len() != k {
        return Err(Error::Shape {
            expected: vec![k],
            got: vec![g.len()],
        });
    }
    Ok(Array1::from_iter(g.iter().copied()))
}

/// Least-squares flux `(HᵀH)⁻¹ Hᵀ (g - b)`; entries may be negative.
pub fn gaussian_flux(h: &PsfMatrix, g: &Array2<f64>, b: f64) -> Result<Vec<f64>> {
    let gv = check_image(h, g)?;
    let normal = Normal::new(h)?;
    Ok(normal.pinv(h, &(gv - b)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSettings {
    pub max_iter: usize,
    /// Relative sup-norm step at which the iteration stops.
    pub tol: f64,
}

impl Default for FluxSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// `K(f)` of the fixed-point map.
pub fn kl_flux_correction(h: &PsfMatrix, g: &Array2<f64>, b: f64, f: &[f64]) -> Result<Vec<f64>> {
    let gv = check_image(h, g)?;
    let normal = Normal::new(h)?;
    correction(h, &normal, &gv, b, f)
}

fn correction(h: &PsfMatrix, normal: &Normal, g: &Array1<f64>, b: f64, f: &[f64]) -> Result<Vec<f64>> {
    let hf = h.apply(f);
    let mut v = Array1::zeros(hf.len());
    for ((vi, &z), &gi) in v.iter_mut().zip(&hf).zip(g) {
        let mean = z + b;
        if !(mean > 0.0) {
            return Err(Error::Divergence(format!(
                "model intensity {mean} is not positive during flux refinement"
            )));
        }
        *vi = (mean - gi) * z / mean;
    }
    Ok(normal.pinv(h, &v))
}

/// Gradient of `<1, Hf - g ln(Hf + b)>` with respect to `f`.
pub fn kl_flux_gradient(h: &PsfMatrix, g: &Array2<f64>, b: f64, f: &[f64]) -> Result<Vec<f64>> {
    let gv = check_image(h, g)?;
    let hf = h.apply(f);
    let r: Array1<f64> = hf
        .iter()
        .zip(&gv)
        .map(|(z, gi)| 1.0 - gi / (z + b))
        .collect();
    Ok(h.columns.t().dot(&r).to_vec())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Iterates `f ← f_G + K(f)` from `max(f_G, 0)` until the relative
/// sup-norm step is at most `tol`. The accepted iterate is returned with
/// negative entries clamped to zero.
pub fn kl_flux_iterate(
    h: &PsfMatrix,
    g: &Array2<f64>,
    b: f64,
    settings: FluxSettings,
) -> Result<Vec<f64>> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!(
            "flux refinement needs a positive background, got {b}"
        )));
    }
    if !(settings.tol >= 0.0) {
        return Err(Error::Config("flux tolerance must be >= 0".into()));
    }
    let gv = check_image(h, g)?;
    let normal = Normal::new(h)?;
    let f_g = normal.pinv(h, &(&gv - b));
    let mut f: Vec<f64> = f_g.iter().map(|v| v.max(0.0)).collect();
    let limit = 1e3 * sup(&f).max(1.0);
    for it in 0..settings.max_iter {
        let k = correction(h, &normal, &gv, b, &f)?;
        let next: Vec<f64> = f_g.iter().zip(&k).map(|(a, c)| a + c).collect();
        let step = sup(&f.iter().zip(&next).map(|(a, c)| a - c).collect::<Vec<_>>());
        if next.iter().any(|v| !v.is_finite()) || sup(&next) > limit {
            return Err(Error::Divergence(format!(
                "flux iterate left the admissible range at step {}",
                it + 1
            )));
        }
        if step <= settings.tol * sup(&f) {
            break;
        }
        f = next;
    }
    Ok(f.into_iter().map(|v| v.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> OpticsConfig {
        OpticsConfig {
            image_size: (32, 32),
            pupil_grid: 32,
            num_slices: 5,
            ..OpticsConfig::default()
        }
    }

    fn det(x: f64, y: f64, z: f64) -> Detection {
        Detection { x, y, z, flux: 0.0 }
    }

    fn image_of(h: &PsfMatrix, f: &[f64], b: f64, cfg: &OpticsConfig) -> Array2<f64> {
        let v = h.apply(f) + b;
        Array2::from_shape_vec(cfg.image_size, v.to_vec()).unwrap()
    }

    #[test]
    fn grid_column_matches_dictionary() {
        let cfg = small_cfg();
        let dict = crate::optics::build_dictionary(&cfg).unwrap();
        let h = build_h(&[det(16.0, 16.0, 3.0)], &cfg).unwrap();
        for (a, b) in h.columns.column(0).iter().zip(dict.slice(3).iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn scalar_projection_and_consistency() {
        let cfg = small_cfg();
        let h = build_h(&[det(10.0, 9.0, 1.0)], &cfg).unwrap();
        let g = image_of(&h, &[500.0], 3.0, &cfg);
        let f = gaussian_flux(&h, &g, 3.0).unwrap();
        assert!((f[0] - 500.0).abs() < 1e-8);
        let dets = [det(6.0, 6.0, 0.0), det(22.0, 10.0, 2.5), det(14.0, 24.0, 4.0)];
        let h = build_h(&dets, &cfg).unwrap();
        let truth = [800.0, 1500.0, 300.0];
        let g = image_of(&h, &truth, 5.0, &cfg);
        let fg = gaussian_flux(&h, &g, 5.0).unwrap();
        let fk = kl_flux_iterate(&h, &g, 5.0, FluxSettings::default()).unwrap();
        for ((a, b), t) in fg.iter().zip(&fk).zip(&truth) {
            assert!((a - t).abs() < 1e-8 * t);
            assert!((b - t).abs() < 1e-6 * t);
        }
    }

    #[test]
    fn duplicate_detection_is_singular() {
        let cfg = small_cfg();
        let h = build_h(&[det(6.0, 6.0, 0.0), det(20.0, 20.0, 1.0), det(6.0, 6.0, 0.0)], &cfg)
            .unwrap();
        let g = Array2::from_elem((32, 32), 5.0);
        match gaussian_flux(&h, &g, 5.0) {
            Err(Error::Singular { first: 0, second: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors() {
        let cfg = small_cfg();
        assert!(build_h(&[], &cfg).is_err());
        assert!(build_h(&[det(40.0, 1.0, 0.0)], &cfg).is_err());
        let h = build_h(&[det(6.0, 6.0, 0.0)], &cfg).unwrap();
        let g = Array2::from_elem((32, 32), 5.0);
        assert!(kl_flux_iterate(&h, &g, 0.0, FluxSettings::default()).is_err());
        assert!(gaussian_flux(&h, &Array2::zeros((4, 4)), 1.0).is_err());
    }

    #[test]
    fn infinite_tolerance_returns_start() {
        let cfg = small_cfg();
        let h = build_h(&[det(12.0, 12.0, 2.0)], &cfg).unwrap();
        let mut g = image_of(&h, &[400.0], 5.0, &cfg);
        g[[12, 12]] += 30.0;
        let fg = gaussian_flux(&h, &g, 5.0).unwrap();
        let settings = FluxSettings {
            max_iter: 100,
            tol: f64::INFINITY,
        };
        let f = kl_flux_iterate(&h, &g, 5.0, settings).unwrap();
        assert_eq!(f[0], fg[0].max(0.0));
    }
}
