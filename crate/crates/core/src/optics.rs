//! Single-lobe rotating PSF synthesis and the discrete depth dictionary.
//!
//! The pupil carries a spiral phase mask with `L` annular zones whose radii
//! grow as `sqrt(l / L)`; zone `l` winds the phase `l` times around the axis.
//! Defocus adds a quadratic phase `zeta * u^2`, and the incoherent PSF is the
//! squared modulus of the pupil field's Fourier transform:
//!
//! ```text
//! A_zeta(s) ∝ | ∫ P(u) exp(i (2π u·s + zeta u² - psi(u))) du |²
//! ```
//!
//! Coordinates: the pupil is sampled on an `N x N` grid spanning
//! `aperture_side` pupil radii, so one image pixel is `1 / aperture_side`
//! in units of `lambda z_I / R`. Image axis 0 is `x` and axis 1 is `y`; the
//! geometric image point of an unshifted PSF sits on pixel `(m / 2, n / 2)`.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticsConfig {
    /// Number of annular zones `L` in the spiral phase mask.
    pub num_zones: usize,
    /// Image size `(m, n)` in pixels.
    pub image_size: (usize, usize),
    /// Pupil samples per side. Must be at least `max(m, n)`; the PSF is
    /// periodic with this period before cropping to `m x n`.
    pub pupil_grid: usize,
    /// Side of the sampled aperture plane in pupil-radius units.
    pub aperture_side: f64,
    /// Image pixel pitch in units of `lambda z_I / R`.
    pub image_pixel_pitch: f64,
    pub num_slices: usize,
    pub zeta_min: f64,
    pub zeta_max: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            num_zones: 7,
            image_size: (96, 96),
            pupil_grid: 96,
            aperture_side: 4.0,
            image_pixel_pitch: 0.25,
            num_slices: 21,
            zeta_min: -21.0,
            zeta_max: 21.0,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.image_size;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_zones == 0 {
            return bad("num_zones must be at least 1");
        }
        if m == 0 || n == 0 || self.num_slices == 0 || self.pupil_grid == 0 {
            return bad("image size, pupil grid and slice count must be positive");
        }
        if self.pupil_grid < m.max(n) {
            return bad("pupil_grid must be at least max(m, n)");
        }
        if !(self.aperture_side >= 2.0) {
            return bad("aperture_side must be >= 2 so the unit pupil fits");
        }
        if !(self.image_pixel_pitch > 0.0)
            || (self.image_pixel_pitch * self.aperture_side - 1.0).abs() > 1e-9
        {
            return bad("image_pixel_pitch must equal 1 / aperture_side");
        }
        let ordered = if self.num_slices == 1 {
            self.zeta_min <= self.zeta_max
        } else {
            self.zeta_min < self.zeta_max
        };
        if !ordered || !self.zeta_min.is_finite() || !self.zeta_max.is_finite() {
            return bad("zeta_min must be below zeta_max");
        }
        Ok(())
    }

    /// Defocus value of every dictionary slice, uniformly spaced.
    pub fn zetas(&self) -> Vec<f64> {
        let d = self.num_slices;
        if d == 1 {
            return vec![self.zeta_min];
        }
        let step = self.slice_spacing();
        (0..d).map(|k| self.zeta_min + k as f64 * step).collect()
    }

    /// Spacing between adjacent slices in radians of defocus.
    pub fn slice_spacing(&self) -> f64 {
        if self.num_slices < 2 {
            return 1.0;
        }
        (self.zeta_max - self.zeta_min) / (self.num_slices - 1) as f64
    }

    /// Converts a defocus value to a continuous slice index.
    pub fn zeta_to_slice(&self, zeta: f64) -> f64 {
        (zeta - self.zeta_min) / self.slice_spacing()
    }

    pub fn slice_to_zeta(&self, z: f64) -> f64 {
        self.zeta_min + z * self.slice_spacing()
    }

    /// Pixel holding the geometric image point of an unshifted PSF.
    pub fn center(&self) -> (f64, f64) {
        ((self.image_size.0 / 2) as f64, (self.image_size.1 / 2) as f64)
    }
}

/// Gaussian phase error added to the pupil of a degraded mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPerturbation {
    /// Standard deviation in radians.
    pub sigma: f64,
    pub seed: u64,
}

impl MaskPerturbation {
    /// One standard-normal draw per pupil sample (ChaCha8, row-major), scaled
    /// by `sigma`.
    pub fn phase_field(&self, grid: usize) -> Result<Array2<f64>> {
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("perturbation sigma must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(Array2::from_shape_simple_fn((grid, grid), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            self.sigma * z
        }))
    }
}

/// Spiral phase `l * angle` where `l` is the annular zone containing
/// `u_radius`. Zones are half-open, so a radius on `sqrt(l / L)` belongs to
/// zone `l + 1`.
pub fn spiral_phase(u_radius: f64, u_angle: f64, num_zones: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&u_radius) {
        return Err(Error::Domain(format!(
            "pupil radius {u_radius} lies outside the unit aperture"
        )));
    }
    if num_zones == 0 {
        return Err(Error::Config("num_zones must be at least 1".into()));
    }
    Ok(zone_index(u_radius * u_radius, num_zones) as f64 * u_angle)
}

fn zone_index(u_sqr: f64, num_zones: usize) -> usize {
    let l = (u_sqr * num_zones as f64).floor() as usize + 1;
    l.min(num_zones)
}

/// Defocus phase for an object displaced by `delta_z` from the in-focus
/// plane at distance `l0`, for pupil radius `radius` and wavelength `lambda`.
pub fn zeta_of_defocus(delta_z: f64, radius: f64, lambda: f64, l0: f64) -> Result<f64> {
    if !(l0 > 0.0 && lambda > 0.0 && radius > 0.0) {
        return Err(Error::Domain(
            "l0, lambda and pupil radius must be positive".into(),
        ));
    }
    if !(l0 + delta_z > 0.0) {
        return Err(Error::Domain(format!(
            "object at delta_z = {delta_z} lies behind the lens"
        )));
    }
    Ok(-PI * delta_z * radius * radius / (lambda * l0 * (l0 + delta_z)))
}

/// Precomputed pupil for repeated PSF evaluation.
pub struct PsfModel {
    cfg: OpticsConfig,
    /// Pupil samples inside the aperture: flat index, u², centered indices.
    samples: Vec<PupilSample>,
    /// `exp(i (-psi + noise))` times the centering phase, per sample.
    base: Vec<Complex64>,
    norm: f64,
    fft: Fft2,
    field: Vec<Complex64>,
}

struct PupilSample {
    index: usize,
    u_sqr: f64,
    q0: f64,
    q1: f64,
}

impl PsfModel {
    pub fn new(cfg: &OpticsConfig, pert: Option<&MaskPerturbation>) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.pupil_grid;
        let du = cfg.aperture_side / grid as f64;
        let center = (grid / 2) as f64;
        let noise = pert.map(|p| p.phase_field(grid)).transpose()?;

        let mut samples = Vec::new();
        let mut base = Vec::new();
        let mut clean = Vec::new();
        for p in 0..grid {
            for q in 0..grid {
                let q0 = p as f64 - center;
                let q1 = q as f64 - center;
                let (u0, u1) = (q0 * du, q1 * du);
                let u_sqr = u0 * u0 + u1 * u1;
                if u_sqr > 1.0 {
                    continue;
                }
                let psi = zone_index(u_sqr, cfg.num_zones) as f64 * u1.atan2(u0);
                // Moves the transform origin to the grid center.
                let centering = -2.0 * PI * (p as f64 + q as f64) * center / grid as f64;
                let extra = noise.as_ref().map_or(0.0, |nz| nz[[p, q]]);
                base.push(Complex64::from_polar(1.0, centering - psi + extra));
                clean.push(Complex64::from_polar(1.0, centering - psi));
                samples.push(PupilSample {
                    index: p * grid + q,
                    u_sqr,
                    q0,
                    q1,
                });
            }
        }

        let mut model = Self {
            cfg: cfg.clone(),
            samples,
            base: clean,
            norm: 1.0,
            fft: Fft2::new(grid, grid),
            field: vec![Complex64::default(); grid * grid],
        };
        let reference = model.slice(0.0, 0.0, 0.0);
        model.norm = reference.sum();
        model.base = base;
        Ok(model)
    }

    pub fn config(&self) -> &OpticsConfig {
        &self.cfg
    }

    /// PSF at defocus `zeta` whose geometric image point is displaced by
    /// `(dx, dy)` pixels from the array center. Displacements are applied as
    /// a pupil-plane phase ramp, so integer shifts are exact periodic
    /// translations.
    pub fn slice(&mut self, zeta: f64, dx: f64, dy: f64) -> Array2<f64> {
        let grid = self.cfg.pupil_grid;
        let (m, n) = self.cfg.image_size;
        self.field.fill(Complex64::default());
        let ramp = -2.0 * PI / grid as f64;
        for (s, b) in self.samples.iter().zip(&self.base) {
            let phase = zeta * s.u_sqr + ramp * (s.q0 * dx + s.q1 * dy);
            self.field[s.index] = b * Complex64::from_polar(1.0, phase);
        }
        self.fft.inverse(&mut self.field);
        let off0 = grid / 2 - m / 2;
        let off1 = grid / 2 - n / 2;
        let scale = 1.0 / self.norm;
        Array2::from_shape_fn((m, n), |(i, j)| {
            self.field[(i + off0) * grid + j + off1].norm_sqr() * scale
        })
    }
}

/// Stand-alone PSF evaluation; see [`PsfModel::slice`].
pub fn psf_slice(
    zeta: f64,
    dx: f64,
    dy: f64,
    cfg: &OpticsConfig,
    pert: Option<&MaskPerturbation>,
) -> Result<Array2<f64>> {
    Ok(PsfModel::new(cfg, pert)?.slice(zeta, dx, dy))
}

/// The 3D dictionary: one centered PSF per sampled defocus value.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    /// `(m, n, d)`, slice axis last.
    pub data: Array3<f64>,
    pub zetas: Vec<f64>,
    pub per_slice_energy: Vec<f64>,
}

impl PsfStack {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn slice(&self, k: usize) -> Array2<f64> {
        self.data.index_axis(Axis(2), k).to_owned()
    }

    /// Rebuilds the stack from raw slices, recomputing energies.
    pub fn from_data(data: Array3<f64>, zetas: Vec<f64>) -> Result<Self> {
        if zetas.len() != data.dim().2 {
            return Err(Error::Shape {
                expected: vec![data.dim().2],
                got: vec![zetas.len()],
            });
        }
        let per_slice_energy = data.axis_iter(Axis(2)).map(|s| s.sum()).collect();
        Ok(Self {
            data,
            zetas,
            per_slice_energy,
        })
    }
}

pub fn build_dictionary(cfg: &OpticsConfig) -> Result<PsfStack> {
    let mut model = PsfModel::new(cfg, None)?;
    let (m, n) = cfg.image_size;
    let zetas = cfg.zetas();
    let mut data = Array3::zeros((m, n, zetas.len()));
    for (k, &zeta) in zetas.iter().enumerate() {
        data.index_axis_mut(Axis(2), k).assign(&model.slice(zeta, 0.0, 0.0));
    }
    PsfStack::from_data(data, zetas)
}
