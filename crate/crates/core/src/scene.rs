//! Random ground-truth scenes, continuous-position rendering and photon noise.
//!
//! All randomness comes from ChaCha8 seeded with a `u64`, so a seed fully
//! determines a scene or a noise draw.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{MaskPerturbation, OpticsConfig, PsfModel};

/// Minimum distance, in pixels, kept between generated sources and the
/// transverse image borders.
pub const EDGE_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub x: f64,
    pub y: f64,
    pub zeta: f64,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub sources: Vec<PointSource>,
    pub background: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedImage {
    pub counts: Array2<u32>,
    pub seed: u64,
}

impl ObservedImage {
    pub fn to_f64(&self) -> Array2<f64> {
        self.counts.mapv(f64::from)
    }

    /// Rounds a real-valued image back to counts.
    pub fn from_f64(image: &Array2<f64>, seed: u64) -> Result<Self> {
        if let Some(v) = image.iter().find(|v| !(**v >= 0.0) || **v > u32::MAX as f64) {
            return Err(Error::Domain(format!("{v} is not a valid photon count")));
        }
        Ok(Self {
            counts: image.mapv(|v| v.round() as u32),
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FluxModel {
    /// Each source draws its flux from Poisson(flux_mean).
    #[default]
    Poisson,
    /// Every source gets exactly flux_mean.
    Fixed,
}

pub fn random_scene(
    count: usize,
    cfg: &OpticsConfig,
    flux_mean: f64,
    background: f64,
    flux_model: FluxModel,
    seed: u64,
) -> Result<Scene> {
    cfg.validate()?;
    if !(flux_mean > 0.0) {
        return Err(Error::Config("flux_mean must be positive".into()));
    }
    if !(background >= 0.0) {
        return Err(Error::Config("background must be >= 0".into()));
    }
    let (m, n) = cfg.image_size;
    let (m, n) = (m as f64, n as f64);
    if m - 1.0 <= 2.0 * EDGE_MARGIN || n - 1.0 <= 2.0 * EDGE_MARGIN {
        return Err(Error::Config("image too small for the edge margin".into()));
    }
    let half = 0.5 * cfg.slice_spacing();
    let (z_lo, z_hi) = if cfg.num_slices > 1 {
        (cfg.zeta_min + half, cfg.zeta_max - half)
    } else {
        (cfg.zeta_min, cfg.zeta_max)
    };
    let poisson = Poisson::new(flux_mean).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = (0..count)
        .map(|_| {
            let x = rng.random_range(EDGE_MARGIN..=m - 1.0 - EDGE_MARGIN);
            let y = rng.random_range(EDGE_MARGIN..=n - 1.0 - EDGE_MARGIN);
            let zeta = if z_hi > z_lo {
                rng.random_range(z_lo..=z_hi)
            } else {
                z_lo
            };
            let flux = match flux_model {
                FluxModel::Poisson => poisson.sample(&mut rng),
                FluxModel::Fixed => flux_mean,
            };
            PointSource { x, y, zeta, flux }
        })
        .collect();
    Ok(Scene {
        sources,
        background,
        seed,
    })
}

/// Noiseless image `sum_i f_i H_i + b` using the continuous optics model.
pub fn render(scene: &Scene, cfg: &OpticsConfig) -> Result<Array2<f64>> {
    render_with(scene, cfg, None)
}

/// Like [`render`], imaging through a degraded mask when `pert` is given.
pub fn render_with(
    scene: &Scene,
    cfg: &OpticsConfig,
    pert: Option<&MaskPerturbation>,
) -> Result<Array2<f64>> {
    let mut model = PsfModel::new(cfg, pert)?;
    render_model(scene, &mut model)
}

pub fn render_model(scene: &Scene, model: &mut PsfModel) -> Result<Array2<f64>> {
    let cfg = model.config().clone();
    let (m, n) = cfg.image_size;
    if !(scene.background >= 0.0) {
        return Err(Error::Domain("background must be >= 0".into()));
    }
    let mut image = Array2::from_elem((m, n), scene.background);
    let (c0, c1) = cfg.center();
    for (idx, s) in scene.sources.iter().enumerate() {
        let inside = (0.0..m as f64).contains(&s.x)
            && (0.0..n as f64).contains(&s.y)
            && (cfg.zeta_min..=cfg.zeta_max).contains(&s.zeta);
        if !inside {
            return Err(Error::Domain(format!(
                "source {idx} at ({}, {}, {}) lies outside the imaged volume",
                s.x, s.y, s.zeta
            )));
        }
        if !(s.flux >= 0.0) {
            return Err(Error::Domain(format!("source {idx} has negative flux")));
        }
        let psf = model.slice(s.zeta, s.x - c0, s.y - c1);
        image.scaled_add(s.flux, &psf);
    }
    Ok(image)
}

/// Independent Poisson draw per pixel with the pixel value as mean.
pub fn sample_poisson(image: &Array2<f64>, seed: u64) -> Result<ObservedImage> {
    if let Some(v) = image.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("invalid Poisson mean {v}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = image.mapv(|lambda| {
        if lambda == 0.0 {
            return 0;
        }
        let draw: f64 = Poisson::new(lambda)
            .expect("mean checked positive and finite")
            .sample(&mut rng);
        draw as u32
    });
    Ok(ObservedImage { counts, seed })
}

impl Scene {
    /// Text form: a `#` header with background and seed, a column line, then
    /// one `x,y,zeta,flux` record per source.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# background={:?} seed={}", self.background, self.seed).unwrap();
        writeln!(out, "x,y,zeta,flux").unwrap();
        for s in &self.sources {
            writeln!(out, "{:?},{:?},{:?},{:?}", s.x, s.y, s.zeta, s.flux).unwrap();
        }
        out
    }
}

impl FromStr for Scene {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut background = None;
        let mut seed = None;
        let mut sources = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line == "x,y,zeta,flux" {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for field in header.split_whitespace() {
                    match field.split_once('=') {
                        Some(("background", v)) => background = Some(parse_num(v, lineno)?),
                        Some(("seed", v)) => {
                            seed = Some(v.parse::<u64>().map_err(|e| {
                                Error::Parse(format!("line {}: seed: {e}", lineno + 1))
                            })?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let values = line
                .split(',')
                .map(|v| parse_num(v.trim(), lineno))
                .collect::<Result<Vec<_>>>()?;
            let [x, y, zeta, flux] = values[..] else {
                return Err(Error::Parse(format!(
                    "line {}: expected 4 columns, found {}",
                    lineno + 1,
                    values.len()
                )));
            };
            sources.push(PointSource { x, y, zeta, flux });
        }
        Ok(Scene {
            sources,
            background: background
                .ok_or_else(|| Error::Parse("scene header lacks background".into()))?,
            seed: seed.unwrap_or(0),
        })
    }
}

fn parse_num(v: &str, lineno: usize) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {}: {v:?}: {e}", lineno + 1)))
}
