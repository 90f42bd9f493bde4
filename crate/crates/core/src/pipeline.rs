//! Solve, cluster, threshold and refine fluxes for one image.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{build_h_with, kl_flux_iterate, FluxSettings};
use crate::optics::{PsfModel, PsfStack};
use crate::postproc::{centroid_cluster, threshold_detections, ClusterTolerance, Detection};
use crate::solver::{irl1_solve, SolveTrace, SolverParams, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocSettings {
    pub cluster: ClusterTolerance,
    /// Detections below this fraction of the brightest one are dropped.
    pub threshold: f64,
    pub flux_max_iter: usize,
    pub flux_tol: f64,
}

impl Default for PostprocSettings {
    fn default() -> Self {
        let flux = FluxSettings::default();
        Self {
            cluster: ClusterTolerance::default(),
            threshold: 0.05,
            flux_max_iter: flux.max_iter,
            flux_tol: flux.tol,
        }
    }
}

impl PostprocSettings {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1)".into()));
        }
        if !(self.flux_tol >= 0.0) {
            return Err(Error::Config("flux_tol must be >= 0".into()));
        }
        Ok(())
    }

    pub fn flux(&self) -> FluxSettings {
        FluxSettings {
            max_iter: self.flux_max_iter,
            tol: self.flux_tol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub volume: Volume,
    pub trace: SolveTrace,
    /// Every positive voxel as its own detection.
    pub raw: Vec<Detection>,
    /// Detections after clustering and thresholding, with refined fluxes.
    pub detections: Vec<Detection>,
    /// `None` when refinement succeeded; otherwise why the cluster fluxes
    /// were kept.
    pub flux_note: Option<String>,
}

pub fn voxel_detections(volume: &Volume) -> Vec<Detection> {
    volume
        .indexed_iter()
        .filter(|(_, v)| **v > 0.0)
        .map(|((i, j, k), v)| Detection {
            x: i as f64,
            y: j as f64,
            z: k as f64,
            flux: *v,
        })
        .collect()
}

/// Full pipeline for one image. `model` renders the flux-refinement
/// columns and should describe the same optics as `dict`.
pub fn localize(
    counts: &Array2<f64>,
    dict: &PsfStack,
    model: &mut PsfModel,
    params: &SolverParams,
    post: &PostprocSettings,
) -> Result<Localization> {
    post.validate()?;
    let (volume, trace) = irl1_solve(counts, dict, params)?;
    let clustered = centroid_cluster(&volume, post.cluster);
    let mut detections = threshold_detections(&clustered, post.threshold)?;
    let mut flux_note = None;
    if !detections.is_empty() {
        let refined = build_h_with(&detections, model)
            .and_then(|h| kl_flux_iterate(&h, counts, params.background, post.flux()));
        match refined {
            Ok(f) => {
                for (d, v) in detections.iter_mut().zip(f) {
                    d.flux = v;
                }
            }
            Err(e @ (Error::Singular { .. } | Error::Divergence(_) | Error::Domain(_))) => {
                flux_note = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Localization {
        raw: voxel_detections(&volume),
        volume,
        trace,
        detections,
        flux_note,
    })
}
