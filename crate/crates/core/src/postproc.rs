//! Collapsing clustered voxels into point detections.

use std::fmt::Write as _;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighborhood used to grow clusters: a box of half-widths `lateral`
/// (pixels, both image axes) and `axial` (slices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterTolerance {
    pub lateral: f64,
    pub axial: f64,
}

impl Default for ClusterTolerance {
    fn default() -> Self {
        Self {
            lateral: 2.0,
            axial: 1.0,
        }
    }
}

impl ClusterTolerance {
    pub fn new(lateral: f64, axial: f64) -> Result<Self> {
        let tol = Self { lateral, axial };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lateral > 0.0 && self.axial > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("cluster tolerances must be positive".into()))
        }
    }
}

/// A localized source: continuous pixel coordinates, continuous slice index
/// and flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub flux: f64,
}

/// Greedy clustering: seed at the largest remaining voxel, absorb every
/// positive voxel within the tolerance box of any member, emit the
/// intensity-weighted centroid with the summed flux, repeat. Entries that
/// are not positive are ignored. Output is sorted by flux, largest first.
pub fn centroid_cluster(volume: &Array3<f64>, tol: ClusterTolerance) -> Vec<Detection> {
    let (m, n, d) = volume.dim();
    let mut voxels: Vec<((usize, usize, usize), f64)> = volume
        .indexed_iter()
        .filter(|(_, v)| **v > 0.0)
        .map(|(idx, v)| (idx, *v))
        .collect();
    // Largest first; equal values in lexicographic index order.
    voxels.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut taken = Array3::from_elem((m, n, d), true);
    for (idx, _) in &voxels {
        taken[*idx] = false;
    }
    let rl = tol.lateral.floor() as isize;
    let ra = tol.axial.floor() as isize;
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for &(seed, _) in &voxels {
        if taken[seed] {
            continue;
        }
        taken[seed] = true;
        stack.push(seed);
        let (mut sw, mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0, 0.0);
        while let Some((i, j, k)) = stack.pop() {
            let v = volume[[i, j, k]];
            sw += v;
            sx += v * i as f64;
            sy += v * j as f64;
            sz += v * k as f64;
            for di in -rl..=rl {
                let p = i as isize + di;
                if p < 0 || p >= m as isize {
                    continue;
                }
                for dj in -rl..=rl {
                    let q = j as isize + dj;
                    if q < 0 || q >= n as isize {
                        continue;
                    }
                    for dk in -ra..=ra {
                        let r = k as isize + dk;
                        if r < 0 || r >= d as isize {
                            continue;
                        }
                        let idx = (p as usize, q as usize, r as usize);
                        if !taken[idx] {
                            taken[idx] = true;
                            stack.push(idx);
                        }
                    }
                }
            }
        }
        out.push(Detection {
            x: sx / sw,
            y: sy / sw,
            z: sz / sw,
            flux: sw,
        });
    }
    out.sort_by(|a, b| b.flux.total_cmp(&a.flux));
    out
}

/// Drops detections whose flux is below `fraction` of the largest flux.
pub fn threshold_detections(dets: &[Detection], fraction: f64) -> Result<Vec<Detection>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("threshold fraction {fraction} not in [0, 1)")));
    }
    let max = dets.iter().map(|d| d.flux).fold(f64::NEG_INFINITY, f64::max);
    Ok(dets.iter().filter(|d| d.flux >= fraction * max).copied().collect())
}

/// CSV with header `x,y,z,flux`.
pub fn detections_to_csv(dets: &[Detection]) -> String {
    let mut out = String::from("x,y,z,flux\n");
    for d in dets {
        writeln!(out, "{:?},{:?},{:?},{:?}", d.x, d.y, d.z, d.flux).unwrap();
    }
    out
}

pub fn detections_from_csv(text: &str) -> Result<Vec<Detection>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "x,y,z,flux" => {}
        other => return Err(Error::Parse(format!("unexpected detection header {other:?}"))),
    }
    lines
        .map(|line| {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("{line:?}: {e}")))?;
            match vals[..] {
                [x, y, z, flux] => Ok(Detection { x, y, z, flux }),
                _ => Err(Error::Parse(format!("{line:?}: expected 4 fields"))),
            }
        })
        .collect()
}
