//! Scoring detections against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::OpticsConfig;
use crate::postproc::Detection;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCriteria {
    /// Largest lateral (Euclidean, pixels) offset of a match.
    pub lateral_tol: f64,
    /// Largest axial offset of a match, in slices.
    pub axial_tol: f64,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            lateral_tol: 2.0,
            axial_tol: 1.0,
        }
    }
}

impl MatchCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.lateral_tol > 0.0 && self.axial_tol > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("match tolerances must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub truth: usize,
    pub detection: usize,
    /// `sqrt((dxy / lateral_tol)² + (dz / axial_tol)²)`
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub true_positives: Vec<MatchedPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub recall: f64,
    pub precision: f64,
    /// `(f_est - f_true) / f_true` per matched pair, in `true_positives` order.
    pub flux_rel_errors: Vec<f64>,
}

impl MatchReport {
    pub fn f1(&self) -> f64 {
        f1(self.recall, self.precision)
    }
}

pub fn f1(recall: f64, precision: f64) -> f64 {
    if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Matcher {
    /// Candidate pairs accepted in order of increasing distance.
    #[default]
    Greedy,
    /// Maximum cardinality, then minimum total distance; exhaustive, so
    /// limited to [`MAX_OPTIMAL_TRUTHS`] ground-truth sources.
    Optimal,
}

pub const MAX_OPTIMAL_TRUTHS: usize = 16;

/// Normalized distances of admissible pairs.
fn candidates(
    truth: &Scene,
    dets: &[Detection],
    crit: &MatchCriteria,
    cfg: &OpticsConfig,
) -> Vec<MatchedPair> {
    let mut pairs = Vec::new();
    for (t, s) in truth.sources.iter().enumerate() {
        let tz = cfg.zeta_to_slice(s.zeta);
        for (k, d) in dets.iter().enumerate() {
            let dxy = (s.x - d.x).hypot(s.y - d.y);
            let dz = (tz - d.z).abs();
            if dxy <= crit.lateral_tol && dz <= crit.axial_tol {
                let distance = ((dxy / crit.lateral_tol).powi(2) + (dz / crit.axial_tol).powi(2)).sqrt();
                pairs.push(MatchedPair {
                    truth: t,
                    detection: k,
                    distance,
                });
            }
        }
    }
    pairs
}

fn greedy(mut pairs: Vec<MatchedPair>, n_truth: usize, n_det: usize) -> Vec<MatchedPair> {
    pairs.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.truth.cmp(&b.truth))
            .then(a.detection.cmp(&b.detection))
    });
    let mut used_t = vec![false; n_truth];
    let mut used_d = vec![false; n_det];
    let mut out = Vec::new();
    for p in pairs {
        if !used_t[p.truth] && !used_d[p.detection] {
            used_t[p.truth] = true;
            used_d[p.detection] = true;
            out.push(p);
        }
    }
    out
}

/// Dynamic program over detections with the set of used truths as state.
fn optimal(pairs: &[MatchedPair], n_truth: usize, n_det: usize) -> Vec<MatchedPair> {
    let states = 1usize << n_truth;
    let mut by_det: Vec<Vec<&MatchedPair>> = vec![Vec::new(); n_det];
    for p in pairs {
        by_det[p.detection].push(p);
    }
    let mut cost = vec![f64::INFINITY; states];
    cost[0] = 0.0;
    // choice[k][mask]: truth matched to detection k on the best path into mask.
    let mut choice: Vec<Vec<u8>> = Vec::new();
    for cands in &by_det {
        if cands.is_empty() {
            continue;
        }
        let mut next = cost.clone();
        let mut pick = vec![u8::MAX; states];
        for mask in 0..states {
            if !cost[mask].is_finite() {
                continue;
            }
            for p in cands {
                let bit = 1usize << p.truth;
                if mask & bit == 0 {
                    let c = cost[mask] + p.distance;
                    if c < next[mask | bit] {
                        next[mask | bit] = c;
                        pick[mask | bit] = p.truth as u8;
                    }
                }
            }
        }
        cost = next;
        choice.push(pick);
    }
    let best = (0..states)
        .filter(|m| cost[*m].is_finite())
        .max_by(|a, b| {
            a.count_ones()
                .cmp(&b.count_ones())
                .then(cost[*b].total_cmp(&cost[*a]))
        })
        .unwrap_or(0);
    let dets_with: Vec<usize> = (0..n_det).filter(|k| !by_det[*k].is_empty()).collect();
    let mut mask = best;
    let mut out = Vec::new();
    for (step, &k) in dets_with.iter().enumerate().rev() {
        let t = choice[step][mask];
        // No pick means leaving detection k unmatched was best.
        if t != u8::MAX {
            let p = by_det[k]
                .iter()
                .find(|p| p.truth == t as usize)
                .expect("picks come from this detection's candidates");
            out.push(**p);
            mask &= !(1usize << t);
        }
    }
    out.reverse();
    out
}

/// One-to-one assignment of detections to ground-truth sources. Truth
/// defocus is converted to slice units with the dictionary spacing.
pub fn match_detections(
    truth: &Scene,
    dets: &[Detection],
    crit: &MatchCriteria,
    cfg: &OpticsConfig,
    matcher: Matcher,
) -> Result<MatchReport> {
    crit.validate()?;
    let (nt, nd) = (truth.sources.len(), dets.len());
    let pairs = candidates(truth, dets, crit, cfg);
    let mut tp = match matcher {
        Matcher::Greedy => greedy(pairs, nt, nd),
        Matcher::Optimal => {
            if nt > MAX_OPTIMAL_TRUTHS {
                return Err(Error::Config(format!(
                    "optimal matching supports at most {MAX_OPTIMAL_TRUTHS} sources, got {nt}"
                )));
            }
            optimal(&pairs, nt, nd)
        }
    };
    tp.sort_by_key(|p| p.truth);
    let mut matched_t = vec![false; nt];
    let mut matched_d = vec![false; nd];
    for p in &tp {
        matched_t[p.truth] = true;
        matched_d[p.detection] = true;
    }
    let ratio = |num: usize, den: usize| {
        if den > 0 {
            num as f64 / den as f64
        } else if nt == 0 && nd == 0 {
            1.0
        } else {
            0.0
        }
    };
    let flux_rel_errors = tp
        .iter()
        .map(|p| {
            let ft = truth.sources[p.truth].flux;
            (dets[p.detection].flux - ft) / ft
        })
        .collect();
    Ok(MatchReport {
        recall: ratio(tp.len(), nt),
        precision: ratio(tp.len(), nd),
        false_positives: (0..nd).filter(|k| !matched_d[*k]).collect(),
        false_negatives: (0..nt).filter(|t| !matched_t[*t]).collect(),
        true_positives: tp,
        flux_rel_errors,
    })
}

/// Relative flux errors binned with width 0.05 over `[-1, 1]`; values outside
/// the range are counted in the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub const BINS: usize = 40;

    pub fn new() -> Self {
        Self {
            lo: -1.0,
            width: 0.05,
            counts: vec![0; Self::BINS],
        }
    }

    pub fn add(&mut self, v: f64) {
        if v.is_nan() {
            return;
        }
        let idx = ((v - self.lo) / self.width).floor();
        let idx = idx.clamp(0.0, (self.counts.len() - 1) as f64) as usize;
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * self.width;
            out.push_str(&format!("{:.2},{:.2},{}\n", lo, lo + self.width, c));
        }
        out
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub images: usize,
    pub recall: f64,
    pub precision: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub flux_histogram: Histogram,
}

impl Summary {
    pub fn f1(&self) -> f64 {
        f1(self.recall, self.precision)
    }
}

pub fn aggregate(reports: &[MatchReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::Domain("cannot aggregate zero reports".into()));
    }
    let n = reports.len() as f64;
    let mut hist = Histogram::new();
    for r in reports {
        for e in &r.flux_rel_errors {
            hist.add(*e);
        }
    }
    Ok(Summary {
        images: reports.len(),
        recall: reports.iter().map(|r| r.recall).sum::<f64>() / n,
        precision: reports.iter().map(|r| r.precision).sum::<f64>() / n,
        true_positives: reports.iter().map(|r| r.true_positives.len()).sum(),
        false_positives: reports.iter().map(|r| r.false_positives.len()).sum(),
        false_negatives: reports.iter().map(|r| r.false_negatives.len()).sum(),
        flux_histogram: hist,
    })
}
