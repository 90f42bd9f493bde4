//! Independent reference computations shared by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpsf_core::optics::{OpticsConfig, PsfStack};
use rpsf_core::solver::{kl_objective, kl_objective_gradient, kl_prox_scalar, x_update};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_optics() -> OpticsConfig {
    OpticsConfig {
        image_size: (32, 32),
        pupil_grid: 32,
        num_slices: 5,
        zeta_min: -8.0,
        zeta_max: 8.0,
        num_zones: 3,
        ..OpticsConfig::default()
    }
}

/// `phi(y1) - phi(y2)` for `phi(y) = y - g ln y + beta/2 (y - c)²`, written
/// so every term carries the factor `y1 - y2` and no large values cancel.
fn prox_objective_diff(y1: f64, y2: f64, g: f64, beta: f64, c: f64) -> f64 {
    let d = y1 - y2;
    let log_term = if g == 0.0 { 0.0 } else { g * (d / y2).ln_1p() };
    d - log_term + 0.5 * beta * d * (y1 + y2 - 2.0 * c)
}

/// Minimizer over `u >= -b` of `u - g ln(u + b) + beta/2 (u - xi)²` by
/// golden-section search in `y = u + b`.
pub fn golden_section_prox(xi: f64, g: f64, b: f64, beta: f64) -> f64 {
    let c = xi + b;
    let p = 1.0 - beta * c;
    // The positive root of the stationarity quadratic is below this.
    let mut hi = p.abs() / beta + (g / beta).sqrt() + 1.0;
    let mut lo = 0.0f64;
    if g > 0.0 {
        // Keep the logarithm finite; the minimizer is bounded away from 0.
        lo = g / (1.0 + beta * (hi + c.abs())) * 0.5;
    }
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    for _ in 0..400 {
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
        if prox_objective_diff(x1, x2, g, beta, c) < 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - r * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + r * (hi - lo);
        }
    }
    0.5 * (lo + hi) - b
}

/// Largest relative disagreement between the closed-form prox and the
/// golden-section oracle over `count` random tuples.
pub fn prox_oracle_max_error(count: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let g = if i % 10 == 0 {
            0.0
        } else if i % 2 == 0 {
            f64::from(rng.random_range(0u32..200))
        } else {
            rng.random_range(0.0..200.0)
        };
        let b = rng.random_range(0.0..20.0);
        let beta = 10f64.powf(rng.random_range(-3.0..2.0));
        let xi = rng.random_range(-50.0..300.0);
        let closed = kl_prox_scalar(xi, g, b, beta);
        let oracle = golden_section_prox(xi, g, b, beta);
        let err = (closed - oracle).abs() / (closed + b).abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Dense matrix of the periodic convolution: a unit voxel at `(p, q, r)`
/// puts dictionary slice `r`, centered on pixel `(p, q)`, into output slice
/// `d - 1`, and slice `r - 1 - k` (mod d) into output slice `k`.
pub fn dense_conv(dict: &PsfStack) -> DMatrix<f64> {
    let (m, n, d) = dict.dims();
    let (c0, c1) = (m / 2, n / 2);
    let len = m * n * d;
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * d + k;
    let mut a = DMatrix::zeros(len, len);
    for p in 0..m {
        for q in 0..n {
            for r in 0..d {
                for i in 0..m {
                    for j in 0..n {
                        for k in 0..d {
                            let slice = (r + 2 * d - 1 - k) % d;
                            let v = dict.data[[(i + m - p + c0) % m, (j + n - q + c1) % n, slice]];
                            a[(idx(i, j, k), idx(p, q, r))] = v;
                        }
                    }
                }
            }
        }
    }
    a
}

pub fn to_vector(v: &Array3<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

pub fn random_volume(dims: (usize, usize, usize), lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(dims, || rng.random_range(lo..hi))
}

pub fn random_dict(dims: (usize, usize, usize), rng: &mut ChaCha8Rng) -> PsfStack {
    let data = random_volume(dims, 0.0, 1.0, rng);
    PsfStack::from_data(data, (0..dims.2).map(|k| k as f64).collect()).unwrap()
}

/// Relative error of `x_update` against a dense normal-equations solve.
pub fn x_update_oracle_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let dims = (6, 6, 2);
    let dict = random_dict(dims, &mut rng);
    let vols: Vec<Array3<f64>> = (0..4).map(|_| random_volume(dims, -1.0, 1.0, &mut rng)).collect();
    let beta0 = 10f64.powf(rng.random_range(-2.0..1.0));
    let beta1 = 10f64.powf(rng.random_range(-2.0..1.0));
    let fast = x_update(&dict, &vols[0], &vols[1], &vols[2], &vols[3], beta0, beta1).unwrap();

    let a = dense_conv(&dict);
    let len = a.nrows();
    let lhs = a.transpose() * &a * beta0 + DMatrix::identity(len, len) * beta1;
    let rhs = a.transpose() * (to_vector(&vols[0]) - to_vector(&vols[1])) * beta0
        + (to_vector(&vols[2]) - to_vector(&vols[3])) * beta1;
    let dense = lhs.lu().solve(&rhs).expect("normal equations are positive definite");
    (to_vector(&fast) - &dense).norm() / dense.norm()
}

/// Largest absolute difference between the analytic gradient of the smooth
/// objective and central differences on a random 8x8x3 instance.
pub fn gradient_check_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let dims = (8, 8, 3);
    let dict = random_dict(dims, &mut rng);
    let vol = random_volume(dims, 0.5, 2.0, &mut rng);
    let g = Array2::from_shape_simple_fn((8, 8), || f64::from(rng.random_range(0u32..30)));
    let (b, mu, a) = (2.0, 0.7, 3.0);
    let grad = kl_objective_gradient(&vol, &dict, &g, b, mu, a).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..vol.len() {
        let mut plus = vol.clone();
        let mut minus = vol.clone();
        plus.as_slice_mut().unwrap()[idx] += h;
        minus.as_slice_mut().unwrap()[idx] -= h;
        let fd = (kl_objective(&plus, &dict, &g, b, mu, a).unwrap()
            - kl_objective(&minus, &dict, &g, b, mu, a).unwrap())
            / (2.0 * h);
        worst = worst.max((fd - grad.as_slice().unwrap()[idx]).abs());
    }
    worst
}

/// Image rotated by `angle` about `center` with bilinear interpolation;
/// samples falling outside are zero.
pub fn rotate(img: &Array2<f64>, angle: f64, center: (f64, f64)) -> Array2<f64> {
    let (m, n) = img.dim();
    let (s, c) = angle.sin_cos();
    Array2::from_shape_fn((m, n), |(i, j)| {
        let (di, dj) = (i as f64 - center.0, j as f64 - center.1);
        // Inverse rotation of the output coordinate.
        let x = center.0 + c * di + s * dj;
        let y = center.1 - s * di + c * dj;
        let (x0, y0) = (x.floor(), y.floor());
        if x0 < 0.0 || y0 < 0.0 || x0 + 1.0 >= m as f64 || y0 + 1.0 >= n as f64 {
            return 0.0;
        }
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        img[[x0, y0]] * (1.0 - fx) * (1.0 - fy)
            + img[[x0 + 1, y0]] * fx * (1.0 - fy)
            + img[[x0, y0 + 1]] * (1.0 - fx) * fy
            + img[[x0 + 1, y0 + 1]] * fx * fy
    })
}

pub fn ncc(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let ma = a.mean().unwrap();
    let mb = b.mean().unwrap();
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Best normalized cross-correlation between `target` and `reference`
/// rotated about `center`, over a 1 degree search refined to 0.05 degrees.
pub fn best_rotation_ncc(reference: &Array2<f64>, target: &Array2<f64>, center: (f64, f64)) -> (f64, f64) {
    let deg = std::f64::consts::PI / 180.0;
    let score = |a: f64| ncc(&rotate(reference, a, center), target);
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..360 {
        let a = k as f64 * deg;
        let s = score(a);
        if s > best.1 {
            best = (a, s);
        }
    }
    let coarse = best.0;
    for k in -20..=20 {
        let a = coarse + k as f64 * 0.05 * deg;
        let s = score(a);
        if s > best.1 {
            best = (a, s);
        }
    }
    best
}
