//! FFT helpers shared by the optics and the solver.
//!
//! Volumes are stored row-major as `(rows, cols, slices)` with the slice axis
//! innermost. Their spectra are half-spectra along the slice axis: a real
//! transform along `k` followed by a 2D transform of each of the
//! `slices / 2 + 1` frequency planes, stored plane after plane.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Transforms every line of length `len` along a strided axis.
///
/// `outer` blocks of `len * inner` elements; within a block, element `p` of
/// line `q` lives at `p * inner + q`.
fn fft_strided(
    data: &mut [Complex64],
    len: usize,
    inner: usize,
    plan: &Arc<dyn Fft<f64>>,
    lines: &mut Vec<Complex64>,
    scratch: &mut Vec<Complex64>,
) {
    let block = len * inner;
    let need = plan.get_inplace_scratch_len();
    if scratch.len() < need {
        scratch.resize(need, Complex64::default());
    }
    if inner == 1 {
        // Contiguous lines: one batched call.
        plan.process_with_scratch(data, &mut scratch[..need]);
        return;
    }
    lines.resize(block, Complex64::default());
    for chunk in data.chunks_exact_mut(block) {
        for p in 0..len {
            let row = &chunk[p * inner..(p + 1) * inner];
            for (q, v) in row.iter().enumerate() {
                lines[q * len + p] = *v;
            }
        }
        plan.process_with_scratch(lines, &mut scratch[..need]);
        for p in 0..len {
            let row = &mut chunk[p * inner..(p + 1) * inner];
            for (q, v) in row.iter_mut().enumerate() {
                *v = lines[q * len + p];
            }
        }
    }
}

/// Unnormalized 2D complex FFT on row-major `rows x cols` buffers.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            col_fwd: planner.plan_fft_forward(rows),
            row_inv: planner.plan_fft_inverse(cols),
            col_inv: planner.plan_fft_inverse(rows),
            lines: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    /// Inverse transform without the `1 / (rows * cols)` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.run(data, true);
    }

    fn run(&mut self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.rows * self.cols);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        fft_strided(data, self.cols, 1, row, &mut self.lines, &mut self.scratch);
        fft_strided(
            data,
            self.rows,
            self.cols,
            col,
            &mut self.lines,
            &mut self.scratch,
        );
    }
}

/// Real 3D FFT over `(rows, cols, slices)` volumes with a half-spectrum
/// along the slice axis.
pub struct VolumeFft {
    dims: (usize, usize, usize),
    half: usize,
    axial_fwd: Arc<dyn Fft<f64>>,
    axial_inv: Arc<dyn Fft<f64>>,
    plane: Fft2,
    /// Pairs of real lines packed as `a + i b`, one complex line per pair.
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
    plane_buf: Vec<Complex64>,
}

impl VolumeFft {
    pub fn new(dims: (usize, usize, usize)) -> Self {
        let (m, n, d) = dims;
        let mut planner = FftPlanner::new();
        let axial_fwd = planner.plan_fft_forward(d);
        let axial_inv = planner.plan_fft_inverse(d);
        let scratch_len = axial_fwd
            .get_inplace_scratch_len()
            .max(axial_inv.get_inplace_scratch_len());
        Self {
            dims,
            half: d / 2 + 1,
            axial_fwd,
            axial_inv,
            plane: Fft2::new(m, n),
            lines: vec![Complex64::default(); (m * n).div_ceil(2) * d],
            scratch: vec![Complex64::default(); scratch_len],
            plane_buf: vec![Complex64::default(); m * n],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Number of stored coefficients along the slice axis.
    pub fn half(&self) -> usize {
        self.half
    }

    /// Pixels per frequency plane.
    pub fn plane_len(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub fn spectrum_len(&self) -> usize {
        self.plane_len() * self.half
    }

    /// Unnormalized forward transform of a real volume. The spectrum is
    /// stored plane by plane: coefficient `(kf, p, q)` at `(kf * m + p) * n + q`.
    pub fn forward(&mut self, input: &[f64], out: &mut [Complex64]) {
        let (m, n, d) = self.dims;
        let h = self.half;
        let mn = m * n;
        assert_eq!(input.len(), mn * d);
        assert_eq!(out.len(), mn * h);
        for (pair, line) in self.lines.chunks_exact_mut(d).enumerate() {
            let a = &input[2 * pair * d..(2 * pair + 1) * d];
            if 2 * pair + 1 < mn {
                let b = &input[(2 * pair + 1) * d..(2 * pair + 2) * d];
                for ((z, &re), &im) in line.iter_mut().zip(a).zip(b) {
                    *z = Complex64::new(re, im);
                }
            } else {
                for (z, &re) in line.iter_mut().zip(a) {
                    *z = Complex64::new(re, 0.0);
                }
            }
        }
        self.axial_fwd.process_with_scratch(&mut self.lines, &mut self.scratch);
        for (pair, line) in self.lines.chunks_exact(d).enumerate() {
            let (pa, pb) = (2 * pair, 2 * pair + 1);
            for kf in 0..h {
                let z = line[kf];
                let w = line[(d - kf) % d].conj();
                out[kf * mn + pa] = 0.5 * (z + w);
                if pb < mn {
                    let diff = 0.5 * (z - w);
                    out[kf * mn + pb] = Complex64::new(diff.im, -diff.re);
                }
            }
        }
        for plane in out.chunks_exact_mut(mn) {
            self.plane.forward(plane);
        }
    }

    /// Normalized inverse transform; `spec` is used as workspace.
    pub fn inverse(&mut self, spec: &mut [Complex64], out: &mut [f64]) {
        let (m, n, d) = self.dims;
        let h = self.half;
        let mn = m * n;
        assert_eq!(spec.len(), mn * h);
        assert_eq!(out.len(), mn * d);
        for plane in spec.chunks_exact_mut(mn) {
            self.plane.inverse(plane);
        }
        let nyquist = (d % 2 == 0).then_some(h - 1);
        // Only the Hermitian part of each line survives a real transform.
        let bin = |kf: usize, pix: usize| {
            let mut z = spec[kf * mn + pix];
            if kf == 0 || Some(kf) == nyquist {
                z.im = 0.0;
            }
            z
        };
        for (pair, line) in self.lines.chunks_exact_mut(d).enumerate() {
            let (pa, pb) = (2 * pair, 2 * pair + 1);
            for (k, z) in line.iter_mut().enumerate() {
                let (a, b) = if k < h {
                    (bin(k, pa), if pb < mn { bin(k, pb) } else { Complex64::default() })
                } else {
                    let a = bin(d - k, pa).conj();
                    let b = if pb < mn { bin(d - k, pb).conj() } else { Complex64::default() };
                    (a, b)
                };
                // a + i b
                *z = Complex64::new(a.re - b.im, a.im + b.re);
            }
        }
        self.axial_inv.process_with_scratch(&mut self.lines, &mut self.scratch);
        let scale = 1.0 / (mn * d) as f64;
        for (pair, line) in self.lines.chunks_exact(d).enumerate() {
            let (pa, pb) = (2 * pair, 2 * pair + 1);
            for (o, z) in out[pa * d..(pa + 1) * d].iter_mut().zip(line) {
                *o = z.re * scale;
            }
            if pb < mn {
                for (o, z) in out[pb * d..(pb + 1) * d].iter_mut().zip(line) {
                    *o = z.im * scale;
                }
            }
        }
    }

    /// Weight of half-spectrum bin `kf` when summing over the full spectrum.
    pub fn bin_weight(&self, kf: usize) -> f64 {
        let d = self.dims.2;
        if kf == 0 || (d % 2 == 0 && kf == d / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Squared Frobenius norm of the real volume whose spectrum is `spec`.
    pub fn norm_sqr(&self, spec: &[Complex64]) -> f64 {
        let total: f64 = spec
            .chunks_exact(self.plane_len())
            .enumerate()
            .map(|(kf, plane)| self.bin_weight(kf) * plane.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        let (m, n, d) = self.dims;
        total / (m * n * d) as f64
    }

    /// Extracts slice `k` of the real volume whose spectrum is `spec`.
    pub fn slice_from_spectrum(&mut self, spec: &[Complex64], k: usize) -> Array2<f64> {
        self.slice_from_spectra(&[spec], k)
    }

    /// Slice `k` of the volume whose spectrum is the sum of `parts`.
    pub fn slice_from_spectra(&mut self, parts: &[&[Complex64]], k: usize) -> Array2<f64> {
        let (m, n, d) = self.dims;
        let mn = m * n;
        self.plane_buf.fill(Complex64::default());
        for spec in parts {
            assert_eq!(spec.len(), mn * self.half);
            for (kf, plane) in spec.chunks_exact(mn).enumerate() {
                let angle = 2.0 * std::f64::consts::PI * (kf * k) as f64 / d as f64;
                let phase = Complex64::from_polar(self.bin_weight(kf), angle);
                for (dst, z) in self.plane_buf.iter_mut().zip(plane) {
                    *dst += z * phase;
                }
            }
        }
        self.plane.inverse(&mut self.plane_buf);
        let scale = 1.0 / (mn * d) as f64;
        Array2::from_shape_fn((m, n), |(i, j)| self.plane_buf[i * n + j].re * scale)
    }

    /// 2D spectrum of `image`; the 3D spectrum of a volume holding `image`
    /// on slice `k` and zeros elsewhere is this plane times
    /// [`slice_phases`](Self::slice_phases)`(k)[kf]` in every frequency plane.
    pub fn plane_spectrum(&mut self, image: &Array2<f64>) -> &[Complex64] {
        assert_eq!(image.dim(), (self.dims.0, self.dims.1));
        for (dst, v) in self.plane_buf.iter_mut().zip(image.iter()) {
            *dst = Complex64::new(*v, 0.0);
        }
        self.plane.forward(&mut self.plane_buf);
        &self.plane_buf
    }

    pub fn slice_phases(&self, k: usize) -> Vec<Complex64> {
        let d = self.dims.2;
        (0..self.half)
            .map(|kf| {
                let angle = -2.0 * std::f64::consts::PI * (kf * k) as f64 / d as f64;
                Complex64::from_polar(1.0, angle)
            })
            .collect()
    }

    /// Adds the spectrum of a volume that is zero except for `image` on
    /// slice `k`.
    pub fn add_slice_spectrum(&mut self, image: &Array2<f64>, k: usize, spec: &mut [Complex64]) {
        let mn = self.plane_len();
        let phases = self.slice_phases(k);
        self.plane_spectrum(image);
        for (plane, p) in spec.chunks_exact_mut(mn).zip(&phases) {
            for (dst, z) in plane.iter_mut().zip(&self.plane_buf) {
                *dst += z * p;
            }
        }
    }
}
