//! Periodic 3D convolution with the PSF dictionary.
//!
//! The kernel is arranged so that a unit voxel at `(i, j, k)` puts dictionary
//! slice `k`, centered on pixel `(i, j)`, into the last slice of the
//! convolution. Laterally the dictionary center moves to the origin;
//! axially the slices are reversed.

use ndarray::{Array2, Array3, Axis};
use rustfft::num_complex::Complex64;

use super::{check_dims, check_image, Image, Volume};
use crate::error::Result;
use crate::fft::VolumeFft;
use crate::optics::PsfStack;

pub struct ConvOperator {
    dims: (usize, usize, usize),
    pub(crate) kernel: Vec<Complex64>,
    pub(crate) fft: VolumeFft,
    spec: Vec<Complex64>,
    spec2: Vec<Complex64>,
}

impl ConvOperator {
    pub fn new(dict: &PsfStack) -> Self {
        let dims = dict.dims();
        let (m, n, d) = dims;
        let (c0, c1) = (m / 2, n / 2);
        let arranged = Array3::from_shape_fn(dims, |(i, j, r)| {
            dict.data[[(i + c0) % m, (j + c1) % n, d - 1 - r]]
        });
        let mut fft = VolumeFft::new(dims);
        let mut kernel = vec![Complex64::default(); fft.spectrum_len()];
        fft.forward(arranged.as_slice().expect("fresh array is contiguous"), &mut kernel);
        let len = kernel.len();
        Self {
            dims,
            kernel,
            fft,
            spec: vec![Complex64::default(); len],
            spec2: vec![Complex64::default(); len],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Half-spectrum of the arranged kernel.
    pub fn kernel(&self) -> &[Complex64] {
        &self.kernel
    }

    pub fn fft(&mut self) -> &mut VolumeFft {
        &mut self.fft
    }

    fn transform(&mut self, vol: &Volume) -> Result<()> {
        check_dims(self.dims, vol.dim())?;
        let vol = vol.as_standard_layout();
        self.fft
            .forward(vol.as_slice().expect("standard layout"), &mut self.spec);
        Ok(())
    }

    fn back(&mut self) -> Volume {
        let mut out = Array3::zeros(self.dims);
        self.fft
            .inverse(&mut self.spec, out.as_slice_mut().expect("fresh array is contiguous"));
        out
    }

    /// `A * vol`, circular in all three axes.
    pub fn apply(&mut self, vol: &Volume) -> Result<Volume> {
        self.transform(vol)?;
        for (z, k) in self.spec.iter_mut().zip(&self.kernel) {
            *z *= k;
        }
        Ok(self.back())
    }

    /// Adjoint of [`apply`](Self::apply): circular correlation with the kernel.
    pub fn adjoint(&mut self, vol: &Volume) -> Result<Volume> {
        self.transform(vol)?;
        for (z, k) in self.spec.iter_mut().zip(&self.kernel) {
            *z *= k.conj();
        }
        Ok(self.back())
    }

    /// Last slice of `A * vol`: the noiseless image of `vol`, without
    /// background.
    pub fn image_of(&mut self, vol: &Volume) -> Result<Image> {
        self.transform(vol)?;
        for (z, k) in self.spec.iter_mut().zip(&self.kernel) {
            *z *= k;
        }
        let d = self.dims.2;
        Ok(self.fft.slice_from_spectrum(&self.spec, d - 1))
    }

    /// Minimizer of `beta0/2 ||a - A*X||² + beta1/2 ||b - X||²`, solved
    /// per frequency.
    pub fn x_update(&mut self, a: &Volume, b: &Volume, beta0: f64, beta1: f64) -> Result<Volume> {
        check_dims(self.dims, b.dim())?;
        self.transform(a)?;
        std::mem::swap(&mut self.spec, &mut self.spec2);
        self.transform(b)?;
        let ratio = beta1 / beta0;
        for ((z, za), k) in self.spec.iter_mut().zip(&self.spec2).zip(&self.kernel) {
            *z = (k.conj() * za + ratio * *z) / (k.norm_sqr() + ratio);
        }
        Ok(self.back())
    }
}

/// Circular 3D convolution of `vol` with the dictionary.
pub fn conv3(dict: &PsfStack, vol: &Volume) -> Result<Volume> {
    check_dims(dict.dims(), vol.dim())?;
    ConvOperator::new(dict).apply(vol)
}

pub fn conv3_adjoint(dict: &PsfStack, vol: &Volume) -> Result<Volume> {
    check_dims(dict.dims(), vol.dim())?;
    ConvOperator::new(dict).adjoint(vol)
}

/// The X-subproblem of the ADMM splitting.
pub fn x_update(
    dict: &PsfStack,
    u0: &Volume,
    eta0: &Volume,
    u1: &Volume,
    eta1: &Volume,
    beta0: f64,
    beta1: f64,
) -> Result<Volume> {
    for v in [u0, eta0, u1, eta1] {
        check_dims(dict.dims(), v.dim())?;
    }
    ConvOperator::new(dict).x_update(&(u0 - eta0), &(u1 - eta1), beta0, beta1)
}

/// The snapshot operator: keeps the last slice.
pub fn extract_last_slice(vol: &Volume) -> Image {
    let d = vol.dim().2;
    vol.index_axis(Axis(2), d - 1).to_owned()
}

/// Adjoint of [`extract_last_slice`].
pub fn embed_last_slice(image: &Image, slices: usize) -> Volume {
    let (m, n) = image.dim();
    let mut vol = Array3::zeros((m, n, slices));
    vol.index_axis_mut(Axis(2), slices - 1).assign(image);
    vol
}

pub(crate) fn check_counts(dims: (usize, usize, usize), counts: &Array2<f64>) -> Result<()> {
    check_image((dims.0, dims.1), counts.dim())
}
