//! C interface to `rpsf_core`.
//!
//! Every fallible function returns an [`RpsfStatus`]; on failure the message
//! is kept per thread and can be read with [`rpsf_last_error`]. Handles are
//! opaque and must be released with their `_free` function. Images are
//! row-major `m x n` arrays of `double`; dictionaries are row-major
//! `m x n x d` with the slice index fastest.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::Array2;

use rpsf_core::experiment::ParamSet;
use rpsf_core::optics::{build_dictionary, OpticsConfig, PsfModel, PsfStack};
use rpsf_core::pipeline::{localize, PostprocSettings};
use rpsf_core::postproc::Detection;
use rpsf_core::scene::{render, sample_poisson, PointSource, Scene};
use rpsf_core::solver::{Algorithm, SolverParams};
use rpsf_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpsfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    Domain = 3,
    ShapeMismatch = 4,
    Singular = 5,
    Divergence = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum RpsfAlgorithm {
    Kl_Nc = 0,
    Kl_L1 = 1,
    L2_L1 = 2,
    L2_Nc = 3,
}

impl From<RpsfAlgorithm> for Algorithm {
    fn from(a: RpsfAlgorithm) -> Self {
        match a {
            RpsfAlgorithm::Kl_Nc => Algorithm::KlNc,
            RpsfAlgorithm::Kl_L1 => Algorithm::KlL1,
            RpsfAlgorithm::L2_L1 => Algorithm::L2L1,
            RpsfAlgorithm::L2_Nc => Algorithm::L2Nc,
        }
    }
}

/// Imaging geometry; see `rpsf_optics_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpsfOptics {
    pub num_zones: usize,
    pub rows: usize,
    pub cols: usize,
    pub pupil_grid: usize,
    pub aperture_side: f64,
    pub image_pixel_pitch: f64,
    pub num_slices: usize,
    pub zeta_min: f64,
    pub zeta_max: f64,
}

impl From<&OpticsConfig> for RpsfOptics {
    fn from(c: &OpticsConfig) -> Self {
        Self {
            num_zones: c.num_zones,
            rows: c.image_size.0,
            cols: c.image_size.1,
            pupil_grid: c.pupil_grid,
            aperture_side: c.aperture_side,
            image_pixel_pitch: c.image_pixel_pitch,
            num_slices: c.num_slices,
            zeta_min: c.zeta_min,
            zeta_max: c.zeta_max,
        }
    }
}

impl From<&RpsfOptics> for OpticsConfig {
    fn from(c: &RpsfOptics) -> Self {
        Self {
            num_zones: c.num_zones,
            image_size: (c.rows, c.cols),
            pupil_grid: c.pupil_grid,
            aperture_side: c.aperture_side,
            image_pixel_pitch: c.image_pixel_pitch,
            num_slices: c.num_slices,
            zeta_min: c.zeta_min,
            zeta_max: c.zeta_max,
        }
    }
}

/// Solver settings. The data-fit and regularizer follow `algorithm`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpsfSolverParams {
    pub algorithm: RpsfAlgorithm,
    pub mu: f64,
    pub a: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub rho: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub background: f64,
}

impl RpsfSolverParams {
    fn from_core(algorithm: RpsfAlgorithm, p: &SolverParams) -> Self {
        Self {
            algorithm,
            mu: p.mu,
            a: p.a,
            beta0: p.beta0,
            beta1: p.beta1,
            rho: p.rho,
            max_outer: p.max_outer,
            max_inner: p.max_inner,
            inner_tol: p.inner_tol,
            background: p.background,
        }
    }

    fn to_core(self) -> SolverParams {
        SolverParams {
            mu: self.mu,
            a: self.a,
            beta0: self.beta0,
            beta1: self.beta1,
            rho: self.rho,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            inner_tol: self.inner_tol,
            background: self.background,
            ..SolverParams::for_algorithm(self.algorithm.into())
        }
    }
}

/// A point source, or a detection with `z` as a continuous slice index.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpsfSource {
    pub x: f64,
    pub y: f64,
    /// Defocus for sources, slice index for detections.
    pub z: f64,
    pub flux: f64,
}

/// Opaque PSF dictionary.
pub struct RpsfDictionary {
    optics: OpticsConfig,
    stack: PsfStack,
}

/// Opaque list of detections.
pub struct RpsfDetections {
    items: Vec<Detection>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> RpsfStatus {
    match e {
        Error::Config(_) | Error::Json { .. } | Error::Parse(_) => RpsfStatus::InvalidConfig,
        Error::Domain(_) => RpsfStatus::Domain,
        Error::Shape { .. } => RpsfStatus::ShapeMismatch,
        Error::Singular { .. } => RpsfStatus::Singular,
        Error::Divergence(_) => RpsfStatus::Divergence,
        Error::Io { .. } | Error::BadMagic { .. } | Error::Truncated { .. } | Error::DimOverflow { .. } => {
            RpsfStatus::Io
        }
    }
}

struct Fail(RpsfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RpsfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RpsfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RpsfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RpsfStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len < need {
        return Err(Fail(
            RpsfStatus::BufferTooSmall,
            format!("{what} holds {len} elements, {need} needed"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn read<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn image_of(data: &[f64], rows: usize, cols: usize) -> Result<Array2<f64>, Fail> {
    Array2::from_shape_vec((rows, cols), data.to_vec())
        .map_err(|e| Fail(RpsfStatus::ShapeMismatch, e.to_string()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rpsf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated
/// and nul-terminated) and returns the full message length in bytes, or 0
/// when no error has been recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rpsf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rpsf_optics_default(out: *mut RpsfOptics) -> RpsfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = RpsfOptics::from(&OpticsConfig::default());
        Ok(())
    })
}

/// Parameters shipped with the library for `algorithm`; `low_photon`
/// selects the set tuned for 1000-photon sources.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rpsf_solver_params_tuned(
    algorithm: RpsfAlgorithm,
    low_photon: bool,
    out: *mut RpsfSolverParams,
) -> RpsfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let p = ParamSet::shipped().get(algorithm.into(), low_photon);
        *out = RpsfSolverParams::from_core(algorithm, &p);
        Ok(())
    })
}

/// Builds the dictionary for `optics`.
///
/// # Safety
/// `optics` must be null or valid for reads, `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rpsf_dictionary_build(
    optics: *const RpsfOptics,
    out: *mut *mut RpsfDictionary,
) -> RpsfStatus {
    guard(|| {
        let cfg = OpticsConfig::from(read(optics, "optics")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let stack = build_dictionary(&cfg)?;
        *out = Box::into_raw(Box::new(RpsfDictionary { optics: cfg, stack }));
        Ok(())
    })
}

/// Writes the dictionary shape.
///
/// # Safety
/// `dict` must come from `rpsf_dictionary_build`; the outputs must be null
/// or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rpsf_dictionary_dims(
    dict: *const RpsfDictionary,
    rows: *mut usize,
    cols: *mut usize,
    slices: *mut usize,
) -> RpsfStatus {
    guard(|| {
        let (m, n, d) = read(dict, "dict")?.stack.dims();
        for (p, v) in [(rows, m), (cols, n), (slices, d)] {
            *p.as_mut().ok_or_else(|| null("dimension output"))? = v;
        }
        Ok(())
    })
}

/// Copies the `m * n * d` dictionary entries into `buf`.
///
/// # Safety
/// `dict` must come from `rpsf_dictionary_build`; `buf` must point to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rpsf_dictionary_copy(dict: *const RpsfDictionary, buf: *mut f64, len: usize) -> RpsfStatus {
    guard(|| {
        let dict = read(dict, "dict")?;
        let out = slice_out(buf, len, dict.stack.data.len(), "buf")?;
        for (o, v) in out.iter_mut().zip(dict.stack.data.iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `dict` must be null or come from `rpsf_dictionary_build`, and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rpsf_dictionary_free(dict: *mut RpsfDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Noiseless image of `count` sources (`z` is defocus) plus `background`,
/// written to the `rows * cols` buffer `image`.
///
/// # Safety
/// `optics` must be valid for reads, `sources` must point to `count`
/// sources, and `image` to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rpsf_render(
    optics: *const RpsfOptics,
    sources: *const RpsfSource,
    count: usize,
    background: f64,
    image: *mut f64,
    len: usize,
) -> RpsfStatus {
    guard(|| {
        let cfg = OpticsConfig::from(read(optics, "optics")?);
        let sources = slice_in(sources, count, "sources")?;
        let out = slice_out(image, len, cfg.image_size.0 * cfg.image_size.1, "image")?;
        let scene = Scene {
            sources: sources
                .iter()
                .map(|s| PointSource { x: s.x, y: s.y, zeta: s.z, flux: s.flux })
                .collect(),
            background,
            seed: 0,
        };
        let img = render(&scene, &cfg)?;
        for (o, v) in out.iter_mut().zip(img.iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// Independent Poisson draws with means `mean[i]`, deterministic in `seed`.
///
/// # Safety
/// `mean` must point to `len` doubles and `counts` to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn rpsf_sample_poisson(
    mean: *const f64,
    len: usize,
    seed: u64,
    counts: *mut f64,
) -> RpsfStatus {
    guard(|| {
        let mean = image_of(slice_in(mean, len, "mean")?, 1, len)?;
        let out = slice_out(counts, len, len, "counts")?;
        let drawn = sample_poisson(&mean, seed)?;
        for (o, c) in out.iter_mut().zip(drawn.counts.iter()) {
            *o = f64::from(*c);
        }
        Ok(())
    })
}

/// Solves, clusters, thresholds at 5% and refines fluxes for one
/// `rows x cols` image of photon counts.
///
/// # Safety
/// `dict` must come from `rpsf_dictionary_build`, `image` must point to
/// `rows * cols` doubles, `params` must be valid for reads and `out` for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn rpsf_localize(
    dict: *const RpsfDictionary,
    image: *const f64,
    rows: usize,
    cols: usize,
    params: *const RpsfSolverParams,
    out: *mut *mut RpsfDetections,
) -> RpsfStatus {
    guard(|| {
        let dict = read(dict, "dict")?;
        let params = read(params, "params")?.to_core();
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(RpsfStatus::ShapeMismatch, "image size overflows".into()))?;
        let counts = image_of(slice_in(image, len, "image")?, rows, cols)?;
        let mut model = PsfModel::new(&dict.optics, None)?;
        let loc = localize(&counts, &dict.stack, &mut model, &params, &PostprocSettings::default())?;
        *out = Box::into_raw(Box::new(RpsfDetections { items: loc.detections }));
        Ok(())
    })
}

/// Number of detections; 0 for a null handle.
///
/// # Safety
/// `dets` must be null or come from `rpsf_localize`.
#[no_mangle]
pub unsafe extern "C" fn rpsf_detections_len(dets: *const RpsfDetections) -> usize {
    dets.as_ref().map_or(0, |d| d.items.len())
}

/// Detection `index`, brightest first.
///
/// # Safety
/// `dets` must come from `rpsf_localize`; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rpsf_detections_get(
    dets: *const RpsfDetections,
    index: usize,
    out: *mut RpsfSource,
) -> RpsfStatus {
    guard(|| {
        let dets = read(dets, "dets")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = dets.items.get(index).ok_or_else(|| {
            Fail(
                RpsfStatus::Domain,
                format!("index {index} out of range for {} detections", dets.items.len()),
            )
        })?;
        *out = RpsfSource { x: d.x, y: d.y, z: d.z, flux: d.flux };
        Ok(())
    })
}

/// # Safety
/// `dets` must be null or come from `rpsf_localize`, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rpsf_detections_free(dets: *mut RpsfDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}
