//! C ABI over `spr-core`.
//!
//! Volumes and measurements cross the boundary as interleaved `(re, im)`
//! `double` arrays in the core memory layout: image index
//! `(t * nx + x) * ny + y`, data ordered coil, frame, sample. Every call
//! returns an [`SprStatus`]; on failure [`spr_last_error_message`] describes
//! the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use num_complex::Complex64;
use spr_core::denoiser::FilterBank;
use spr_core::operators::{pseudo_inverse, CoilMaps, EncodingOperator, ForwardModel, MeasuredData};
use spr_core::sim::make_coil_maps;
use spr_core::solver::{network_forward, NetworkConfig};
use spr_core::{ComplexVolume, Error, Shape};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    Config = 7,
    MissingInput = 8,
    Panic = 99,
}

/// Opaque encoding operator.
pub struct SprModel {
    op: ForwardModel,
}

/// Opaque filter bank with its regularization scalars.
pub struct SprFilterBank {
    fb: FilterBank,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SprStatus {
    match e {
        Error::ShapeMismatch { .. } => SprStatus::ShapeMismatch,
        Error::InvalidArgument(_) => SprStatus::InvalidArgument,
        Error::CgBreakdown { .. } | Error::NonFinite(_) => SprStatus::Numerical,
        Error::Io(_) | Error::Exists(_) => SprStatus::Io,
        Error::Format(_) | Error::Json(_) => SprStatus::Format,
        Error::Config(_) => SprStatus::Config,
        Error::MissingInput(_) => SprStatus::MissingInput,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SprStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SprStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SprStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SprStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: callers pass pointers obtained from this library or valid for reads
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

/// Reads `len` doubles as `len / 2` complex values.
unsafe fn complex_in<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [Complex64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    if !len.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("{what}: odd length {len}")).into());
    }
    // Complex64 is repr(C) with two f64 fields
    Ok(std::slice::from_raw_parts(p as *const Complex64, len / 2))
}

unsafe fn complex_out<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [Complex64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    if !len.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("{what}: odd length {len}")).into());
    }
    Ok(std::slice::from_raw_parts_mut(p as *mut Complex64, len / 2))
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<(), Fail> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: format!("{what} of {expected} doubles"),
            got: format!("{got}"),
        }
        .into())
    }
}

fn data_from(op: &ForwardModel, data: &[Complex64]) -> Result<MeasuredData, Fail> {
    Ok(MeasuredData::from_vec(op.n_coils(), op.frame_lens(), data.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn spr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates a golden-angle radial model with ramp density compensation.
/// `coil_maps` holds `n_coils * nx * nx` complex values or is NULL, in
/// which case seeded synthetic maps are generated.
///
/// # Safety
/// `coil_maps` must be NULL or valid for `2 * n_coils * nx * nx` reads and
/// `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spr_model_new(
    nx: usize,
    nt: usize,
    n_coils: usize,
    spokes_per_frame: usize,
    coil_maps: *const f64,
    out: *mut *mut SprModel,
) -> SprStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let coils = if coil_maps.is_null() {
            make_coil_maps(nx, nx, n_coils, 0)?
        } else {
            let n = n_coils * nx * nx;
            let flat = complex_in(coil_maps, 2 * n, "coil_maps")?;
            let maps = flat.chunks(nx * nx).map(<[Complex64]>::to_vec).collect();
            CoilMaps::new(nx, nx, maps)?
        };
        let op = ForwardModel::golden_angle(Shape::new(nx, nx, nt), coils, spokes_per_frame)?;
        *out = Box::into_raw(Box::new(SprModel { op }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a pointer from [`spr_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spr_model_free(model: *mut SprModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Array lengths in doubles expected by the model functions.
///
/// # Safety
/// Pointers must be valid; `image_len` and `data_len` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn spr_model_sizes(model: *const SprModel, image_len: *mut usize, data_len: *mut usize) -> SprStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if !image_len.is_null() {
            *image_len = 2 * m.op.image_shape().len();
        }
        if !data_len.is_null() {
            *data_len = 2 * m.op.n_coils() * m.op.frame_lens().iter().sum::<usize>();
        }
        Ok(())
    })
}

/// `data = A image`.
///
/// # Safety
/// `image` and `data` must be valid for the given numbers of doubles.
#[no_mangle]
pub unsafe extern "C" fn spr_model_forward(
    model: *const SprModel,
    image: *const f64,
    image_len: usize,
    data: *mut f64,
    data_len: usize,
) -> SprStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let shape = m.op.image_shape();
        check_len("image", 2 * shape.len(), image_len)?;
        let x = ComplexVolume::from_vec(shape, complex_in(image, image_len, "image")?.to_vec())?;
        let y = m.op.forward(&x)?;
        let dst = complex_out(data, data_len, "data")?;
        check_len("data", 2 * y.as_slice().len(), data_len)?;
        dst.copy_from_slice(y.as_slice());
        Ok(())
    })
}

unsafe fn image_from_data(
    model: *const SprModel,
    data: *const f64,
    data_len: usize,
    image: *mut f64,
    image_len: usize,
    f: impl FnOnce(&ForwardModel, &MeasuredData) -> spr_core::Result<ComplexVolume>,
) -> SprStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let y = data_from(&m.op, complex_in(data, data_len, "data")?)?;
        let shape = m.op.image_shape();
        check_len("image", 2 * shape.len(), image_len)?;
        let dst = complex_out(image, image_len, "image")?;
        dst.copy_from_slice(f(&m.op, &y)?.as_slice());
        Ok(())
    })
}

/// `image = A^H data`.
///
/// # Safety
/// `data` and `image` must be valid for the given numbers of doubles.
#[no_mangle]
pub unsafe extern "C" fn spr_model_adjoint(
    model: *const SprModel,
    data: *const f64,
    data_len: usize,
    image: *mut f64,
    image_len: usize,
) -> SprStatus {
    image_from_data(model, data, data_len, image, image_len, |op, y| op.adjoint(y))
}

/// `image = A^H W^{1/2} data`.
///
/// # Safety
/// `data` and `image` must be valid for the given numbers of doubles.
#[no_mangle]
pub unsafe extern "C" fn spr_model_pseudo_inverse(
    model: *const SprModel,
    data: *const f64,
    data_len: usize,
    image: *mut f64,
    image_len: usize,
) -> SprStatus {
    image_from_data(model, data, data_len, image, image_len, pseudo_inverse)
}

/// Seeded random filter bank with default regularization scalars.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spr_filters_random(k: usize, kf: usize, seed: u64, out: *mut *mut SprFilterBank) -> SprStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let fb = FilterBank::random(k, kf, seed)?;
        *out = Box::into_raw(Box::new(SprFilterBank { fb }));
        Ok(())
    })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Fail> {
    if path.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Loads a filter bank written by `spr train` or `spr pretrain`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spr_filters_load(path: *const c_char, out: *mut *mut SprFilterBank) -> SprStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let p = path_arg(path)?;
        if !p.exists() {
            return Err(Error::MissingInput(p.to_path_buf()).into());
        }
        let fb = FilterBank::load(p)?;
        *out = Box::into_raw(Box::new(SprFilterBank { fb }));
        Ok(())
    })
}

/// # Safety
/// `filters` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn spr_filters_save(filters: *const SprFilterBank, path: *const c_char) -> SprStatus {
    guard(|| {
        let f = non_null(filters, "filters")?;
        f.fb.save(path_arg(path)?, None)?;
        Ok(())
    })
}

/// # Safety
/// `filters` must be NULL or a pointer from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spr_filters_free(filters: *mut SprFilterBank) {
    if !filters.is_null() {
        drop(Box::from_raw(filters));
    }
}

/// Filter count, kernel side, positive scalars and trainable parameter
/// count. Any output pointer may be NULL.
///
/// # Safety
/// Non-NULL pointers must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spr_filters_info(
    filters: *const SprFilterBank,
    k: *mut usize,
    kf: *mut usize,
    alpha: *mut f64,
    lambda: *mut f64,
    n_parameters: *mut usize,
) -> SprStatus {
    guard(|| {
        let f = &non_null(filters, "filters")?.fb;
        if !k.is_null() {
            *k = f.n_filters();
        }
        if !kf.is_null() {
            *kf = f.kernel_side();
        }
        if !alpha.is_null() {
            *alpha = f.alpha();
        }
        if !lambda.is_null() {
            *lambda = f.lambda();
        }
        if !n_parameters.is_null() {
            *n_parameters = f.n_parameters();
        }
        Ok(())
    })
}

/// Runs the unrolled network from `A# data` with `depth` iterations of
/// `n_cg` CG steps each.
///
/// # Safety
/// `data` and `image` must be valid for the given numbers of doubles.
#[no_mangle]
pub unsafe extern "C" fn spr_reconstruct(
    model: *const SprModel,
    filters: *const SprFilterBank,
    data: *const f64,
    data_len: usize,
    depth: usize,
    n_cg: usize,
    image: *mut f64,
    image_len: usize,
) -> SprStatus {
    let fb = match non_null(filters, "filters") {
        Ok(f) => &f.fb,
        Err(_) => {
            set_error("null pointer: filters".into());
            return SprStatus::NullPointer;
        }
    };
    image_from_data(model, data, data_len, image, image_len, |op, y| {
        let cfg = NetworkConfig {
            depth,
            n_cg,
            ..NetworkConfig::default()
        };
        cfg.validate()?;
        let x0 = pseudo_inverse(op, y)?;
        Ok(network_forward(&x0, y, op, fb, &cfg, false)?.0)
    })
}
