//! C ABI over `udc-core`.
//!
//! Objects cross the boundary as opaque handles created by `udc_*_read` /
//! `udc_*_new` style functions and released with the matching `*_free`.
//! Every fallible call returns a [`UdcStatus`]; on failure a description is
//! available from [`udc_last_error`] on the same thread. Results are written
//! through out-pointers only on success.
//!
//! Pixel buffers are interleaved RGB `f64`, row-major from the top row.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use udc_core::discnet::{self, InferOptions, NetworkParams};
use udc_core::error::Error;
use udc_core::formation::{self, FormationParams, PsfStack};
use udc_core::image::Image;
use udc_core::io;
use udc_core::kernel_code::{self, KernelCode, PcaBasis};
use udc_core::metrics;
use udc_core::restore::{self, Boundary, WienerParams};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UdcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Panic = 7,
}

/// Border model for [`udc_wiener`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UdcBoundary {
    Replicate = 0,
    ZeroScene = 1,
}

/// Three-channel image.
pub struct UdcImage(Image);

/// Per-channel PSF with its rotation angle and channel gains.
pub struct UdcPsf(PsfStack);

/// PCA basis for kernel codes.
pub struct UdcBasis(PcaBasis);

/// Trained restoration network.
pub struct UdcModel(NetworkParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> UdcStatus {
    match err {
        Error::Shape(_) => UdcStatus::Shape,
        Error::InvalidArgument(_) | Error::Config { .. } => UdcStatus::InvalidArgument,
        Error::Io { .. } => UdcStatus::Io,
        Error::Format { .. } => UdcStatus::Format,
        Error::Numeric(_) => UdcStatus::Numeric,
    }
}

struct Fail(UdcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(UdcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(UdcStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UdcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UdcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            UdcStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn udc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn udc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- images ----

/// Create an image from `3 * width * height` interleaved samples.
///
/// # Safety
/// `rgb` must point to that many readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_image_new(width: usize, height: usize, rgb: *const f64, out: *mut *mut UdcImage) -> UdcStatus {
    guard(|| {
        let n = 3usize
            .checked_mul(width)
            .and_then(|v| v.checked_mul(height))
            .ok_or_else(|| invalid("image too large"))?;
        if n == 0 {
            return Err(invalid("image must not be empty"));
        }
        let data = slice_arg(rgb, n, "rgb")?;
        put(out, UdcImage(Image::from_interleaved(width, height, data)?))
    })
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn udc_image_width(img: *const UdcImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn udc_image_height(img: *const UdcImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// Copy interleaved samples into `rgb`, which must hold exactly
/// `3 * width * height` values.
///
/// # Safety
/// `rgb` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn udc_image_copy(img: *const UdcImage, rgb: *mut f64, len: usize) -> UdcStatus {
    guard(|| {
        let img = borrow(img, "image")?;
        let data = img.0.to_interleaved();
        if len != data.len() {
            return Err(Fail(
                UdcStatus::Shape,
                format!("buffer holds {len} values, image has {}", data.len()),
            ));
        }
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        std::slice::from_raw_parts_mut(rgb, len).copy_from_slice(&data);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_image_read_pfm(path: *const c_char, out: *mut *mut UdcImage) -> UdcStatus {
    guard(|| put(out, UdcImage(io::read_pfm(path_arg(path)?)?)))
}

/// # Safety
/// `img` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn udc_image_write_pfm(img: *const UdcImage, path: *const c_char) -> UdcStatus {
    guard(|| Ok(io::write_pfm(path_arg(path)?, &borrow(img, "image")?.0)?))
}

/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn udc_image_free(img: *mut UdcImage) {
    free(img)
}

// ---- PSFs ----

/// Read a PSF and its `.meta` sidecar, if any.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_psf_read(path: *const c_char, out: *mut *mut UdcPsf) -> UdcStatus {
    guard(|| {
        let path = path_arg(path)?;
        let mut psf = PsfStack::from_image(&io::read_pfm(&path)?)?;
        io::config::apply_psf_meta(&path, &mut psf)?;
        put(out, UdcPsf(psf))
    })
}

/// Write a PSF and its `.meta` sidecar.
///
/// # Safety
/// `psf` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn udc_psf_write(psf: *const UdcPsf, path: *const c_char) -> UdcStatus {
    guard(|| {
        let psf = borrow(psf, "psf")?;
        let path = path_arg(path)?;
        io::write_pfm(&path, &psf.0.to_image())?;
        Ok(io::config::write_psf_meta(&path, &psf.0)?)
    })
}

/// Isotropic Gaussian PSF of odd `size`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_psf_gaussian(size: usize, sigma: f64, out: *mut *mut UdcPsf) -> UdcStatus {
    guard(|| put(out, UdcPsf(PsfStack::gaussian(size, sigma)?)))
}

/// Rotate by `angle_deg` (counter-clockwise, at most 45 in magnitude).
///
/// # Safety
/// `psf` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_psf_rotate(psf: *const UdcPsf, angle_deg: f64, out: *mut *mut UdcPsf) -> UdcStatus {
    guard(|| put(out, UdcPsf(formation::rotate_psf(&borrow(psf, "psf")?.0, angle_deg)?)))
}

/// # Safety
/// `psf` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn udc_psf_size(psf: *const UdcPsf) -> usize {
    psf.as_ref().map_or(0, |p| p.0.size())
}

/// # Safety
/// `psf` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn udc_psf_free(psf: *mut UdcPsf) {
    free(psf)
}

// ---- formation and restoration ----

/// Degrade an HDR scene with `psf`, producing the tone-mapped degraded and
/// target images.
///
/// # Safety
/// Handles must be live; `degraded` and `target` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_simulate_degraded(
    scene: *const UdcImage,
    psf: *const UdcPsf,
    x_max: f64,
    alpha: f64,
    noise_sigma: f64,
    seed: u64,
    degraded: *mut *mut UdcImage,
    target: *mut *mut UdcImage,
) -> UdcStatus {
    guard(|| {
        if degraded.is_null() || target.is_null() {
            return Err(null("output pointer"));
        }
        let p = FormationParams {
            x_max,
            alpha,
            noise_sigma,
            seed,
        };
        let pair = formation::simulate_degraded(&borrow(scene, "scene")?.0, &borrow(psf, "psf")?.0, &p)?;
        put(degraded, UdcImage(pair.degraded))?;
        put(target, UdcImage(pair.target))
    })
}

/// Wiener deconvolution of a tone-mapped image. `nsr` holds three
/// per-channel noise-to-signal ratios.
///
/// # Safety
/// Handles must be live; `nsr` must point to 3 values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn udc_wiener(
    img: *const UdcImage,
    psf: *const UdcPsf,
    nsr: *const f64,
    alpha: f64,
    boundary: UdcBoundary,
    out: *mut *mut UdcImage,
) -> UdcStatus {
    guard(|| {
        let n = slice_arg(nsr, 3, "nsr")?;
        let params = WienerParams {
            nsr: [n[0], n[1], n[2]],
            boundary: match boundary {
                UdcBoundary::Replicate => Boundary::Replicate,
                UdcBoundary::ZeroScene => Boundary::ZeroScene,
            },
        };
        let r = restore::wiener_deconvolve(&borrow(img, "image")?.0, &borrow(psf, "psf")?.0, &params, alpha)?;
        put(out, UdcImage(r))
    })
}

/// PSNR in dB for images in `[0, peak]`; +inf for identical images.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_psnr(a: *const UdcImage, b: *const UdcImage, peak: f64, out: *mut f64) -> UdcStatus {
    guard(|| {
        let v = metrics::psnr(&borrow(a, "a")?.0, &borrow(b, "b")?.0, peak)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Mean SSIM over the three channels.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_ssim(a: *const UdcImage, b: *const UdcImage, out: *mut f64) -> UdcStatus {
    guard(|| {
        let v = metrics::ssim(&borrow(a, "a")?.0, &borrow(b, "b")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

// ---- kernel codes ----

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_basis_read(path: *const c_char, out: *mut *mut UdcBasis) -> UdcStatus {
    guard(|| put(out, UdcBasis(io::read_basis(path_arg(path)?)?)))
}

/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn udc_basis_code_dim(basis: *const UdcBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.code_dim())
}

/// Project `psf` onto `basis`; `code` must hold exactly `code_dim` values.
///
/// # Safety
/// Handles must be live; `code` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn udc_encode_kernel(psf: *const UdcPsf, basis: *const UdcBasis, code: *mut f64, len: usize) -> UdcStatus {
    guard(|| {
        let c = kernel_code::encode_kernel(&borrow(psf, "psf")?.0, &borrow(basis, "basis")?.0)?;
        let c = c.as_slice();
        if len != c.len() {
            return Err(Fail(UdcStatus::Shape, format!("buffer holds {len} values, code has {}", c.len())));
        }
        if code.is_null() {
            return Err(null("code"));
        }
        std::slice::from_raw_parts_mut(code, len).copy_from_slice(c);
        Ok(())
    })
}

/// # Safety
/// `basis` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn udc_basis_free(basis: *mut UdcBasis) {
    free(basis)
}

// ---- network ----

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_model_read(path: *const c_char, out: *mut *mut UdcModel) -> UdcStatus {
    guard(|| put(out, UdcModel(io::read_model(path_arg(path)?)?)))
}

/// Length of the kernel code the model expects.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn udc_model_code_dim(model: *const UdcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().code_dim)
}

/// Restore `img` given its kernel code, tiling with `tile` and `overlap`
/// (pass 0 for defaults). The output is not clamped.
///
/// # Safety
/// Handles must be live; `code` must point to `code_len` values; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn udc_model_infer(
    model: *const UdcModel,
    img: *const UdcImage,
    code: *const f64,
    code_len: usize,
    tile: usize,
    overlap: usize,
    out: *mut *mut UdcImage,
) -> UdcStatus {
    guard(|| {
        let defaults = InferOptions::default();
        let opts = InferOptions {
            tile: if tile == 0 { defaults.tile } else { tile },
            overlap: if tile == 0 && overlap == 0 { defaults.overlap } else { overlap },
        };
        let code = KernelCode(slice_arg(code, code_len, "code")?.to_vec());
        let r = discnet::infer(&borrow(model, "model")?.0, &borrow(img, "image")?.0, &code, &opts)?;
        put(out, UdcImage(r))
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn udc_model_free(model: *mut UdcModel) {
    free(model)
}
