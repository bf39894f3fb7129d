//! C interface. Objects cross the boundary as opaque handles; every call
//! returns a [`RavenStatus`] and leaves a message for
//! [`raven_last_error_message`] on failure.
//!
//! Strings returned through `char **` out-parameters are owned by the caller
//! and must be released with [`raven_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use raven_core::attack::{run_raven, RavenConfig};
use raven_core::baseline::{apply_attack, AttackSpec};
use raven_core::diffusion::{load_backend, Backend, BackendSpec};
use raven_core::watermark::{self, Decision, Scheme, WatermarkKey};
use raven_core::{derive_stream, Error, ImageBuffer};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RavenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Backend = 4,
    Dimension = 5,
    Numeric = 6,
    Io = 7,
    Serialization = 8,
    Adapter = 9,
    Panic = 10,
}

/// A loaded diffusion backend.
pub struct RavenBackend(Backend);

/// An RGB image with values in [0, 1].
pub struct RavenImage(ImageBuffer);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RavenStatus {
    match e {
        Error::InvalidArgument(_) | Error::TooFewSamples { .. } => RavenStatus::InvalidArgument,
        Error::Config(_) | Error::StaleCache(_) => RavenStatus::Config,
        Error::Backend(_) | Error::MissingWeights { .. } => RavenStatus::Backend,
        Error::Dimension(_) => RavenStatus::Dimension,
        Error::NonFinite { .. } | Error::Numeric(_) => RavenStatus::Numeric,
        Error::Io { .. } | Error::Codec(_) => RavenStatus::Io,
        Error::Serde(_) => RavenStatus::Serialization,
        Error::Adapter { .. } => RavenStatus::Adapter,
    }
}

struct Fail(RavenStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RavenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RavenStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RavenStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RavenStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Fail(RavenStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    opt_str(p, what)?.ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = CString::new(s)
        .map_err(|_| Fail(RavenStatus::Serialization, "string contains a nul byte".into()))?
        .into_raw();
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Fail> {
    serde_json::from_str(text).map_err(|e| Fail(RavenStatus::Config, format!("`{what}`: {e}")))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn raven_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn raven_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string produced by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn raven_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the backend `name` (`"tiny"` is built in).
///
/// # Safety
/// `name` must be a valid C string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn raven_backend_load(name: *const c_char, out: *mut *mut RavenBackend) -> RavenStatus {
    guard(|| {
        let name = req_str(name, "name")?;
        let spec = BackendSpec {
            name: name.to_owned(),
            ..BackendSpec::tiny()
        };
        put(out, RavenBackend(load_backend(&spec)?), "out")
    })
}

/// # Safety
/// `b` must come from [`raven_backend_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn raven_backend_free(b: *mut RavenBackend) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Copies an interleaved 8-bit RGB buffer of `height * width * 3` bytes.
///
/// # Safety
/// `data` must point to `len` readable bytes; `id` may be null.
#[no_mangle]
pub unsafe extern "C" fn raven_image_from_rgb8(
    height: usize,
    width: usize,
    data: *const u8,
    len: usize,
    id: *const c_char,
    out: *mut *mut RavenImage,
) -> RavenStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let id = opt_str(id, "id")?.unwrap_or("image");
        let bytes = std::slice::from_raw_parts(data, len);
        put(out, RavenImage(ImageBuffer::from_rgb8(height, width, bytes, id)?), "out")
    })
}

/// # Safety
/// `img` must be a live handle; `height` and `width` writable.
#[no_mangle]
pub unsafe extern "C" fn raven_image_dims(img: *const RavenImage, height: *mut usize, width: *mut usize) -> RavenStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        if height.is_null() || width.is_null() {
            return Err(null("height/width"));
        }
        (*height, *width) = img.0.dims();
        Ok(())
    })
}

/// Writes the image as interleaved 8-bit RGB; `len` must be `height * width * 3`.
///
/// # Safety
/// `img` must be a live handle and `buf` point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn raven_image_to_rgb8(img: *const RavenImage, buf: *mut u8, len: usize) -> RavenStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let bytes = img.0.to_rgb8();
        if bytes.len() != len {
            return Err(Fail(
                RavenStatus::Dimension,
                format!("buffer holds {len} bytes, image needs {}", bytes.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&bytes);
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn raven_image_free(img: *mut RavenImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Runs the view-shift attack. `config_json` is a RavenConfig object (null
/// for defaults). When `trace_json` is non-null it receives the attack trace.
///
/// # Safety
/// Handles must be live; strings valid C strings or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn raven_attack(
    backend: *const RavenBackend,
    img: *const RavenImage,
    config_json: *const c_char,
    out: *mut *mut RavenImage,
    trace_json: *mut *mut c_char,
) -> RavenStatus {
    guard(|| {
        let backend = borrow(backend, "backend")?;
        let img = borrow(img, "img")?;
        let cfg: RavenConfig = match opt_str(config_json, "config_json")? {
            Some(text) => parse_json(text, "config_json")?,
            None => RavenConfig::default(),
        };
        let (y, trace) = run_raven(&img.0, &cfg, &backend.0)?;
        if !trace_json.is_null() {
            put_string(trace_json, trace.to_json()?, "trace_json")?;
        }
        put(out, RavenImage(y), "out")
    })
}

/// Applies a baseline attack given as JSON, e.g. `{"name": "jpeg", "quality": 50}`.
/// `backend` may be null for attacks that do not need one.
///
/// # Safety
/// Handles must be live or null where allowed; `attack_json` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn raven_apply_attack(
    backend: *const RavenBackend,
    img: *const RavenImage,
    attack_json: *const c_char,
    seed: u64,
    out: *mut *mut RavenImage,
) -> RavenStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        let spec: AttackSpec = parse_json(req_str(attack_json, "attack_json")?, "attack_json")?;
        let backend = backend.as_ref().map(|b| &b.0);
        let y = apply_attack(&img.0, &spec, seed, backend, &RavenConfig::default())?;
        put(out, RavenImage(y), "out")
    })
}

/// Generates a key for `scheme` (`dwt_dct`, `dwt_dct_svd` or `fourier_ring`)
/// from `seed`. Bitstream schemes take `payload_bits`; the ring takes the
/// backend and an image size of `height x width`.
///
/// # Safety
/// `scheme` must be a valid C string, `out_json` writable; `backend` may be null.
#[no_mangle]
pub unsafe extern "C" fn raven_key_generate(
    backend: *const RavenBackend,
    scheme: *const c_char,
    payload_bits: usize,
    height: usize,
    width: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> RavenStatus {
    guard(|| {
        let scheme: Scheme = req_str(scheme, "scheme")?.parse()?;
        let mut rng = derive_stream(seed, &format!("key:{scheme}"))?;
        let key = match scheme {
            Scheme::DwtDct | Scheme::DwtDctSvd => WatermarkKey::random_bits(scheme, payload_bits, &mut rng)?,
            Scheme::FourierRing => {
                let backend = borrow(backend, "backend")?;
                WatermarkKey::random_ring(backend.0.latent_shape(height, width), &mut rng)?
            }
            Scheme::External => {
                return Err(Fail(
                    RavenStatus::InvalidArgument,
                    "external keys are written by their adapter".into(),
                ))
            }
        };
        put_string(out_json, key.to_json()?, "out_json")
    })
}

/// Embeds a post-hoc watermark.
///
/// # Safety
/// `img` must be live, `key_json` a valid C string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn raven_embed(img: *const RavenImage, key_json: *const c_char, out: *mut *mut RavenImage) -> RavenStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        let key = WatermarkKey::from_json(req_str(key_json, "key_json")?)?;
        put(out, RavenImage(watermark::embed(&img.0, &key)?), "out")
    })
}

/// Generates a ring-watermarked image at `height x width` from `prompt_seed`.
///
/// # Safety
/// `backend` must be live, `key_json` a valid C string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn raven_generate_ring(
    backend: *const RavenBackend,
    key_json: *const c_char,
    prompt_seed: u64,
    out: *mut *mut RavenImage,
) -> RavenStatus {
    guard(|| {
        let backend = borrow(backend, "backend")?;
        let key = WatermarkKey::from_json(req_str(key_json, "key_json")?)?;
        let watermark::Payload::Ring(ring) = &key.payload else {
            return Err(Fail(RavenStatus::InvalidArgument, "key is not a fourier_ring key".into()));
        };
        put(out, RavenImage(watermark::embed_fourier_ring(prompt_seed, ring, &backend.0)?), "out")
    })
}

/// Scores `img` against a key. `statistic` receives bit accuracy or the ring
/// statistic; `detected` (optional) receives 1 if `statistic >= threshold`.
///
/// # Safety
/// `img` must be live, `key_json` valid, `statistic` writable; `backend` and
/// `detected` may be null.
#[no_mangle]
pub unsafe extern "C" fn raven_detect(
    backend: *const RavenBackend,
    img: *const RavenImage,
    key_json: *const c_char,
    threshold: f64,
    statistic: *mut f64,
    detected: *mut i32,
) -> RavenStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        let key = WatermarkKey::from_json(req_str(key_json, "key_json")?)?;
        if statistic.is_null() {
            return Err(null("statistic"));
        }
        let o = watermark::detect(&img.0, &key, backend.as_ref().map(|b| &b.0), threshold)?;
        *statistic = o.statistic;
        if !detected.is_null() {
            *detected = i32::from(o.decision == Decision::Detected);
        }
        Ok(())
    })
}
