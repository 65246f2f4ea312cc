//! C interface to `spikediff`.
//!
//! Every fallible function returns an [`SdStatus`]; on failure the message
//! is kept per thread and read with [`sd_last_error_message`]. Networks are
//! opaque [`SdNet`] handles owned by the caller and released with
//! [`sd_net_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spikediff::conversion::{if_firing_rate, quantize_act};
use spikediff::diffusion::{sample, NoiseSchedule, SampleSpec, Solver};
use spikediff::network::{Arch, NetConfig, SpikingNet};
use spikediff::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Runtime = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdArch {
    Mlp = 0,
    Unet = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdSolver {
    Ddpm = 0,
    Ddim = 1,
}

/// Network description. `dim`/`hidden` apply to MLPs, `channels`,
/// `height`, `width` to UNets.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SdNetSpec {
    pub arch: SdArch,
    pub dim: usize,
    pub hidden: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub t_snn: usize,
    pub t_diff: usize,
}

/// Opaque network handle.
pub struct SdNet {
    net: SpikingNet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SdStatus {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) | Error::NotScalar(_) => SdStatus::InvalidArgument,
        Error::Shape(_) => SdStatus::Shape,
        Error::Io(_) => SdStatus::Io,
        Error::Format(_) | Error::Json(_) => SdStatus::Format,
        _ => SdStatus::Runtime,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (SdStatus, String)>) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SdStatus::Panic
        }
    }
}

fn lib<T>(r: spikediff::Result<T>) -> Result<T, (SdStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SdStatus, String) {
    (SdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (SdStatus, String) {
    (SdStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, (SdStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))
}

fn net_config(spec: &SdNetSpec) -> Result<NetConfig, (SdStatus, String)> {
    let mut cfg = match spec.arch {
        SdArch::Mlp => {
            let mut c = NetConfig::tiny_mlp(spec.dim, spec.t_snn);
            if let Arch::Mlp { hidden, .. } = &mut c.arch {
                *hidden = spec.hidden;
            }
            c
        }
        SdArch::Unet => NetConfig::desk_unet(spec.channels, spec.height, spec.width, spec.t_snn),
    };
    cfg.t_diff = spec.t_diff;
    lib(cfg.validate())?;
    Ok(cfg)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (always
/// NUL-terminated when `len > 0`). Returns the full message length, or 0
/// when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sd_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Creates a freshly initialized network.
///
/// # Safety
/// `spec` must point to a valid spec and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sd_net_new(spec: *const SdNetSpec, seed: u64, out: *mut *mut SdNet) -> SdStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let net = lib(SpikingNet::new(net_config(spec)?, seed))?;
        *out = Box::into_raw(Box::new(SdNet { net }));
        Ok(())
    })
}

/// Loads a checkpoint written by [`sd_net_save`] or the command-line tool.
///
/// # Safety
/// `spec` and `path` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_net_load(spec: *const SdNetSpec, path: *const c_char, out: *mut *mut SdNet) -> SdStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let file = File::open(path).map_err(|e| (SdStatus::Io, format!("{path}: {e}")))?;
        let net = lib(SpikingNet::load(net_config(spec)?, BufReader::new(file)))?;
        *out = Box::into_raw(Box::new(SdNet { net }));
        Ok(())
    })
}

/// # Safety
/// `net` and `path` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sd_net_save(net: *const SdNet, path: *const c_char) -> SdStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let path = path_arg(path)?;
        let file = File::create(path).map_err(|e| (SdStatus::Io, format!("{path}: {e}")))?;
        let mut w = BufWriter::new(file);
        lib(net.net.save(&mut w))?;
        w.flush().map_err(|e| (SdStatus::Io, e.to_string()))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_net_free(net: *mut SdNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of trainable scalars, 0 for a null handle.
///
/// # Safety
/// `net` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sd_net_num_params(net: *const SdNet) -> usize {
    net.as_ref().map_or(0, |n| n.net.num_params())
}

/// Number of floats in one sample.
///
/// # Safety
/// `net` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sd_net_sample_len(net: *const SdNet) -> usize {
    net.as_ref()
        .map_or(0, |n| n.net.config().sample_shape().iter().product())
}

/// Scales every spiking threshold by `rho` (1 restores the trained value).
///
/// # Safety
/// `net` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sd_net_set_threshold_scale(net: *mut SdNet, rho: f32) -> SdStatus {
    guard(|| {
        let net = net.as_mut().ok_or_else(|| null("net"))?;
        lib(net.net.set_threshold_scale(rho))
    })
}

/// Predicted noise for `n` samples `x` at diffusion steps `t`.
///
/// # Safety
/// `x` and `out` must hold `n · sample_len` floats; `t` must hold `n`
/// entries.
#[no_mangle]
pub unsafe extern "C" fn sd_net_predict(
    net: *const SdNet,
    x: *const f32,
    t: *const usize,
    n: usize,
    out: *mut f32,
    out_len: usize,
) -> SdStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if x.is_null() || t.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let shape = net.net.config().sample_shape();
        let d: usize = shape.iter().product();
        if n == 0 || out_len != n * d {
            return Err((SdStatus::Shape, format!("output holds {out_len} floats, need {}", n * d)));
        }
        let mut full = vec![n];
        full.extend(shape);
        let input = lib(Tensor::new(full, std::slice::from_raw_parts(x, n * d).to_vec()))?;
        let steps = std::slice::from_raw_parts(t, n);
        let y = lib(net.net.predict(&input, steps))?;
        ptr::copy_nonoverlapping(y.data().as_ptr(), out, n * d);
        Ok(())
    })
}

/// Draws `n` samples with a linear β schedule (1e-4 to 0.02) over the
/// network's diffusion length.
///
/// # Safety
/// `net` must be valid and `out` must hold `out_len = n · sample_len`
/// floats.
#[no_mangle]
pub unsafe extern "C" fn sd_sample(
    net: *mut SdNet,
    solver: SdSolver,
    steps: usize,
    rho: f32,
    seed: u64,
    n: usize,
    out: *mut f32,
    out_len: usize,
) -> SdStatus {
    guard(|| {
        let net = net.as_mut().ok_or_else(|| null("net"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let shape = net.net.config().sample_shape();
        let d: usize = shape.iter().product();
        if out_len != n * d {
            return Err((SdStatus::Shape, format!("output holds {out_len} floats, need {}", n * d)));
        }
        let schedule = lib(NoiseSchedule::linear(net.net.config().t_diff, 1e-4, 0.02))?;
        let spec = SampleSpec {
            solver: match solver {
                SdSolver::Ddpm => Solver::Ddpm,
                SdSolver::Ddim => Solver::Ddim,
            },
            n_steps: steps,
            rho,
            seed,
            n,
            shape,
        };
        let x = lib(sample(&mut net.net, &schedule, &spec, None))?;
        ptr::copy_nonoverlapping(x.data().as_ptr(), out, n * d);
        Ok(())
    })
}

/// Clipped uniform activation quantizer.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_quantize_act(x: f64, clip: f64, bits: u32, out: *mut f64) -> SdStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = lib(quantize_act(x, clip, bits))?;
        Ok(())
    })
}

/// Firing rate of an integrate-and-fire neuron under constant input.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_if_firing_rate(current: f64, threshold: f64, steps: u32, out: *mut f64) -> SdStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = lib(if_firing_rate(current, threshold, steps))?;
        Ok(())
    })
}
