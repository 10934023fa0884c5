//! C ABI over the `hqnn` density-matrix simulator and hybrid models.
//!
//! Objects are opaque heap handles released with the matching `*_free`.
//! Every call returns an [`HqnnStatus`]; on failure a message is kept per
//! thread and can be read with [`hqnn_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hqnn::checks::{selftest, SelftestOptions};
use hqnn::models::{load_checkpoint, save_checkpoint, Model, ModelKind, N_CLASSES};
use hqnn::nn::Tensor;
use hqnn::noise::{KrausChannel, NoiseKind, NoiseSpec};
use hqnn::sim::{Angle, DensityMatrix, GateKind, GateOp};
use hqnn::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HqnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Validation = 5,
    Numerical = 6,
    Unsupported = 7,
    Format = 8,
    Io = 9,
    Panic = 10,
}

pub const HQNN_GATE_RX: u32 = 0;
pub const HQNN_GATE_RY: u32 = 1;
pub const HQNN_GATE_RZ: u32 = 2;
pub const HQNN_GATE_ROT: u32 = 3;
pub const HQNN_GATE_X: u32 = 4;
pub const HQNN_GATE_Y: u32 = 5;
pub const HQNN_GATE_Z: u32 = 6;
pub const HQNN_GATE_H: u32 = 7;
pub const HQNN_GATE_CNOT: u32 = 8;
pub const HQNN_GATE_CZ: u32 = 9;

pub const HQNN_NOISE_NONE: u32 = 0;
pub const HQNN_NOISE_BIT_FLIP: u32 = 1;
pub const HQNN_NOISE_PHASE_FLIP: u32 = 2;
pub const HQNN_NOISE_DEPOLARIZING: u32 = 3;
pub const HQNN_NOISE_PHASE_DAMPING: u32 = 4;
pub const HQNN_NOISE_AMPLITUDE_DAMPING: u32 = 5;

pub const HQNN_MODEL_QUANNN: u32 = 0;
pub const HQNN_MODEL_QCNN: u32 = 1;

/// Number of logits written by [`hqnn_model_forward`].
pub const HQNN_N_CLASSES: usize = 4;

/// Opaque density-matrix handle.
pub struct HqnnDensityMatrix {
    inner: DensityMatrix,
}

/// Opaque hybrid-model handle.
pub struct HqnnModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> HqnnStatus {
    match err {
        Error::Shape(_) => HqnnStatus::Shape,
        Error::Config(_) => HqnnStatus::Config,
        Error::Validation { .. } => HqnnStatus::Validation,
        Error::Numerical(_) => HqnnStatus::Numerical,
        Error::Unsupported(_) => HqnnStatus::Unsupported,
        Error::Format { .. } | Error::EmptyResult(_) | Error::InsufficientSamples { .. } => HqnnStatus::Format,
        Error::Io { .. } => HqnnStatus::Io,
    }
}

/// Failure raised inside the ABI layer itself.
struct Fail(HqnnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HqnnStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(HqnnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HqnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HqnnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HqnnStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

fn gate_kind(code: u32) -> Result<GateKind, Fail> {
    Ok(match code {
        HQNN_GATE_RX => GateKind::Rx,
        HQNN_GATE_RY => GateKind::Ry,
        HQNN_GATE_RZ => GateKind::Rz,
        HQNN_GATE_ROT => GateKind::Rot,
        HQNN_GATE_X => GateKind::X,
        HQNN_GATE_Y => GateKind::Y,
        HQNN_GATE_Z => GateKind::Z,
        HQNN_GATE_H => GateKind::H,
        HQNN_GATE_CNOT => GateKind::Cnot,
        HQNN_GATE_CZ => GateKind::Cz,
        other => return Err(invalid(format!("unknown gate code {other}"))),
    })
}

fn noise_kind(code: u32) -> Result<NoiseKind, Fail> {
    Ok(match code {
        HQNN_NOISE_NONE => NoiseKind::None,
        HQNN_NOISE_BIT_FLIP => NoiseKind::BitFlip,
        HQNN_NOISE_PHASE_FLIP => NoiseKind::PhaseFlip,
        HQNN_NOISE_DEPOLARIZING => NoiseKind::Depolarizing,
        HQNN_NOISE_PHASE_DAMPING => NoiseKind::PhaseDamping,
        HQNN_NOISE_AMPLITUDE_DAMPING => NoiseKind::AmplitudeDamping,
        other => return Err(invalid(format!("unknown noise code {other}"))),
    })
}

fn model_kind(code: u32) -> Result<ModelKind, Fail> {
    match code {
        HQNN_MODEL_QUANNN => Ok(ModelKind::Quannn),
        HQNN_MODEL_QCNN => Ok(ModelKind::Qcnn),
        other => Err(invalid(format!("unknown model code {other}"))),
    }
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL,
/// or 0 if the last call succeeded.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hqnn_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// `|0…0⟩⟨0…0|` on `n_qubits` wires.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_new(n_qubits: usize, out: *mut *mut HqnnDensityMatrix) -> HqnnStatus {
    guard(|| {
        let rho = DensityMatrix::zero_state(n_qubits)?;
        write_out(out, Box::into_raw(Box::new(HqnnDensityMatrix { inner: rho })))
    })
}

/// # Safety
/// `rho` must be NULL or a handle from [`hqnn_density_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_free(rho: *mut HqnnDensityMatrix) {
    if !rho.is_null() {
        drop(Box::from_raw(rho));
    }
}

/// # Safety
/// `rho` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_n_qubits(rho: *const HqnnDensityMatrix, out: *mut usize) -> HqnnStatus {
    guard(|| write_out(out, handle(rho, "rho")?.inner.n_qubits()))
}

/// Apply one gate. `wires` holds 1 or 2 wire indices, `angles` the gate's
/// angles (0, 1 or 3 of them).
///
/// # Safety
/// `rho` must be a live handle; `wires`/`angles` must point to the given
/// number of elements (or be NULL when the count is 0).
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_apply_gate(
    rho: *mut HqnnDensityMatrix,
    gate: u32,
    wires: *const usize,
    n_wires: usize,
    angles: *const f64,
    n_angles: usize,
) -> HqnnStatus {
    guard(|| {
        let rho = handle_mut(rho, "rho")?;
        let wires = slice(wires, n_wires, "wires")?.to_vec();
        let angles = slice(angles, n_angles, "angles")?
            .iter()
            .map(|&a| Angle::Const(a))
            .collect();
        let op = GateOp::new(gate_kind(gate)?, wires, angles)?;
        rho.inner.apply_gate_mut(&op, &[])?;
        Ok(())
    })
}

/// Apply a noise channel of strength `prob` to `wire`.
///
/// # Safety
/// `rho` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_apply_channel(
    rho: *mut HqnnDensityMatrix,
    noise: u32,
    prob: f64,
    wire: usize,
) -> HqnnStatus {
    guard(|| {
        let rho = handle_mut(rho, "rho")?;
        let ch = KrausChannel::new(noise_kind(noise)?, prob)?;
        rho.inner.apply_channel_mut(&ch, wire)?;
        Ok(())
    })
}

/// `⟨Z⟩` on `wire`.
///
/// # Safety
/// `rho` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_expect_z(
    rho: *const HqnnDensityMatrix,
    wire: usize,
    out: *mut f64,
) -> HqnnStatus {
    guard(|| {
        let z = handle(rho, "rho")?.inner.expect_z(wire)?;
        write_out(out, z)
    })
}

/// Real part of the trace.
///
/// # Safety
/// `rho` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_trace(rho: *const HqnnDensityMatrix, out: *mut f64) -> HqnnStatus {
    guard(|| write_out(out, handle(rho, "rho")?.inner.trace()))
}

/// Check unit trace, Hermiticity and positivity.
///
/// # Safety
/// `rho` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqnn_density_validate(rho: *const HqnnDensityMatrix) -> HqnnStatus {
    guard(|| Ok(handle(rho, "rho")?.inner.validate()?))
}

/// Max entry of `|Σ K†K − I|` for the given channel.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hqnn_channel_completeness(noise: u32, prob: f64, out: *mut f64) -> HqnnStatus {
    guard(|| {
        let ch = KrausChannel::new(noise_kind(noise)?, prob)?;
        write_out(out, ch.completeness_deviation())
    })
}

/// Freshly initialised model for `height × width` images.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn hqnn_model_new(
    kind: u32,
    height: usize,
    width: usize,
    seed: u64,
    out: *mut *mut HqnnModel,
) -> HqnnStatus {
    guard(|| {
        let model = Model::new(model_kind(kind)?, height, width, seed)?;
        write_out(out, Box::into_raw(Box::new(HqnnModel { inner: model })))
    })
}

/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn hqnn_model_free(model: *mut HqnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total trainable parameter count.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hqnn_model_n_params(model: *const HqnnModel, out: *mut usize) -> HqnnStatus {
    guard(|| write_out(out, handle(model, "model")?.inner.params().len()))
}

/// Logits for one row-major image with pixels in `[0, 1]`. Writes
/// [`HQNN_N_CLASSES`] values to `logits`.
///
/// # Safety
/// `model` must be a live handle, `pixels` must hold `n_pixels` values and
/// `logits` must have room for [`HQNN_N_CLASSES`] values.
#[no_mangle]
pub unsafe extern "C" fn hqnn_model_forward(
    model: *const HqnnModel,
    pixels: *const f64,
    n_pixels: usize,
    noise: u32,
    prob: f64,
    logits: *mut f64,
) -> HqnnStatus {
    guard(|| {
        let model = &handle(model, "model")?.inner;
        let (h, w) = model.image_dims();
        if n_pixels != h * w {
            return Err(Fail(
                HqnnStatus::Shape,
                format!("{n_pixels} pixels, model expects {h}x{w}"),
            ));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let image = Tensor::new(vec![h, w], slice(pixels, n_pixels, "pixels")?.to_vec())?;
        let spec = NoiseSpec::new(noise_kind(noise)?, prob)?;
        let out = model.forward(&image, &spec)?;
        debug_assert_eq!(out.len(), N_CLASSES);
        ptr::copy_nonoverlapping(out.as_ptr(), logits, out.len());
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn hqnn_model_save(model: *const HqnnModel, path: *const c_char) -> HqnnStatus {
    guard(|| Ok(save_checkpoint(&handle(model, "model")?.inner, path_arg(path)?)?))
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hqnn_model_load(path: *const c_char, out: *mut *mut HqnnModel) -> HqnnStatus {
    guard(|| {
        let model = load_checkpoint(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(HqnnModel { inner: model })))
    })
}

/// Run the built-in invariant checks; `failed` receives the failure count.
///
/// # Safety
/// `failed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hqnn_selftest(failed: *mut usize) -> HqnnStatus {
    guard(|| {
        let n = selftest(SelftestOptions::default())
            .iter()
            .filter(|r| !r.passed)
            .count();
        write_out(failed, n)
    })
}
