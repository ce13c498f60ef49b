//! C ABI over `ulsam-core`.
//!
//! Every fallible function returns a [`UlsamStatus`] code; on failure the
//! message is available from [`ulsam_last_error`] on the same thread.
//! Models are opaque [`UlsamModel`] handles released with
//! [`ulsam_model_free`]. Strings returned by the library are released with
//! [`ulsam_string_free`]. A model may be read (forward, cost, report) from
//! several threads at once; mutating calls need exclusive access.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ulsam_core::attention::{ulsam_forward as core_ulsam_forward, UlsamConfig, UlsamWeights};
use ulsam_core::config::RunConfig;
use ulsam_core::cost::{self, analyze_model_at, AttentionKind, AttentionOverheadQuery};
use ulsam_core::model::{build_mv1, build_mv2, parse_positions, ModelGraph};
use ulsam_core::train::checkpoint;
use ulsam_core::{Error, Shape, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UlsamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Directive = 4,
    State = 5,
    Data = 6,
    Checkpoint = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Attention modules known to [`ulsam_attention_overhead`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UlsamAttentionKind {
    NonLocal = 0,
    A2Net = 1,
    SeNet = 2,
    Bam = 3,
    Cbam = 4,
    Ulsam = 5,
}

impl From<UlsamAttentionKind> for AttentionKind {
    fn from(k: UlsamAttentionKind) -> Self {
        match k {
            UlsamAttentionKind::NonLocal => AttentionKind::NonLocal,
            UlsamAttentionKind::A2Net => AttentionKind::A2Net,
            UlsamAttentionKind::SeNet => AttentionKind::SeNet,
            UlsamAttentionKind::Bam => AttentionKind::Bam,
            UlsamAttentionKind::Cbam => AttentionKind::Cbam,
            UlsamAttentionKind::Ulsam => AttentionKind::Ulsam,
        }
    }
}

/// Whole-model totals. `macs` counts one multiply-accumulate per kernel tap.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UlsamCost {
    pub params: u64,
    pub bn_params: u64,
    pub macs: u64,
    pub attention_macs: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UlsamOverhead {
    pub params: u64,
    pub macs: u64,
}

/// Opaque model handle.
pub struct UlsamModel {
    graph: ModelGraph<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UlsamStatus {
    match e {
        Error::Config(_) | Error::Json(_) => UlsamStatus::Config,
        Error::Directive { .. } => UlsamStatus::Directive,
        Error::State(_) => UlsamStatus::State,
        Error::Ingestion { .. } | Error::Data(_) => UlsamStatus::Data,
        Error::Checkpoint(_) => UlsamStatus::Checkpoint,
        Error::Io(_) => UlsamStatus::Io,
    }
}

struct Failure(UlsamStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UlsamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UlsamStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            UlsamStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(UlsamStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(UlsamStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(m: *const UlsamModel) -> Result<&'a UlsamModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn model_mut<'a>(m: *mut UlsamModel) -> Result<&'a mut UlsamModel, Failure> {
    m.as_mut().ok_or_else(|| null("model"))
}

unsafe fn emit_model(out: *mut *mut UlsamModel, graph: ModelGraph<f32>) -> Result<(), Failure> {
    *out = Box::into_raw(Box::new(UlsamModel { graph }));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ulsam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// MobileNet-V1 at width multiplier `alpha`.
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_mv1(alpha: f64, num_classes: u32, seed: u64, out: *mut *mut UlsamModel) -> UlsamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        emit_model(out, build_mv1(alpha, num_classes as usize, seed)?)
    })
}

/// MobileNet-V2 at width 1.0.
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_mv2(num_classes: u32, seed: u64, out: *mut *mut UlsamModel) -> UlsamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        emit_model(out, build_mv2(num_classes as usize, seed)?)
    })
}

/// Build from a JSON run configuration (same format as the CLI's `--config`).
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_from_config_json(json: *const c_char, out: *mut *mut UlsamModel) -> UlsamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::from_json(c_str(json, "json")?)?;
        emit_model(out, cfg.build_graph()?)
    })
}

/// Place ULSAM blocks with `g` groups. `positions` is a comma-separated
/// list of `L` (substitute layer L) and `L:1` (insert after layer L). On
/// error the model is unchanged.
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_apply_ulsam(model: *mut UlsamModel, positions: *const c_char, g: u32) -> UlsamStatus {
    guard(|| {
        let m = model_mut(model)?;
        let directives = parse_positions(c_str(positions, "positions")?)?;
        m.graph.apply_ulsam(&directives, g as usize)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ulsam_model_num_classes(model: *const UlsamModel, out: *mut u32) -> UlsamStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.graph.num_classes() as u32;
        Ok(())
    })
}

/// Totals for a square `input_size` input.
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_cost(model: *const UlsamModel, input_size: u32, out: *mut UlsamCost) -> UlsamStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if input_size == 0 {
            return Err(Failure(UlsamStatus::Config, "input_size must be at least 1".into()));
        }
        let r = analyze_model_at(&m.graph, input_size as usize);
        *out = UlsamCost {
            params: r.total_params,
            bn_params: r.total_bn_params,
            macs: r.total_mac_count(),
            attention_macs: r.total_macs.attention,
        };
        Ok(())
    })
}

/// Per-layer cost report as JSON. Free the string with
/// [`ulsam_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_report_json(model: *const UlsamModel, input_size: u32, out: *mut *mut c_char) -> UlsamStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if input_size == 0 {
            return Err(Failure(UlsamStatus::Config, "input_size must be at least 1".into()));
        }
        let text = analyze_model_at(&m.graph, input_size as usize).to_json().to_string();
        *out = CString::new(text).expect("JSON has no NULs").into_raw();
        Ok(())
    })
}

/// Inference-mode forward of a `(batch, channels, height, width)` f32
/// input. Writes `batch × num_classes` logits.
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_forward(
    model: *const UlsamModel,
    input: *const f32,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    logits: *mut f32,
    logits_len: usize,
) -> UlsamStatus {
    guard(|| {
        let m = model_ref(model)?;
        if input.is_null() {
            return Err(null("input"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let shape = Shape::new(batch, channels, height, width);
        let needed = batch * m.graph.num_classes();
        if logits_len < needed {
            return Err(Failure(
                UlsamStatus::BufferTooSmall,
                format!("logits buffer holds {logits_len} values, {needed} needed"),
            ));
        }
        let x = Tensor::from_vec(shape, std::slice::from_raw_parts(input, shape.len()).to_vec())?;
        let y = m.graph.infer(&x)?;
        std::slice::from_raw_parts_mut(logits, needed).copy_from_slice(y.data());
        Ok(())
    })
}

/// Restore parameters and running statistics from a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_load_checkpoint(model: *mut UlsamModel, path: *const c_char) -> UlsamStatus {
    guard(|| {
        let m = model_mut(model)?;
        checkpoint::load(&mut m.graph, Path::new(c_str(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ulsam_model_save_checkpoint(model: *mut UlsamModel, path: *const c_char) -> UlsamStatus {
    guard(|| {
        let m = model_mut(model)?;
        checkpoint::save(&mut m.graph, Path::new(c_str(path, "path")?))?;
        Ok(())
    })
}

/// Release a model. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ulsam_model_free(model: *mut UlsamModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Release a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ulsam_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Overhead of one attention module on an `m × h × w` map. Pass 0 for `t`
/// (default m/8) or `r` (default 16) to use the defaults.
#[no_mangle]
pub unsafe extern "C" fn ulsam_attention_overhead(
    kind: UlsamAttentionKind,
    m: u64,
    h: u64,
    w: u64,
    t: u64,
    r: u64,
    out: *mut UlsamOverhead,
) -> UlsamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut q = AttentionOverheadQuery::new(kind.into(), m, h, w);
        if t != 0 {
            q = q.with_t(t);
        }
        if r != 0 {
            q = q.with_r(r);
        }
        let o = cost::attention_overhead(&q)?;
        *out = UlsamOverhead {
            params: o.params,
            macs: o.macs,
        };
        Ok(())
    })
}

/// MACs of a standard `s_k × s_k` convolution from `m` to `n` channels
/// producing an `h × w` map.
#[no_mangle]
pub extern "C" fn ulsam_flops_sconv(s_k: u64, m: u64, n: u64, h: u64, w: u64) -> u64 {
    cost::flops_sconv(s_k, m, n, h, w)
}

/// Depthwise and pointwise MACs of a depthwise-separable convolution.
#[no_mangle]
pub unsafe extern "C" fn ulsam_flops_dws(s_k: u64, m: u64, n: u64, h: u64, w: u64, depthwise: *mut u64, pointwise: *mut u64) -> UlsamStatus {
    guard(|| {
        if depthwise.is_null() || pointwise.is_null() {
            return Err(null("output"));
        }
        let (d, p) = cost::flops_dws(s_k, m, n, h, w);
        *depthwise = d;
        *pointwise = p;
        Ok(())
    })
}

/// Stateless ULSAM forward on `(batch, channels, height, width)` f32
/// features with `groups` subspaces. `dw` and `pw` hold `channels` weights
/// each; the output has the input's shape.
#[no_mangle]
pub unsafe extern "C" fn ulsam_forward(
    input: *const f32,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    groups: usize,
    dw: *const f32,
    pw: *const f32,
    output: *mut f32,
) -> UlsamStatus {
    guard(|| {
        if input.is_null() || dw.is_null() || pw.is_null() || output.is_null() {
            return Err(null("input, dw, pw or output"));
        }
        let cfg = UlsamConfig::new(channels, groups)?;
        let shape = Shape::new(batch, channels, height, width);
        let weights = UlsamWeights {
            dw: std::slice::from_raw_parts(dw, channels).to_vec(),
            pw: std::slice::from_raw_parts(pw, channels).to_vec(),
        };
        let x = Tensor::from_vec(shape, std::slice::from_raw_parts(input, shape.len()).to_vec())?;
        let y = core_ulsam_forward(&x, &cfg, &weights)?;
        std::slice::from_raw_parts_mut(output, shape.len()).copy_from_slice(y.data());
        Ok(())
    })
}
