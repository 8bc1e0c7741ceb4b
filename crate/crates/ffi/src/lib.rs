//! C ABI over the `softhg` library.
//!
//! Handles are opaque and owned by the caller once created; free them with
//! the matching `*_free` function. Every fallible call returns a
//! [`SoftHgStatus`]; on failure [`softhg_last_error_message`] describes the
//! most recent error on the calling thread. Matrices cross the boundary as
//! row-major `double` buffers with explicit row and column counts.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softhg::gradcheck::{self, GradCheckConfig};
use softhg::ses::{self, SeSConfig, SeSState};
use softhg::softhg::{self as block, Activation, BlockConfig, NormMode, SoftHGParams};
use softhg::{message, Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftHgStatus {
    Ok = 0,
    NullPointer = 1,
    /// Buffer sizes or matrix shapes do not fit together.
    Shape = 2,
    /// Invalid configuration value.
    Config = 3,
    /// Non-finite values or a degenerate structure.
    Numeric = 4,
    /// File or JSON error.
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftHgNorm {
    /// Softmax over vertices, per hyperedge.
    Enorm = 0,
    /// Softmax over hyperedges, per vertex.
    Vnorm = 1,
    None = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftHgActivation {
    Relu = 0,
    Gelu = 1,
    Identity = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftHgBlockConfig {
    pub dim: usize,
    pub edge_dim: usize,
    pub out_dim: usize,
    pub hyperedges: usize,
    pub heads: usize,
    pub norm: SoftHgNorm,
    pub activation: SoftHgActivation,
    pub residual: bool,
    /// Hidden width of a two-layer offset network; 0 selects a single
    /// affine layer.
    pub offset_hidden: usize,
}

impl From<&BlockConfig> for SoftHgBlockConfig {
    fn from(c: &BlockConfig) -> Self {
        Self {
            dim: c.dim,
            edge_dim: c.edge_dim,
            out_dim: c.out_dim,
            hyperedges: c.hyperedges,
            heads: c.heads,
            norm: match c.norm {
                NormMode::Enorm => SoftHgNorm::Enorm,
                NormMode::Vnorm => SoftHgNorm::Vnorm,
                NormMode::None => SoftHgNorm::None,
            },
            activation: match c.activation {
                Activation::Relu => SoftHgActivation::Relu,
                Activation::Gelu => SoftHgActivation::Gelu,
                Activation::Identity => SoftHgActivation::Identity,
            },
            residual: c.residual,
            offset_hidden: c.offset_hidden.unwrap_or(0),
        }
    }
}

impl From<&SoftHgBlockConfig> for BlockConfig {
    fn from(c: &SoftHgBlockConfig) -> Self {
        Self {
            dim: c.dim,
            edge_dim: c.edge_dim,
            out_dim: c.out_dim,
            hyperedges: c.hyperedges,
            heads: c.heads,
            norm: match c.norm {
                SoftHgNorm::Enorm => NormMode::Enorm,
                SoftHgNorm::Vnorm => NormMode::Vnorm,
                SoftHgNorm::None => NormMode::None,
            },
            activation: match c.activation {
                SoftHgActivation::Relu => Activation::Relu,
                SoftHgActivation::Gelu => Activation::Gelu,
                SoftHgActivation::Identity => Activation::Identity,
            },
            residual: c.residual,
            offset_hidden: (c.offset_hidden > 0).then_some(c.offset_hidden),
        }
    }
}

/// Parameters of one block.
pub struct SoftHgBlock {
    params: SoftHGParams,
}

/// Rolling selection statistics for sparse hyperedge selection.
pub struct SoftHgSes {
    cfg: SeSConfig,
    state: SeSState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (SoftHgStatus, String);

fn from_error(e: Error) -> Failure {
    let status = match &e {
        Error::Shape { .. } | Error::EmptyInput(_) => SoftHgStatus::Shape,
        Error::Config(_) => SoftHgStatus::Config,
        Error::Degenerate(_) | Error::Numeric(_) => SoftHgStatus::Numeric,
        Error::Io(_) | Error::Json(_) => SoftHgStatus::Io,
    };
    (status, e.to_string())
}

fn null(what: &str) -> Failure {
    (SoftHgStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure message, and converts panics.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SoftHgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SoftHgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SoftHgStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SoftHgStatus::Config, "path is not valid UTF-8".to_string()))?;
    Ok(Path::new(s))
}

unsafe fn matrix_arg(x: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    if x.is_null() {
        return Err(null("input buffer"));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or((SoftHgStatus::Shape, "rows x cols overflows".to_string()))?;
    let data = std::slice::from_raw_parts(x, len).to_vec();
    Matrix::new(rows, cols, data).map_err(from_error)
}

unsafe fn write_out(m: &Matrix, out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if out_len < m.len() {
        return Err((
            SoftHgStatus::Shape,
            format!("output buffer holds {out_len} values, need {}", m.len()),
        ));
    }
    ptr::copy_nonoverlapping(m.data().as_ptr(), out, m.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn softhg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn softhg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fills `out` with the default block configuration for width `dim`.
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_config_default(
    dim: usize,
    out: *mut SoftHgBlockConfig,
) -> SoftHgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = (&BlockConfig::with_dim(dim)).into();
        Ok(())
    })
}

/// Creates a block with seeded random parameters.
///
/// # Safety
/// `cfg` must point to a valid config and `out` to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_new_random(
    cfg: *const SoftHgBlockConfig,
    seed: u64,
    out: *mut *mut SoftHgBlock,
) -> SoftHgStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return Err(null("cfg or out"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = SoftHGParams::init((&*cfg).into(), &mut rng).map_err(from_error)?;
        *out = Box::into_raw(Box::new(SoftHgBlock { params }));
        Ok(())
    })
}

/// Loads block parameters from a JSON tensor file written by
/// [`softhg_block_save_json`] or `softhg train --save-params`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `cfg` a valid config and `out`
/// writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_load_json(
    path: *const c_char,
    cfg: *const SoftHgBlockConfig,
    out: *mut *mut SoftHgBlock,
) -> SoftHgStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return Err(null("cfg or out"));
        }
        let map = block::load_tensor_map(path_arg(path)?).map_err(from_error)?;
        let params = SoftHGParams::from_tensor_map((&*cfg).into(), &map).map_err(from_error)?;
        *out = Box::into_raw(Box::new(SoftHgBlock { params }));
        Ok(())
    })
}

/// # Safety
/// `b` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_save_json(
    b: *const SoftHgBlock,
    path: *const c_char,
) -> SoftHgStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(|| null("block"))?;
        block::save_tensor_map(path_arg(path)?, &b.params.to_tensor_map()).map_err(from_error)
    })
}

/// Copies the block's configuration into `out`.
///
/// # Safety
/// `b` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_config(
    b: *const SoftHgBlock,
    out: *mut SoftHgBlockConfig,
) -> SoftHgStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(|| null("block"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = (&b.params.config).into();
        Ok(())
    })
}

/// # Safety
/// `b` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_free(b: *mut SoftHgBlock) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Forward pass over `n` tokens of width `d`; writes `n × out_dim` values.
///
/// # Safety
/// `x` must hold `n * d` doubles and `out` at least `out_len`.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_forward(
    b: *const SoftHgBlock,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> SoftHgStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(|| null("block"))?;
        let x = matrix_arg(x, n, d)?;
        let y = message::softhgnn_forward(&x, &b.params).map_err(from_error)?;
        write_out(&y.x_out, out, out_len)
    })
}

/// Forward pass with sparse selection. The block must have
/// `m_fixed + m_dyn` hyperedges. The selection is recorded in `s`, and the
/// resulting load-balancing loss is written to `l_lb` when non-null.
///
/// # Safety
/// As [`softhg_block_forward`]; `s` must be a live selection handle.
#[no_mangle]
pub unsafe extern "C" fn softhg_block_forward_ses(
    b: *const SoftHgBlock,
    s: *mut SoftHgSes,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
    out_len: usize,
    l_lb: *mut f64,
) -> SoftHgStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(|| null("block"))?;
        let s = s.as_mut().ok_or_else(|| null("selection state"))?;
        let x = matrix_arg(x, n, d)?;
        let y = message::softhgnn_forward_ses(&x, &b.params, &s.cfg).map_err(from_error)?;
        write_out(&y.x_out, out, out_len)?;
        let sel = y.selection.unwrap_or_default();
        let lb = ses::record_and_balance(&mut s.state, &sel, &s.cfg);
        if !l_lb.is_null() {
            *l_lb = lb;
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn softhg_ses_new(
    m_fixed: usize,
    m_dyn: usize,
    k: usize,
    window: usize,
    out: *mut *mut SoftHgSes,
) -> SoftHgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SeSConfig {
            m_fixed,
            m_dyn,
            k,
            window,
        };
        cfg.validate().map_err(from_error)?;
        *out = Box::into_raw(Box::new(SoftHgSes {
            cfg,
            state: SeSState::new(&cfg),
        }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn softhg_ses_free(s: *mut SoftHgSes) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Records one pass that selected the dynamic hyperedges `sel[0..len]`.
///
/// # Safety
/// `s` must be live, `sel` must hold `len` values, `l_lb` null or writable.
#[no_mangle]
pub unsafe extern "C" fn softhg_ses_record(
    s: *mut SoftHgSes,
    sel: *const usize,
    len: usize,
    l_lb: *mut f64,
) -> SoftHgStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| null("selection state"))?;
        let sel = if len == 0 {
            &[][..]
        } else if sel.is_null() {
            return Err(null("sel"));
        } else {
            std::slice::from_raw_parts(sel, len)
        };
        if let Some(&bad) = sel.iter().find(|&&j| j >= s.cfg.m_dyn) {
            return Err((
                SoftHgStatus::Config,
                format!(
                    "selected index {bad} out of range for {} dynamic hyperedges",
                    s.cfg.m_dyn
                ),
            ));
        }
        let lb = ses::record_and_balance(&mut s.state, sel, &s.cfg);
        if !l_lb.is_null() {
            *l_lb = lb;
        }
        Ok(())
    })
}

/// Copies the `m_dyn` activation probabilities into `out`.
///
/// # Safety
/// `s` must be live and `out` hold at least `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn softhg_ses_probabilities(
    s: *const SoftHgSes,
    out: *mut f64,
    out_len: usize,
) -> SoftHgStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("selection state"))?;
        let p = s.state.probabilities();
        let m = Matrix::row_vector(p.to_vec());
        write_out(&m, out, out_len)
    })
}

/// Runs the gradient check on a small random block. `passed` receives the
/// verdict and `worst_rel_error` the largest relative error seen; both may
/// be null.
///
/// # Safety
/// Non-null output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn softhg_gradcheck(
    norm: SoftHgNorm,
    residual: bool,
    seed: u64,
    passed: *mut bool,
    worst_rel_error: *mut f64,
) -> SoftHgStatus {
    guard(|| {
        let cfg = GradCheckConfig {
            norm: match norm {
                SoftHgNorm::Enorm => NormMode::Enorm,
                SoftHgNorm::Vnorm => NormMode::Vnorm,
                SoftHgNorm::None => NormMode::None,
            },
            residual,
            ..GradCheckConfig::default()
        };
        let r = gradcheck::check_block(&cfg, seed).map_err(from_error)?;
        if !passed.is_null() {
            *passed = r.pass;
        }
        if !worst_rel_error.is_null() {
            *worst_rel_error = r.worst().map_or(0.0, |t| t.max_rel_error);
        }
        Ok(())
    })
}
