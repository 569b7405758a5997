//! C ABI over the edgecl engine. Handles are opaque; every call returns an
//! [`EdgeclStatus`] and the message of the most recent failure on the
//! calling thread is available from [`edgecl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use edgecl::harness::{prepare_seed, RunConfig};
use edgecl::stream::SessionKey;
use edgecl::{Error, Experience, Learner, Tensor};

/// Result code of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    State = 5,
    Numeric = 6,
    Io = 7,
    Format = 8,
    Cancelled = 9,
    Panic = 10,
}

impl From<&Error> for EdgeclStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => EdgeclStatus::Dimension,
            Error::State(_) => EdgeclStatus::State,
            Error::Numeric(_) => EdgeclStatus::Numeric,
            Error::Argument(_) => EdgeclStatus::InvalidArgument,
            Error::Config(_) | Error::Json(_) => EdgeclStatus::Config,
            Error::Cancelled => EdgeclStatus::Cancelled,
            Error::Format(_) => EdgeclStatus::Format,
            Error::Io(_) => EdgeclStatus::Io,
        }
    }
}

/// Opaque engine: one strategy's learner plus its experience counter.
pub struct EdgeclEngine {
    learner: Learner,
    frame_shape: Vec<usize>,
    next_index: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: EdgeclStatus, msg: impl Into<String>) -> EdgeclStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), EdgeclStatus>) -> EdgeclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EdgeclStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(EdgeclStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: edgecl::Result<T>) -> Result<T, EdgeclStatus> {
    r.map_err(|e| fail(EdgeclStatus::from(&e), e.to_string()))
}

unsafe fn engine_mut<'a>(engine: *mut EdgeclEngine) -> Result<&'a mut EdgeclEngine, EdgeclStatus> {
    engine
        .as_mut()
        .ok_or_else(|| fail(EdgeclStatus::NullPointer, "engine is null"))
}

unsafe fn frames_tensor(engine: &EdgeclEngine, frames: *const f32, count: usize) -> Result<Tensor, EdgeclStatus> {
    if frames.is_null() {
        return Err(fail(EdgeclStatus::NullPointer, "frames is null"));
    }
    if count == 0 {
        return Err(fail(EdgeclStatus::InvalidArgument, "frame count must be >= 1"));
    }
    let per: usize = engine.frame_shape.iter().product();
    let data = std::slice::from_raw_parts(frames, count * per).to_vec();
    let mut shape = vec![count];
    shape.extend(&engine.frame_shape);
    lift(Tensor::new(shape, data))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, EdgeclStatus> {
    if s.is_null() {
        return Err(fail(EdgeclStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(EdgeclStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn edgecl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds an engine for `seed` from a JSON run configuration (null or empty
/// selects the defaults): generates the synthetic dataset, pretrains the
/// initial model and sets up strategy number `strategy_index`.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edgecl_engine_new(
    config_json: *const c_char,
    seed: u64,
    strategy_index: usize,
    out: *mut *mut EdgeclEngine,
) -> EdgeclStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(EdgeclStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            match str_arg(config_json, "config_json")? {
                "" => RunConfig::default(),
                s => lift(RunConfig::from_json(s))?,
            }
        };
        let strategy = cfg.strategies.get(strategy_index).cloned().ok_or_else(|| {
            fail(
                EdgeclStatus::InvalidArgument,
                format!(
                    "strategy index {strategy_index} out of range ({} configured)",
                    cfg.strategies.len()
                ),
            )
        })?;
        let ctx = lift(prepare_seed(&cfg, seed))?;
        let learner = lift(Learner::new(&ctx.pretrained, strategy, &ctx.stream.pretrain))?;
        *out = Box::into_raw(Box::new(EdgeclEngine {
            learner,
            frame_shape: cfg.stream.frame_shape(),
            next_index: 0,
        }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must be null or a handle from [`edgecl_engine_new`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn edgecl_engine_free(engine: *mut EdgeclEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Writes the frame shape (channels, height, width) and class count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn edgecl_engine_shape(
    engine: *mut EdgeclEngine,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    classes: *mut usize,
) -> EdgeclStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if channels.is_null() || height.is_null() || width.is_null() || classes.is_null() {
            return Err(fail(EdgeclStatus::NullPointer, "output pointer is null"));
        }
        *channels = e.frame_shape[0];
        *height = e.frame_shape[1];
        *width = e.frame_shape[2];
        *classes = e.learner.head.classes();
        Ok(())
    })
}

/// Trains on one experience: `count` frames of class `label`, laid out
/// frame-major in channel, row, column order.
///
/// # Safety
/// `frames` must point to `count * C * H * W` floats.
#[no_mangle]
pub unsafe extern "C" fn edgecl_engine_train(
    engine: *mut EdgeclEngine,
    frames: *const f32,
    count: usize,
    label: usize,
) -> EdgeclStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if label >= e.learner.head.classes() {
            return Err(fail(
                EdgeclStatus::InvalidArgument,
                format!("label {label} out of range"),
            ));
        }
        let frames = frames_tensor(e, frames, count)?;
        let exp = Experience {
            index: e.next_index,
            key: SessionKey {
                class: label,
                object: 0,
                session: e.next_index,
            },
            frames,
        };
        lift(e.learner.train_experience(&exp))?;
        e.next_index += 1;
        Ok(())
    })
}

/// Writes one top-1 label per frame into `labels`.
///
/// # Safety
/// `frames` must point to `count * C * H * W` floats and `labels` to room
/// for `count` values.
#[no_mangle]
pub unsafe extern "C" fn edgecl_engine_predict(
    engine: *mut EdgeclEngine,
    frames: *const f32,
    count: usize,
    labels: *mut usize,
) -> EdgeclStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if labels.is_null() {
            return Err(fail(EdgeclStatus::NullPointer, "labels is null"));
        }
        let frames = frames_tensor(e, frames, count)?;
        let pred = lift(e.learner.predict(&frames))?;
        std::slice::from_raw_parts_mut(labels, count).copy_from_slice(&pred);
        Ok(())
    })
}

/// Storage of the replay buffer's latent patterns in bytes (0 without a
/// buffer).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn edgecl_engine_buffer_bytes(engine: *mut EdgeclEngine, out: *mut usize) -> EdgeclStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if out.is_null() {
            return Err(fail(EdgeclStatus::NullPointer, "out is null"));
        }
        *out = e.learner.buffer.as_ref().map_or(0, |b| b.byte_size());
        Ok(())
    })
}

/// Saves the replay buffer to `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn edgecl_engine_save_buffer(engine: *mut EdgeclEngine, path: *const c_char) -> EdgeclStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let buf = e
            .learner
            .buffer
            .as_ref()
            .ok_or_else(|| fail(EdgeclStatus::State, "strategy has no replay buffer"))?;
        lift(buf.save(&path))
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn edgecl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
