//! C ABI over `geodesic-lode`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free`. Every fallible call returns a [`GlStatus`]; on
//! failure [`gl_last_error`] describes the cause for the calling thread.
//! Panics never unwind into C, they surface as [`GlStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use geodesic_lode::cli::train_from_table;
use geodesic_lode::latentode::{encode, reconstruct, LatentModel};
use geodesic_lode::losses::PathMetric;
use geodesic_lode::odeint::{SolveConfig, TimeGrid};
use geodesic_lode::rng::StreamRng;
use geodesic_lode::systems::{
    generate_dataset, load_dataset, save_dataset, Dataset, SystemConfig, SystemId, Trajectory,
};
use geodesic_lode::train::{fit, load_model, model_checkpoint, FitOptions, TrainConfig};
use geodesic_lode::{Error, SCHEMA_VERSION};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    UnknownSystem = 4,
    Format = 5,
    Io = 6,
    NonFinite = 7,
    Runtime = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Dataset split selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlSplit {
    Train = 0,
    Validation = 1,
    Test = 2,
}

/// Opaque dataset handle.
pub struct GlDataset {
    inner: Dataset,
}

/// Opaque trained-model handle.
pub struct GlModel {
    model: LatentModel,
    metric: PathMetric,
    config: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(GlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::EmptySequence => GlStatus::InvalidArgument,
            Error::ShapeMismatch(_) => GlStatus::ShapeMismatch,
            Error::UnknownSystem(_) => GlStatus::UnknownSystem,
            Error::Format(_) => GlStatus::Format,
            Error::Io { .. } => GlStatus::Io,
            Error::NonFinite(_) => GlStatus::NonFinite,
            Error::StepBudgetExceeded(_) | Error::SingularOrigin(_) | Error::DegenerateBatch(_) => {
                GlStatus::Runtime
            }
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(GlStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlStatus::Ok,
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
            set_error(format!("panic: {msg}"));
            GlStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    text(p, what).map(PathBuf::from)
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Schema version embedded in every file the library writes.
#[no_mangle]
pub extern "C" fn gl_schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Message of the last failed call on this thread; empty when none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Simulates `count` trajectories of `system` (`dho`, `lane_emden`,
/// `lotka_volterra`) from `seed` and stores a new handle in `*out`.
///
/// # Safety
/// `system` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_generate(
    system: *const c_char,
    count: usize,
    seed: u64,
    out: *mut *mut GlDataset,
) -> GlStatus {
    guard(|| {
        let id: SystemId = text(system, "system")?.parse()?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = generate_dataset(id, count, seed)?;
        put(out, boxed(GlDataset { inner }), "out")
    })
}

/// Reads a `.glds` dataset file.
///
/// # Safety
/// `file` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_load(file: *const c_char, out: *mut *mut GlDataset) -> GlStatus {
    guard(|| {
        let p = path(file, "file")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_dataset(&p)?;
        put(out, boxed(GlDataset { inner }), "out")
    })
}

/// Writes a dataset as a `.glds` file.
///
/// # Safety
/// `ds` must come from this library and `file` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_save(ds: *const GlDataset, file: *const c_char) -> GlStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        save_dataset(&ds.inner, &path(file, "file")?)?;
        Ok(())
    })
}

fn split(ds: &GlDataset, which: GlSplit) -> &[Trajectory] {
    match which {
        GlSplit::Train => &ds.inner.train,
        GlSplit::Validation => &ds.inner.validation,
        GlSplit::Test => &ds.inner.test,
    }
}

/// Number of trajectories in a split.
///
/// # Safety
/// `ds` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_len(
    ds: *const GlDataset,
    which: GlSplit,
    out: *mut usize,
) -> GlStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        put(out, split(ds, which).len(), "out")
    })
}

/// Copies trajectory `index` of a split: `times[n]` and row-major
/// `values[n * dim]`. `*out_points` and `*out_dim` are always set; when
/// `capacity < n` nothing is copied and `BufferTooSmall` is returned.
///
/// # Safety
/// `times` and `values` must hold `capacity` and `capacity * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_trajectory(
    ds: *const GlDataset,
    which: GlSplit,
    index: usize,
    times: *mut f64,
    values: *mut f64,
    capacity: usize,
    out_points: *mut usize,
    out_dim: *mut usize,
) -> GlStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let items = split(ds, which);
        let t = items
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} outside 0..{}", items.len())))?;
        let (n, dim) = (t.len(), t.dim());
        put(out_points, n, "out_points")?;
        put(out_dim, dim, "out_dim")?;
        if capacity < n {
            return Err(Fail(
                GlStatus::BufferTooSmall,
                format!("trajectory has {n} points, capacity is {capacity}"),
            ));
        }
        slice_mut(times, n, "times")?.copy_from_slice(&t.times);
        let vals = slice_mut(values, n * dim, "values")?;
        for (row, v) in vals.chunks_mut(dim.max(1)).zip(&t.values) {
            row.copy_from_slice(v);
        }
        Ok(())
    })
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gl_dataset_free(ds: *mut GlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a model on `ds`. `config_toml` holds `TrainConfig` keys plus an
/// optional `preset`, e.g. `preset = "dho-pathmin"\nsteps = 100`; null means
/// the default preset. When `out_dir` is non-null, metrics and checkpoints
/// are written there. The best-validation model is returned.
///
/// # Safety
/// `ds` must come from this library, strings must be NUL-terminated or null,
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gl_model_train(
    ds: *const GlDataset,
    config_toml: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut GlModel,
) -> GlStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let table: toml::Table = if config_toml.is_null() {
            toml::Table::new()
        } else {
            toml::from_str(text(config_toml, "config_toml")?)
                .map_err(|e| invalid(format!("config_toml: {e}")))?
        };
        let config = train_from_table(table)?;
        let out_dir = if out_dir.is_null() {
            None
        } else {
            let d = path(out_dir, "out_dir")?;
            std::fs::create_dir_all(&d).map_err(|e| Fail(GlStatus::Io, e.to_string()))?;
            Some(d)
        };
        let opts = FitOptions {
            out_dir,
            ..FitOptions::default()
        };
        let r = fit(&config, &ds.inner, &opts)?;
        let model = GlModel {
            model: r.best,
            metric: r.metric,
            config,
        };
        put(out, boxed(model), "out")
    })
}

/// Loads a checkpoint written by training (`best.json`).
///
/// # Safety
/// `file` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gl_model_load(file: *const c_char, out: *mut *mut GlModel) -> GlStatus {
    guard(|| {
        let p = path(file, "file")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, metric, config) = load_model(&p)?;
        put(
            out,
            boxed(GlModel {
                model,
                metric,
                config,
            }),
            "out",
        )
    })
}

/// Writes the model as a checkpoint readable by `gl_model_load`.
///
/// # Safety
/// `model` must come from this library and `file` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gl_model_save(model: *const GlModel, file: *const c_char) -> GlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let p = path(file, "file")?;
        model_checkpoint(&m.model, &m.metric, &m.config).save(Path::new(&p))?;
        Ok(())
    })
}

/// Latent and observed dimensions of a model.
///
/// # Safety
/// `model` must come from this library; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gl_model_dims(
    model: *const GlModel,
    out_latent: *mut usize,
    out_features: *mut usize,
) -> GlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        put(out_latent, m.model.latent_dim(), "out_latent")?;
        put(out_features, m.model.feature_dim(), "out_features")
    })
}

fn placeholder(id: SystemId) -> SystemConfig {
    match id {
        SystemId::Dho => SystemConfig::Dho {
            k: 0.0,
            m: 1.0,
            x0: 0.0,
            v0: 0.0,
        },
        SystemId::LaneEmden => SystemConfig::LaneEmden { n: 1.0 },
        SystemId::LotkaVolterra => SystemConfig::LotkaVolterra {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            x0: 1.0,
            y0: 1.0,
        },
    }
}

unsafe fn observations(
    m: &GlModel,
    times: *const f64,
    values: *const f64,
    n: usize,
) -> Result<Trajectory, Fail> {
    let dim = m.model.feature_dim();
    let t = slice(times, n, "times")?.to_vec();
    let v = slice(values, n * dim, "values")?
        .chunks(dim)
        .map(<[f64]>::to_vec)
        .collect();
    Ok(Trajectory::new(t, v, placeholder(m.config.system), 0.0)?)
}

/// Encodes `n` observations (`times[n]`, row-major `values[n * features]`)
/// to the mean initial latent state, written to `z[latent]`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_model_encode(
    model: *const GlModel,
    times: *const f64,
    values: *const f64,
    n: usize,
    z: *mut f64,
    z_len: usize,
) -> GlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if z_len != m.model.latent_dim() {
            return Err(Fail(
                GlStatus::ShapeMismatch,
                format!("z_len {z_len} but latent dim {}", m.model.latent_dim()),
            ));
        }
        let obs = observations(m, times, values, n)?;
        let (z0, _) = encode(&m.model, &obs, None::<&mut StreamRng>, m.config.dt)?;
        slice_mut(z, z_len, "z")?.copy_from_slice(&z0);
        Ok(())
    })
}

/// Reconstructs the observed system at `query[nq]` (strictly increasing)
/// from `n` observations; writes row-major `out[nq * features]`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_model_predict(
    model: *const GlModel,
    times: *const f64,
    values: *const f64,
    n: usize,
    query: *const f64,
    nq: usize,
    out: *mut f64,
    out_len: usize,
) -> GlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let dim = m.model.feature_dim();
        if out_len != nq * dim {
            return Err(Fail(
                GlStatus::ShapeMismatch,
                format!("out_len {out_len} but {nq} queries x {dim} features"),
            ));
        }
        let obs = observations(m, times, values, n)?;
        let grid = TimeGrid::new(slice(query, nq, "query")?.to_vec())?;
        let cfg = SolveConfig::with_dt_fixed(m.config.dt);
        let (pred, _) = reconstruct(&m.model, &obs, &grid, None::<&mut StreamRng>, &cfg)?;
        let dst = slice_mut(out, out_len, "out")?;
        for (row, v) in dst.chunks_mut(dim).zip(&pred.values) {
            row.copy_from_slice(v);
        }
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gl_model_free(model: *mut GlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
