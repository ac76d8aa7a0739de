//! C ABI for the stormcause toolkit.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! `ScStatus`; on failure a message is available from
//! `sc_last_error_message` on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stormcause::citest::{partial_correlation, CiOutcome, SampleMatrix};
use stormcause::dataset::{align_by_mslp_minimum, load_manifest, parse_storm_csv, standardize, AlignedPanel, Role};
use stormcause::discovery::{mpc_select, MpcConfig, SelectedFeatureSet};
use stormcause::regression::{fit_mlr, panel_design, Head, RegressionModel};
use stormcause::synth::{generate_panel, split_ids, ScmSpec};
use stormcause::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or out-of-range argument.
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Validation = 4,
    RankDeficient = 5,
    NumericalFailure = 6,
    Internal = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Loaded storm panel with its training/test split.
pub struct ScPanel {
    panel: AlignedPanel,
    train_ids: Vec<String>,
}

/// Selected (predictor, lag) set.
pub struct ScFeatureSet {
    set: SelectedFeatureSet,
}

/// Trained regression model.
pub struct ScModel {
    model: RegressionModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ScStatus {
    match e {
        Error::Io { .. } => ScStatus::Io,
        Error::Parse { .. } => ScStatus::Parse,
        Error::Validation(_) | Error::Config(_) | Error::DimensionMismatch { .. } | Error::FeatureMismatch(_) => {
            ScStatus::Validation
        }
        Error::RankDeficient(_) => ScStatus::RankDeficient,
        Error::NonFiniteLoss { .. } => ScStatus::NumericalFailure,
        _ => ScStatus::Internal,
    }
}

struct Fail(ScStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(ScStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            ScStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("output {name} is null")))
}

/// Copies `s` with a trailing NUL into `buf` when it fits; returns the
/// length excluding the NUL.
unsafe fn write_str(s: &str, buf: *mut c_char, cap: usize) -> usize {
    if !buf.is_null() && cap > s.len() {
        ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
        *buf.add(s.len()) = 0;
    }
    s.len()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` (capacity
/// `cap` bytes, including the NUL) and returns its length; 0 if none.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sc_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(m) => write_str(m.to_str().unwrap_or(""), buf, cap),
        None => write_str("", buf, cap),
    })
}

/// Loads storms listed in a manifest. `align_sigma > 0` aligns storms at
/// their smoothed pressure minimum; otherwise storms stay unaligned.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_load_manifest(path: *const c_char, align_sigma: f64, out: *mut *mut ScPanel) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "panel")?;
        let path = str_arg(path, "path")?;
        let entries = load_manifest(path)?;
        let storms = entries
            .iter()
            .map(|e| {
                let f = std::fs::File::open(&e.path).map_err(|err| Error::Io { path: e.path.clone(), source: err })?;
                parse_storm_csv(&e.storm_id, f, &e.path.display().to_string())
            })
            .collect::<stormcause::Result<Vec<_>>>()?;
        let panel = if align_sigma > 0.0 {
            align_by_mslp_minimum(&storms, align_sigma)?.panel
        } else {
            AlignedPanel::unaligned(&storms)?
        };
        let ids = panel.storm_ids();
        let train_ids = entries
            .iter()
            .filter(|e| e.role == Role::Train && ids.contains(&e.storm_id))
            .map(|e| e.storm_id.clone())
            .collect();
        *out = Box::into_raw(Box::new(ScPanel { panel, train_ids }));
        Ok(())
    })
}

/// Simulates a panel from a synthetic model spec file; its target column
/// is already set.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_from_synth_spec(path: *const c_char, out: *mut *mut ScPanel) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "panel")?;
        let spec = ScmSpec::load(Path::new(str_arg(path, "path")?))?;
        let (panel, _) = generate_panel(&spec)?;
        let (train_ids, _) = split_ids(&spec);
        *out = Box::into_raw(Box::new(ScPanel { panel, train_ids }));
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_free(panel: *mut ScPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// Handles and outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_storm_count(panel: *const ScPanel, total: *mut usize, training: *mut usize) -> ScStatus {
    guard(|| {
        let p = handle(panel, "panel")?;
        *out_ptr(total, "total")? = p.panel.storms().len();
        *out_ptr(training, "training")? = p.train_ids.len();
        Ok(())
    })
}

/// Adds the intensity-change target for `lead_hours` and marks it.
///
/// # Safety
/// `panel` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_set_intensity_target(panel: *mut ScPanel, lead_hours: u32) -> ScStatus {
    guard(|| {
        let p = handle_mut(panel, "panel")?;
        p.panel = p.panel.clone().with_intensity_target(lead_hours)?;
        Ok(())
    })
}

/// Standardizes predictors with training-storm statistics.
///
/// # Safety
/// `panel` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_standardize(panel: *mut ScPanel) -> ScStatus {
    guard(|| {
        let p = handle_mut(panel, "panel")?;
        p.panel = standardize(&p.panel, &p.train_ids)?;
        Ok(())
    })
}

/// Causal predictor selection for the panel target over training storms.
/// `max_cond_size < 0` leaves conditioning sets unbounded.
///
/// # Safety
/// `panel` must be a valid handle with a target; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_discover(
    panel: *const ScPanel,
    lag_min: usize,
    lag_max: usize,
    pc_alpha: f64,
    max_cond_size: i32,
    out: *mut *mut ScFeatureSet,
) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "feature set")?;
        let p = handle(panel, "panel")?;
        let target = p
            .panel
            .target_code()
            .ok_or_else(|| invalid("panel has no target; set one first"))?
            .to_string();
        let mut cfg = MpcConfig::new(lag_min, lag_max, pc_alpha);
        cfg.max_cond_size = usize::try_from(max_cond_size).ok();
        let set = mpc_select(&p.panel, &target, &cfg, &p.train_ids)?;
        *out = Box::into_raw(Box::new(ScFeatureSet { set }));
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sc_feature_set_free(set: *mut ScFeatureSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sc_feature_set_len(set: *const ScFeatureSet) -> usize {
    set.as_ref().map_or(0, |s| s.set.len())
}

/// Reads member `index`: its code into `code_buf`, and its lag and
/// strength. `code_len` receives the code length.
///
/// # Safety
/// `set` must be valid; `code_buf` valid for `cap` bytes or null; other
/// outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sc_feature_set_get(
    set: *const ScFeatureSet,
    index: usize,
    code_buf: *mut c_char,
    cap: usize,
    code_len: *mut usize,
    lag: *mut usize,
    strength: *mut f64,
) -> ScStatus {
    guard(|| {
        let s = handle(set, "feature set")?;
        let m = s.set.members.get(index).ok_or_else(|| invalid("index out of range"))?;
        *out_ptr(code_len, "code_len")? = write_str(&m.feature.code, code_buf, cap);
        *out_ptr(lag, "lag")? = m.feature.lag;
        *out_ptr(strength, "strength")? = m.strength;
        Ok(())
    })
}

/// Fits a linear model on the training storms using the set's features.
///
/// # Safety
/// Handles must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_fit_mlr(panel: *const ScPanel, set: *const ScFeatureSet, out: *mut *mut ScModel) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "model")?;
        let p = handle(panel, "panel")?;
        let s = handle(set, "feature set")?;
        let target = p.panel.target_code().ok_or_else(|| invalid("panel has no target"))?;
        let storms = p.panel.storm_indices(&p.train_ids)?;
        let features = s.set.features();
        let (x, y) = panel_design(&p.panel, &features, target, &storms)?;
        let head = Head::Mlr(fit_mlr(&features, &x, &y)?);
        let model = RegressionModel::new(target, p.panel.standardization().clone(), head);
        *out = Box::into_raw(Box::new(ScModel { model }));
        Ok(())
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_load(path: *const c_char, out: *mut *mut ScModel) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "model")?;
        let model = RegressionModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(ScModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sc_model_save(model: *const ScModel, path: *const c_char) -> ScStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.model.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sc_model_free(model: *mut ScModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sc_model_n_features(model: *const ScModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.features.len())
}

/// Predicts `n` rows of the row-major `n x d` matrix `x` into `out`.
///
/// # Safety
/// `x` valid for `n * d` doubles; `out` valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_model_predict(model: *const ScModel, x: *const f64, n: usize, d: usize, out: *mut f64) -> ScStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if n == 0 {
            return Ok(());
        }
        if x.is_null() || out.is_null() {
            return Err(invalid("x or out is null"));
        }
        let rows = std::slice::from_raw_parts(x, n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?);
        let cols: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| rows[i * d + j]).collect()).collect();
        let pred = m.model.predict(&cols)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&pred);
        Ok(())
    })
}

/// Partial correlation of `x` and `y` given the row-major `n x k` matrix
/// `z` (null when `k == 0`). Untestable inputs (too few rows) return
/// `SC_STATUS_VALIDATION`.
///
/// # Safety
/// `x`, `y` valid for `n` doubles; `z` valid for `n * k` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_partial_correlation(
    x: *const f64,
    y: *const f64,
    z: *const f64,
    n: usize,
    k: usize,
    r: *mut f64,
    p_value: *mut f64,
) -> ScStatus {
    guard(|| {
        if x.is_null() || y.is_null() || (k > 0 && z.is_null()) {
            return Err(invalid("x, y or z is null"));
        }
        let xs = std::slice::from_raw_parts(x, n).to_vec();
        let ys = std::slice::from_raw_parts(y, n).to_vec();
        let zs = if k > 0 { std::slice::from_raw_parts(z, n * k) } else { &[] };
        let cond = (0..k).map(|j| (0..n).map(|i| zs[i * k + j]).collect()).collect();
        match partial_correlation(&SampleMatrix::new(xs, ys, cond)) {
            CiOutcome::Tested(res) => {
                *out_ptr(r, "r")? = res.r;
                *out_ptr(p_value, "p_value")? = res.p_value;
                Ok(())
            }
            CiOutcome::Untestable { n_effective, cond_size } => Err(Fail(
                ScStatus::Validation,
                format!("untestable: {n_effective} rows for {cond_size} conditioning columns"),
            )),
        }
    })
}
