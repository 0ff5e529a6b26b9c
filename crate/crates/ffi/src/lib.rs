//! C ABI over the survival model and statistics.
//!
//! Every function returns a [`CmtaStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`cmta_last_error_message`].
//! Models and cohorts cross the boundary as opaque handles that must be
//! released with their `_free` function. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cmta::data::{load_cohort, Cohort, Matrix, PatientRecord};
use cmta::model::{forward, load_checkpoint, ModelConfig, ModelParams};
use cmta::survival::{concordance_index, kaplan_meier, logrank_test};
use cmta::train::{cindex_of, predict};
use cmta::CmtaError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmtaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Integrity = 5,
    Dimension = 6,
    UndefinedStatistic = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Other = 10,
}

/// Trained model plus its configuration.
pub struct CmtaModel {
    cfg: ModelConfig,
    params: ModelParams,
}

pub struct CmtaCohort {
    cohort: Cohort,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &CmtaError) -> CmtaStatus {
    match e {
        CmtaError::Io(_) => CmtaStatus::Io,
        CmtaError::Format { .. } => CmtaStatus::Format,
        CmtaError::Integrity(_) | CmtaError::Empty(_) => CmtaStatus::Integrity,
        CmtaError::Dimension { .. } => CmtaStatus::Dimension,
        CmtaError::UndefinedStatistic(_) => CmtaStatus::UndefinedStatistic,
        CmtaError::Contract(_) | CmtaError::Config(_) | CmtaError::DegenerateInput(_) => CmtaStatus::InvalidArgument,
        _ => CmtaStatus::Other,
    }
}

struct Fail(CmtaStatus, String);

impl From<CmtaError> for Fail {
    fn from(e: CmtaError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CmtaStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any failure or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CmtaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CmtaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CmtaStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CmtaStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn flags(c: &[u8]) -> Vec<bool> {
    c.iter().map(|&x| x != 0).collect()
}

/// Message describing the last failure on this thread; empty after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cmta_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cmta_model_load(path: *const c_char, out_model: *mut *mut CmtaModel) -> CmtaStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = std::ptr::null_mut();
        let (cfg, params) = load_checkpoint(&path_arg(path, "path")?)?;
        let params = params.frozen();
        *slot = Box::into_raw(Box::new(CmtaModel { cfg, params }));
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from [`cmta_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cmta_model_free(model: *mut CmtaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of discrete time bins the model predicts.
///
/// # Safety
/// `model` must be a live handle and `out_bins` writable.
#[no_mangle]
pub unsafe extern "C" fn cmta_model_num_bins(model: *const CmtaModel, out_bins: *mut usize) -> CmtaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out(out_bins, "out_bins")? = m.cfg.bins;
        Ok(())
    })
}

/// Predicts hazards and the risk score of one patient.
///
/// `pathology` is a row-major `rows×cols` matrix. `genomics` holds the
/// genomic groups back to back, group `k` having `group_widths[k]` values.
/// `hazards_out` must have room for `hazards_len ≥ bins` values.
///
/// # Safety
/// All pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn cmta_model_predict(
    model: *const CmtaModel,
    pathology: *const f64,
    rows: usize,
    cols: usize,
    genomics: *const f64,
    group_widths: *const usize,
    groups: usize,
    hazards_out: *mut f64,
    hazards_len: usize,
    risk_out: *mut f64,
) -> CmtaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(CmtaStatus::InvalidArgument, "rows×cols overflows".into()))?;
        let path = slice(pathology, n, "pathology")?;
        let widths = slice(group_widths, groups, "group_widths")?;
        let total: usize = widths.iter().sum();
        let gen = slice(genomics, total, "genomics")?;
        if hazards_len < m.cfg.bins {
            return Err(Fail(
                CmtaStatus::BufferTooSmall,
                format!("hazards buffer holds {hazards_len}, model predicts {} bins", m.cfg.bins),
            ));
        }
        let mut at = 0;
        let genomics = widths
            .iter()
            .map(|&w| {
                let g = gen[at..at + w].to_vec();
                at += w;
                g
            })
            .collect();
        let record = PatientRecord {
            patient_id: "ffi".into(),
            pathology: Matrix::new(rows, cols, path.to_vec())?,
            genomics,
            time_months: 1.0,
            censored: true,
        };
        record.validate()?;
        let (_, surv) = forward(&record, &m.params, &m.cfg)?;
        let risk = out(risk_out, "risk_out")?;
        slice_mut(hazards_out, hazards_len, "hazards_out")?[..m.cfg.bins].copy_from_slice(&surv.hazards);
        *risk = surv.risk;
        Ok(())
    })
}

/// Loads a cohort manifest into a new cohort handle.
///
/// # Safety
/// `manifest` must be a NUL-terminated string and `out_cohort` writable.
#[no_mangle]
pub unsafe extern "C" fn cmta_cohort_load(manifest: *const c_char, out_cohort: *mut *mut CmtaCohort) -> CmtaStatus {
    guard(|| {
        let slot = out(out_cohort, "out_cohort")?;
        *slot = std::ptr::null_mut();
        let cohort = load_cohort(&path_arg(manifest, "manifest")?)?;
        *slot = Box::into_raw(Box::new(CmtaCohort { cohort }));
        Ok(())
    })
}

/// Releases a cohort handle; null is ignored.
///
/// # Safety
/// `cohort` must come from [`cmta_cohort_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cmta_cohort_free(cohort: *mut CmtaCohort) {
    if !cohort.is_null() {
        drop(Box::from_raw(cohort));
    }
}

/// # Safety
/// `cohort` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn cmta_cohort_len(cohort: *const CmtaCohort, out_len: *mut usize) -> CmtaStatus {
    guard(|| {
        let c = cohort.as_ref().ok_or_else(|| null("cohort"))?;
        *out(out_len, "out_len")? = c.cohort.len();
        Ok(())
    })
}

/// Scores every patient of `cohort` and writes the concordance index.
///
/// # Safety
/// Handles must be live and `out_cindex` writable.
#[no_mangle]
pub unsafe extern "C" fn cmta_model_cindex(model: *const CmtaModel, cohort: *const CmtaCohort, out_cindex: *mut f64) -> CmtaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let c = cohort.as_ref().ok_or_else(|| null("cohort"))?;
        let records: Vec<&PatientRecord> = c.cohort.records().iter().collect();
        for r in &records {
            m.cfg.check_record(r)?;
        }
        let outputs = predict(&m.params, &m.cfg, &records)?;
        *out(out_cindex, "out_cindex")? = cindex_of(&outputs, &records)?;
        Ok(())
    })
}

/// Harrell's concordance index. `censored[i] != 0` marks a censored patient.
///
/// # Safety
/// Input arrays must hold `n` elements; `out_cindex` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmta_concordance_index(
    risks: *const f64,
    times: *const f64,
    censored: *const u8,
    n: usize,
    out_cindex: *mut f64,
) -> CmtaStatus {
    guard(|| {
        let c = concordance_index(slice(risks, n, "risks")?, slice(times, n, "times")?, &flags(slice(censored, n, "censored")?))?;
        *out(out_cindex, "out_cindex")? = c;
        Ok(())
    })
}

/// Kaplan-Meier estimate at each distinct time. Writes up to `capacity`
/// points and the number of points into `out_len`; when `capacity` is too
/// small nothing is written except `out_len` and `BufferTooSmall` is
/// returned.
///
/// # Safety
/// `times`/`censored` hold `n` elements; output buffers hold `capacity`.
#[no_mangle]
pub unsafe extern "C" fn cmta_kaplan_meier(
    times: *const f64,
    censored: *const u8,
    n: usize,
    times_out: *mut f64,
    survival_out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> CmtaStatus {
    guard(|| {
        let km = kaplan_meier(slice(times, n, "times")?, &flags(slice(censored, n, "censored")?))?;
        *out(out_len, "out_len")? = km.len();
        if capacity < km.len() {
            return Err(Fail(
                CmtaStatus::BufferTooSmall,
                format!("curve has {} points, buffer holds {capacity}", km.len()),
            ));
        }
        slice_mut(times_out, capacity, "times_out")?[..km.len()].copy_from_slice(&km.times);
        slice_mut(survival_out, capacity, "survival_out")?[..km.len()].copy_from_slice(&km.survival);
        Ok(())
    })
}

/// Two-group logrank test.
///
/// # Safety
/// Group arrays hold `n_a` / `n_b` elements; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmta_logrank(
    times_a: *const f64,
    censored_a: *const u8,
    n_a: usize,
    times_b: *const f64,
    censored_b: *const u8,
    n_b: usize,
    out_chi_square: *mut f64,
    out_p_value: *mut f64,
) -> CmtaStatus {
    guard(|| {
        let r = logrank_test(
            slice(times_a, n_a, "times_a")?,
            &flags(slice(censored_a, n_a, "censored_a")?),
            slice(times_b, n_b, "times_b")?,
            &flags(slice(censored_b, n_b, "censored_b")?),
        )?;
        *out(out_chi_square, "out_chi_square")? = r.chi_square;
        *out(out_p_value, "out_p_value")? = r.p_value;
        Ok(())
    })
}
