//! C ABI over `pdfusion`.
//!
//! Every function returns a [`PdfStatus`]. On failure the message is kept in
//! thread-local storage and read with [`pdf_last_error`]. Handles are opaque and
//! owned by the caller, who releases them with the matching `_free` function.
//! Class labels cross the boundary as codes: 0 = HC, 1 = PD, 2 = SWEDD.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use pdfusion::cnn::{predict_subject, read_checkpoint, NetworkSpec, Parameters};
use pdfusion::datamodel::{read_volume, ClassLabel, ProbVector, Volume, NUM_CLASSES};
use pdfusion::dti::{eigenvalues_sym3, fractional_anisotropy, mean_diffusivity, Sym3Tensor};
use pdfusion::eval::evaluate;
use pdfusion::fusion::{
    fuse_class, majority_vote, mra_weights, owaf_search, read_ensemble, EnsembleOutputs, FusionWeights,
    GridSearchConfig,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Compute = 4,
    Panic = 5,
}

/// A VOL1 volume.
pub struct PdfVolume(Volume);

/// A trained network loaded from a checkpoint.
pub struct PdfModel {
    spec: NetworkSpec,
    params: Parameters,
}

/// Per-model class probabilities for a set of subjects.
pub struct PdfEnsemble(EnsembleOutputs);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(PdfStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(PdfStatus::NullPointer, format!("{what} is null"))
    }

    fn arg(msg: impl ToString) -> Self {
        Failure(PdfStatus::InvalidArgument, msg.to_string())
    }

    fn io(msg: impl ToString) -> Self {
        Failure(PdfStatus::Io, msg.to_string())
    }

    fn compute(msg: impl ToString) -> Self {
        Failure(PdfStatus::Compute, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PdfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PdfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::arg(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn in_slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

fn labels_from_codes(codes: &[u32]) -> Result<Vec<ClassLabel>, Failure> {
    codes
        .iter()
        .map(|&c| ClassLabel::from_code(c as usize).ok_or_else(|| Failure::arg(format!("class code {c} out of range"))))
        .collect()
}

fn put<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pdf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// MD and FA of one symmetric tensor given as `xx, yy, zz, xy, xz, yz`.
///
/// # Safety
/// `tensor` must point to 6 doubles; `md` and `fa` to writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pdf_dti_scalars(tensor: *const f64, md: *mut f64, fa: *mut f64) -> PdfStatus {
    guard(|| {
        let t = in_slice(tensor, 6, "tensor")?;
        if md.is_null() || fa.is_null() {
            return Err(Failure::null("output"));
        }
        let t = Sym3Tensor::new(t[0], t[1], t[2], t[3], t[4], t[5]);
        if !t.is_finite() {
            return Err(Failure::arg("tensor has non-finite entries"));
        }
        *md = mean_diffusivity(&t);
        *fa = fractional_anisotropy(&eigenvalues_sym3(&t));
        Ok(())
    })
}

/// Modulated rank average weights for `n` accuracies, written to `out[n]`.
///
/// # Safety
/// `accuracies` must point to `n` doubles and `out` to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pdf_mra_weights(accuracies: *const f64, n: usize, out: *mut f64) -> PdfStatus {
    guard(|| {
        let acc = in_slice(accuracies, n, "accuracies")?;
        let out = out_slice(out, n, "out")?;
        let w = mra_weights(acc).map_err(Failure::arg)?;
        out.copy_from_slice(w.values());
        Ok(())
    })
}

/// Accuracy and macro precision, recall and F1 written to `out[4]`.
///
/// # Safety
/// `truth` and `predicted` must point to `n` class codes; `out` to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn pdf_metrics(truth: *const u32, predicted: *const u32, n: usize, out: *mut f64) -> PdfStatus {
    guard(|| {
        let truth = labels_from_codes(in_slice(truth, n, "truth")?)?;
        let predicted = labels_from_codes(in_slice(predicted, n, "predicted")?)?;
        let out = out_slice(out, 4, "out")?;
        let m = evaluate(&truth, &predicted).map_err(Failure::arg)?;
        out.copy_from_slice(&[m.accuracy, m.precision, m.recall, m.f1]);
        Ok(())
    })
}

/// Reads a VOL1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn pdf_volume_read(path: *const c_char, out: *mut *mut PdfVolume) -> PdfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let v = read_volume(&path).map_err(Failure::io)?;
        put(out, PdfVolume(v));
        Ok(())
    })
}

/// Writes depth, height and width to `dims[3]`.
///
/// # Safety
/// `volume` must be a live handle; `dims` must point to 3 writable sizes.
#[no_mangle]
pub unsafe extern "C" fn pdf_volume_dims(volume: *const PdfVolume, dims: *mut usize) -> PdfStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        let (d, h, w) = v.0.dims();
        out_slice(dims, 3, "dims")?.copy_from_slice(&[d, h, w]);
        Ok(())
    })
}

/// # Safety
/// `volume` must be null or a handle from [`pdf_volume_read`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdf_volume_free(volume: *mut PdfVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Loads a checkpoint and its `.spec` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn pdf_model_load(path: *const c_char, out: *mut *mut PdfModel) -> PdfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let (spec, params) = read_checkpoint(&path).map_err(Failure::io)?;
        put(out, PdfModel { spec, params });
        Ok(())
    })
}

/// Subject-level class probabilities for a volume, written to `probs[3]`.
///
/// # Safety
/// `model` and `volume` must be live handles; `probs` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn pdf_model_predict(
    model: *const PdfModel,
    volume: *const PdfVolume,
    probs: *mut f64,
) -> PdfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let v = handle(volume, "volume")?;
        let out = out_slice(probs, NUM_CLASSES, "probs")?;
        let p = predict_subject(&m.spec, &m.params, &v.0).map_err(Failure::compute)?;
        out.copy_from_slice(p.values());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`pdf_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdf_model_free(model: *mut PdfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Builds an ensemble from `probs[subjects][models][3]`, row-major. Models are
/// named `m0`, `m1`, ... and subjects `s0`, `s1`, ....
///
/// # Safety
/// `probs` must point to `subjects * models * 3` doubles; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn pdf_ensemble_new(
    probs: *const f64,
    subjects: usize,
    models: usize,
    out: *mut *mut PdfEnsemble,
) -> PdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let len = subjects
            .checked_mul(models)
            .and_then(|n| n.checked_mul(NUM_CLASSES))
            .ok_or_else(|| Failure::arg("ensemble size overflows"))?;
        let raw = in_slice(probs, len, "probs")?;
        let rows = raw
            .chunks(models * NUM_CLASSES)
            .map(|row| {
                row.chunks(NUM_CLASSES)
                    .map(|p| ProbVector::new([p[0], p[1], p[2]]).map_err(Failure::arg))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ens = EnsembleOutputs::new(
            (0..models).map(|i| format!("m{i}")).collect(),
            (0..subjects).map(|j| format!("s{j}")).collect(),
            rows,
        )
        .map_err(Failure::arg)?;
        put(out, PdfEnsemble(ens));
        Ok(())
    })
}

/// Reads an ensemble CSV (`subject_id,model,p_hc,p_pd,p_swedd`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn pdf_ensemble_read(path: *const c_char, out: *mut *mut PdfEnsemble) -> PdfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let ens = read_ensemble(&path).map_err(Failure::io)?;
        put(out, PdfEnsemble(ens));
        Ok(())
    })
}

/// Number of subjects and models.
///
/// # Safety
/// `ensemble` must be a live handle; `subjects` and `models` writable.
#[no_mangle]
pub unsafe extern "C" fn pdf_ensemble_shape(
    ensemble: *const PdfEnsemble,
    subjects: *mut usize,
    models: *mut usize,
) -> PdfStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        if subjects.is_null() || models.is_null() {
            return Err(Failure::null("output"));
        }
        *subjects = e.0.len();
        *models = e.0.models().len();
        Ok(())
    })
}

/// # Safety
/// `ensemble` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdf_ensemble_free(ensemble: *mut PdfEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Weighted-average fusion. Writes one class code per subject to `predicted`.
///
/// # Safety
/// `weights` must point to one double per model; `predicted` to one slot per subject.
#[no_mangle]
pub unsafe extern "C" fn pdf_fuse(
    ensemble: *const PdfEnsemble,
    weights: *const f64,
    n_weights: usize,
    predicted: *mut u32,
) -> PdfStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let w = FusionWeights::new(in_slice(weights, n_weights, "weights")?.to_vec()).map_err(Failure::arg)?;
        let out = out_slice(predicted, e.0.len(), "predicted")?;
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = fuse_class(&w, e.0.subject(j)).map_err(Failure::arg)?.code() as u32;
        }
        Ok(())
    })
}

/// Plurality vote per subject, written as class codes to `predicted`.
///
/// # Safety
/// `predicted` must point to one slot per subject.
#[no_mangle]
pub unsafe extern "C" fn pdf_majority_vote(ensemble: *const PdfEnsemble, predicted: *mut u32) -> PdfStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let out = out_slice(predicted, e.0.len(), "predicted")?;
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = majority_vote(e.0.subject(j)).map_err(Failure::arg)?.code() as u32;
        }
        Ok(())
    })
}

/// Grid search around `initial` for the weights with the best fused accuracy
/// against `labels`. Writes the weights to `out_weights` and the accuracy to
/// `out_accuracy`.
///
/// # Safety
/// `labels` must point to one code per subject; `initial` and `out_weights` to
/// one double per model; `out_accuracy` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn pdf_owaf_search(
    ensemble: *const PdfEnsemble,
    labels: *const u32,
    initial: *const f64,
    radius: f64,
    step: f64,
    out_weights: *mut f64,
    out_accuracy: *mut f64,
) -> PdfStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let models = e.0.models().len();
        let labels = labels_from_codes(in_slice(labels, e.0.len(), "labels")?)?;
        let initial = FusionWeights::new(in_slice(initial, models, "initial")?.to_vec()).map_err(Failure::arg)?;
        let grid = GridSearchConfig::new(radius, step).map_err(Failure::arg)?;
        let out = out_slice(out_weights, models, "out_weights")?;
        if out_accuracy.is_null() {
            return Err(Failure::null("out_accuracy"));
        }
        let result = owaf_search(&initial, &e.0, &labels, &grid).map_err(Failure::arg)?;
        out.copy_from_slice(result.weights.values());
        *out_accuracy = result.accuracy;
        Ok(())
    })
}
