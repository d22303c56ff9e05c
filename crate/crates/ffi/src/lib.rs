//! C interface to the `gcm` library.
//!
//! Objects cross the boundary as opaque handles, each released with its
//! `*_free` function. Every fallible call
//! returns a [`GcmStatus`]; on failure a description is available from
//! [`gcm_last_error_message`] on the same thread. Panics never unwind into C:
//! they are caught and reported as [`GcmStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gcm::bench::{run_method, Method, MethodConfig, SceneResult};
use gcm::error::GcmError;
use gcm::io::{from_json_str, to_json_string};
use gcm::metrics::{Partition, SceneMetrics};
use gcm::model::{Scene, TemplateSet};
use gcm::scene_gen::{draw_rng, generate_scene, standard_constellation_set, GeneratorConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Degenerate = 4,
    NonConvergence = 5,
    Io = 6,
    Panic = 7,
}

/// Inference method selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcmMethod {
    Ds = 0,
    Gmm = 1,
    Ransac = 2,
}

impl From<GcmMethod> for Method {
    fn from(m: GcmMethod) -> Self {
        match m {
            GcmMethod::Ds => Method::GcmDs,
            GcmMethod::Gmm => Method::GcmGmm,
            GcmMethod::Ransac => Method::Ransac,
        }
    }
}

/// Pose `(tx, ty, s·cos θ, s·sin θ)`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GcmPose {
    pub tx: f64,
    pub ty: f64,
    pub sc: f64,
    pub ss: f64,
}

/// Segmentation accuracy, adjusted Rand index, variation of information and
/// scene accuracy of one prediction.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GcmMetrics {
    pub sa: f64,
    pub ari: f64,
    pub vi: f64,
    pub scene_acc: f64,
}

/// A set of object templates.
pub struct GcmTemplateSet(TemplateSet);

/// One scene of observed parts.
pub struct GcmScene(Scene);

/// The outcome of inference on one scene.
pub struct GcmResult(SceneResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(GcmStatus, String);

impl From<GcmError> for Failure {
    fn from(e: GcmError) -> Self {
        let status = match &e {
            GcmError::Json(_) => GcmStatus::Parse,
            GcmError::Io(_) => GcmStatus::Io,
            GcmError::NonConvergence { .. } => GcmStatus::NonConvergence,
            GcmError::DegenerateBasis { .. }
            | GcmError::CoincidentParts
            | GcmError::DegenerateScale
            | GcmError::StructurallyInfeasible { .. } => GcmStatus::Degenerate,
            _ => GcmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GcmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(GcmStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GcmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GcmStatus::Ok,
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
            set_error(format!("internal panic: {msg}"));
            GcmStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(GcmStatus::Parse, format!("{what} is not UTF-8: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains an interior NUL"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn gcm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn gcm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The benchmark set: two squares and a triangle.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn gcm_template_set_standard(out: *mut *mut GcmTemplateSet) -> GcmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(GcmTemplateSet(standard_constellation_set())));
        Ok(())
    })
}

/// Parses a template set from JSON (a list of templates).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_template_set_from_json(json: *const c_char, out: *mut *mut GcmTemplateSet) -> GcmStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let out = out_ptr(out, "out")?;
        let set: TemplateSet = from_json_str(text)?;
        *out = Box::into_raw(Box::new(GcmTemplateSet(set)));
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn gcm_template_set_free(set: *mut GcmTemplateSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of templates in `set`, 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcm_template_set_len(set: *const GcmTemplateSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Total number of template parts in `set`, 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcm_template_set_n_slots(set: *const GcmTemplateSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.n_slots())
}

/// A scene from `n_points` interleaved `(x, y)` pairs.
///
/// # Safety
/// `xy` must point to `2 * n_points` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_scene_from_points(xy: *const f64, n_points: usize, out: *mut *mut GcmScene) -> GcmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if n_points == 0 {
            return Err(invalid("a scene needs at least one point"));
        }
        if xy.is_null() {
            return Err(null("xy"));
        }
        let coords = std::slice::from_raw_parts(xy, 2 * n_points);
        let pts: Vec<[f64; 2]> = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let scene = Scene::from_points(&pts);
        scene.validate()?;
        *out = Box::into_raw(Box::new(GcmScene(scene)));
        Ok(())
    })
}

/// Parses one scene from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_scene_from_json(json: *const c_char, out: *mut *mut GcmScene) -> GcmStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let out = out_ptr(out, "out")?;
        let scene: Scene = from_json_str(text)?;
        scene.validate()?;
        *out = Box::into_raw(Box::new(GcmScene(scene)));
        Ok(())
    })
}

/// Draw `index` of the benchmark protocol over `templates` at noise `sigma`
/// with object presence probability `presence`. Draws that select no object
/// are redrawn from the same stream.
///
/// # Safety
/// `templates` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_scene_generate(
    templates: *const GcmTemplateSet,
    sigma: f64,
    presence: f64,
    seed: u64,
    index: u64,
    out: *mut *mut GcmScene,
) -> GcmStatus {
    guard(|| {
        let set = borrow(templates, "templates")?;
        let out = out_ptr(out, "out")?;
        let config = GeneratorConfig {
            templates: set.0.clone(),
            presence,
            sigma,
            draws: 1,
            seed,
            normalize: true,
        };
        let scene = generate_scene(&config, &mut draw_rng(seed, index))?;
        *out = Box::into_raw(Box::new(GcmScene(scene)));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn gcm_scene_free(scene: *mut GcmScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of observed points, 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcm_scene_len(scene: *const GcmScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.len())
}

/// Ground-truth labels over `n_slots` elements (see [`gcm_result_labels`]).
///
/// # Safety
/// `scene` must be a live handle; `labels` must hold `n_slots` values.
#[no_mangle]
pub unsafe extern "C" fn gcm_scene_ground_truth(scene: *const GcmScene, n_slots: usize, labels: *mut usize) -> GcmStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        let truth = scene
            .0
            .ground_truth(n_slots)
            .ok_or_else(|| invalid("scene has no ground-truth labels for this slot count"))?;
        copy_labels(&truth, labels, n_slots)
    })
}

/// Serializes a scene to JSON; release with [`gcm_string_free`].
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_scene_to_json(scene: *const GcmScene, out: *mut *mut c_char) -> GcmStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        let out = out_ptr(out, "out")?;
        *out = into_c_string(to_json_string(&scene.0)?)?;
        Ok(())
    })
}

/// Runs `method` with default settings and `seed`.
///
/// # Safety
/// `scene` and `templates` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_infer(
    scene: *const GcmScene,
    templates: *const GcmTemplateSet,
    method: GcmMethod,
    seed: u64,
    out: *mut *mut GcmResult,
) -> GcmStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        let set = borrow(templates, "templates")?;
        let out = out_ptr(out, "out")?;
        let mut config = MethodConfig::default();
        config.model.seed = seed;
        let result = run_method(method.into(), &scene.0, &set.0, &config)?;
        *out = Box::into_raw(Box::new(GcmResult(result)));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn gcm_result_free(result: *mut GcmResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Length of the label vector (the template slot count).
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcm_result_n_labels(result: *const GcmResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.partition.len())
}

fn copy_labels(p: &Partition, labels: *mut usize, len: usize) -> Result<(), Failure> {
    if labels.is_null() {
        return Err(null("labels"));
    }
    if len != p.len() {
        return Err(invalid(format!("label buffer holds {len} values, {} needed", p.len())));
    }
    // SAFETY: the caller guarantees `labels` holds `len` values.
    unsafe { std::slice::from_raw_parts_mut(labels, len) }.copy_from_slice(p.labels());
    Ok(())
}

/// Writes the decoded partition: entry `m < M` is 0 for an unexplained point
/// or `k + 1` for a point assigned to template `k`; the remaining entries are
/// the unobserved slots and are 0.
///
/// # Safety
/// `result` must be a live handle; `labels` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gcm_result_labels(result: *const GcmResult, labels: *mut usize, len: usize) -> GcmStatus {
    guard(|| copy_labels(&borrow(result, "result")?.0.partition, labels, len))
}

/// Pose of template `k`; `present` is set to false (and `pose` left
/// untouched) when the object was not detected.
///
/// # Safety
/// `result` must be a live handle; `pose` and `present` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_result_pose(
    result: *const GcmResult,
    k: usize,
    pose: *mut GcmPose,
    present: *mut bool,
) -> GcmStatus {
    guard(|| {
        let r = borrow(result, "result")?;
        let pose = out_ptr(pose, "pose")?;
        let present = out_ptr(present, "present")?;
        let slot = r.0.poses.get(k).ok_or_else(|| invalid(format!("no template {k}")))?;
        *present = slot.is_some();
        if let Some(p) = slot {
            *pose = GcmPose {
                tx: p.tx,
                ty: p.ty,
                sc: p.sc,
                ss: p.ss,
            };
        }
        Ok(())
    })
}

/// Whether inference met its convergence criterion.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcm_result_converged(result: *const GcmResult) -> bool {
    result.as_ref().is_some_and(|r| r.0.converged)
}

/// Serializes a result to JSON; release with [`gcm_string_free`].
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_result_to_json(result: *const GcmResult, out: *mut *mut c_char) -> GcmStatus {
    guard(|| {
        let r = borrow(result, "result")?;
        let out = out_ptr(out, "out")?;
        *out = into_c_string(to_json_string(&r.0)?)?;
        Ok(())
    })
}

/// All four metrics of `pred` against `truth`, both label vectors of length
/// `n` in the layout of [`gcm_result_labels`].
///
/// # Safety
/// `truth` and `pred` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcm_metrics(truth: *const usize, pred: *const usize, n: usize, out: *mut GcmMetrics) -> GcmStatus {
    guard(|| {
        if truth.is_null() || pred.is_null() {
            return Err(null("labels"));
        }
        let out = out_ptr(out, "out")?;
        let t = Partition::new(std::slice::from_raw_parts(truth, n).to_vec());
        let p = Partition::new(std::slice::from_raw_parts(pred, n).to_vec());
        let m = SceneMetrics::compute(&t, &p)?;
        *out = GcmMetrics {
            sa: m.sa,
            ari: m.ari,
            vi: m.vi,
            scene_acc: m.scene_acc,
        };
        Ok(())
    })
}
