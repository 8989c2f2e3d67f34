//! C ABI over tube building, membership queries, the hysteresis tube gate, containment
//! checks and policy evaluation.
//!
//! Every function returns a [`TdStatus`]; results come back through out-pointers. On a
//! non-zero status, [`td_last_error`] describes the failure for the calling thread.
//! Handles are opaque and owned by the caller once returned; release them with the
//! matching `*_free` function. Strings returned by the library are released with
//! [`td_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tubedagger::dagger::evaluate_policy;
use tubedagger::envs::{SystemId, SystemSpec};
use tubedagger::gating::{tube_gate, Actor, Mode, TubeGateConfig};
use tubedagger::policies::{ExpertPolicy, Policy, SavedPolicy};
use tubedagger::reachtube::{build_tube, deserialize_tube, read_tube, serialize_tube, ReachTube, TubeConfig};
use tubedagger::safety::tube_contained;
use tubedagger::Error;

/// Status codes. `TD_OK` is zero; everything else is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdStatus {
    TdOk = 0,
    /// A required pointer argument was null.
    TdErrNull = 1,
    /// An argument was out of range or not valid UTF-8.
    TdErrInvalidArgument = 2,
    /// A vector had the wrong length.
    TdErrShape = 3,
    /// A JSON payload could not be parsed.
    TdErrParse = 4,
    /// A payload parsed but violated an invariant.
    TdErrValidation = 5,
    TdErrIo = 6,
    /// Tube sampling stopped before reaching the coverage target.
    TdErrCoverage = 7,
    /// Numerical failure such as a diverged integration.
    TdErrNumerical = 8,
    /// A Rust panic was caught at the boundary.
    TdErrPanic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdMode {
    TdModeAutonomous = 0,
    TdModeSupervisor = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdActor {
    TdActorExpert = 0,
    TdActorNovice = 1,
}

/// Outcome of one gate step.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdGateStep {
    pub rho: f64,
    pub actor: TdActor,
    pub next_mode: TdMode,
}

/// Tube-building parameters; start from [`td_tube_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdTubeConfig {
    pub gamma: f64,
    pub mu: f64,
    pub initial_radius: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    pub coverage_samples: usize,
}

/// Opaque reach-tube handle.
pub struct TdTube {
    inner: ReachTube,
}

/// Opaque policy handle: a scripted expert, an MLP or an ensemble.
pub struct TdPolicy {
    inner: Box<dyn Policy + Send>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TdStatus, msg: impl Into<String>) -> TdStatus {
    set_error(msg.into());
    status
}

fn status_of(err: &Error) -> TdStatus {
    match err {
        Error::Shape { .. } | Error::Alignment(_) => TdStatus::TdErrShape,
        Error::Parse { .. } => TdStatus::TdErrParse,
        Error::Validation(_) => TdStatus::TdErrValidation,
        Error::Io(_) | Error::Csv(_) => TdStatus::TdErrIo,
        Error::CoverageNotReached { .. } => TdStatus::TdErrCoverage,
        Error::IntegrationDiverged { .. }
        | Error::CapUnderflow { .. }
        | Error::DegenerateCap
        | Error::EmptyBatch
        | Error::InsufficientSamples { .. } => TdStatus::TdErrNumerical,
        Error::Config(_) | Error::InsufficientEnsemble { .. } => TdStatus::TdErrInvalidArgument,
    }
}

/// Runs `f`, recording errors and converting panics into [`TdStatus::TdErrPanic`].
fn guard(f: impl FnOnce() -> Result<(), TdStatus>) -> TdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TdStatus::TdOk
        }
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TdStatus::TdErrPanic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, TdStatus>;
}

impl<T> OrStatus<T> for tubedagger::Result<T> {
    fn or_status(self) -> Result<T, TdStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, TdStatus> {
    if p.is_null() {
        return Err(fail(TdStatus::TdErrNull, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TdStatus::TdErrInvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, TdStatus> {
    p.as_ref()
        .ok_or_else(|| fail(TdStatus::TdErrNull, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, TdStatus> {
    p.as_mut()
        .ok_or_else(|| fail(TdStatus::TdErrNull, format!("{name} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], TdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(TdStatus::TdErrNull, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn system_arg(env: &str) -> Result<SystemSpec, TdStatus> {
    let id: SystemId = env.parse().or_status()?;
    Ok(SystemSpec::builtin(id))
}

/// Message for the last failed call on this thread, or null. The pointer stays valid
/// until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn td_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn td_tube_config_default() -> TdTubeConfig {
    let d = TubeConfig::default();
    TdTubeConfig {
        gamma: d.gamma,
        mu: d.mu,
        initial_radius: d.initial_radius,
        batch_size: d.batch_size,
        max_batches: d.max_batches,
        coverage_samples: d.coverage_samples,
    }
}

/// Builds a tube around the scripted expert of `env`.
///
/// # Safety
/// `env` must be a nul-terminated string, `config` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn td_tube_build(
    env: *const c_char,
    config: *const TdTubeConfig,
    seed: u64,
    out: *mut *mut TdTube,
) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let system = system_arg(str_arg(env, "env")?)?;
        let c = ref_arg(config, "config")?;
        let cfg = TubeConfig {
            gamma: c.gamma,
            mu: c.mu,
            initial_radius: c.initial_radius,
            batch_size: c.batch_size,
            max_batches: c.max_batches,
            coverage_samples: c.coverage_samples,
            include_action: false,
        };
        let built = build_tube(&system, &ExpertPolicy::for_system(&system), &cfg, seed).or_status()?;
        *out = Box::into_raw(Box::new(TdTube { inner: built.tube }));
        Ok(())
    })
}

/// Reads a tube JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_tube_load(path: *const c_char, out: *mut *mut TdTube) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let tube = read_tube(Path::new(str_arg(path, "path")?)).or_status()?;
        *out = Box::into_raw(Box::new(TdTube { inner: tube }));
        Ok(())
    })
}

/// Parses a tube from a JSON string.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_tube_from_json(json: *const c_char, out: *mut *mut TdTube) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let tube = deserialize_tube(str_arg(json, "json")?).or_status()?;
        *out = Box::into_raw(Box::new(TdTube { inner: tube }));
        Ok(())
    })
}

/// Serializes a tube; free the result with [`td_string_free`].
///
/// # Safety
/// `tube` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_tube_to_json(tube: *const TdTube, out: *mut *mut c_char) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let tube = ref_arg(tube, "tube")?;
        let json = serialize_tube(&tube.inner).or_status()?;
        let json = CString::new(json).expect("JSON has no nul bytes");
        *out = json.into_raw();
        Ok(())
    })
}

/// Releases a tube. Null is ignored.
///
/// # Safety
/// `tube` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_tube_free(tube: *mut TdTube) {
    if !tube.is_null() {
        drop(Box::from_raw(tube));
    }
}

/// Number of slices (`horizon + 1`) and state dimension.
///
/// # Safety
/// `tube` must be a live handle; `len` and `dim` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn td_tube_shape(tube: *const TdTube, len: *mut usize, dim: *mut usize) -> TdStatus {
    guard(|| {
        let tube = ref_arg(tube, "tube")?;
        *out_arg(len, "len")? = tube.inner.len();
        *out_arg(dim, "dim")? = tube.inner.dim();
        Ok(())
    })
}

/// Membership value of `state` in slice `step`; values `<= 1` are inside.
///
/// # Safety
/// `tube` must be a live handle, `state` must point to `len` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn td_tube_membership(
    tube: *const TdTube,
    step: usize,
    state: *const f64,
    len: usize,
    out: *mut f64,
) -> TdStatus {
    guard(|| {
        let tube = ref_arg(tube, "tube")?;
        let state = slice_arg(state, len, "state")?;
        let out = out_arg(out, "out")?;
        *out = tube.inner.membership(step, state).or_status()?;
        Ok(())
    })
}

/// One hysteresis gate step: the expert acts iff the mode is supervisor or the membership
/// exceeds `beta_plus`, and control returns to the novice once it drops below
/// `beta_minus`. `(0, 0)` is accepted and hands every off-center step to the expert.
///
/// # Safety
/// `tube` must be a live handle, `state` must point to `len` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn td_tube_gate(
    tube: *const TdTube,
    beta_minus: f64,
    beta_plus: f64,
    step: usize,
    state: *const f64,
    len: usize,
    mode: TdMode,
    out: *mut TdGateStep,
) -> TdStatus {
    guard(|| {
        let tube = ref_arg(tube, "tube")?;
        let state = slice_arg(state, len, "state")?;
        let out = out_arg(out, "out")?;
        let cfg = TubeGateConfig::from_pair(beta_minus, beta_plus).or_status()?;
        let rho = tube.inner.membership(step, state).or_status()?;
        let mode = match mode {
            TdMode::TdModeAutonomous => Mode::Autonomous,
            TdMode::TdModeSupervisor => Mode::Supervisor,
        };
        let (actor, next) = tube_gate(rho, mode, &cfg);
        *out = TdGateStep {
            rho,
            actor: match actor {
                Actor::Expert => TdActor::TdActorExpert,
                Actor::Novice => TdActor::TdActorNovice,
            },
            next_mode: match next {
                Mode::Autonomous => TdMode::TdModeAutonomous,
                Mode::Supervisor => TdMode::TdModeSupervisor,
            },
        };
        Ok(())
    })
}

/// Slice-wise containment of `imitator` in `expert`. `first_violation` receives the first
/// failing slice index, or `SIZE_MAX` when every slice is contained.
///
/// # Safety
/// Both tubes must be live handles; `contained` and `first_violation` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn td_tube_contained(
    imitator: *const TdTube,
    expert: *const TdTube,
    contained: *mut bool,
    first_violation: *mut usize,
) -> TdStatus {
    guard(|| {
        let imitator = ref_arg(imitator, "imitator")?;
        let expert = ref_arg(expert, "expert")?;
        let report = tube_contained(&imitator.inner, &expert.inner).or_status()?;
        *out_arg(contained, "contained")? = report.all_contained;
        *out_arg(first_violation, "first_violation")? = report.first_violation.unwrap_or(usize::MAX);
        Ok(())
    })
}

/// The scripted expert of `env`.
///
/// # Safety
/// `env` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_policy_expert(env: *const c_char, out: *mut *mut TdPolicy) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let system = system_arg(str_arg(env, "env")?)?;
        *out = Box::into_raw(Box::new(TdPolicy {
            inner: Box::new(ExpertPolicy::for_system(&system)),
        }));
        Ok(())
    })
}

/// Loads an MLP or ensemble checkpoint written by the training loops.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_policy_load(path: *const c_char, out: *mut *mut TdPolicy) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let policy = SavedPolicy::load(Path::new(str_arg(path, "path")?)).or_status()?;
        *out = Box::into_raw(Box::new(TdPolicy {
            inner: Box::new(policy),
        }));
        Ok(())
    })
}

/// Releases a policy. Null is ignored.
///
/// # Safety
/// `policy` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_policy_free(policy: *mut TdPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Writes the action for `state` into `action`, which holds `action_len` doubles.
///
/// # Safety
/// `policy` must be a live handle; `state` must point to `state_len` doubles and
/// `action` to `action_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn td_policy_act(
    policy: *const TdPolicy,
    state: *const f64,
    state_len: usize,
    action: *mut f64,
    action_len: usize,
) -> TdStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        let state = slice_arg(state, state_len, "state")?;
        let a = policy.inner.act(state).or_status()?;
        if a.len() != action_len {
            return Err(fail(
                TdStatus::TdErrShape,
                format!("action has {} entries, buffer holds {action_len}", a.len()),
            ));
        }
        if action_len > 0 {
            if action.is_null() {
                return Err(fail(TdStatus::TdErrNull, "action is null"));
            }
            std::slice::from_raw_parts_mut(action, action_len).copy_from_slice(&a);
        }
        Ok(())
    })
}

/// Median and population standard deviation of `episodes` policy-only rollouts.
///
/// # Safety
/// `policy` must be a live handle, `env` a nul-terminated string, `median` and `std`
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn td_policy_evaluate(
    policy: *const TdPolicy,
    env: *const c_char,
    episodes: usize,
    seed: u64,
    median: *mut f64,
    std: *mut f64,
) -> TdStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        let system = system_arg(str_arg(env, "env")?)?;
        let median = out_arg(median, "median")?;
        let std = out_arg(std, "std")?;
        (*median, *std) = evaluate_policy(&system, policy.inner.as_ref(), episodes, seed).or_status()?;
        Ok(())
    })
}
