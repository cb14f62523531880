//! C ABI over the `mlosim` simulator.
//!
//! Every function returns an [`MlosimStatus`]. On failure the message is kept
//! per thread and can be read with [`mlosim_last_error`] until the next call.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mlosim::cli::capacity_for;
use mlosim::config::{link_set, ScenarioConfig};
use mlosim::mld::{largest_remainder, uniform_split, PolicyKind};
use mlosim::scenario::{run_seeds, RunError};
use mlosim::stats::{percentile, system_verdict, write_delays_csv, Delay, DelayRecord, SystemVerdict};
use mlosim::traffic::StreamKind;

/// Delay value used for frames that never completed.
pub const MLOSIM_DELAY_LOST: u64 = u64::MAX;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlosimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Io = 4,
    Invariant = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlosimStream {
    DlVideo = 0,
    UlVideo = 1,
    Pose = 2,
}

impl From<StreamKind> for MlosimStream {
    fn from(k: StreamKind) -> Self {
        match k {
            StreamKind::DlVideo => MlosimStream::DlVideo,
            StreamKind::UlVideo => MlosimStream::UlVideo,
            StreamKind::Pose => MlosimStream::Pose,
        }
    }
}

impl From<MlosimStream> for StreamKind {
    fn from(s: MlosimStream) -> Self {
        match s {
            MlosimStream::DlVideo => StreamKind::DlVideo,
            MlosimStream::UlVideo => StreamKind::UlVideo,
            MlosimStream::Pose => StreamKind::Pose,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlosimRecord {
    pub seed: u64,
    pub station: u16,
    pub stream: MlosimStream,
    pub frame_index: u64,
    /// Microseconds, or `MLOSIM_DELAY_LOST`.
    pub delay_us: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlosimVerdict {
    pub enabled: bool,
    pub pass: bool,
    /// Worst per-station 99th percentile, or `MLOSIM_DELAY_LOST`.
    pub worst_p99_us: u64,
    /// -1 when the stream recorded no frames.
    pub worst_station: i32,
    pub pdb_us: u64,
}

/// Opaque scenario handle.
pub struct MlosimScenario {
    cfg: ScenarioConfig,
}

/// Opaque handle over the merged records of one multi-seed run.
pub struct MlosimResults {
    records: Vec<DelayRecord>,
    verdict: SystemVerdict,
}

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

fn fail(status: MlosimStatus, msg: impl Into<String>) -> MlosimStatus {
    set_error(msg);
    status
}

/// Runs `f` behind a panic guard and resets the error slot first.
fn guarded(f: impl FnOnce() -> MlosimStatus) -> MlosimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(e) => {
            let msg = e
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| e.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(MlosimStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, MlosimStatus> {
    if p.is_null() {
        return Err(fail(MlosimStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MlosimStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn run_error_status(e: RunError) -> MlosimStatus {
    match e {
        RunError::Config(c) => fail(MlosimStatus::InvalidConfig, c.to_string()),
        other => fail(MlosimStatus::Invariant, other.to_string()),
    }
}

fn delay_to_c(d: Delay) -> u64 {
    d.as_micros().unwrap_or(MLOSIM_DELAY_LOST)
}

fn delay_from_c(us: u64) -> Delay {
    if us == MLOSIM_DELAY_LOST {
        Delay::Lost
    } else {
        Delay::Us(us)
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn mlosim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn mlosim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New scenario with the built-in defaults.
#[no_mangle]
pub extern "C" fn mlosim_scenario_default() -> *mut MlosimScenario {
    Box::into_raw(Box::new(MlosimScenario {
        cfg: ScenarioConfig::default(),
    }))
}

/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mlosim_scenario_from_toml(toml: *const c_char, out: *mut *mut MlosimScenario) -> MlosimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MlosimStatus::NullPointer, "out is null");
        }
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ScenarioConfig::from_toml_str(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(MlosimScenario { cfg }));
                MlosimStatus::Ok
            }
            Err(e) => fail(MlosimStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mlosim_scenario_from_file(path: *const c_char, out: *mut *mut MlosimScenario) -> MlosimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MlosimStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ScenarioConfig::from_path(Path::new(path)) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(MlosimScenario { cfg }));
                MlosimStatus::Ok
            }
            Err(e @ mlosim::config::ConfigError::Io { .. }) => fail(MlosimStatus::Io, e.to_string()),
            Err(e) => fail(MlosimStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// # Safety
/// `scn` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn mlosim_scenario_free(scn: *mut MlosimScenario) {
    if !scn.is_null() {
        drop(Box::from_raw(scn));
    }
}

/// # Safety
/// `scn` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn mlosim_scenario_set_n_sta(scn: *mut MlosimScenario, n_sta: u16) -> MlosimStatus {
    guarded(|| match scn.as_mut() {
        None => fail(MlosimStatus::NullPointer, "scenario is null"),
        Some(_) if n_sta == 0 => fail(MlosimStatus::OutOfRange, "n_sta must be at least 1"),
        Some(s) => {
            s.cfg.n_sta = n_sta;
            MlosimStatus::Ok
        }
    })
}

/// Replaces the seed list.
///
/// # Safety
/// `scn` must be a live scenario handle; `seeds` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn mlosim_scenario_set_seeds(
    scn: *mut MlosimScenario,
    seeds: *const u64,
    len: usize,
) -> MlosimStatus {
    guarded(|| {
        let Some(s) = scn.as_mut() else {
            return fail(MlosimStatus::NullPointer, "scenario is null");
        };
        if len == 0 {
            return fail(MlosimStatus::OutOfRange, "at least one seed is required");
        }
        if seeds.is_null() {
            return fail(MlosimStatus::NullPointer, "seeds is null");
        }
        s.cfg.seeds = std::slice::from_raw_parts(seeds, len).to_vec();
        MlosimStatus::Ok
    })
}

/// Sets the policy and link set by name, e.g. `"greedy"` and `"2x40"`.
/// `"sl"` with a multi-link set maps to a single link of the same total
/// bandwidth.
///
/// # Safety
/// `scn` must be a live scenario handle; both strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mlosim_scenario_set_variant(
    scn: *mut MlosimScenario,
    policy: *const c_char,
    links: *const c_char,
) -> MlosimStatus {
    guarded(|| {
        let Some(s) = scn.as_mut() else {
            return fail(MlosimStatus::NullPointer, "scenario is null");
        };
        let (policy, links) = match (str_arg(policy, "policy"), str_arg(links, "links")) {
            (Ok(p), Ok(l)) => (p, l),
            (Err(e), _) | (_, Err(e)) => return e,
        };
        let policy: PolicyKind = match policy.parse() {
            Ok(p) => p,
            Err(e) => return fail(MlosimStatus::InvalidConfig, e),
        };
        let Some(links) = link_set(links) else {
            return fail(MlosimStatus::InvalidConfig, format!("unknown link set {links:?}"));
        };
        s.cfg = s.cfg.with_variant(policy, &links);
        MlosimStatus::Ok
    })
}

/// Runs every seed of the scenario.
///
/// # Safety
/// `scn` must be a live scenario handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mlosim_run(scn: *const MlosimScenario, out: *mut *mut MlosimResults) -> MlosimStatus {
    guarded(|| {
        let Some(s) = scn.as_ref() else {
            return fail(MlosimStatus::NullPointer, "scenario is null");
        };
        if out.is_null() {
            return fail(MlosimStatus::NullPointer, "out is null");
        }
        match run_seeds(&s.cfg) {
            Ok(records) => {
                let verdict = system_verdict(&records, &s.cfg.traffic);
                *out = Box::into_raw(Box::new(MlosimResults { records, verdict }));
                MlosimStatus::Ok
            }
            Err(e) => run_error_status(e),
        }
    })
}

/// # Safety
/// `res` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn mlosim_results_free(res: *mut MlosimResults) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Number of records, or 0 for NULL.
///
/// # Safety
/// `res` must be a live results handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mlosim_results_len(res: *const MlosimResults) -> usize {
    res.as_ref().map_or(0, |r| r.records.len())
}

/// # Safety
/// `res` must be a live results handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mlosim_results_get(
    res: *const MlosimResults,
    index: usize,
    out: *mut MlosimRecord,
) -> MlosimStatus {
    guarded(|| {
        let (Some(r), false) = (res.as_ref(), out.is_null()) else {
            return fail(MlosimStatus::NullPointer, "results or out is null");
        };
        let Some(rec) = r.records.get(index) else {
            return fail(
                MlosimStatus::OutOfRange,
                format!("index {index} out of range for {} records", r.records.len()),
            );
        };
        *out = MlosimRecord {
            seed: rec.seed,
            station: rec.station,
            stream: rec.stream.into(),
            frame_index: rec.frame_index,
            delay_us: delay_to_c(rec.delay),
        };
        MlosimStatus::Ok
    })
}

/// Verdict of one stream. Disabled streams report `enabled = false, pass = true`.
///
/// # Safety
/// `res` must be a live results handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mlosim_results_verdict(
    res: *const MlosimResults,
    stream: MlosimStream,
    out: *mut MlosimVerdict,
) -> MlosimStatus {
    guarded(|| {
        let (Some(r), false) = (res.as_ref(), out.is_null()) else {
            return fail(MlosimStatus::NullPointer, "results or out is null");
        };
        let kind = StreamKind::from(stream);
        *out = match r.verdict.streams.iter().find(|v| v.stream == kind) {
            Some(v) => MlosimVerdict {
                enabled: true,
                pass: v.pass,
                worst_p99_us: v.worst_p99.map_or(0, delay_to_c),
                worst_station: v.worst_station.map_or(-1, i32::from),
                pdb_us: v.pdb_us,
            },
            None => MlosimVerdict {
                enabled: false,
                pass: true,
                worst_p99_us: 0,
                worst_station: -1,
                pdb_us: 0,
            },
        };
        MlosimStatus::Ok
    })
}

/// True if every enabled stream meets its delay budget.
///
/// # Safety
/// `res` must be a live results handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mlosim_results_pass(res: *const MlosimResults) -> bool {
    res.as_ref().is_some_and(|r| r.verdict.pass())
}

/// Writes the per-frame delay table as CSV.
///
/// # Safety
/// `res` must be a live results handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mlosim_results_write_csv(res: *const MlosimResults, path: *const c_char) -> MlosimStatus {
    guarded(|| {
        let Some(r) = res.as_ref() else {
            return fail(MlosimStatus::NullPointer, "results is null");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let written = File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            write_delays_csv(&mut w, &r.records)?;
            std::io::Write::flush(&mut w)
        });
        match written {
            Ok(()) => MlosimStatus::Ok,
            Err(e) => fail(MlosimStatus::Io, format!("{path}: {e}")),
        }
    })
}

/// Largest station count whose verdict passes, searching upward from 1.
/// `capped` is set when the search hit the configured ceiling.
///
/// # Safety
/// `scn` must be a live scenario handle; `max_sta` writable; `capped` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mlosim_capacity(
    scn: *const MlosimScenario,
    max_sta: *mut u16,
    capped: *mut bool,
) -> MlosimStatus {
    guarded(|| {
        let (Some(s), false) = (scn.as_ref(), max_sta.is_null()) else {
            return fail(MlosimStatus::NullPointer, "scenario or max_sta is null");
        };
        if let Err(e) = s.cfg.validate() {
            return fail(MlosimStatus::InvalidConfig, e.to_string());
        }
        match capacity_for(&s.cfg) {
            Ok(r) => {
                *max_sta = r.max_sta;
                if !capped.is_null() {
                    *capped = r.capped;
                }
                MlosimStatus::Ok
            }
            Err(mlosim::cli::CliError::Config(e)) => fail(MlosimStatus::InvalidConfig, e.to_string()),
            Err(e) => fail(MlosimStatus::Invariant, e.to_string()),
        }
    })
}

/// Nearest-rank percentile of `delays` (`MLOSIM_DELAY_LOST` counts as
/// infinite), `p` in (0, 1].
///
/// # Safety
/// `delays` must point to `len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlosim_percentile(delays: *const u64, len: usize, p: f64, out: *mut u64) -> MlosimStatus {
    guarded(|| {
        if out.is_null() || (delays.is_null() && len > 0) {
            return fail(MlosimStatus::NullPointer, "delays or out is null");
        }
        let samples: Vec<Delay> = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(delays, len)
                .iter()
                .map(|&d| delay_from_c(d))
                .collect()
        };
        match percentile(&samples, p) {
            Ok(d) => {
                *out = delay_to_c(d);
                MlosimStatus::Ok
            }
            Err(e) => fail(MlosimStatus::OutOfRange, e.to_string()),
        }
    })
}

/// Splits `n` MPDUs over `links` links as evenly as possible; `out` receives
/// `links` counts.
///
/// # Safety
/// `out` must point to `links` writable values.
#[no_mangle]
pub unsafe extern "C" fn mlosim_uniform_split(n: usize, links: usize, out: *mut usize) -> MlosimStatus {
    guarded(|| {
        if links == 0 {
            return fail(MlosimStatus::OutOfRange, "links must be at least 1");
        }
        if out.is_null() {
            return fail(MlosimStatus::NullPointer, "out is null");
        }
        let counts = uniform_split(n, links);
        std::slice::from_raw_parts_mut(out, links).copy_from_slice(&counts);
        MlosimStatus::Ok
    })
}

/// Largest-remainder apportionment of `n` MPDUs proportional to `weights`.
/// Negative or non-finite weights are rejected.
///
/// # Safety
/// `weights` must point to `links` values and `out` to `links` writable values.
#[no_mangle]
pub unsafe extern "C" fn mlosim_apportion(
    weights: *const f64,
    links: usize,
    n: usize,
    out: *mut usize,
) -> MlosimStatus {
    guarded(|| {
        if links == 0 {
            return fail(MlosimStatus::OutOfRange, "links must be at least 1");
        }
        if weights.is_null() || out.is_null() {
            return fail(MlosimStatus::NullPointer, "weights or out is null");
        }
        let w = std::slice::from_raw_parts(weights, links);
        if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return fail(MlosimStatus::OutOfRange, format!("invalid weight {bad}"));
        }
        let counts = largest_remainder(w, n);
        std::slice::from_raw_parts_mut(out, links).copy_from_slice(&counts);
        MlosimStatus::Ok
    })
}
