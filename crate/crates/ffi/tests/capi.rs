use std::ffi::{CStr, CString};
use std::ptr;

use mlosim_ffi::*;

fn last_error() -> String {
    let p = mlosim_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_scenario() -> *mut MlosimScenario {
    let toml = CString::new("n_sta = 2\nsim_duration_s = 1.0\nseeds = [1, 2]\nlink_set = \"2x40\"\n").unwrap();
    let mut scn = ptr::null_mut();
    let st = unsafe { mlosim_scenario_from_toml(toml.as_ptr(), &mut scn) };
    assert_eq!(st, MlosimStatus::Ok);
    scn
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(mlosim_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn run_and_read_back_records() {
    let scn = small_scenario();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { mlosim_run(scn, &mut res) }, MlosimStatus::Ok);
    let n = unsafe { mlosim_results_len(res) };
    assert!(n > 0);

    let mut rec = MlosimRecord {
        seed: 0,
        station: 0,
        stream: MlosimStream::Pose,
        frame_index: 0,
        delay_us: 0,
    };
    let mut seeds = Vec::new();
    for i in 0..n {
        assert_eq!(unsafe { mlosim_results_get(res, i, &mut rec) }, MlosimStatus::Ok);
        assert!((1..=2).contains(&rec.station));
        if seeds.last() != Some(&rec.seed) {
            seeds.push(rec.seed);
        }
    }
    assert_eq!(seeds, vec![1, 2]);

    assert_eq!(
        unsafe { mlosim_results_get(res, n, &mut rec) },
        MlosimStatus::OutOfRange
    );
    assert!(last_error().contains("out of range"));

    let mut v = MlosimVerdict {
        enabled: false,
        pass: false,
        worst_p99_us: 0,
        worst_station: 0,
        pdb_us: 0,
    };
    assert_eq!(
        unsafe { mlosim_results_verdict(res, MlosimStream::DlVideo, &mut v) },
        MlosimStatus::Ok
    );
    assert!(v.enabled);
    assert_eq!(v.pdb_us, 10_000);
    assert!(v.worst_station >= 0);
    assert_eq!(v.pass, v.worst_p99_us <= v.pdb_us);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("delays.csv").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { mlosim_results_write_csv(res, path.as_ptr()) },
        MlosimStatus::Ok
    );
    let text = std::fs::read_to_string(dir.path().join("delays.csv")).unwrap();
    assert_eq!(text.lines().count(), n + 1);
    assert!(text.starts_with("seed,station,stream,frame_index,delay_us\n"));

    unsafe {
        mlosim_results_free(res);
        mlosim_scenario_free(scn);
    }
}

#[test]
fn sl_with_two_links_is_a_config_error() {
    let toml = CString::new("policy = \"sl\"\nlinks = [{ carrier_ghz = 5.2, bandwidth_mhz = 40 }, { carrier_ghz = 5.5, bandwidth_mhz = 40 }]\n")
        .unwrap();
    let mut scn = ptr::null_mut();
    let st = unsafe { mlosim_scenario_from_toml(toml.as_ptr(), &mut scn) };
    if st == MlosimStatus::Ok {
        let mut res = ptr::null_mut();
        assert_eq!(unsafe { mlosim_run(scn, &mut res) }, MlosimStatus::InvalidConfig);
        assert!(res.is_null());
        unsafe { mlosim_scenario_free(scn) };
    } else {
        assert_eq!(st, MlosimStatus::InvalidConfig);
    }
    assert!(last_error().contains("sl requires exactly 1 link"));
}

#[test]
fn bad_inputs_report_status() {
    let mut scn = ptr::null_mut();
    assert_eq!(
        unsafe { mlosim_scenario_from_toml(ptr::null(), &mut scn) },
        MlosimStatus::NullPointer
    );
    let bad = CString::new("n_sta = \"many\"").unwrap();
    assert_eq!(
        unsafe { mlosim_scenario_from_toml(bad.as_ptr(), &mut scn) },
        MlosimStatus::InvalidConfig
    );
    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    assert_eq!(
        unsafe { mlosim_scenario_from_file(missing.as_ptr(), &mut scn) },
        MlosimStatus::Io
    );

    let scn = mlosim_scenario_default();
    assert_eq!(unsafe { mlosim_scenario_set_n_sta(scn, 0) }, MlosimStatus::OutOfRange);
    assert_eq!(
        unsafe { mlosim_scenario_set_seeds(scn, ptr::null(), 0) },
        MlosimStatus::OutOfRange
    );
    let p = CString::new("fastest").unwrap();
    let l = CString::new("2x40").unwrap();
    assert_eq!(
        unsafe { mlosim_scenario_set_variant(scn, p.as_ptr(), l.as_ptr()) },
        MlosimStatus::InvalidConfig
    );
    unsafe { mlosim_scenario_free(scn) };

    // A successful call clears the slot.
    assert_eq!(
        unsafe { mlosim_scenario_set_n_sta(ptr::null_mut(), 1) },
        MlosimStatus::NullPointer
    );
    let mut out = [0usize; 2];
    assert_eq!(
        unsafe { mlosim_uniform_split(3, 2, out.as_mut_ptr()) },
        MlosimStatus::Ok
    );
    assert!(mlosim_last_error().is_null());
}

#[test]
fn sl_variant_maps_to_single_link() {
    let scn = mlosim_scenario_default();
    let p = CString::new("sl").unwrap();
    let l = CString::new("2x80").unwrap();
    assert_eq!(
        unsafe { mlosim_scenario_set_variant(scn, p.as_ptr(), l.as_ptr()) },
        MlosimStatus::Ok
    );
    let seeds = [4u64];
    assert_eq!(
        unsafe { mlosim_scenario_set_seeds(scn, seeds.as_ptr(), 1) },
        MlosimStatus::Ok
    );
    assert_eq!(unsafe { mlosim_scenario_set_n_sta(scn, 1) }, MlosimStatus::Ok);
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { mlosim_run(scn, &mut res) }, MlosimStatus::Ok);
    assert!(unsafe { mlosim_results_pass(res) });
    unsafe {
        mlosim_results_free(res);
        mlosim_scenario_free(scn);
    }
}

#[test]
fn percentile_treats_lost_as_infinite() {
    let mut delays: Vec<u64> = (1..=100).collect();
    let mut out = 0;
    assert_eq!(
        unsafe { mlosim_percentile(delays.as_ptr(), delays.len(), 0.99, &mut out) },
        MlosimStatus::Ok
    );
    assert_eq!(out, 99);
    delays[0] = MLOSIM_DELAY_LOST;
    delays[1] = MLOSIM_DELAY_LOST;
    assert_eq!(
        unsafe { mlosim_percentile(delays.as_ptr(), delays.len(), 0.99, &mut out) },
        MlosimStatus::Ok
    );
    assert_eq!(out, MLOSIM_DELAY_LOST);
    assert_eq!(
        unsafe { mlosim_percentile(ptr::null(), 0, 0.99, &mut out) },
        MlosimStatus::OutOfRange
    );
    assert_eq!(
        unsafe { mlosim_percentile(delays.as_ptr(), delays.len(), 1.5, &mut out) },
        MlosimStatus::OutOfRange
    );
}

#[test]
fn split_and_apportion() {
    let mut out = [0usize; 3];
    assert_eq!(
        unsafe { mlosim_uniform_split(10, 3, out.as_mut_ptr()) },
        MlosimStatus::Ok
    );
    // Links fill in order with ceil(n / links) each.
    assert_eq!(out, [4, 4, 2]);

    let w = [0.5, 0.3, 0.2];
    assert_eq!(
        unsafe { mlosim_apportion(w.as_ptr(), 3, 10, out.as_mut_ptr()) },
        MlosimStatus::Ok
    );
    assert_eq!(out, [5, 3, 2]);

    let bad = [1.0, -1.0, 0.0];
    assert_eq!(
        unsafe { mlosim_apportion(bad.as_ptr(), 3, 10, out.as_mut_ptr()) },
        MlosimStatus::OutOfRange
    );
    assert_eq!(
        unsafe { mlosim_uniform_split(1, 0, out.as_mut_ptr()) },
        MlosimStatus::OutOfRange
    );
}

#[test]
fn header_declares_the_surface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mlosim.h")).unwrap();
    for sym in [
        "mlosim_last_error",
        "mlosim_scenario_from_toml",
        "mlosim_run",
        "mlosim_results_get",
        "mlosim_capacity",
        "mlosim_apportion",
        "MLOSIM_DELAY_LOST",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

#[test]
fn capacity_stops_at_ceiling() {
    let toml = CString::new("sim_duration_s = 1.0\nseeds = [1]\n[capacity]\nmax_sta = 2\n").unwrap();
    let mut scn = ptr::null_mut();
    assert_eq!(
        unsafe { mlosim_scenario_from_toml(toml.as_ptr(), &mut scn) },
        MlosimStatus::Ok
    );
    let (mut max_sta, mut capped) = (0u16, false);
    assert_eq!(
        unsafe { mlosim_capacity(scn, &mut max_sta, &mut capped) },
        MlosimStatus::Ok
    );
    assert_eq!((max_sta, capped), (2, true));
    unsafe { mlosim_scenario_free(scn) };
}
