use std::ffi::{c_char, c_int, c_void, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use hybridcub_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { hc_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn rule_handle_round_trip() {
    let mut rule = ptr::null_mut();
    unsafe {
        assert_eq!(hc_rule_new(HcRuleKind::CnfVI, 7, &mut rule), HcStatus::Ok);
        assert_eq!(hc_rule_len(rule), 58);
        assert_eq!(hc_rule_dim(rule), 7);
        assert_eq!(hc_rule_degree(rule), 5);
        assert_eq!(hc_rule_stability_factor(rule), 1.0);
        let mut w = vec![0.0; 58];
        let mut p = vec![0.0; 58 * 7];
        assert_eq!(hc_rule_copy(rule, w.as_mut_ptr(), p.as_mut_ptr()), HcStatus::Ok);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let second_moment: f64 = (0..58).map(|i| w[i] * p[i * 7] * p[i * 7]).sum();
        assert!((second_moment - 1.0).abs() < 1e-12);
        hc_rule_free(rule);
    }
}

#[test]
fn rule_errors_are_reported() {
    let mut rule = ptr::null_mut();
    unsafe {
        assert_eq!(hc_rule_new(HcRuleKind::CnfVI, 9, &mut rule), HcStatus::RuleError);
        assert!(rule.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(hc_rule_new(HcRuleKind::CnfI, 3, ptr::null_mut()), HcStatus::NullPointer);
        assert_eq!(hc_rule_len(ptr::null()), 0);
        assert!(hc_rule_stability_factor(ptr::null()).is_nan());
        hc_rule_free(ptr::null_mut());
    }
}

struct Linear {
    a: [[f64; 2]; 2],
}

unsafe extern "C" fn linear(user: *mut c_void, x: *const f64, n_in: usize, out: *mut f64, n_out: usize) -> c_int {
    let m = &*(user as *const Linear);
    let x = std::slice::from_raw_parts(x, n_in);
    let out = std::slice::from_raw_parts_mut(out, n_out);
    for (o, row) in out.iter_mut().zip(&m.a) {
        *o = row.iter().zip(x).map(|(a, v)| a * v).sum();
    }
    0
}

unsafe extern "C" fn observe_first(_: *mut c_void, x: *const f64, _: usize, out: *mut f64, _: usize) -> c_int {
    *out = *x;
    0
}

unsafe extern "C" fn refuse(_: *mut c_void, _: *const f64, _: usize, _: *mut f64, _: usize) -> c_int {
    7
}

#[test]
fn filter_matches_kalman_on_a_linear_model() {
    let model = Linear {
        a: [[1.0, 0.1], [0.0, 1.0]],
    };
    let user = &model as *const Linear as *mut c_void;
    unsafe {
        let mut rule = ptr::null_mut();
        assert_eq!(hc_rule_new(HcRuleKind::CnfI, 2, &mut rule), HcStatus::Ok);
        let mut f = ptr::null_mut();
        let mean = [0.0, 1.0];
        let s = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(hc_filter_new(rule, mean.as_ptr(), s.as_ptr(), &mut f), HcStatus::Ok);
        hc_rule_free(rule);
        assert_eq!(hc_filter_dim(f), 2);
        let q = [0.1, 0.0, 0.0, 0.1];
        let r = [0.5];
        let z = [0.3];
        assert_eq!(hc_filter_predict(f, Some(linear), user, q.as_ptr()), HcStatus::Ok);
        assert_eq!(
            hc_filter_update(f, Some(observe_first), ptr::null_mut(), 1, z.as_ptr(), r.as_ptr()),
            HcStatus::Ok
        );
        let mut got_m = [0.0; 2];
        let mut got_p = [0.0; 4];
        assert_eq!(hc_filter_belief(f, got_m.as_mut_ptr(), got_p.as_mut_ptr()), HcStatus::Ok);

        // closed form
        let pp = [[1.0 + 0.01 + 0.01, 0.1], [0.1, 1.0 + 0.01]];
        let xp = [0.1, 1.0];
        let sz = pp[0][0] + 0.25;
        let k = [pp[0][0] / sz, pp[1][0] / sz];
        let innov = 0.3 - xp[0];
        let want_m = [xp[0] + k[0] * innov, xp[1] + k[1] * innov];
        let want_p = [
            pp[0][0] - k[0] * sz * k[0],
            pp[0][1] - k[0] * sz * k[1],
            pp[1][0] - k[1] * sz * k[0],
            pp[1][1] - k[1] * sz * k[1],
        ];
        for i in 0..2 {
            assert!((got_m[i] - want_m[i]).abs() < 1e-12);
        }
        for i in 0..4 {
            assert!((got_p[i] - want_p[i]).abs() < 1e-12);
        }

        assert_eq!(
            hc_filter_predict(f, Some(refuse), ptr::null_mut(), q.as_ptr()),
            HcStatus::FilterError
        );
        assert!(last_error().contains("7"));
        assert_eq!(hc_filter_predict(f, None, ptr::null_mut(), q.as_ptr()), HcStatus::NullPointer);
        hc_filter_free(f);
    }
}

#[test]
fn scenario_run_through_handles() {
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/configs/case1.cfg");
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    let sets: Vec<CString> = [
        "estimator=[{label=\"vi\"}]",
        "fdii.min_runs=3",
        "fdii.calibration_runs=3",
        "scenario.runs=2",
        "scenario.horizon=5.0",
    ]
    .iter()
    .map(|s| CString::new(*s).unwrap())
    .collect();
    let ptrs: Vec<*const c_char> = sets.iter().map(|s| s.as_ptr()).collect();
    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut sc = ptr::null_mut();
        assert_eq!(hc_scenario_load(path.as_ptr(), ptrs.as_ptr(), ptrs.len(), &mut sc), HcStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(hc_scenario_run(sc, &mut res), HcStatus::Ok);
        assert_eq!(hc_result_estimators(res), 1);
        let (mut runs, mut det, mut fa) = (0, 0, 0);
        assert_eq!(hc_result_counts(res, 0, &mut runs, &mut det, &mut fa), HcStatus::Ok);
        assert_eq!(runs, 2);
        assert!(det <= runs && fa <= runs);
        assert_eq!(
            hc_result_counts(res, 1, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()),
            HcStatus::InvalidArgument
        );
        assert_eq!(hc_result_write(res, dir.as_ptr()), HcStatus::Ok);
        assert!(tmp.path().join("summary.csv").exists());
        hc_result_free(res);
        hc_scenario_free(sc);

        let bad = CString::new("/nonexistent.cfg").unwrap();
        let mut sc = ptr::null_mut();
        assert_eq!(
            hc_scenario_load(bad.as_ptr(), ptr::null(), 0, &mut sc),
            HcStatus::ScenarioError
        );
        assert!(last_error().contains("nonexistent"));
    }
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/hybridcub.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "hc_last_error",
        "hc_rule_new",
        "hc_rule_copy",
        "hc_filter_new",
        "hc_filter_predict",
        "hc_filter_update",
        "hc_filter_belief",
        "hc_scenario_load",
        "hc_scenario_run",
        "hc_result_counts",
        "hc_result_write",
        "hc_result_free",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    // syntax check with the system C compiler when one is installed
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
