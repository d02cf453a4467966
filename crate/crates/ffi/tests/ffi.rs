use std::ffi::{CStr, CString};
use std::ptr;

use approx::assert_abs_diff_eq;
use htf_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = htf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const PROBLEM: &str = r#"{"alpha":0.3,"kappa":0.5,"left_bc":{"kind":"fixed","value":1.0},"ic_layer":0.0,"ic_substrate":0.0}"#;
const SOLVER: &str = r#"{"dx":0.05,"dt":0.005,"save_every":10}"#;

fn solve() -> *mut HtfField {
    let mut f = ptr::null_mut();
    let st = unsafe { htf_oracle_solve(c(PROBLEM).as_ptr(), c(SOLVER).as_ptr(), &mut f) };
    assert_eq!(st, HtfStatus::Ok, "{}", last_error());
    f
}

#[test]
fn oracle_field_round_trip() {
    let f = solve();
    let (mut nx, mut nt) = (0, 0);
    unsafe {
        assert_eq!(htf_field_shape(f, &mut nx, &mut nt), HtfStatus::Ok);
        assert_eq!((nx, nt), (201, 21));
        let (mut x, mut t) = (vec![0.0; nx], vec![0.0; nt]);
        assert_eq!(htf_field_axes(f, x.as_mut_ptr(), nx, t.as_mut_ptr(), nt), HtfStatus::Ok);
        assert_eq!(x[0], 0.0);
        assert_abs_diff_eq!(x[nx - 1], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t[nt - 1], 1.0, epsilon = 1e-12);
        let mut v = vec![0.0; nx * nt];
        assert_eq!(htf_field_values(f, v.as_mut_ptr(), v.len()), HtfStatus::Ok);
        // Left end held at 1 after the start.
        assert_abs_diff_eq!(v[(nt - 1) * nx], 1.0, epsilon = 1e-12);
        let mut u = 0.0;
        assert_eq!(htf_field_value_at(f, 0.0, 1.0, &mut u), HtfStatus::Ok);
        assert_abs_diff_eq!(u, 1.0, epsilon = 1e-12);

        let mut summary = HtfErrorSummary::default();
        assert_eq!(htf_compare(f, f, &mut summary), HtfStatus::Ok);
        assert_eq!(summary.max_pointwise_l1, 0.0);
        assert_eq!(summary.undefined_levels, 1);
        assert!(summary.mean_global_l2 == 0.0);
        htf_field_free(f);
    }
}

#[test]
fn small_buffers_and_nulls_are_reported() {
    let f = solve();
    unsafe {
        let mut v = vec![0.0; 3];
        assert_eq!(htf_field_values(f, v.as_mut_ptr(), v.len()), HtfStatus::BufferTooSmall);
        assert!(last_error().contains("needs"));
        assert_eq!(htf_field_shape(ptr::null(), ptr::null_mut(), ptr::null_mut()), HtfStatus::NullPointer);
        let mut g = ptr::null_mut();
        assert_eq!(htf_oracle_solve(ptr::null(), ptr::null(), &mut g), HtfStatus::NullPointer);
        assert_eq!(htf_oracle_solve(c("{").as_ptr(), ptr::null(), &mut g), HtfStatus::Config);
        let bad = PROBLEM.replace("0.3", "-0.3");
        assert_eq!(htf_oracle_solve(c(&bad).as_ptr(), c(SOLVER).as_ptr(), &mut g), HtfStatus::Config);
        assert!(last_error().contains("positive"));
        assert!(g.is_null());
        htf_field_free(f);
        htf_field_free(ptr::null_mut());
    }
}

#[test]
fn measurements_are_seeded() {
    let data = c(r#"{"solver":{"dx":0.05,"dt":0.005}}"#);
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(htf_generate_measurements(0.2, 0.24, 7, data.as_ptr(), &mut a), HtfStatus::Ok, "{}", last_error());
        assert_eq!(htf_generate_measurements(0.2, 0.24, 7, data.as_ptr(), &mut b), HtfStatus::Ok);
        let mut n = 0;
        assert_eq!(htf_measurements_len(a, &mut n), HtfStatus::Ok);
        assert_eq!(n, 120);
        let read = |m| {
            let (mut x, mut t, mut u) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            assert_eq!(htf_measurements_copy(m, x.as_mut_ptr(), t.as_mut_ptr(), u.as_mut_ptr(), n), HtfStatus::Ok);
            (x, t, u)
        };
        let (ra, rb) = (read(a), read(b));
        assert_eq!(ra, rb);
        assert!(ra.0.iter().all(|&x| x > 1.0));
        let mut copy = ptr::null_mut();
        assert_eq!(htf_measurements_new(ra.0.as_ptr(), ra.1.as_ptr(), ra.2.as_ptr(), n, &mut copy), HtfStatus::Ok);
        assert_eq!(read(copy), ra);
        let mut bad = ptr::null_mut();
        assert_eq!(htf_generate_measurements(5.0, 0.24, 7, data.as_ptr(), &mut bad), HtfStatus::InvalidArgument);
        for m in [a, b, copy] {
            htf_measurements_free(m);
        }
    }
}

const NET: &str = r#"{"kind":"htf","d_model":4,"n_heads":2,"d_hidden":8,"n_layers":1,"head_hidden":[8,8],"activation":"laplace"}"#;

#[test]
fn forward_training_through_the_abi() {
    let forward = htf::training::ForwardConfig {
        epochs: 2,
        network: serde_json::from_str(NET).unwrap(),
        dataset: htf::sampling::SamplingConfig { layer_anchors: 2, substrate_anchors: 2, k: 3, t: 2, time_points: 4, budget: None, ..Default::default() },
        aux: htf::physics::AuxConfig { bc_points: 3, ic_points: 3, interface_points: 3, dx: 1e-3 },
        oracle: serde_json::from_str(SOLVER).unwrap(),
        eval: htf::training::EvalGrid { x_max: 2.0, dx: 0.5, t_start: 0.25, dt: 0.25 },
        ..htf::training::ForwardConfig::new(serde_json::from_str(PROBLEM).unwrap())
    };
    let json = c(&serde_json::to_string(&forward).unwrap());
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(htf_train_forward(json.as_ptr(), &mut run), HtfStatus::Ok, "{}", last_error());
        let mut epochs = 0;
        assert_eq!(htf_forward_epochs(run, &mut epochs), HtfStatus::Ok);
        assert_eq!(epochs, 2);
        let mut s = HtfErrorSummary::default();
        assert_eq!(htf_forward_summary(run, &mut s), HtfStatus::Ok);
        assert!(s.max_pointwise_l1.is_finite() && s.max_pointwise_l1 > 0.0);
        let mut pred = ptr::null_mut();
        assert_eq!(htf_forward_prediction(run, &mut pred), HtfStatus::Ok);
        let (mut nx, mut nt) = (0, 0);
        htf_field_shape(pred, &mut nx, &mut nt);
        assert_eq!((nx, nt), (5, 4));
        htf_field_free(pred);
        htf_forward_free(run);
    }
}

#[test]
fn inverse_estimate_stays_feasible() {
    let cfg = format!(
        r#"{{"problem":{PROBLEM},"seed":0,"init":{{"alpha":0.9,"kappa":0.9}},"stage_transition":2,"stage_b_epochs":2,"network":{NET},
           "dataset":{{"layer_anchors":2,"substrate_anchors":2,"k":3,"t":2,"time_points":4,"budget":null}},
           "aux":{{"bc_points":3,"ic_points":3,"interface_points":3}},"material_lr":0.05}}"#
    );
    let (x, t, u) = ([1.5, 2.0, 3.0], [0.5, 0.5, 1.0], [0.2, 0.1, 0.05]);
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(htf_measurements_new(x.as_ptr(), t.as_ptr(), u.as_ptr(), 3, &mut set), HtfStatus::Ok);
        let mut e = HtfEstimate::default();
        assert_eq!(htf_train_inverse(c(&cfg).as_ptr(), set, &mut e), HtfStatus::Ok, "{}", last_error());
        assert!((0.1..=0.9).contains(&e.alpha) && (0.01..=0.9).contains(&e.kappa));
        assert_abs_diff_eq!(e.rho_c, e.kappa / e.alpha, epsilon = 1e-15);
        htf_measurements_free(set);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/htf.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 18, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let version = unsafe { CStr::from_ptr(htf_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
