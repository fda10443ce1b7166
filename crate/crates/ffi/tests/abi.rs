use std::ffi::{CStr, CString};
use std::ptr;

use gave_ffi::*;

fn last_error() -> String {
    let p = gave_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const IDENTITY: [f64; 16] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];

#[test]
fn oracle_registration_through_handles() {
    unsafe {
        let (mut r, mut t) = (ptr::null_mut(), ptr::null_mut());
        let mut gt = [0.0; 16];
        let params = CString::new("width=96,height=72").unwrap();
        assert_eq!(gave_synth_pair(11, params.as_ptr(), &mut r, &mut t, gt.as_mut_ptr()), GaveStatus::Ok);
        let (mut w, mut h) = (0, 0);
        assert_eq!(gave_frame_size(r, &mut w, &mut h), GaveStatus::Ok);
        assert_eq!((w, h), (96, 72));

        let mut est = [0.0; 16];
        assert_eq!(gave_register_oracle(r, t, gt.as_ptr(), ptr::null(), est.as_mut_ptr()), GaveStatus::Ok);
        let (mut rot, mut tr) = (0.0, 0.0);
        assert_eq!(gave_pose_error(est.as_ptr(), gt.as_ptr(), &mut rot, &mut tr), GaveStatus::Ok);
        assert!(rot < 0.5 && tr < 5.0, "{rot} deg, {tr} mm");
        gave_frame_free(r);
        gave_frame_free(t);
    }
}

#[test]
fn model_registration_of_identical_frames_is_identity() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(gave_config_new(&mut cfg), GaveStatus::Ok);
        let mut model = ptr::null_mut();
        assert_eq!(gave_model_from_seed(cfg, 3, &mut model), GaveStatus::Ok);
        let (mut r, mut t) = (ptr::null_mut(), ptr::null_mut());
        let mut gt = [0.0; 16];
        let params = CString::new("width=64,height=48").unwrap();
        assert_eq!(gave_synth_pair(12, params.as_ptr(), &mut r, &mut t, gt.as_mut_ptr()), GaveStatus::Ok);
        let mut est = [0.0; 16];
        assert_eq!(gave_register(r, r, model, cfg, est.as_mut_ptr()), GaveStatus::Ok);
        for (a, b) in est.iter().zip(IDENTITY) {
            assert!((a - b).abs() < 1e-9);
        }
        gave_frame_free(r);
        gave_frame_free(t);
        gave_model_free(model);
        gave_config_free(cfg);
    }
}

#[test]
fn config_rejects_unknown_keys() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(gave_config_new(&mut cfg), GaveStatus::Ok);
        let (k, v) = (CString::new("no_such_key").unwrap(), CString::new("1").unwrap());
        assert_eq!(gave_config_set(cfg, k.as_ptr(), v.as_ptr()), GaveStatus::Config);
        assert!(last_error().contains("no_such_key"));
        gave_config_free(cfg);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(gave_config_new(ptr::null_mut()), GaveStatus::NullPointer);
        assert!(last_error().contains("out"));

        let path = CString::new("/nonexistent/weights.lltw").unwrap();
        assert_eq!(gave_model_load(ptr::null(), path.as_ptr(), &mut out), GaveStatus::Io);
        assert!(last_error().contains("/nonexistent/weights.lltw"));

        let mut pose = [0.0; 16];
        let x = [0.0; 9];
        assert_eq!(gave_procrustes(3, x.as_ptr(), x.as_ptr(), [1.0; 3].as_ptr(), pose.as_mut_ptr()), GaveStatus::Degenerate);

        let mut bad = IDENTITY;
        bad[0] = 2.0;
        let (mut a, mut b) = (0.0, 0.0);
        assert_ne!(gave_pose_error(bad.as_ptr(), IDENTITY.as_ptr(), &mut a, &mut b), GaveStatus::Ok);
    }
}

#[test]
fn procrustes_recovers_translation() {
    let x = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0];
    let y: Vec<f64> = x.chunks(3).flat_map(|p| [p[0] + 0.5, p[1] - 1.0, p[2] + 2.0]).collect();
    let mut pose = [0.0; 16];
    let st = unsafe { gave_procrustes(4, x.as_ptr(), y.as_ptr(), [1.0; 4].as_ptr(), pose.as_mut_ptr()) };
    assert_eq!(st, GaveStatus::Ok);
    for (i, want) in [(3, 0.5), (7, -1.0), (11, 2.0), (0, 1.0), (5, 1.0), (10, 1.0)] {
        assert!((pose[i] - want).abs() < 1e-12, "{i}: {}", pose[i]);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(gave_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
