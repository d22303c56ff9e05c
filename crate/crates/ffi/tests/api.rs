use std::ffi::{CStr, CString};
use std::ptr;

use gcm_ffi::*;

fn last_error() -> String {
    let p = gcm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn ransac_round_trip_through_handles() {
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(gcm_template_set_standard(&mut set), GcmStatus::Ok);
        assert_eq!(gcm_template_set_len(set), 3);
        let n_slots = gcm_template_set_n_slots(set);
        assert_eq!(n_slots, 11);

        let mut scene = ptr::null_mut();
        assert_eq!(gcm_scene_generate(set, 0.0, 0.5, 0, 0, &mut scene), GcmStatus::Ok);
        let mut truth = vec![0usize; n_slots];
        assert_eq!(gcm_scene_ground_truth(scene, n_slots, truth.as_mut_ptr()), GcmStatus::Ok);

        let mut result = ptr::null_mut();
        assert_eq!(gcm_infer(scene, set, GcmMethod::Ransac, 0, &mut result), GcmStatus::Ok);
        assert!(gcm_result_converged(result));
        assert_eq!(gcm_result_n_labels(result), n_slots);
        let mut labels = vec![0usize; n_slots];
        assert_eq!(gcm_result_labels(result, labels.as_mut_ptr(), n_slots), GcmStatus::Ok);

        let mut m = GcmMetrics::default();
        assert_eq!(gcm_metrics(truth.as_ptr(), labels.as_ptr(), n_slots, &mut m), GcmStatus::Ok);
        assert_eq!(m, GcmMetrics { sa: 1.0, ari: 1.0, vi: 0.0, scene_acc: 1.0 });

        for k in 0..3 {
            let (mut pose, mut present) = (GcmPose::default(), false);
            assert_eq!(gcm_result_pose(result, k, &mut pose, &mut present), GcmStatus::Ok);
            assert_eq!(present, labels.contains(&(k + 1)));
        }

        let mut json = ptr::null_mut();
        assert_eq!(gcm_result_to_json(result, &mut json), GcmStatus::Ok);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("partition"));
        gcm_string_free(json);

        gcm_result_free(result);
        gcm_scene_free(scene);
        gcm_template_set_free(set);
    }
}

#[test]
fn scenes_from_points_and_json_agree() {
    unsafe {
        let xy = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let mut a = ptr::null_mut();
        assert_eq!(gcm_scene_from_points(xy.as_ptr(), 3, &mut a), GcmStatus::Ok);
        assert_eq!(gcm_scene_len(a), 3);
        let mut json = ptr::null_mut();
        assert_eq!(gcm_scene_to_json(a, &mut json), GcmStatus::Ok);
        let mut b = ptr::null_mut();
        assert_eq!(gcm_scene_from_json(json, &mut b), GcmStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(gcm_scene_to_json(b, &mut again), GcmStatus::Ok);
        assert_eq!(CStr::from_ptr(json), CStr::from_ptr(again));
        gcm_string_free(json);
        gcm_string_free(again);
        gcm_scene_free(a);
        gcm_scene_free(b);
    }
}

#[test]
fn variational_inference_reports_poses() {
    unsafe {
        let mut set = ptr::null_mut();
        let json = CString::new(r#"[{"id":"tri","parts":[{"x":-1,"y":-1},{"x":1,"y":-1},{"x":0,"y":1}]}]"#).unwrap();
        assert_eq!(gcm_template_set_from_json(json.as_ptr(), &mut set), GcmStatus::Ok, "{}", last_error());
        let xy = [-0.3, -0.3, 0.3, -0.3, 0.0, 0.3];
        let mut scene = ptr::null_mut();
        assert_eq!(gcm_scene_from_points(xy.as_ptr(), 3, &mut scene), GcmStatus::Ok);
        for method in [GcmMethod::Ds, GcmMethod::Gmm] {
            let mut result = ptr::null_mut();
            assert_eq!(gcm_infer(scene, set, method, 1, &mut result), GcmStatus::Ok, "{}", last_error());
            let (mut pose, mut present) = (GcmPose::default(), false);
            assert_eq!(gcm_result_pose(result, 0, &mut pose, &mut present), GcmStatus::Ok);
            assert!(present);
            assert!(pose.tx.abs() < 1e-3 && pose.ty.abs() < 1e-3);
            assert!((pose.sc - 0.3).abs() < 1e-3 && pose.ss.abs() < 1e-3);
            gcm_result_free(result);
        }
        gcm_scene_free(scene);
        gcm_template_set_free(set);
    }
}

#[test]
fn failures_set_status_and_message() {
    unsafe {
        assert_eq!(gcm_template_set_standard(ptr::null_mut()), GcmStatus::NullPointer);
        assert!(last_error().contains("out"));

        let mut set = ptr::null_mut();
        let bad = CString::new("[{").unwrap();
        assert_eq!(gcm_template_set_from_json(bad.as_ptr(), &mut set), GcmStatus::Parse);
        assert!(set.is_null());

        let mut scene = ptr::null_mut();
        assert_eq!(gcm_scene_from_points(ptr::null(), 0, &mut scene), GcmStatus::InvalidArgument);
        let nan = [f64::NAN, 0.0];
        assert_eq!(gcm_scene_from_points(nan.as_ptr(), 1, &mut scene), GcmStatus::InvalidArgument);

        assert_eq!(gcm_template_set_standard(&mut set), GcmStatus::Ok);
        assert!(gcm_last_error_message().is_null());
        let xy: Vec<f64> = (0..24).map(|i| i as f64 / 24.0).collect();
        assert_eq!(gcm_scene_from_points(xy.as_ptr(), 12, &mut scene), GcmStatus::Ok);
        let mut result = ptr::null_mut();
        assert_eq!(gcm_infer(scene, set, GcmMethod::Ds, 0, &mut result), GcmStatus::InvalidArgument);
        assert!(last_error().contains("12 points"));
        assert!(result.is_null());

        let mut labels = [0usize; 3];
        assert_eq!(gcm_scene_ground_truth(scene, 11, labels.as_mut_ptr()), GcmStatus::InvalidArgument);
        let (a, b) = ([1usize, 1], [1usize]);
        let mut m = GcmMetrics::default();
        assert_eq!(gcm_metrics(a.as_ptr(), b.as_ptr(), 0, &mut m), GcmStatus::InvalidArgument);

        gcm_scene_free(scene);
        gcm_template_set_free(set);
        gcm_scene_free(ptr::null_mut());
        gcm_result_free(ptr::null_mut());
        gcm_string_free(ptr::null_mut());
        assert_eq!(gcm_scene_len(ptr::null()), 0);
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(gcm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
