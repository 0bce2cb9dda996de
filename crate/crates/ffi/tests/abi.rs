use std::ffi::{CStr, CString};
use std::ptr;

use roughflow_ffi::*;

fn last_error() -> String {
    let p = rf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn covariance_and_errors() {
    let mut v = 0.0;
    assert_eq!(unsafe { rf_covariance(1.0, 1.0, 0.4, &mut v) }, RfStatus::Ok);
    assert!((v - 1.0).abs() < 1e-15);
    assert_eq!(unsafe { rf_covariance(1.0, 1.0, 1.5, &mut v) }, RfStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { rf_covariance(1.0, 1.0, 0.4, ptr::null_mut()) }, RfStatus::NullPointer);
}

#[test]
fn yamato_round_trip() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(rf_fields_yamato(&mut f), RfStatus::Ok);
        let (mut m, mut d) = (0, 0);
        assert_eq!(rf_fields_dims(f, &mut m, &mut d), RfStatus::Ok);
        assert_eq!((m, d), (3, 3));
        let mut nil = false;
        assert_eq!(rf_fields_is_nilpotent(f, 3, &mut nil), RfStatus::Ok);
        assert!(nil);
        let x = [1.0, 1.0, 1.0];
        let mut rank = 0;
        assert_eq!(rf_fields_hormander_rank(f, x.as_ptr(), 3, 2, &mut rank), RfStatus::Ok);
        assert_eq!(rank, 3);

        let mut p = ptr::null_mut();
        assert_eq!(rf_sample_fbm(0.4, 1.0, 65, 3, 7, 0, &mut p), RfStatus::Ok);
        let (mut n, mut dd) = (0, 0);
        assert_eq!(rf_path_len(p, &mut n, &mut dd), RfStatus::Ok);
        assert_eq!((n, dd), (65, 3));
        let mut vals = vec![0.0; n * dd];
        assert_eq!(rf_path_values(p, vals.as_mut_ptr(), vals.len()), RfStatus::Ok);
        assert_eq!(&vals[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(rf_path_values(p, vals.as_mut_ptr(), 3), RfStatus::InvalidArgument);

        let a = [0.5, -0.5, 0.25];
        let mut y1 = [0.0; 3];
        let mut y2 = [0.0; 3];
        assert_eq!(rf_strichartz_solve(f, p, 3, a.as_ptr(), 3, 1.0, y1.as_mut_ptr(), 3), RfStatus::Ok);
        assert_eq!(rf_yamato_explicit(p, a.as_ptr(), 1.0, y2.as_mut_ptr(), 3), RfStatus::Ok);
        for k in 0..3 {
            assert!((y1[k] - y2[k]).abs() < 1e-10);
        }

        let mut area = [0.0; 9];
        assert_eq!(rf_levy_area(p, 0.0, 1.0, area.as_mut_ptr(), 9), RfStatus::Ok);
        // Symmetric part of the second level is ½ B¹⊗B¹.
        let b = &vals[(n - 1) * 3..];
        assert!((area[1] + area[3] - b[0] * b[1]).abs() < 1e-12);

        rf_path_free(p);
        rf_fields_free(f);
        rf_fields_free(ptr::null_mut());
    }
}

#[test]
fn parse_and_path_from_values() {
    unsafe {
        let text = CString::new("2 1\nx2\n0\n").unwrap();
        let mut f = ptr::null_mut();
        assert_eq!(rf_fields_parse(text.as_ptr(), &mut f), RfStatus::Ok);
        let x = [0.0, 0.0];
        let mut rank = 9;
        assert_eq!(rf_fields_hormander_rank(f, x.as_ptr(), 2, 3, &mut rank), RfStatus::Ok);
        assert_eq!(rank, 0);
        // A single field is nilpotent of order 2 since [V,V] = 0.
        let mut nil = false;
        assert_eq!(rf_fields_is_nilpotent(f, 2, &mut nil), RfStatus::Ok);
        assert!(nil);
        rf_fields_free(f);

        let bad = CString::new("2 1\nx2 +\n0\n").unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(rf_fields_parse(bad.as_ptr(), &mut g), RfStatus::Parse);
        assert!(g.is_null());

        let values = [0.0, 1.0, 3.0];
        let mut p = ptr::null_mut();
        assert_eq!(rf_path_from_values(1.0, 3, 1, values.as_ptr(), &mut p), RfStatus::Ok);
        let mut out = [0.0];
        assert_eq!(rf_levy_area(p, 0.0, 1.0, out.as_mut_ptr(), 1), RfStatus::Ok);
        assert!((out[0] - 4.5).abs() < 1e-14);
        let mut y = [0.0; 3];
        let a = [0.0; 3];
        assert_eq!(rf_yamato_explicit(p, a.as_ptr(), 1.0, y.as_mut_ptr(), 3), RfStatus::InvalidArgument);
        rf_path_free(p);
    }
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/roughflow.h")).unwrap();
    for name in ["rf_sample_fbm", "rf_strichartz_solve", "RF_STATUS_OK", "RfFields"] {
        assert!(h.contains(name), "{name} missing from header");
    }
}
