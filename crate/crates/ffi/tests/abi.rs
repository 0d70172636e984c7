use std::ffi::{c_char, CString};
use std::ptr;

use pmefront_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { pmf_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn quadratic_pressure_round_trip() {
    unsafe {
        let mut p: *mut PmfProblem = ptr::null_mut();
        assert_eq!(pmf_problem_quadratic_pressure(2.0, 1, 1.0, 1.0, 51, &mut p), PmfStatus::Ok);
        let n = pmf_problem_node_count(p);
        assert_eq!(n, 51);

        let mut class = PmfClassification::Fails;
        assert_eq!(pmf_check_fichera(p, 1e-6, 1e-3, &mut class), PmfStatus::Ok);
        assert_eq!(class, PmfClassification::SatisfiesB);

        let mut run: *mut PmfRun = ptr::null_mut();
        assert_eq!(pmf_solve(p, 2e-3, 1.0, 1.02, 0, &mut run), PmfStatus::Ok);
        assert!((pmf_run_attained_t(run) - 1.02).abs() < 1e-9);

        let mut h = vec![f64::NAN; n];
        assert_eq!(pmf_run_final_height(run, h.as_mut_ptr(), n), PmfStatus::Ok);
        assert!(h.iter().all(|v| v.is_finite()));
        assert_eq!(pmf_run_final_height(run, h.as_mut_ptr(), n - 1), PmfStatus::BufferTooSmall);
        assert!(last_error().contains("buffer"));

        let mut count = 0usize;
        assert_eq!(pmf_run_front(run, ptr::null_mut(), 0, &mut count), PmfStatus::Ok);
        assert_eq!(count, 2);
        let mut pts = vec![0.0; count];
        assert_eq!(pmf_run_front(run, pts.as_mut_ptr(), pts.len(), &mut count), PmfStatus::Ok);
        assert!(pts[0] < 0.0 && pts[1] > 0.0);

        pmf_run_free(run);
        pmf_problem_free(p);
    }
}

#[test]
fn steep_exponent_reports_precondition_error() {
    unsafe {
        let mut p: *mut PmfProblem = ptr::null_mut();
        assert_eq!(pmf_problem_quadratic_pressure(3.0, 1, 1.0, 1.0, 51, &mut p), PmfStatus::Ok);
        let mut class = PmfClassification::Fails;
        assert_eq!(pmf_check_fichera(p, 1e-6, 1e-3, &mut class), PmfStatus::Ok);
        assert_eq!(class, PmfClassification::SatisfiesBDoublePrimeOnly);

        let mut run: *mut PmfRun = ptr::null_mut();
        assert_eq!(pmf_solve(p, 1e-3, 1.0, 1.01, 0, &mut run), PmfStatus::PreconditionError);
        assert!(run.is_null());
        assert!(last_error().contains("(B)"));
        pmf_problem_free(p);
    }
}

#[test]
fn bad_inputs_are_reported() {
    unsafe {
        let mut p: *mut PmfProblem = ptr::null_mut();
        let src = CString::new("1 - x^").unwrap();
        assert_eq!(pmf_problem_interval(1.5, -1.0, 1.0, 41, src.as_ptr(), &mut p), PmfStatus::ConfigError);
        assert!(p.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(pmf_problem_interval(1.5, -1.0, 1.0, 41, ptr::null(), &mut p), PmfStatus::NullPointer);
        assert_eq!(pmf_solve(ptr::null(), 1e-3, 0.0, 1.0, 0, ptr::null_mut()), PmfStatus::NullPointer);

        let ok = CString::new("1 - x^2").unwrap();
        assert_eq!(pmf_problem_interval(1.5, -1.0, 1.0, 41, ok.as_ptr(), &mut p), PmfStatus::Ok);
        assert!(last_error().is_empty());
        pmf_problem_free(p);
        pmf_problem_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pmefront.h")).unwrap();
    for f in [
        "pmf_last_error",
        "pmf_problem_quadratic_pressure",
        "pmf_problem_interval",
        "pmf_problem_free",
        "pmf_problem_node_count",
        "pmf_check_fichera",
        "pmf_solve",
        "pmf_run_free",
        "pmf_run_attained_t",
        "pmf_run_final_height",
        "pmf_run_front",
        "typedef struct PmfProblem PmfProblem",
        "PMF_STATUS_PRECONDITION_ERROR = 2",
    ] {
        assert!(header.contains(f), "{f}");
    }
}
