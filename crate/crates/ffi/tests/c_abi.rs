use std::ffi::{c_char, CStr, CString};
use std::ptr;

use miivgraph_ffi::*;

fn owned(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { miiv_string_free(s) };
    text
}

fn last_error() -> String {
    let p = miiv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn parse(src: &str) -> Result<*mut MiivModel, (MiivStatus, String)> {
    let src = CString::new(src).unwrap();
    let mut h = ptr::null_mut();
    match unsafe { miiv_model_parse(src.as_ptr(), &mut h) } {
        MiivStatus::Ok => Ok(h),
        s => {
            assert!(h.is_null());
            Err((s, last_error()))
        }
    }
}

const CROSS: &str = "l1 =~ y2 + y1 + λ13*y3\nl2 =~ y4 + y5 + λ23*y3\nl1 ~~ l2\n";

#[test]
fn identify_through_handle() {
    let h = parse(CROSS).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { miiv_identify_json(h, 0, 0, &mut out) }, MiivStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&owned(out)).unwrap();
    let y3 = report["equations"].as_array().unwrap().iter().find(|e| e["equation"] == "y3").unwrap();
    assert_eq!(y3["status"], "FullyIdentified");
    assert_eq!(y3["choices"][0]["instruments"], serde_json::json!(["y1", "y5"]));
    assert!(miiv_last_error().is_null());
    unsafe { miiv_model_free(h) };
}

#[test]
fn json_round_trip_and_transform() {
    let h = parse(CROSS).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { miiv_model_to_json(h, &mut json) }, MiivStatus::Ok);
    let json = CString::new(owned(json)).unwrap();
    let mut h2 = ptr::null_mut();
    assert_eq!(unsafe { miiv_model_from_json(json.as_ptr(), &mut h2) }, MiivStatus::Ok);
    let eq = CString::new("y3").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { miiv_transform_json(h2, eq.as_ptr(), &mut out) }, MiivStatus::Ok);
    let t: serde_json::Value = serde_json::from_str(&owned(out)).unwrap();
    assert_eq!(t["regressors"], serde_json::json!(["y4", "y2"]));
    unsafe {
        miiv_model_free(h);
        miiv_model_free(h2);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let (status, msg) = parse("y2 ~ y1\ny1 ~ y2\n").unwrap_err();
    assert_eq!(status, MiivStatus::ParseError);
    assert!(msg.contains("cycle"), "{msg}");

    let h = parse(CROSS).unwrap();
    let eq = CString::new("nope").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { miiv_transform_json(h, eq.as_ptr(), &mut out) }, MiivStatus::UnknownVariable);
    assert!(out.is_null());
    assert!(last_error().contains("nope"));

    assert_eq!(unsafe { miiv_identify_json(ptr::null(), 0, 0, &mut out) }, MiivStatus::NullArgument);
    let bad = [0xffu8, 0];
    let mut h2 = ptr::null_mut();
    assert_eq!(unsafe { miiv_model_parse(bad.as_ptr() as *const c_char, &mut h2) }, MiivStatus::InvalidUtf8);
    unsafe {
        miiv_model_free(h);
        miiv_model_free(ptr::null_mut());
        miiv_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/miivgraph.h");
    for f in [
        "miiv_model_parse",
        "miiv_model_from_json",
        "miiv_model_free",
        "miiv_model_to_json",
        "miiv_identify_json",
        "miiv_transform_json",
        "miiv_string_free",
        "miiv_last_error",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct MiivModel MiivModel;"));
}
