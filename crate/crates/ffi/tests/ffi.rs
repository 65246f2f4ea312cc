use std::ffi::{CStr, CString};
use std::ptr;

use spikediff_ffi::*;

fn mlp_spec() -> SdNetSpec {
    SdNetSpec {
        arch: SdArch::Mlp,
        dim: 2,
        hidden: 16,
        channels: 0,
        height: 0,
        width: 0,
        t_snn: 2,
        t_diff: 20,
    }
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe {
        sd_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(sd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn create_predict_sample_free() {
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(sd_net_new(&mlp_spec(), 1, &mut net), SdStatus::Ok);
        assert!(sd_net_num_params(net) > 0);
        assert_eq!(sd_net_sample_len(net), 2);
        let x = [0.1f32, -0.2, 0.3, 0.4];
        let t = [5usize, 20];
        let mut y = [0f32; 4];
        assert_eq!(sd_net_predict(net, x.as_ptr(), t.as_ptr(), 2, y.as_mut_ptr(), 4), SdStatus::Ok);
        assert!(y.iter().all(|v| v.is_finite()));
        let mut a = [0f32; 6];
        let mut b = [0f32; 6];
        assert_eq!(sd_sample(net, SdSolver::Ddim, 5, 1.0, 7, 3, a.as_mut_ptr(), 6), SdStatus::Ok);
        assert_eq!(sd_sample(net, SdSolver::Ddim, 5, 1.0, 7, 3, b.as_mut_ptr(), 6), SdStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(sd_sample(net, SdSolver::Ddpm, 5, 0.0, 7, 3, a.as_mut_ptr(), 6), SdStatus::InvalidArgument);
        assert!(last_error().contains("must be > 0"));
        assert_eq!(sd_net_predict(net, x.as_ptr(), t.as_ptr(), 2, y.as_mut_ptr(), 3), SdStatus::Shape);
        sd_net_free(net);
    }
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.sdmc").to_str().unwrap()).unwrap();
    let mut net = ptr::null_mut();
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(sd_net_new(&mlp_spec(), 3, &mut net), SdStatus::Ok);
        assert_eq!(sd_net_save(net, path.as_ptr()), SdStatus::Ok);
        assert_eq!(sd_net_load(&mlp_spec(), path.as_ptr(), &mut back), SdStatus::Ok);
        let x = [0.5f32, 0.5];
        let mut a = [0f32; 2];
        let mut b = [0f32; 2];
        sd_net_predict(net, x.as_ptr(), &10, 1, a.as_mut_ptr(), 2);
        sd_net_predict(back, x.as_ptr(), &10, 1, b.as_mut_ptr(), 2);
        assert_eq!(a, b);
        let missing = CString::new("/nonexistent/x.sdmc").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(sd_net_load(&mlp_spec(), missing.as_ptr(), &mut none), SdStatus::Io);
        assert!(none.is_null());
        sd_net_free(net);
        sd_net_free(back);
    }
}

#[test]
fn null_and_invalid_arguments() {
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(sd_net_new(ptr::null(), 0, &mut net), SdStatus::NullPointer);
        let bad = SdNetSpec { t_snn: 0, ..mlp_spec() };
        assert_eq!(sd_net_new(&bad, 0, &mut net), SdStatus::InvalidArgument);
        assert_eq!(sd_net_set_threshold_scale(ptr::null_mut(), 1.0), SdStatus::NullPointer);
        assert_eq!(sd_net_num_params(ptr::null()), 0);
        sd_net_free(ptr::null_mut());
    }
}

#[test]
fn scalar_helpers() {
    let mut q = 0.0;
    unsafe {
        assert_eq!(sd_quantize_act(0.5, 1.0, 2, &mut q), SdStatus::Ok);
        assert_eq!(q, 2.0 / 3.0);
        assert_eq!(sd_if_firing_rate(0.5, 1.0, 3, &mut q), SdStatus::Ok);
        assert_eq!(q, 2.0 / 3.0);
        assert_eq!(sd_quantize_act(0.5, 0.0, 2, &mut q), SdStatus::InvalidArgument);
        assert!(last_error().contains("clipping threshold"));
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spikediff.h")).unwrap();
    for name in [
        "sd_net_new",
        "sd_net_load",
        "sd_net_save",
        "sd_net_free",
        "sd_net_predict",
        "sd_sample",
        "sd_last_error_message",
        "SD_STATUS_OK",
        "typedef struct SdNet SdNet",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
