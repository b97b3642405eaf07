use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use udc_core::discnet::{build_network, NetworkConfig};
use udc_core::io::write_model;
use udc_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = udc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn image(w: usize, h: usize, f: impl Fn(usize) -> f64) -> *mut UdcImage {
    let data: Vec<f64> = (0..3 * w * h).map(f).collect();
    let mut img = ptr::null_mut();
    assert_eq!(udc_image_new(w, h, data.as_ptr(), &mut img), UdcStatus::Ok);
    img
}

#[test]
fn image_round_trip_through_pfm() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&dir.path().join("a.pfm"));
    unsafe {
        let img = image(5, 4, |i| i as f64 / 64.0);
        assert_eq!((udc_image_width(img), udc_image_height(img)), (5, 4));
        assert_eq!(udc_image_write_pfm(img, path.as_ptr()), UdcStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(udc_image_read_pfm(path.as_ptr(), &mut back), UdcStatus::Ok);
        let mut buf = vec![0.0; 60];
        assert_eq!(udc_image_copy(back, buf.as_mut_ptr(), buf.len()), UdcStatus::Ok);
        assert!(buf.iter().enumerate().all(|(i, &v)| v == i as f64 / 64.0));
        assert_eq!(udc_image_copy(back, buf.as_mut_ptr(), 59), UdcStatus::Shape);

        let mut p = 0.0;
        assert_eq!(udc_psnr(img, back, 1.0, &mut p), UdcStatus::Ok);
        assert!(p.is_infinite() && p > 0.0);
        assert_eq!(udc_ssim(img, back, &mut p), UdcStatus::Ok);
        assert!((p - 1.0).abs() < 1e-12);
        udc_image_free(img);
        udc_image_free(back);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut img = ptr::null_mut();
        assert_eq!(udc_image_new(2, 2, ptr::null(), &mut img), UdcStatus::NullPointer);
        assert!(img.is_null());
        assert!(last_error().contains("rgb"));

        let missing = CString::new("/nonexistent/x.pfm").unwrap();
        assert_eq!(udc_image_read_pfm(missing.as_ptr(), &mut img), UdcStatus::Io);
        assert!(last_error().contains("/nonexistent/x.pfm"));

        let mut psf = ptr::null_mut();
        assert_eq!(udc_psf_gaussian(4, 1.0, &mut psf), UdcStatus::Shape);
        assert_eq!(udc_psf_gaussian(9, 1.0, &mut psf), UdcStatus::Ok);
        let mut rot = ptr::null_mut();
        assert_eq!(udc_psf_rotate(psf, 60.0, &mut rot), UdcStatus::InvalidArgument);
        assert!(rot.is_null());

        let a = image(8, 8, |_| 0.5);
        let b = image(4, 4, |_| 0.5);
        let mut v = 0.0;
        assert_eq!(udc_psnr(a, b, 1.0, &mut v), UdcStatus::Shape);
        assert_eq!(udc_psnr(a, ptr::null(), 1.0, &mut v), UdcStatus::NullPointer);

        // freeing null is a no-op
        udc_image_free(ptr::null_mut());
        udc_psf_free(psf);
        udc_image_free(a);
        udc_image_free(b);
    }
    let v = unsafe { CStr::from_ptr(udc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn degrade_then_wiener() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let scene = image(32, 32, |i| 0.5 + (i % 11) as f64 * 0.1);
        let mut psf = ptr::null_mut();
        assert_eq!(udc_psf_gaussian(9, 1.0, &mut psf), UdcStatus::Ok);
        let psf_path = cpath(&dir.path().join("k.pfm"));
        assert_eq!(udc_psf_write(psf, psf_path.as_ptr()), UdcStatus::Ok);
        let mut psf2 = ptr::null_mut();
        assert_eq!(udc_psf_read(psf_path.as_ptr(), &mut psf2), UdcStatus::Ok);
        assert_eq!(udc_psf_size(psf2), 9);

        let (mut deg, mut tgt) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(udc_simulate_degraded(scene, psf2, 500.0, 0.25, 0.0, 0, &mut deg, &mut tgt), UdcStatus::Ok);
        let nsr = [1e-4; 3];
        let mut restored = ptr::null_mut();
        assert_eq!(
            udc_wiener(deg, psf2, nsr.as_ptr(), 0.25, UdcBoundary::ZeroScene, &mut restored),
            UdcStatus::Ok
        );
        let (mut before, mut after) = (0.0, 0.0);
        assert_eq!(udc_psnr(deg, tgt, 1.0, &mut before), UdcStatus::Ok);
        assert_eq!(udc_psnr(restored, tgt, 1.0, &mut after), UdcStatus::Ok);
        assert!(after > before, "{after} <= {before}");
        for p in [scene, deg, tgt, restored] {
            udc_image_free(p);
        }
        udc_psf_free(psf);
        udc_psf_free(psf2);
    }
}

#[test]
fn model_inference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig {
        base_channels: 2,
        code_dim: 3,
        filter_size: 3,
        ..NetworkConfig::default()
    };
    let path = dir.path().join("m.udcn");
    write_model(&path, &build_network(&cfg, 1).unwrap()).unwrap();
    let path = cpath(&path);
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(udc_model_read(path.as_ptr(), &mut model), UdcStatus::Ok);
        assert_eq!(udc_model_code_dim(model), 3);
        let img = image(20, 12, |i| (i % 7) as f64 / 7.0);
        let code = [0.1, -0.2, 0.3];
        let mut out = ptr::null_mut();
        assert_eq!(udc_model_infer(model, img, code.as_ptr(), 3, 0, 0, &mut out), UdcStatus::Ok);
        assert_eq!((udc_image_width(out), udc_image_height(out)), (20, 12));
        let mut bad = ptr::null_mut();
        assert_eq!(udc_model_infer(model, img, code.as_ptr(), 2, 0, 0, &mut bad), UdcStatus::Shape);
        udc_image_free(out);
        udc_image_free(img);
        udc_model_free(model);
    }
}

#[test]
fn header_declares_exports_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/udc.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exported.len() > 20);
    for name in exported {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct UdcImage UdcImage;", "UDC_STATUS_OK = 0", "UDC_BOUNDARY_ZERO_SCENE = 1"] {
        assert!(text.contains(ty), "{ty}");
    }

    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("use.c");
    std::fs::write(
        &c,
        "#include \"udc.h\"\nint main(void) {\n  UdcPsf *psf = 0;\n  UdcStatus s = udc_psf_gaussian(9, 1.0, &psf);\n  udc_psf_free(psf);\n  return s == UDC_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&c)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
