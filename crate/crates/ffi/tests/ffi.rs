use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use aquavis_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn cpath(p: &Path) -> CString {
    cstr(p.to_str().unwrap())
}

fn last_error() -> Option<String> {
    let p = aquavis_last_error_message();
    if p.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { aquavis_string_free(p) };
    Some(s)
}

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { aquavis_string_free(p) };
    s
}

fn image(h: usize, w: usize, data: &[f64]) -> *mut AquavisImage {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { aquavis_image_new(h, w, data.as_ptr(), &mut out) }, AquavisStatus::Ok);
    out
}

fn depth(h: usize, w: usize, data: &[f64]) -> *mut AquavisDepth {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { aquavis_depth_new(h, w, data.as_ptr(), &mut out) }, AquavisStatus::Ok);
    out
}

fn pixels(img: *const AquavisImage) -> Vec<f64> {
    let n = unsafe { aquavis_image_height(img) * aquavis_image_width(img) * 3 };
    let mut buf = vec![0.0; n];
    assert_eq!(unsafe { aquavis_image_copy_data(img, buf.as_mut_ptr(), n) }, AquavisStatus::Ok);
    buf
}

fn gradient(h: usize, w: usize) -> Vec<f64> {
    (0..h * w * 3).map(|i| 0.05 + 0.9 * (i as f64) / (h * w * 3) as f64).collect()
}

#[test]
fn degrade_then_restore_recovers_the_image() {
    let clean_px = gradient(3, 4);
    let z: Vec<f64> = (0..12).map(|i| 0.5 + 0.25 * i as f64).collect();
    let (beta, back) = ([0.3, 0.1, 0.05], [0.02, 0.08, 0.12]);
    unsafe {
        let clean = image(3, 4, &clean_px);
        let dep = depth(3, 4, &z);
        let (mut hazy, mut restored, mut clamped) = (ptr::null_mut(), ptr::null_mut(), usize::MAX);
        let s = aquavis_degrade(clean, dep, beta.as_ptr(), back.as_ptr(), &mut hazy, &mut clamped);
        assert_eq!(s, AquavisStatus::Ok);
        assert_eq!(clamped, 0);
        assert_eq!(aquavis_restore(hazy, dep, beta.as_ptr(), back.as_ptr(), &mut restored), AquavisStatus::Ok);
        for (a, b) in pixels(restored).iter().zip(&clean_px) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(last_error().is_none());
        aquavis_image_free(clean);
        aquavis_image_free(hazy);
        aquavis_image_free(restored);
        aquavis_depth_free(dep);
    }
}

#[test]
fn backscatter_comes_from_the_darkest_patch() {
    let mut px = vec![0.8; 4 * 4 * 3];
    // bottom-right 2x2 patch is dark
    for (y, x) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        let i = (y * 4 + x) * 3;
        px[i..i + 3].copy_from_slice(&[0.1, 0.2, 0.3]);
    }
    unsafe {
        let img = image(4, 4, &px);
        let (mut rgb, mut k) = ([0.0; 3], usize::MAX);
        assert_eq!(aquavis_estimate_backscatter(img, 2, rgb.as_mut_ptr(), &mut k), AquavisStatus::Ok);
        assert_eq!(k, 3);
        assert_eq!(rgb, [0.1, 0.2, 0.3]);
        assert_eq!(aquavis_estimate_backscatter(img, 0, rgb.as_mut_ptr(), ptr::null_mut()), AquavisStatus::InvalidArgument);
        aquavis_image_free(img);
    }
}

#[test]
fn failures_map_to_status_codes_and_messages() {
    unsafe {
        let mut img = ptr::null_mut();
        assert_eq!(aquavis_image_new(2, 2, ptr::null(), &mut img), AquavisStatus::NullPointer);
        assert!(img.is_null());
        assert!(last_error().unwrap().contains("data"));

        let short = [0.5; 5];
        assert_eq!(aquavis_image_new(1, 1, short.as_ptr(), ptr::null_mut()), AquavisStatus::NullPointer);
        assert_eq!(aquavis_image_new(usize::MAX, 2, short.as_ptr(), &mut img), AquavisStatus::InvalidArgument);
        let bad = [1.5, 0.0, 0.0];
        assert_ne!(aquavis_image_new(1, 1, bad.as_ptr(), &mut img), AquavisStatus::Ok);

        let a = image(2, 2, &gradient(2, 2));
        let d = depth(2, 3, &[1.0; 6]);
        let mut out = ptr::null_mut();
        let s = aquavis_degrade(a, d, [0.1; 3].as_ptr(), [0.0; 3].as_ptr(), &mut out, ptr::null_mut());
        assert_eq!(s, AquavisStatus::Dimension);
        assert!(last_error().unwrap().contains("dimension"));
        assert_eq!(aquavis_restore(ptr::null(), d, [0.1; 3].as_ptr(), [0.0; 3].as_ptr(), &mut out), AquavisStatus::NullPointer);

        let mut buf = [0.0; 3];
        assert_eq!(aquavis_image_copy_data(a, buf.as_mut_ptr(), 3), AquavisStatus::Dimension);

        let missing = cstr("/nonexistent/depth.uwdm");
        let mut dm = ptr::null_mut();
        assert_eq!(aquavis_depth_read(missing.as_ptr(), &mut dm), AquavisStatus::Io);
        assert!(last_error().unwrap().contains("/nonexistent/depth.uwdm"));

        // a successful call clears the message
        assert_eq!(aquavis_image_height(a), 2);
        let _ = pixels(a);
        assert!(last_error().is_none());
        aquavis_image_free(a);
        aquavis_depth_free(d);
    }
}

#[test]
fn null_handles_are_harmless_to_query_and_free() {
    unsafe {
        assert_eq!(aquavis_image_height(ptr::null()), 0);
        assert_eq!(aquavis_image_width(ptr::null()), 0);
        aquavis_image_free(ptr::null_mut());
        aquavis_depth_free(ptr::null_mut());
        aquavis_vfe_params_free(ptr::null_mut());
        aquavis_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(aquavis_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn png_and_depth_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let png = cpath(&dir.path().join("img.png"));
    unsafe {
        let img = image(3, 5, &gradient(3, 5));
        assert_eq!(aquavis_image_write_png(img, png.as_ptr(), 16), AquavisStatus::Ok);
        assert_eq!(aquavis_image_write_png(img, png.as_ptr(), 12), AquavisStatus::InvalidArgument);
        let (mut back, mut bits) = (ptr::null_mut(), 0u32);
        assert_eq!(aquavis_image_read_png(png.as_ptr(), &mut back, &mut bits), AquavisStatus::Ok);
        assert_eq!(bits, 16);
        assert_eq!((aquavis_image_height(back), aquavis_image_width(back)), (3, 5));
        for (a, b) in pixels(back).iter().zip(pixels(img)) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
        aquavis_image_free(img);
        aquavis_image_free(back);
    }

    let raw = dir.path().join("d.uwdm");
    let mut bytes = b"UWDM".to_vec();
    bytes.extend(2u16.to_le_bytes());
    bytes.extend(2u16.to_le_bytes());
    for z in [1.0f32, 2.0, 3.5, 4.25] {
        bytes.extend(z.to_le_bytes());
    }
    std::fs::write(&raw, &bytes).unwrap();
    let raw = cpath(&raw);
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(aquavis_depth_read(raw.as_ptr(), &mut d), AquavisStatus::Ok);
        // the depth map drives a degrade of matching size
        let img = image(2, 2, &gradient(2, 2));
        let mut out = ptr::null_mut();
        let s = aquavis_degrade(img, d, [0.0; 3].as_ptr(), [0.0; 3].as_ptr(), &mut out, ptr::null_mut());
        assert_eq!(s, AquavisStatus::Ok);
        assert_eq!(pixels(out), gradient(2, 2));
        aquavis_image_free(out);
        aquavis_image_free(img);
        aquavis_depth_free(d);
    }
}

#[test]
fn enhancement_runs_through_the_handle_api() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = cpath(&dir.path().join("vfe.json"));
    let (d, e, h) = (4, 3, 5);
    let vision: Vec<f64> = (0..6 * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let dep: Vec<f64> = (0..4 * e).map(|i| (i as f64) / 10.0).collect();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(aquavis_vfe_params_init(d, e, h, 10.0, 3, &mut p), AquavisStatus::Ok);
        let mut a = vec![0.0; 6 * d];
        let s = aquavis_vfe_enhance(p, vision.as_ptr(), 2, 3, 4, dep.as_ptr(), 2, 2, a.as_mut_ptr());
        assert_eq!(s, AquavisStatus::Ok);
        assert!(a.iter().all(|x| x.is_finite()));

        assert_eq!(aquavis_vfe_params_save(p, ckpt.as_ptr()), AquavisStatus::Ok);
        let mut q = ptr::null_mut();
        assert_eq!(aquavis_vfe_params_load(ckpt.as_ptr(), &mut q), AquavisStatus::Ok);
        let mut b = vec![0.0; 6 * d];
        let s = aquavis_vfe_enhance(q, vision.as_ptr(), 2, 3, 4, dep.as_ptr(), 2, 2, b.as_mut_ptr());
        assert_eq!(s, AquavisStatus::Ok);
        assert_eq!(a, b);

        let s = aquavis_vfe_enhance(p, vision.as_ptr(), 2, 3, 6, dep.as_ptr(), 2, 2, b.as_mut_ptr());
        assert_eq!(s, AquavisStatus::Dimension);
        assert_eq!(aquavis_vfe_params_init(0, e, h, 10.0, 3, &mut q), AquavisStatus::InvalidArgument);

        aquavis_vfe_params_free(p);
        aquavis_vfe_params_free(q);
    }
    std::fs::write(dir.path().join("vfe.json"), "{\"tensors\": 3}").unwrap();
    let mut q = ptr::null_mut();
    let s = unsafe { aquavis_vfe_params_load(ckpt.as_ptr(), &mut q) };
    assert_ne!(s, AquavisStatus::Ok);
    assert!(q.is_null());
}

#[test]
fn selfcheck_returns_a_json_report() {
    let mut json = ptr::null_mut();
    let s = unsafe { aquavis_vfe_selfcheck(ptr::null(), 7, 4, 3, 4, 10.0, &mut json) };
    assert_eq!(s, AquavisStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["d"], 4);
    let checks = report["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["status"] != "fail"));
}

#[test]
fn evaluation_of_gold_answers_is_perfect() {
    let gold = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden/qa.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.jsonl");
    let lines: Vec<String> = std::fs::read_to_string(&gold)
        .unwrap()
        .lines()
        .map(|l| {
            let r: serde_json::Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"id": r["id"], "task": r["task"], "output_text": r["answer"]}).to_string()
        })
        .collect();
    std::fs::write(&preds, lines.join("\n")).unwrap();

    let (p, g) = (cpath(&preds), cpath(&gold));
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { aquavis_evaluate_files(p.as_ptr(), g.as_ptr(), ptr::null(), &mut json) }, AquavisStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["overall"]["tasks"]["grounding"]["metrics"]["miou"], 1.0);
    assert_eq!(report["overall"]["records"], lines.len());

    let murky = cstr("murky");
    let s = unsafe { aquavis_evaluate_files(p.as_ptr(), g.as_ptr(), murky.as_ptr(), &mut json) };
    assert_ne!(s, AquavisStatus::Ok);
    assert!(last_error().unwrap().contains("murky"));
}

#[test]
fn header_declares_every_exported_function() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/aquavis.h")).unwrap();
    let source = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 20, "{exported:?}");
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("AQUAVIS_STATUS_NULL_POINTER = 1"));
}

#[test]
fn c_program_links_against_the_static_library() {
    let Ok(exe) = std::env::current_exe() else { return };
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libaquavis_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link test: no static library or C compiler");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("smoke ok"));
}
