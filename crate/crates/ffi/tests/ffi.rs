use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mfamp_ffi::*;

fn params(pi: f64, eta: f64) -> MfampParams {
    MfampParams {
        alpha: 0.5,
        pi,
        rho: 0.2,
        delta: 1e-8,
        eta,
    }
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { mfamp_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn instance_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("i.mfamp").to_str().unwrap()).unwrap();
    let mut inst = ptr::null_mut();
    unsafe {
        assert_eq!(mfamp_instance_generate(&params(2.0, 1e-2), 16, 4, &mut inst), MfampStatus::Ok);
        assert_eq!(mfamp_instance_save(inst, path.as_ptr()), MfampStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mfamp_instance_load(path.as_ptr(), &mut back), MfampStatus::Ok);
        let (mut n, mut m, mut p) = (0, 0, 0);
        assert_eq!(mfamp_instance_dims(back, &mut n, &mut m, &mut p), MfampStatus::Ok);
        let mut a = vec![0.0; m * p];
        let mut b = vec![0.0; m * p];
        assert_eq!(mfamp_instance_copy_y(inst, a.as_mut_ptr(), a.len()), MfampStatus::Ok);
        assert_eq!(mfamp_instance_copy_y(back, b.as_mut_ptr(), b.len()), MfampStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(
            mfamp_instance_copy_y(back, b.as_mut_ptr(), b.len() - 1),
            MfampStatus::BufferTooSmall
        );
        mfamp_instance_free(back);
        mfamp_instance_free(inst);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut inst = ptr::null_mut();
        let bad = MfampParams { rho: 1.5, ..params(2.0, 1e-2) };
        assert_eq!(mfamp_instance_generate(&bad, 16, 1, &mut inst), MfampStatus::InvalidArgument);
        assert!(last_error().contains("rho"));
        assert_eq!(mfamp_instance_generate(ptr::null(), 16, 1, &mut inst), MfampStatus::NullPointer);

        let missing = CString::new("/nonexistent/file.mfamp").unwrap();
        assert_eq!(mfamp_instance_load(missing.as_ptr(), &mut inst), MfampStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"not an instance at all").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(mfamp_instance_load(junk.as_ptr(), &mut inst), MfampStatus::Format);

        let mut phi = 0.0;
        assert_eq!(mfamp_potential(&params(2.0, 1e-2), 0.5, 0.5, &mut phi), MfampStatus::Numerical);
        // Success clears the message.
        assert_eq!(mfamp_potential(&params(2.0, 1e-2), 0.1, 0.5, &mut phi), MfampStatus::Ok);
        assert_eq!(mfamp_last_error(ptr::null_mut(), 0), 0);
    }
}

#[test]
fn amp_run_matches_the_library() {
    let p = mfamp::ModelParams::new(0.5, 3.0, 0.2, 1e-8, mfamp::Eta::Finite(1e-2)).unwrap();
    let direct = mfamp::amp::run_amp(
        &mfamp::instance::generate_instance(p, 20, 9).unwrap(),
        &mfamp::amp::AmpOptions {
            max_iter: 15,
            ..Default::default()
        },
    )
    .unwrap();
    unsafe {
        let mut inst = ptr::null_mut();
        assert_eq!(mfamp_instance_generate(&params(3.0, 1e-2), 20, 9, &mut inst), MfampStatus::Ok);
        let mut opts = std::mem::zeroed();
        assert_eq!(mfamp_amp_options_default(&mut opts), MfampStatus::Ok);
        opts.max_iter = 15;
        let mut res = ptr::null_mut();
        assert_eq!(mfamp_amp_run(inst, &opts, &mut res), MfampStatus::Ok);
        let mut len = 0;
        assert_eq!(mfamp_amp_result_len(res, &mut len), MfampStatus::Ok);
        assert_eq!(len, direct.trajectory.len());
        for (k, tp) in direct.trajectory.iter().enumerate() {
            let mut pt = MfampPoint::default();
            assert_eq!(mfamp_amp_result_point(res, k, &mut pt), MfampStatus::Ok);
            assert_eq!((pt.e, pt.d, pt.residual), (tp.e, tp.d, tp.residual));
        }
        let mut pt = MfampPoint::default();
        assert_eq!(mfamp_amp_result_point(res, len, &mut pt), MfampStatus::InvalidArgument);
        let (mut conv, mut iters, mut clamped) = (0u8, 0u64, 0u64);
        assert_eq!(mfamp_amp_result_summary(res, &mut conv, &mut iters, &mut clamped), MfampStatus::Ok);
        assert_eq!(iters as usize, direct.iterations);
        let mut a = vec![0.0; 20 * 2 * 20 * 3 / 2];
        assert_eq!(mfamp_amp_result_copy_signal(res, a.as_mut_ptr(), a.len()), MfampStatus::Ok);
        assert_eq!(a[..direct.a.len()], direct.a.iter().copied().collect::<Vec<_>>()[..]);
        mfamp_amp_result_free(res);
        mfamp_instance_free(inst);
        mfamp_amp_result_free(ptr::null_mut());
    }
}

#[test]
fn theory_entry_points() {
    unsafe {
        let (mut e, mut d, mut phi, mut conv) = (0.0, 0.0, 0.0, 0u8);
        assert_eq!(mfamp_se_run(&params(4.0, 1e-2), 0, 0.0, &mut e, &mut d, &mut conv), MfampStatus::Ok);
        assert!(conv == 1 && e < 1e-7);
        assert_eq!(mfamp_mmse(&params(1.5, 1e-2), &mut e, &mut d, &mut phi), MfampStatus::Ok);
        assert!(e > 1e-4);
        let mut star = 0.0;
        assert_eq!(mfamp_pi_star(0.5, 0.25, &mut star), MfampStatus::Ok);
        assert_eq!(star, 2.0);
        let mut kind = MfampSpinodalKind::BeyondRange;
        let mut v = 0.0;
        assert_eq!(mfamp_spinodal_pi(0.5, 0.2, 1e-10, 0.0, 1e-2, &mut kind, &mut v), MfampStatus::Ok);
        assert_eq!(kind, MfampSpinodalKind::NoHardPhase);
        assert!(v.is_nan());
        assert_eq!(mfamp_potential(&params(2.0, f64::INFINITY), 0.2, 1.0, &mut phi), MfampStatus::Ok);
        let v = CStr::from_ptr(mfamp_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn header_is_current_and_c_program_links() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/mfamp.h")).unwrap();
    for f in ["mfamp_instance_generate", "mfamp_amp_run", "mfamp_spinodal_pi", "MFAMP_STATUS_DIVERGENCE"] {
        assert!(header.contains(f), "{f} missing from header");
    }
    // The static library sits next to the deps directory holding this test.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmfamp_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link check: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
