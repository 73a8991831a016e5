use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use multiver_ffi::*;

fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn cstr(s: impl AsRef<str>) -> CString {
    CString::new(s.as_ref()).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    mv_string_free(s);
    out
}

unsafe fn last_error() -> String {
    CStr::from_ptr(mv_last_error()).to_str().unwrap().to_owned()
}

unsafe fn open_channel() -> *mut MvChannel {
    let mut ch = ptr::null_mut();
    let path = cstr(fixtures().join("channel").to_str().unwrap());
    assert_eq!(mv_channel_open(path.as_ptr(), &mut ch), MvStatus::Ok);
    ch
}

#[test]
fn deploy_build_and_replay() {
    unsafe {
        let ch = open_channel();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (mut sa, mut sb) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            mv_store_open(cstr(a.path().to_str().unwrap()).as_ptr(), &mut sa),
            MvStatus::Ok
        );
        assert_eq!(
            mv_store_open(cstr(b.path().to_str().unwrap()).as_ptr(), &mut sb),
            MvStatus::Ok
        );

        let spec = cstr("minikernel-bench");
        let opt = cstr("--tune=skylake");
        let rev = cstr("r1");
        let mut dep = ptr::null_mut();
        let status = mv_deploy(
            ch,
            sa,
            rev.as_ptr(),
            &spec.as_ptr(),
            1,
            &opt.as_ptr(),
            1,
            &mut dep,
        );
        assert_eq!(status, MvStatus::Ok);
        assert_eq!(mv_deployment_root_count(dep), 1);
        let mut s = ptr::null_mut();
        assert_eq!(mv_deployment_root(dep, 0, &mut s), MvStatus::Ok);
        let root = take(s);
        assert!(a.path().join(&root).is_dir());

        assert_eq!(mv_deployment_manifest(dep, &mut s), MvStatus::Ok);
        let manifest = take(s);
        assert!(manifest.contains("\"argument\": \"skylake\""));

        let mut replayed = ptr::null_mut();
        let m = cstr(&manifest);
        assert_eq!(
            mv_replay_manifest(ch, sb, m.as_ptr(), &mut replayed),
            MvStatus::Ok
        );
        assert_eq!(mv_deployment_root(replayed, 0, &mut s), MvStatus::Ok);
        assert_eq!(take(s), root);
        assert!(b.path().join(&root).is_dir());

        assert_eq!(mv_deployment_root(dep, 5, &mut s), MvStatus::InvalidInput);

        mv_deployment_free(replayed);
        mv_deployment_free(dep);
        mv_store_free(sa);
        mv_store_free(sb);
        mv_channel_free(ch);
    }
}

#[test]
fn lowering_without_store_matches_golden_path() {
    unsafe {
        let ch = open_channel();
        let spec = cstr("hello");
        let mut dep = ptr::null_mut();
        let status = mv_deploy(
            ch,
            ptr::null(),
            cstr("r1").as_ptr(),
            &spec.as_ptr(),
            1,
            ptr::null(),
            0,
            &mut dep,
        );
        assert_eq!(status, MvStatus::Ok);
        let mut s = ptr::null_mut();
        mv_deployment_root(dep, 0, &mut s);
        let golden: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(
                Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/digests.json"),
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(
            take(s),
            golden["r1"]["untuned"]["hello"]["store_path"]
                .as_str()
                .unwrap()
        );
        mv_deployment_free(dep);
        mv_channel_free(ch);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let ch = open_channel();
        let mut s = ptr::null_mut();
        assert_eq!(
            mv_channel_resolve(ch, cstr("deadbeef").as_ptr(), &mut s),
            MvStatus::InvalidInput
        );
        assert!(last_error().contains("r1"));
        assert_eq!(
            mv_channel_resolve(ch, ptr::null(), &mut s),
            MvStatus::NullArgument
        );
        assert_eq!(
            mv_channel_resolve(ch, cstr("r1").as_ptr(), &mut s),
            MvStatus::Ok
        );
        assert_eq!(take(s), "dc76980cf3cc8552");
        assert!(mv_last_error().is_null());

        let spec = cstr("hello");
        let auto = cstr("--tune");
        let mut dep = ptr::null_mut();
        let status = mv_deploy(
            ch,
            ptr::null(),
            ptr::null(),
            &spec.as_ptr(),
            1,
            &auto.as_ptr(),
            1,
            &mut dep,
        );
        assert_eq!(status, MvStatus::InvalidInput);
        let bad = cstr("--tune=sky1ake");
        let status = mv_deploy(
            ch,
            ptr::null(),
            ptr::null(),
            &spec.as_ptr(),
            1,
            &bad.as_ptr(),
            1,
            &mut dep,
        );
        assert_eq!(status, MvStatus::InvalidInput);
        assert!(last_error().contains("skylake-avx512"));

        let invalid = [0xffu8, 0];
        assert_eq!(
            mv_channel_resolve(ch, invalid.as_ptr().cast(), &mut s),
            MvStatus::InvalidUtf8
        );
        mv_channel_free(ch);
    }
}

#[test]
fn cpu_queries() {
    unsafe {
        let text = std::fs::read_to_string(fixtures().join("cpuinfo/skylake-i7.cpuinfo")).unwrap();
        let info = cstr(&text);
        let mut s = ptr::null_mut();
        assert_eq!(mv_cpu_detect(info.as_ptr(), &mut s), MvStatus::Ok);
        assert_eq!(take(s), "skylake");
        let mut ok = true;
        assert_eq!(
            mv_cpu_is_compatible(cstr("skylake-avx512").as_ptr(), info.as_ptr(), &mut ok),
            MvStatus::Ok
        );
        assert!(!ok);
        assert_eq!(
            mv_cpu_is_compatible(cstr("haswell").as_ptr(), info.as_ptr(), &mut ok),
            MvStatus::Ok
        );
        assert!(ok);
        assert_eq!(
            mv_cpu_detect(cstr("no flags here:").as_ptr(), &mut s),
            MvStatus::InvalidInput
        );
    }
}

#[test]
fn header_declares_every_export() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let src = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();
    let header = std::fs::read_to_string(root.join("include/multiver.h")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for f in exports {
        assert!(
            header.contains(&format!(" {f}(")) || header.contains(&format!("*{f}(")),
            "{f} missing from header"
        );
    }
}
