use std::ffi::{CStr, CString};
use std::ptr;

use joint_asr::checkpoint::Checkpoint;
use joint_asr::data::{generate_corpus, SynthSpec};
use joint_asr::decode::{transcribe, DecodeConfig};
use joint_asr::model::{AcousticModel, ModelConfig};
use joint_asr_ffi::*;

fn last_error() -> String {
    let p = jasr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = AcousticModel::new(ModelConfig::toy(), 3).unwrap();
    Checkpoint::from_model(&model).save(&path).unwrap();
    let audio = generate_corpus(&SynthSpec {
        num_utts: 1,
        ..SynthSpec::default()
    })
    .unwrap()
    .utterances[0]
        .samples
        .clone();
    let expected = transcribe(&model, &audio, &DecodeConfig::default(), None).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(jasr_model_load(cpath.as_ptr(), &mut handle), JasrStatus::Ok);
        let mut n = 0usize;
        assert_eq!(jasr_model_num_params(handle, &mut n), JasrStatus::Ok);
        assert_eq!(n, model.params().num_scalars());
        let mut sr = 0usize;
        assert_eq!(jasr_model_sample_rate(handle, &mut sr), JasrStatus::Ok);
        assert_eq!(sr, 1_000);
        let mut text = ptr::null_mut();
        let st = jasr_transcribe(handle, audio.as_ptr(), audio.len(), 0, ptr::null(), 0.0, 0.0, &mut text);
        assert_eq!(st, JasrStatus::Ok);
        assert_eq!(CStr::from_ptr(text).to_str().unwrap(), expected);
        jasr_string_free(text);

        // too short for the encoder
        let mut text = ptr::null_mut();
        let st = jasr_transcribe(handle, audio.as_ptr(), 3, 0, ptr::null(), 0.0, 0.0, &mut text);
        assert_eq!(st, JasrStatus::Data);
        assert!(text.is_null());
        assert!(last_error().contains("too short"));
        jasr_model_free(handle);
    }
}

#[test]
fn load_errors_map_to_codes() {
    let missing = CString::new("/nonexistent/m.ckpt").unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(jasr_model_load(missing.as_ptr(), &mut handle), JasrStatus::MissingPath);
        assert!(handle.is_null());
        assert_eq!(jasr_model_load(ptr::null(), &mut handle), JasrStatus::NullArgument);
        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint at all, just bytes").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(jasr_model_load(junk.as_ptr(), &mut handle), JasrStatus::Config);
        jasr_model_free(ptr::null_mut());
        jasr_string_free(ptr::null_mut());
    }
}

#[test]
fn ctc_loss_through_the_abi() {
    // two frames, uniform over {a, blank}: paths "a a", "a -", "- a" give 3/4
    let lp = [0.5f64.ln(); 4];
    let tokens = [0u32];
    let mut out = 0.0;
    unsafe {
        assert_eq!(jasr_ctc_loss(lp.as_ptr(), 2, 2, tokens.as_ptr(), 1, 1, &mut out), JasrStatus::Ok);
        assert!((out + 0.75f64.ln()).abs() < 1e-12);
        let bad = [1u32];
        assert_eq!(
            jasr_ctc_loss(lp.as_ptr(), 2, 2, bad.as_ptr(), 1, 1, &mut out),
            JasrStatus::InvalidArgument
        );
        assert_eq!(jasr_ctc_loss(ptr::null(), 2, 2, tokens.as_ptr(), 1, 1, &mut out), JasrStatus::NullArgument);
    }
}

#[test]
fn error_rates_through_the_abi() {
    let r = CString::new("the cat sat").unwrap();
    let h = CString::new("the cat sit down").unwrap();
    let empty = CString::new("").unwrap();
    let mut out = 0.0;
    unsafe {
        assert_eq!(jasr_wer(r.as_ptr(), h.as_ptr(), &mut out), JasrStatus::Ok);
        assert!((out - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(jasr_cer(r.as_ptr(), r.as_ptr(), &mut out), JasrStatus::Ok);
        assert_eq!(out, 0.0);
        assert_eq!(jasr_wer(empty.as_ptr(), h.as_ptr(), &mut out), JasrStatus::Data);
        let bad = [0xffu8, 0];
        assert_eq!(jasr_wer(bad.as_ptr().cast(), h.as_ptr(), &mut out), JasrStatus::InvalidUtf8);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/joint_asr.h")).unwrap();
    for name in [
        "typedef struct JasrModel JasrModel",
        "JASR_STATUS_OK = 0",
        "jasr_model_load(",
        "jasr_model_free(",
        "jasr_transcribe(",
        "jasr_ctc_loss(",
        "jasr_wer(",
        "jasr_cer(",
        "jasr_last_error(",
        "jasr_string_free(",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let v = unsafe { CStr::from_ptr(jasr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/joint_asr.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
