use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softhg::softhg::{BlockConfig, SoftHGParams};
use softhg::Matrix;
use softhg_ffi::*;

fn last_error() -> String {
    let p = softhg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> SoftHgBlockConfig {
    let mut cfg = unsafe { std::mem::zeroed::<SoftHgBlockConfig>() };
    assert_eq!(
        unsafe { softhg_block_config_default(4, &mut cfg) },
        SoftHgStatus::Ok
    );
    cfg.hyperedges = 3;
    cfg.heads = 2;
    cfg
}

fn new_block(cfg: &SoftHgBlockConfig, seed: u64) -> *mut SoftHgBlock {
    let mut b = ptr::null_mut();
    assert_eq!(
        unsafe { softhg_block_new_random(cfg, seed, &mut b) },
        SoftHgStatus::Ok
    );
    b
}

#[test]
fn forward_matches_library() {
    let cfg = small_config();
    let b = new_block(&cfg, 11);
    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut out = vec![0.0; 20];
    let st = unsafe { softhg_block_forward(b, x.as_ptr(), 5, 4, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SoftHgStatus::Ok);

    let params =
        SoftHGParams::init(BlockConfig::from(&cfg), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let xm = Matrix::new(5, 4, x).unwrap();
    let expected = softhg::softhgnn_forward(&xm, &params).unwrap();
    assert_eq!(out, expected.x_out.data());
    unsafe { softhg_block_free(b) };
}

#[test]
fn short_output_buffer_is_shape_error() {
    let cfg = small_config();
    let b = new_block(&cfg, 1);
    let x = [0.5; 8];
    let mut out = vec![0.0; 7];
    let st = unsafe { softhg_block_forward(b, x.as_ptr(), 2, 4, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SoftHgStatus::Shape);
    assert!(last_error().contains("need 8"), "{}", last_error());
    unsafe { softhg_block_free(b) };
}

#[test]
fn wrong_width_is_shape_error() {
    let cfg = small_config();
    let b = new_block(&cfg, 1);
    let x = [0.5; 6];
    let mut out = vec![0.0; 6];
    let st = unsafe { softhg_block_forward(b, x.as_ptr(), 2, 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SoftHgStatus::Shape);
    unsafe { softhg_block_free(b) };
}

#[test]
fn null_handles_are_rejected() {
    let mut out = [0.0; 4];
    let x = [0.0; 4];
    let st = unsafe { softhg_block_forward(ptr::null(), x.as_ptr(), 1, 4, out.as_mut_ptr(), 4) };
    assert_eq!(st, SoftHgStatus::NullPointer);
    assert_eq!(
        unsafe { softhg_block_new_random(ptr::null(), 0, &mut ptr::null_mut()) },
        SoftHgStatus::NullPointer
    );
    unsafe {
        softhg_block_free(ptr::null_mut());
        softhg_ses_free(ptr::null_mut());
    }
}

#[test]
fn invalid_config_reports_reason() {
    let mut cfg = small_config();
    cfg.heads = 3;
    let mut b = ptr::null_mut();
    let st = unsafe { softhg_block_new_random(&cfg, 0, &mut b) };
    assert_eq!(st, SoftHgStatus::Config);
    assert!(b.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("p.json").to_str().unwrap()).unwrap();
    let cfg = small_config();
    let b = new_block(&cfg, 5);
    assert_eq!(
        unsafe { softhg_block_save_json(b, path.as_ptr()) },
        SoftHgStatus::Ok
    );
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { softhg_block_load_json(path.as_ptr(), &cfg, &mut loaded) },
        SoftHgStatus::Ok
    );

    let x = [0.1, -0.2, 0.3, 0.4, 1.0, 0.0, -1.0, 0.5];
    let (mut y1, mut y2) = ([0.0; 8], [0.0; 8]);
    unsafe {
        softhg_block_forward(b, x.as_ptr(), 2, 4, y1.as_mut_ptr(), 8);
        softhg_block_forward(loaded, x.as_ptr(), 2, 4, y2.as_mut_ptr(), 8);
    }
    assert_eq!(y1, y2);

    let mut round = unsafe { std::mem::zeroed::<SoftHgBlockConfig>() };
    assert_eq!(
        unsafe { softhg_block_config(loaded, &mut round) },
        SoftHgStatus::Ok
    );
    assert_eq!(round, cfg);

    let missing = CString::new("/no/such/file.json").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(
        unsafe { softhg_block_load_json(missing.as_ptr(), &cfg, &mut none) },
        SoftHgStatus::Io
    );
    unsafe {
        softhg_block_free(b);
        softhg_block_free(loaded);
    }
}

#[test]
fn selection_state_tracks_balance() {
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { softhg_ses_new(0, 4, 1, 4, &mut s) },
        SoftHgStatus::Ok
    );
    let mut lb = f64::NAN;
    for _ in 0..4 {
        let sel = [0usize];
        assert_eq!(
            unsafe { softhg_ses_record(s, sel.as_ptr(), 1, &mut lb) },
            SoftHgStatus::Ok
        );
    }
    assert!((lb - 0.1875).abs() < 1e-15);
    let mut p = [0.0; 4];
    assert_eq!(
        unsafe { softhg_ses_probabilities(s, p.as_mut_ptr(), 4) },
        SoftHgStatus::Ok
    );
    assert_eq!(p, [1.0, 0.0, 0.0, 0.0]);

    let bad = [7usize];
    assert_eq!(
        unsafe { softhg_ses_record(s, bad.as_ptr(), 1, ptr::null_mut()) },
        SoftHgStatus::Config
    );
    unsafe { softhg_ses_free(s) };

    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { softhg_ses_new(2, 4, 5, 8, &mut t) },
        SoftHgStatus::Config
    );
}

#[test]
fn sparse_forward_records_selection() {
    let mut cfg = small_config();
    cfg.hyperedges = 6;
    let b = new_block(&cfg, 2);
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { softhg_ses_new(2, 4, 2, 8, &mut s) },
        SoftHgStatus::Ok
    );
    let x: Vec<f64> = (0..24).map(|i| (i as f64).cos()).collect();
    let mut out = vec![0.0; 24];
    let mut lb = f64::NAN;
    let st =
        unsafe { softhg_block_forward_ses(b, s, x.as_ptr(), 6, 4, out.as_mut_ptr(), 24, &mut lb) };
    assert_eq!(st, SoftHgStatus::Ok);
    assert!(lb >= 0.0);
    let mut p = [0.0; 4];
    unsafe { softhg_ses_probabilities(s, p.as_mut_ptr(), 4) };
    assert_eq!(p.iter().sum::<f64>(), 2.0);
    unsafe {
        softhg_ses_free(s);
        softhg_block_free(b);
    }
}

#[test]
fn gradcheck_through_abi() {
    let mut pass = false;
    let mut worst = f64::NAN;
    let st = unsafe { softhg_gradcheck(SoftHgNorm::Vnorm, true, 7, &mut pass, &mut worst) };
    assert_eq!(st, SoftHgStatus::Ok);
    assert!(pass && worst < 1e-4);
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(softhg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/softhg.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "softhg_version",
        "softhg_last_error_message",
        "softhg_block_config_default",
        "softhg_block_new_random",
        "softhg_block_load_json",
        "softhg_block_save_json",
        "softhg_block_config",
        "softhg_block_free",
        "softhg_block_forward",
        "softhg_block_forward_ses",
        "softhg_ses_new",
        "softhg_ses_free",
        "softhg_ses_record",
        "softhg_ses_probabilities",
        "softhg_gradcheck",
    ] {
        assert!(
            h.contains(&format!(" {name}(")) || h.contains(&format!("*{name}(")),
            "{name} missing from header"
        );
    }
    assert!(h.contains("typedef struct SoftHgBlock SoftHgBlock;"));
    assert!(h.contains("SOFT_HG_STATUS_OK = 0"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "softhg.h"

int main(void) {
    SoftHgBlockConfig cfg;
    if (softhg_block_config_default(4, &cfg) != SOFT_HG_STATUS_OK) return 10;
    cfg.hyperedges = 3;
    cfg.heads = 2;
    SoftHgBlock *b = NULL;
    if (softhg_block_new_random(&cfg, 3, &b) != SOFT_HG_STATUS_OK) return 11;
    double x[8] = {0.1, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4};
    double y[8];
    if (softhg_block_forward(b, x, 2, 4, y, 8) != SOFT_HG_STATUS_OK) return 12;
    if (softhg_block_forward(b, x, 2, 4, y, 3) != SOFT_HG_STATUS_SHAPE) return 13;
    const char *msg = softhg_last_error_message();
    if (msg == NULL) return 14;
    printf("%.17g %.17g\n", y[0], y[7]);
    softhg_block_free(b);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static
/// library, and checks it sees the same numbers as Rust.
#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; skipping");
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| manifest.join("../../target"));
    let lib = target.join("debug/libsofthg_ffi.a");
    assert!(
        lib.exists(),
        "static library not found at {}",
        lib.display()
    );

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status.code()
    );

    let cfg = BlockConfig {
        hyperedges: 3,
        heads: 2,
        ..BlockConfig::with_dim(4)
    };
    let params = SoftHGParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let x = Matrix::new(2, 4, vec![0.1, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4]).unwrap();
    let y = softhg::softhgnn_forward(&x, &params).unwrap().x_out;
    let expected = format!("{:?} {:?}\n", y.data()[0], y.data()[7]);
    let got = String::from_utf8(out.stdout).unwrap();
    let parse =
        |s: &str| -> Vec<f64> { s.split_whitespace().map(|t| t.parse().unwrap()).collect() };
    assert_eq!(parse(&got), parse(&expected));
}
