use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spr_core::denoiser::FilterBank;

const SMALL: &str = r#"{
  "data": {"n_train": 2, "n_val": 1, "n_test": 1, "nx": 16, "ny": 16, "nt": 4, "n_coils": 2, "spokes_per_frame": 3, "seed": 2},
  "model": {"K": 4, "T": 2, "n_cg": 2},
  "pretrain": {"K": 27, "outer_iters": 3, "T_test": 3},
  "train": {"learning_rate": 0.0, "epochs": 1}
}"#;

fn spr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spr"))
        .args(args)
        .env("SPR_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn full_command_chain() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let (ds, pre, tr, rec, ev) = (root.join("ds"), root.join("pre"), root.join("tr"), root.join("rec"), root.join("ev"));

    ok(&spr(&["gen-data", "--config", p(&cfg), "--out", p(&ds)]));
    assert!(ds.join("dataset.json").is_file());
    assert!(ds.join("run_manifest.json").is_file());
    assert_eq!(spr(&["gen-data", "--config", p(&cfg), "--out", p(&ds)]).status.code(), Some(1));
    ok(&spr(&["gen-data", "--config", p(&cfg), "--out", p(&ds), "--overwrite"]));

    ok(&spr(&["pretrain", "--config", p(&cfg), "--dataset", p(&ds), "--out", p(&pre)]));
    let objective = fs::read_to_string(pre.join("objective.csv")).unwrap();
    assert!(objective.starts_with("round,objective\n"));
    assert_eq!(FilterBank::load(&pre.join("filters.spt")).unwrap().n_filters(), 27);

    // a zero learning rate keeps the initialization
    ok(&spr(&[
        "train", "--config", p(&cfg), "--dataset", p(&ds), "--out", p(&tr), "--init", p(&pre.join("filters.spt")),
        "--freeze-filters",
    ]));
    let init = FilterBank::load(&pre.join("filters.spt")).unwrap();
    let best = FilterBank::load(&tr.join("best.spt")).unwrap();
    assert_eq!(init.filters(), best.filters());
    assert_eq!((init.alpha(), init.lambda()), (best.alpha(), best.lambda()));
    assert_eq!(fs::read_to_string(tr.join("history.csv")).unwrap().lines().count(), 3);

    ok(&spr(&[
        "reconstruct", "--config", p(&cfg), "--dataset", p(&ds), "--out", p(&rec), "--filters", p(&tr.join("best.spt")),
        "--T", "3",
    ]));
    assert!(rec.join("rec_0000.spt").is_file());
    let adj = root.join("adj");
    ok(&spr(&["reconstruct", "--dataset", p(&ds), "--out", p(&adj), "--method", "nufft-adjoint"]));

    ok(&spr(&[
        "evaluate", "--recon", p(&rec), "--reference", p(&ds.join("test")), "--out", p(&ev), "--pgm-frame", "0", "--roi", "1.0",
    ]));
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("record_id,psnr_db,nrmse,ssim,uiq\n"));
    assert!(ev.join("images/rec_0000_mag.pgm").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"K": 4, "unknown": 1}}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(spr(&["gen-data", "--config", p(&bad), "--out", p(&out)]).status.code(), Some(2));
    fs::write(&bad, r#"{"train": {"learning_rate": -1}}"#).unwrap();
    assert_eq!(spr(&["gen-data", "--config", p(&bad), "--out", p(&out)]).status.code(), Some(2));
    let missing = dir.path().join("nope");
    assert_eq!(spr(&["gen-data", "--config", p(&missing), "--out", p(&out)]).status.code(), Some(3));
    assert_eq!(spr(&["train", "--dataset", p(&missing), "--out", p(&out)]).status.code(), Some(3));
    assert_eq!(
        spr(&["evaluate", "--recon", p(&missing), "--reference", p(&missing), "--out", p(&out)]).status.code(),
        Some(3)
    );
    assert_eq!(spr(&["reconstruct", "--dataset", p(&missing), "--out", p(&out)]).status.code(), Some(3));
    // clap usage errors
    assert_eq!(spr(&["train"]).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = spr(&["selftest"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
