//! End-to-end command-line tests: every subcommand's happy path plus each
//! documented error exit code.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{make_dataset, synthetic_pair, write_pgm};
use ivfuse::data_io::load_image;

/// Run the CLI in-process with a leading program name.
fn run(args: &[&str]) -> i32 {
    let mut full = vec!["ivfuse"];
    full.extend_from_slice(args);
    ivfuse::cli::run(full)
}

/// Run the installed binary so stderr can be inspected.
fn run_binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ivfuse"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn train_quick(data: &Path, ckpt: &Path, seed: u64) {
    let config = data.join("train.cfg");
    fs::write(
        &config,
        "epochs = 2\nbatch_size = 2\ncrop_h = 16\ncrop_w = 16\n",
    )
    .unwrap();
    let code = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "training failed");
    assert!(ckpt.is_file());
}

#[test]
fn train_fuse_decompose_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 2, 40, 20, 20);
    let ckpt = dir.path().join("model.ckpt");
    train_quick(dir.path(), &ckpt, 1);

    for (strategy, name) in [("sum", "f_sum.pgm"), ("avg", "f_avg.pgm"), ("l1", "f_l1.png")] {
        let out = dir.path().join(name);
        let code = run(&[
            "fuse",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--ir",
            dir.path().join("ir/pair_00.pgm").to_str().unwrap(),
            "--vis",
            dir.path().join("vis/pair_00.pgm").to_str().unwrap(),
            "--strategy",
            strategy,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "fuse {strategy}");
        let fused = load_image(&out).unwrap();
        assert_eq!((fused.h, fused.w), (20, 20));
    }

    let prefix = dir.path().join("viz");
    let code = run(&[
        "decompose",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--image",
        dir.path().join("ir/pair_01.pgm").to_str().unwrap(),
        "--out-prefix",
        prefix.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    for suffix in ["_background.png", "_detail.png"] {
        let path = dir.path().join(format!("viz{suffix}"));
        let img = load_image(&path).unwrap();
        assert_eq!((img.h, img.w), (20, 20));
    }
}

#[test]
fn same_seed_trains_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 1, 50, 16, 16);
    let (c1, c2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    train_quick(dir.path(), &c1, 11);
    train_quick(dir.path(), &c2, 11);
    assert_eq!(fs::read(c1).unwrap(), fs::read(c2).unwrap());
}

#[test]
fn classical_fusion_runs_without_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (ir, vis) = synthetic_pair(60, 32, 32);
    let ir_path = dir.path().join("ir.pgm");
    let vis_path = dir.path().join("vis.pgm");
    write_pgm(&ir_path, 32, 32, &ir);
    write_pgm(&vis_path, 32, 32, &vis);
    for method in ["opt", "box"] {
        let out = dir.path().join(format!("c_{method}.pgm"));
        let code = run(&[
            "fuse",
            "--classical",
            method,
            "--ir",
            ir_path.to_str().unwrap(),
            "--vis",
            vis_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "classical {method}");
        assert_eq!(load_image(&out).unwrap().h, 32);
    }
}

#[test]
fn eval_writes_summary_and_per_image_reports() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 2, 70, 64, 64);
    let ckpt = dir.path().join("model.ckpt");
    train_quick(dir.path(), &ckpt, 2);

    let report = dir.path().join("scores.tsv");
    let code = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        dir.path().to_str().unwrap(),
        "--strategy",
        "sum",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let table = fs::read_to_string(&report).unwrap();
    assert!(table.starts_with("method\tEN\tMI\tSD\tSF\tVIF\tAG"), "{table}");
    assert!(table.lines().nth(1).unwrap().starts_with("sum\t"), "{table}");
    assert_eq!(table.lines().nth(1).unwrap().matches('±').count(), 6);

    let raw = fs::read_to_string(dir.path().join("scores.tsv.raw")).unwrap();
    assert_eq!(raw.lines().count(), 3, "header + 2 pairs: {raw}");
    assert!(raw.contains("pair_00.pgm") && raw.contains("pair_01.pgm"));
}

#[test]
fn usage_errors_exit_1() {
    // unknown flag
    let (code, stderr) = run_binary(&["fuse", "--nonsense"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("--nonsense"), "{stderr}");
    // no subcommand
    assert_eq!(run(&[]), 1);
    // fuse without --ckpt or --classical
    let dir = tempfile::tempdir().unwrap();
    let (ir, _) = synthetic_pair(80, 16, 16);
    let img = dir.path().join("i.pgm");
    write_pgm(&img, 16, 16, &ir);
    let code = run(&[
        "fuse",
        "--ir",
        img.to_str().unwrap(),
        "--vis",
        img.to_str().unwrap(),
        "--out",
        dir.path().join("o.pgm").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    // unsupported output extension
    let code = run(&[
        "fuse",
        "--classical",
        "box",
        "--ir",
        img.to_str().unwrap(),
        "--vis",
        img.to_str().unwrap(),
        "--out",
        dir.path().join("o.bmp").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    // help is not an error
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    // mismatched fuse input sizes report both sizes on stderr
    let (a, _) = synthetic_pair(90, 16, 16);
    let (b, _) = synthetic_pair(91, 16, 14);
    let pa = dir.path().join("a.pgm");
    let pb = dir.path().join("b.pgm");
    write_pgm(&pa, 16, 16, &a);
    write_pgm(&pb, 16, 14, &b);
    let out = dir.path().join("o.pgm");
    let (code, stderr) = run_binary(&[
        "fuse",
        "--classical",
        "box",
        "--ir",
        pa.to_str().unwrap(),
        "--vis",
        pb.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(
        stderr.contains("16x16") && stderr.contains("16x14"),
        "expected both sizes in: {stderr}"
    );

    // undecodable image
    let junk = dir.path().join("junk.pgm");
    fs::write(&junk, "P5 but not really").unwrap();
    let code = run(&[
        "fuse",
        "--classical",
        "box",
        "--ir",
        junk.to_str().unwrap(),
        "--vis",
        pa.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);

    // dataset with a missing counterpart
    make_dataset(dir.path(), 2, 92, 16, 16);
    fs::remove_file(dir.path().join("vis/pair_01.pgm")).unwrap();
    let code = run(&[
        "train",
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("m.ckpt").to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 2);

    // corrupt checkpoint
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, "IVFUSECKgarbage").unwrap();
    let code = run(&[
        "decompose",
        "--ckpt",
        bad.to_str().unwrap(),
        "--image",
        pa.to_str().unwrap(),
        "--out-prefix",
        dir.path().join("v").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn numeric_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 1, 95, 16, 16);
    // an absurd gradient-term weight overflows f32 gradients on step one
    let config = dir.path().join("explode.cfg");
    fs::write(
        &config,
        "epochs = 2\nbatch_size = 1\ncrop_h = 16\ncrop_w = 16\nalpha4 = 1e308\n",
    )
    .unwrap();
    let (code, stderr) = run_binary(&[
        "train",
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("m.ckpt").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("non-finite"), "{stderr}");
}
