//! Drives the compiled binary end to end: dataset generation, training,
//! inference, evaluation, and the stability of every printed format.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cdet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdet"))
        .args(args)
        .current_dir(dir)
        .env_remove("CDET_SEED")
        .output()
        .expect("binary spawns")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}stderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

#[test]
fn anchors_lists_every_box_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = cdet(dir.path(), &["anchors"]);
    assert_ok(&out);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6375, "default 320x320 grid");
    for line in &lines {
        assert_eq!(line.split_whitespace().count(), 8, "level row col ratio + box");
    }
    // First anchor: level 0, stride 8, scale 32, ratio 0.5 centred on cell (0, 0).
    let first: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(&first[..4], &["0", "0", "0", "0"]);

    let counted = cdet(dir.path(), &["anchors", "--size", "512x512", "--count-only"]);
    assert_ok(&counted);
    assert_eq!(stdout(&counted).trim(), "16320");
}

#[test]
fn generate_train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.toml"),
        "[data]\nimage_size = [64, 64]\nnum_shape_classes = 3\n\n[train]\nmax_steps = 3\nbatch_size = 2\n",
    )
    .unwrap();

    let gen = cdet(
        d,
        &["gen-data", "--config", "run.toml", "--out", "shapes", "--count", "6", "--seed", "11"],
    );
    assert_ok(&gen);
    assert!(d.join("shapes/annotations.txt").is_file());
    assert!(d.join("shapes/spec.toml").is_file());

    let train = cdet(
        d,
        &["train", "--config", "run.toml", "--data", "shapes", "--out", "model.ckpt", "--seed", "1"],
    );
    assert_ok(&train);
    assert!(stdout(&train).contains("trained 3 steps"));
    assert!(d.join("model.ckpt").is_file());
    assert!(d.join("model.log").is_file());

    let infer = cdet(
        d,
        &["infer", "--checkpoint", "model.ckpt", "--input", "shapes", "--out", "dets.txt"],
    );
    assert_ok(&infer);
    assert!(d.join("dets.txt").is_file());

    let eval = cdet(
        d,
        &[
            "eval",
            "--detections",
            "dets.txt",
            "--annotations",
            "shapes/annotations.txt",
            "--classes",
            "4",
            "--report",
            "report.txt",
        ],
    );
    assert_ok(&eval);
    let report = fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(report.starts_with("detection evaluation\n"), "report:\n{report}");
    assert!(report.contains("mAP@0.50:"));
    // stdout carries the same report after the echoed config.
    assert!(stdout(&eval).contains(&report));
}

#[test]
fn zero_step_training_saves_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = cdet(d, &["gen-data", "--out", "tiny", "--count", "2", "--size", "64x64", "--seed", "3"]);
    assert_ok(&gen);
    let train = cdet(d, &["train", "--data", "tiny", "--out", "init.ckpt", "--steps", "0"]);
    assert_ok(&train);
    assert!(stdout(&train).contains("trained 0 steps"));
    let infer = cdet(d, &["infer", "--checkpoint", "init.ckpt", "--input", "tiny", "--out", "d.txt"]);
    assert_ok(&infer);
}

#[test]
fn evaluation_report_bytes_are_frozen() {
    // Exact-overlap matches and disjoint false positives make every threshold
    // in the coco sweep agree, so the whole report is hand checkable.
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("gt.txt"),
        "image 0 100 100\n\
         box 0 1 10 10 30 30 0\n\
         box 0 2 50 50 80 80 0\n\
         image 1 100 100\n\
         box 1 1 20 20 40 40 0\n\
         box 1 3 60 10 90 40 0\n",
    )
    .unwrap();
    fs::write(
        d.join("dets.txt"),
        "0 1 0.950000 10 10 30 30\n\
         1 1 0.900000 20 20 40 40\n\
         0 2 0.850000 50 50 80 80\n\
         1 2 0.800000 60 10 90 40\n\
         1 3 0.700000 0 60 20 80\n",
    )
    .unwrap();

    let eval = cdet(
        d,
        &["eval", "--detections", "dets.txt", "--annotations", "gt.txt", "--report", "report.txt"],
    );
    assert_ok(&eval);
    let expected = "detection evaluation\n\
                    iou threshold: 0.50\n\
                    interpolation: all-points\n\
                    classes: 3 evaluated, 0 skipped\n\
                    mAP@0.50: 0.666667\n\
                    coco AP@[0.50:0.95]: 0.666667\n\
                    class 1: ap 1.000000 gt 2 dets 2 tp 2 fp 0 | fp breakdown: loc 0 sim 0 oth 0 bg 0\n\
                    class 2: ap 1.000000 gt 1 dets 2 tp 1 fp 1 | fp breakdown: loc 0 sim 1 oth 0 bg 0\n\
                    class 3: ap 0.000000 gt 1 dets 1 tp 0 fp 1 | fp breakdown: loc 0 sim 0 oth 0 bg 1\n";
    assert_eq!(fs::read_to_string(d.join("report.txt")).unwrap(), expected);

    // Declaring classes 2 and 3 dissimilar reclassifies the one cross-class
    // hit from sim to oth without touching anything else.
    let analyze = cdet(
        d,
        &[
            "analyze",
            "--detections",
            "dets.txt",
            "--annotations",
            "gt.txt",
            "--similar",
            "1;2;3",
            "--out",
            "fp.txt",
        ],
    );
    assert_ok(&analyze);
    let fp = fs::read_to_string(d.join("fp.txt")).unwrap();
    assert!(fp.starts_with("false positive analysis\n"), "analysis:\n{fp}");
    assert!(fp.contains("class 2: fp 1 | loc 0 sim 0 oth 1 bg 0"), "analysis:\n{fp}");
    assert!(fp.contains("total: fp 2 | loc 0 sim 0 oth 1 bg 1"), "analysis:\n{fp}");
}

#[test]
fn seed_env_var_matches_explicit_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let flagged = cdet(d, &["gen-data", "--out", "a", "--count", "3", "--size", "48x48", "--seed", "21"]);
    assert_ok(&flagged);
    let env = Command::new(env!("CARGO_BIN_EXE_cdet"))
        .args(["gen-data", "--out", "b", "--count", "3", "--size", "48x48"])
        .current_dir(d)
        .env("CDET_SEED", "21")
        .output()
        .expect("binary spawns");
    assert_ok(&env);
    assert_eq!(
        fs::read(d.join("a/annotations.txt")).unwrap(),
        fs::read(d.join("b/annotations.txt")).unwrap()
    );

    let bad = Command::new(env!("CARGO_BIN_EXE_cdet"))
        .args(["gen-data", "--out", "c", "--count", "1", "--size", "48x48"])
        .current_dir(d)
        .env("CDET_SEED", "notanumber")
        .output()
        .expect("binary spawns");
    assert_eq!(bad.status.code(), Some(2), "malformed seed env is a config error");
}

#[test]
fn failure_exit_codes_distinguish_config_from_io() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[train]\nnot_a_field = 1\n").unwrap();
    let cfg = cdet(d, &["anchors", "--config", "bad.toml"]);
    assert_eq!(cfg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&cfg.stderr).contains("error:"));

    let io = cdet(d, &["infer", "--checkpoint", "missing.ckpt", "--input", "also-missing", "--out", "x.txt"]);
    assert_eq!(io.status.code(), Some(3));

    fs::write(d.join("garbled.txt"), "image zero not a number\n").unwrap();
    let parse = cdet(d, &["eval", "--detections", "garbled.txt", "--annotations", "garbled.txt"]);
    assert_eq!(parse.status.code(), Some(3));

    let usage = cdet(d, &["eval", "--detections"]);
    assert_eq!(usage.status.code(), Some(2), "clap usage errors share the config code");
}

#[test]
fn help_names_every_subcommand_and_key_flag() {
    let dir = tempfile::tempdir().unwrap();
    let top = cdet(dir.path(), &["--help"]);
    assert_ok(&top);
    let text = stdout(&top);
    for sub in ["gen-data", "train", "infer", "eval", "analyze", "anchors", "ablate", "bench"] {
        assert!(text.contains(sub), "top help misses {sub}");
    }
    for (sub, flags) in [
        ("train", vec!["--steps", "--batch", "--lr", "--theta", "--no-filtering", "--no-cascade", "--no-tcb", "--no-augment", "--seed"]),
        ("infer", vec!["--checkpoint", "--input", "--trace"]),
        ("eval", vec!["--iou", "--eleven-point", "--similar", "--pr-dir", "--report"]),
        ("ablate", vec!["--train-data", "--test-data", "--seeds"]),
        ("anchors", vec!["--size", "--count-only"]),
        ("bench", vec!["--reps"]),
    ] {
        let help = cdet(dir.path(), &[sub, "--help"]);
        assert_ok(&help);
        let text = stdout(&help);
        for flag in flags {
            assert!(text.contains(flag), "{sub} help misses {flag}");
        }
    }
}

#[test]
fn resolved_config_echo_is_itself_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = cdet(d, &["gen-data", "--out", "ds", "--count", "2", "--size", "48x48", "--seed", "9"]);
    assert_ok(&gen);
    // The dataset spec echo doubles as a config file for a repeat run.
    let spec = fs::read_to_string(d.join("ds/spec.toml")).unwrap();
    assert!(spec.starts_with("[data]\n"), "spec echo:\n{spec}");
    let again = cdet(d, &["gen-data", "--config", "ds/spec.toml", "--out", "ds2", "--seed", "9"]);
    assert_ok(&again);
    assert_eq!(
        fs::read(d.join("ds/annotations.txt")).unwrap(),
        fs::read(d.join("ds2/annotations.txt")).unwrap()
    );
}
