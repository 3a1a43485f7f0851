use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn derlab(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_derlab"))
        .args(args)
        .env("DERLAB_OUT", root)
        .output()
        .unwrap()
}

fn ok(args: &[&str], root: &Path) -> String {
    let out = derlab(args, root);
    assert!(
        out.status.success(),
        "derlab {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of_failure(args: &[&str], root: &Path) -> String {
    let out = derlab(args, root);
    assert!(!out.status.success(), "derlab {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn generate_cubic_and_pulse() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&["generate", "cubic", "--seed", "3"], root);
    let text = read(root.join("data/cubic-3.csv"));
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "x,y,true_mean,true_std");
    assert_eq!(rows.len(), 1001);
    for r in &rows[1..] {
        let v: Vec<f64> = r.split(',').map(|f| f.parse().unwrap()).collect();
        assert!((-4.0..=4.0).contains(&v[0]));
        assert_eq!(v[2], v[0].powi(3));
        assert_eq!(v[3], 3.0);
    }
    assert!(read(root.join("data/cubic-3.meta.toml")).contains("seed = 3"));

    let out = root.join("p.csv");
    ok(
        &["generate", "pulse", "--n", "200", "--out", out.to_str().unwrap()],
        root,
    );
    for r in read(&out).lines().skip(1) {
        let v: Vec<f64> = r.split(',').map(|f| f.parse().unwrap()).collect();
        let want = if v[0] < 0.5 { 0.01 } else { 0.1 };
        assert!((v[3] - want).abs() < 1e-12, "{r}");
    }
}

#[test]
fn unknown_names_list_the_choices() {
    let tmp = tempfile::tempdir().unwrap();
    let err = stderr_of_failure(&["generate", "quartic"], tmp.path());
    assert!(err.contains("cubic") && err.contains("pulse"), "{err}");
    let err = stderr_of_failure(&["reproduce", "fig9"], tmp.path());
    for id in ["fig1a", "fig1b", "fig1c", "fig2", "pulse", "fig4", "fig5"] {
        assert!(err.contains(id), "{err}");
    }
    let err = stderr_of_failure(&["train", "--preset", "nope"], tmp.path());
    assert!(err.contains("cubic-der"), "{err}");
}

const SMALL: &[&str] = &[
    "train",
    "--epochs",
    "5",
    "--seeds",
    "2",
    "--hidden",
    "16,16",
    "--trace-every",
    "2",
];

#[test]
fn train_evaluate_analyze_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let run = root.join("run");
    let mut args = SMALL.to_vec();
    args.extend(["--traces", "per-seed", "--out", run.to_str().unwrap()]);
    let stdout = ok(&args, root);
    assert!(stdout.contains("seed   1"), "{stdout}");
    for f in [
        "config.toml",
        "seed-0.ckpt",
        "seed-1.ckpt",
        "losses.csv",
        "predictions.csv",
        "aggregate.csv",
        "traces.csv",
        "manifest.toml",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert_eq!(read(run.join("losses.csv")).lines().count(), 1 + 2 * 5);
    // epochs 0, 2 and 4 on 101 grid points
    assert_eq!(read(run.join("aggregate.csv")).lines().count(), 1 + 3 * 101);
    ok(&["verify", run.to_str().unwrap()], root);

    ok(
        &[
            "evaluate",
            "--run",
            run.to_str().unwrap(),
            "--lo",
            "-2",
            "--hi",
            "2",
            "--points",
            "5",
        ],
        root,
    );
    let eval = read(run.join("evaluation.csv"));
    assert!(eval.starts_with("seed,x,gamma,nu,alpha,beta,convention,aleatoric,epistemic"));
    assert_eq!(eval.lines().count(), 1 + 2 * 5 * 2);

    let ckpt = run.join("seed-1.ckpt");
    ok(
        &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--points", "3"],
        root,
    );
    assert_eq!(read(run.join("seed-1.csv")).lines().count(), 1 + 3 * 2);

    ok(&["analyze", "--run", run.to_str().unwrap()], root);
    for f in ["calibration.csv", "cutoff.csv", "entropy.csv", "analysis.toml"] {
        assert!(run.join("analysis").join(f).exists(), "{f} missing");
    }

    let te = root.join("te.csv");
    ok(
        &[
            "trace-export",
            "--input",
            run.join("traces.csv").to_str().unwrap(),
            "--epochs",
            "0,4",
            "--x",
            "0",
            "--out",
            te.to_str().unwrap(),
        ],
        root,
    );
    assert_eq!(read(&te).lines().count(), 1 + 2 * 2);

    fs::write(run.join("losses.csv"), "tampered").unwrap();
    let err = stderr_of_failure(&["verify", run.to_str().unwrap()], root);
    assert!(err.contains("losses.csv"), "{err}");
}

#[test]
fn config_problems_are_all_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let run = root.join("run");
    let mut args = SMALL.to_vec();
    args.extend(["--out", run.to_str().unwrap()]);
    ok(&args, root);
    let text = read(run.join("config.toml"))
        .replace("lambda = 0.01", "lambda = -1.0")
        .replace("epochs = 5", "epochs = 5\nseeds_typo = 1")
        .replace("seeds = [0, 1]", "seeds = []");
    let bad = root.join("bad.toml");
    fs::write(&bad, &text).unwrap();
    let err = stderr_of_failure(&["train", "--config", bad.to_str().unwrap()], root);
    assert!(err.contains("seeds_typo"), "{err}");

    let text = text.replace("seeds_typo = 1\n", "");
    fs::write(&bad, &text).unwrap();
    let err = stderr_of_failure(&["train", "--config", bad.to_str().unwrap()], root);
    assert!(err.contains("lambda") && err.contains("seed"), "{err}");

    let err = stderr_of_failure(&["train", "--batch-size", "0"], root);
    assert!(err.contains("batch size"), "{err}");
}

#[test]
fn job_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    for jobs in ["1", "3"] {
        let out = root.join(format!("j{jobs}"));
        let args = [
            "train",
            "--epochs",
            "5",
            "--seeds",
            "3",
            "--hidden",
            "16,16",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ];
        ok(&args, root);
    }
    for f in ["losses.csv", "predictions.csv", "aggregate.csv", "seed-2.ckpt"] {
        assert_eq!(read(root.join("j1").join(f)), read(root.join("j3").join(f)), "{f}");
    }
}

#[test]
fn training_on_a_fixed_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("d.csv");
    ok(
        &["generate", "pulse", "--n", "300", "--out", data.to_str().unwrap()],
        root,
    );
    let run = root.join("run");
    let mut args = SMALL.to_vec();
    args.extend([
        "--preset",
        "pulse-gaussian",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    ok(&args, root);
    assert_eq!(read(run.join("data.csv")), read(&data));
    assert!(read(run.join("config.toml")).contains("gaussian-alt"));
}
