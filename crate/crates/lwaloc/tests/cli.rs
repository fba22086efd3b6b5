//! End-to-end checks of the command-line interface: every subcommand, exit
//! codes, and byte-stable outputs.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lwaloc"))
}

fn write_scene(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("scene.toml");
    std::fs::write(
        &path,
        r#"
[room]
x = [0.0, 6.0]
y = [0.0, 5.0]
z = [0.0, 3.0]

[ap]
position = [5.0, 4.0, 2.5]

[lwa_r]
position = [0.0, 0.0, 2.0]
axis = [1.0, 0.0, 0.0]
handedness = "right"

[lwa_l]
position = [0.0, 5.0, 2.0]
axis = [0.0, 1.0, 0.0]
handedness = "left"

[target]
position = [2.5, 2.0, 2.0]
"#,
    )
    .unwrap();
    path
}

fn write_experiment(dir: &Path) -> std::path::PathBuf {
    write_scene(dir);
    let path = dir.join("experiment.toml");
    std::fs::write(
        &path,
        r#"
scenario = "scene.toml"
trials = 3
seed = 5
frames = 20

[targets]
uniform = true

[sweep]
parameter = "snr_db"
values = [25.0, 10.0]
"#,
    )
    .unwrap();
    path
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_then_locate_recovers_the_configured_target() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let trace = dir.path().join("capture.csv");

    let out = bin()
        .args(["simulate", "--config"])
        .arg(&scene)
        .args(["--seed", "7", "--frames", "40", "--out"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_success(&out);
    assert!(trace.exists());

    let out = bin()
        .args(["locate", "--config"])
        .arg(&scene)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("position:"), "stdout:\n{text}");
    assert!(text.contains("planar error"), "stdout:\n{text}");
}

#[test]
fn locate_picks_one_of_several_links() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, seed) in [(&a, "1"), (&b, "2")] {
        let out = bin()
            .args(["simulate", "--config"])
            .arg(&scene)
            .args(["--seed", seed, "--frames", "20", "--out"])
            .arg(path)
            .output()
            .unwrap();
        assert_success(&out);
    }
    let out = bin()
        .args(["locate", "--config"])
        .arg(&scene)
        .arg("--trace")
        .arg(&a)
        .arg("--trace")
        .arg(&b)
        .output()
        .unwrap();
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("link:"), "stdout:\n{text}");
}

#[test]
fn unlabeled_captures_need_detection() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let trace = dir.path().join("blind.csv");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&scene)
        .args(["--seed", "3", "--frames", "40", "--unlabeled", "--out"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_success(&out);

    // Label-trusting processing must refuse the unlabeled file...
    let out = bin()
        .args(["locate", "--config"])
        .arg(&scene)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(!out.status.success());

    // ...while energy detection handles it.
    let out = bin()
        .args(["locate", "--config"])
        .arg(&scene)
        .arg("--trace")
        .arg(&trace)
        .args(["--duty-detection", "detect"])
        .output()
        .unwrap();
    assert_success(&out);
}

#[test]
fn run_writes_results_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let experiment = write_experiment(dir.path());
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    for out_path in [&first, &second] {
        let out = bin()
            .args(["run", "--config"])
            .arg(&experiment)
            .arg("--out")
            .arg(out_path)
            .output()
            .unwrap();
        assert_success(&out);
    }
    let a = std::fs::read(&first).unwrap();
    let b = std::fs::read(&second).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "identical configs must write identical bytes");
}

#[test]
fn ablate_covers_every_mode_and_sweep_requires_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let experiment = write_experiment(dir.path());

    let out = bin()
        .args(["ablate", "--config"])
        .arg(&experiment)
        .args(["--trials", "1", "--format", "metrics-csv"])
        .output()
        .unwrap();
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for mode in ["s1", "s2", "s3", "s4"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{mode},"))), "stdout:\n{text}");
    }

    let out = bin()
        .args(["sweep", "--config"])
        .arg(&experiment)
        .args(["--trials", "1", "--format", "cdf-csv"])
        .output()
        .unwrap();
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 102);

    // A sweepless file is a usage error for the sweep subcommand.
    write_scene(dir.path());
    let sweepless = dir.path().join("sweepless.toml");
    std::fs::write(&sweepless, "scenario = \"scene.toml\"\ntrials = 1\n").unwrap();
    let out = bin().args(["sweep", "--config"]).arg(&sweepless).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no [sweep] block"));
}

#[test]
fn config_errors_exit_nonzero_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(dir.path().join("missing.toml"))
        .args(["--out"])
        .arg(dir.path().join("t.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[room]\nx = [0.0, 6.0]\n").unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("t.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());

    // Batch runs exit zero even when individual trials fail.
    write_scene(dir.path());
    let experiment = dir.path().join("failing.toml");
    std::fs::write(
        &experiment,
        "scenario = \"scene.toml\"\ntrials = 2\n\n[pipeline]\nepsilon = 0.0\n",
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&experiment)
        .args(["--format", "metrics-csv"])
        .output()
        .unwrap();
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().nth(1).unwrap().contains(",1,"), "failure rate line:\n{text}");
}
