//! End-to-end checks of the `dram` binary: exit codes, artifact layout,
//! manifests, and bit-level reproducibility of outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dram_cli::manifest::{sha256_file, Manifest};
use dram_cli::run::verify_outputs;
use dram_core::metrics::MetricsReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dram"))
}

/// Fresh scratch directory under the target tree, one per test.
fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited without a code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small but complete pipeline config: inline synth data, LSTM model,
/// two-epoch trainer. Runs in a couple of seconds.
const SMOKE: &str = r#"
seed = 3

[dataset.synth]
sequences = 4
duration = 180
audio_dim = 4

[model]
backbone = "lstm"
audio_dim = 4
k = 8
[model.lstm]
hidden = 8

[trainer]
epochs = 2
lr = 1e-3
batch_size = 2
windows_per_epoch = 8
window_len = 4
val_horizon = 16

[eval]
horizon = 32
"#;

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
    // missing subcommand and unknown subcommand are usage errors
    assert_eq!(code(&bin().output().unwrap()), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    // missing required --config/--out
    assert_eq!(code(&run(&["train"])), 1);
}

#[test]
fn synth_writes_dataset_with_verifiable_manifest() {
    let dir = scratch("cli_synth");
    let cfg = write_config(&dir, "run.toml", SMOKE);

    let out1 = dir.join("a");
    let res = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    assert!(stdout(&res).contains("wrote dataset.dyadset"));
    assert!(out1.join("dataset.dyadset").exists());

    let manifest = Manifest::load(&out1).unwrap();
    assert_eq!(manifest.command, "synth");
    assert_eq!(manifest.seed, 3);
    assert!(verify_outputs(&out1, &manifest).unwrap().is_empty(), "stamps must match disk");

    // same config, second directory: byte-identical dataset
    let out2 = dir.join("b");
    run(&["synth", "--config", cfg.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert_eq!(
        sha256_file(&out1.join("dataset.dyadset")).unwrap(),
        sha256_file(&out2.join("dataset.dyadset")).unwrap(),
    );

    // a --seed override must change the bytes
    let out3 = dir.join("c");
    let res = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out3.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert_eq!(code(&res), 0);
    assert_ne!(
        sha256_file(&out1.join("dataset.dyadset")).unwrap(),
        sha256_file(&out3.join("dataset.dyadset")).unwrap(),
    );
}

#[test]
fn train_then_eval_produces_metrics() {
    let dir = scratch("cli_train_eval");
    let cfg = write_config(&dir, "run.toml", SMOKE);
    let train_out = dir.join("train");

    let res =
        run(&["train", "--config", cfg.to_str().unwrap(), "--out", train_out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    assert!(stdout(&res).contains("wrote model.dramckpt"));
    for f in ["model.dramckpt", "curves.txt", "resolved_config.toml", "manifest.toml"] {
        assert!(train_out.join(f).exists(), "missing {f}");
    }
    let manifest = Manifest::load(&train_out).unwrap();
    assert!(verify_outputs(&train_out, &manifest).unwrap().is_empty());

    let eval_cfg = SMOKE.replace(
        "[eval]\nhorizon = 32",
        &format!(
            "[eval]\nhorizon = 32\ncheckpoint = \"{}\"",
            train_out.join("model.dramckpt").display()
        ),
    );
    let cfg2 = write_config(&dir, "eval.toml", &eval_cfg);
    let eval_out = dir.join("eval");
    let res =
        run(&["eval", "--config", cfg2.to_str().unwrap(), "--out", eval_out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    let table = stdout(&res);
    assert!(table.contains("variant") && table.contains("Avg."), "grid header missing: {table}");

    let report = MetricsReport::parse(&fs::read_to_string(eval_out.join("metrics.txt")).unwrap())
        .unwrap();
    assert!(report.ape_avg.is_finite() && report.frames > 0);
}

#[test]
fn same_seed_training_reruns_are_byte_identical() {
    let dir = scratch("cli_determinism");
    let cfg = write_config(&dir, "run.toml", SMOKE);
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        let res = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    }
    for f in ["model.dramckpt", "curves.txt"] {
        assert_eq!(
            sha256_file(&a.join(f)).unwrap(),
            sha256_file(&b.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
}

#[test]
fn resolved_config_reproduces_the_checkpoint() {
    // the resolved snapshot written next to a run must re-run to the
    // same bytes when used as a config itself
    let dir = scratch("cli_resolved");
    let cfg = write_config(&dir, "run.toml", SMOKE);
    let first = dir.join("first");
    let res = run(&["train", "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));

    let snapshot = first.join("resolved_config.toml");
    let again = dir.join("again");
    let res =
        run(&["train", "--config", snapshot.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    assert_eq!(
        sha256_file(&first.join("model.dramckpt")).unwrap(),
        sha256_file(&again.join("model.dramckpt")).unwrap(),
    );
}

#[test]
fn config_mistakes_exit_one_with_a_pointed_message() {
    let dir = scratch("cli_config_errors");

    // unknown field, named in the message
    let cfg = write_config(&dir, "bad_field.toml", "[trainer]\nlearning_rate_x = 1.0\n");
    let res = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("learning_rate_x"), "stderr: {}", stderr(&res));

    // missing config file, named in the message
    let missing = dir.join("nope.toml");
    let res =
        run(&["train", "--config", missing.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("nope.toml"));

    // dataset path that does not exist
    let cfg = write_config(&dir, "bad_path.toml", "[dataset]\npath = \"/no/such/data.dyadset\"\n");
    let res = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("/no/such/data.dyadset"));

    // eval pointed at a checkpoint that does not exist
    let cfg = write_config(
        &dir,
        "bad_ckpt.toml",
        "[dataset.synth]\nsequences = 3\nduration = 90\n[eval]\ncheckpoint = \"/no/such.dramckpt\"\n",
    );
    let res = run(&["eval", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("/no/such.dramckpt"));
}

#[test]
fn unwritable_output_directory_is_a_runtime_error() {
    let dir = scratch("cli_io_error");
    let cfg = write_config(&dir, "run.toml", SMOKE);
    // a plain file where the output directory should go
    let blocker = dir.join("blocker");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    let res = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 2, "stderr: {}", stderr(&res));
}
