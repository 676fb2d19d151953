//! End-to-end tests that drive the installed binary the way a shell would:
//! real process spawns, real exit codes, real files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dlion_cli::config::{self, ConfigFile};
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dlion"));
    // keep the ambient environment from steering output paths
    cmd.env_remove("DLION_OUT_DIR");
    cmd
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes `file` as TOML into `dir` and returns the path.
fn write_config(dir: &Path, file: &ConfigFile) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, config::to_toml(file).unwrap()).unwrap();
    path
}

fn short_default_run(rounds: u64) -> ConfigFile {
    let mut file = ConfigFile::defaults();
    file.run.rounds = rounds;
    file
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn print_defaults_round_trips_through_the_parser() {
    let out = bin().args(["config", "print-defaults"]).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    let parsed: ConfigFile = toml::from_str(&text).unwrap();
    assert_eq!(parsed, ConfigFile::defaults());
}

#[test]
fn strict_config_rejects_a_misspelled_key() {
    let dir = TempDir::new().unwrap();
    let mut text = config::to_toml(&ConfigFile::defaults()).unwrap();
    text.push_str("\n[run.hypre]\nlr = 0.1\n");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();

    let out = bin()
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("hypre"),
        "error should name the offending key: {}",
        stderr_of(&out)
    );
}

#[test]
fn run_writes_csv_rows_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &short_default_run(5));
    let out_dir = dir.path().join("out");

    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let lines = csv_lines(&out_dir.join("run.csv"));
    assert_eq!(
        lines[0],
        "round,loss,full_loss,kkt_score,dist_f,up_bits,down_bits"
    );
    assert_eq!(lines.len(), 6, "header plus one row per round");
    assert!(lines[1].starts_with("1,"));
    assert!(lines[5].starts_with("5,"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 5);
    assert_eq!(summary["method"], "d_lion_mavo");
}

#[test]
fn workers_flag_overrides_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &short_default_run(3));
    let out_dir = dir.path().join("out");

    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--workers", "2", "--out-dir"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    // d=20 under the ternary codec is 40 payload bits per worker, so the
    // uplink column tells us how many workers actually ran
    let lines = csv_lines(&out_dir.join("run.csv"));
    let up_bits: u64 = lines[1].split(',').nth(5).unwrap().parse().unwrap();
    assert_eq!(up_bits, 2 * 40, "two workers, not the config file's four");
}

#[test]
fn out_dir_env_var_is_used_and_the_flag_beats_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &short_default_run(2));
    let env_dir = dir.path().join("from-env");
    let flag_dir = dir.path().join("from-flag");

    let out = bin()
        .env("DLION_OUT_DIR", &env_dir)
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(env_dir.join("run.csv").exists());

    let out = bin()
        .env("DLION_OUT_DIR", &env_dir)
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&flag_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(flag_dir.join("run.csv").exists());
}

#[test]
fn sweep_emits_one_directory_per_value_and_a_combined_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &short_default_run(5));
    let out_dir = dir.path().join("sweep");

    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args([
            "--axis",
            "method",
            "--values",
            "d_lion_mavo,d_lion_avg,g_lion,g_adamw",
            "--out-dir",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let lines = csv_lines(&out_dir.join("sweep.csv"));
    assert_eq!(lines.len(), 5, "header plus one row per sweep value");
    assert!(lines[0].starts_with("axis,value,rounds,"));
    for name in ["d_lion_mavo", "d_lion_avg", "g_lion", "g_adamw"] {
        assert!(
            out_dir.join(format!("method_{name}")).join("run.csv").exists(),
            "missing per-point directory for {name}"
        );
        assert!(
            lines.iter().any(|l| l.starts_with(&format!("method,{name},"))),
            "missing combined row for {name}"
        );
    }
}

#[test]
fn bandwidth_rejects_unknown_methods() {
    let out = bin()
        .args(["bandwidth", "--dim", "100", "--workers", "4", "--methods", "warp_drive"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("warp_drive"),
        "error should echo the bad name: {}",
        stderr_of(&out)
    );
}

#[test]
fn check_rejects_unknown_suites() {
    let out = bin().args(["check", "never_heard_of_it"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn diverging_run_exits_three() {
    let dir = TempDir::new().unwrap();
    let mut file = ConfigFile::defaults();
    file.run.method = dlion::sim::Method::Graddrop;
    file.run.rounds = 400;
    file.run.hyper.lr = 10.0;
    file.run.hyper.weight_decay = 0.0;
    file.run.compression.keep = 1.0;
    let cfg = write_config(dir.path(), &file);

    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("round"), "stderr: {}", stderr_of(&out));
}

#[test]
fn resume_rejects_changed_workers_seed_or_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &short_default_run(6));
    let out_dir = dir.path().join("out");

    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--rounds", "3", "--checkpoint-at", "3", "--out-dir"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let ckpt = out_dir.join("checkpoint_3.ckpt");
    assert!(ckpt.exists());

    for extra in [&["--workers", "8"][..], &["--seed", "1"][..]] {
        let out = bin()
            .args(["run", "--resume"])
            .arg(&ckpt)
            .args(extra)
            .arg("--out-dir")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "{extra:?} on resume should be refused: {}",
            stderr_of(&out)
        );
    }

    // a config file that disagrees with the checkpoint's stored config
    let mut other = short_default_run(6);
    other.run.master_seed = 99;
    let other_cfg = dir.path().join("other.toml");
    fs::write(&other_cfg, config::to_toml(&other).unwrap()).unwrap();
    let out = bin()
        .args(["run", "--resume"])
        .arg(&ckpt)
        .arg("--config")
        .arg(&other_cfg)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("disagrees"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &short_default_run(50));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    for out_dir in [&a, &b] {
        let out = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    assert_eq!(
        fs::read(a.join("run.csv")).unwrap(),
        fs::read(b.join("run.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );
}
