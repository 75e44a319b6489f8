use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn smile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smile"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small but complete experiment: short episodes and a budget of 40
/// iterations with a filter pass every 10.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "run_id = \"tiny\"\noutput_dir = {out:?}\nseed = 3\n\n[env]\nname = \"pointmass2d\"\nhorizon = 30\n\n\
         [data]\nper_level = 2\n\n[train]\nbudget = 1280\nbatch_size = 32\neval_every = 20\neval_episodes = 2\n\
         denoiser_optimize_every = 2\n\n[train.net]\nhidden = [16, 16]\nembed_dim = 4\n\n\
         [train.filter]\nfilter_every = 10\nmin_demos = 1\n{extra}",
        out = dir.join("runs")
    );
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn gen(dir: &Path, config: &Path) -> PathBuf {
    let demos = dir.join("demos.jsonl");
    let o = smile(&["gen-data", "--config", config.to_str().unwrap(), "--out", demos.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    demos
}

#[test]
fn gen_data_writes_header_then_records() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = smile(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("level,trajectories,mean_return\n"), "{out}");
    assert_eq!(out.lines().count(), 6);

    let text = fs::read_to_string(tmp.path().join("runs/tiny/demos.jsonl")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("\"format\":\"smile-demos\""));
    // 5 levels x 2 trajectories x 30 steps.
    assert_eq!(lines.count(), 300);
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    for p in [&a, &b] {
        assert!(smile(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", p.to_str().unwrap()])
            .status
            .success());
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn empty_store_config_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("per_level = 2", "per_level = 0");
    fs::write(&cfg, text).unwrap();
    let o = smile(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_names_its_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bogus = 1\n");
    let o = smile(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let lines = fs::read_to_string(&cfg).unwrap().lines().count();
    assert!(stderr(&o).contains(&format!("exp.toml:{lines}:")), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    assert_eq!(smile(&["train"]).status.code(), Some(1));
    assert_eq!(smile(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_writes_artifacts_and_leaves_demos_alone() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let demos = gen(tmp.path(), &cfg);
    let before = fs::read(&demos).unwrap();

    let o = smile(&["train", "--config", cfg.to_str().unwrap(), "--demos", demos.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fraction_of_expert="), "{}", stdout(&o));
    assert_eq!(fs::read(&demos).unwrap(), before);

    let run = tmp.path().join("runs/tiny");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut rows = metrics.lines();
    assert_eq!(
        rows.next().unwrap(),
        "iteration,transitions,denoiser_loss,policy_loss,eval_mean,eval_std,store_size"
    );
    assert_eq!(rows.count(), 40);
    for f in ["denoiser.json", "policy.json", "filtered_demos.jsonl"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    // Passes run every 10 iterations until one sets stop_filtering.
    let mut reports: Vec<PathBuf> = fs::read_dir(run.join("filter")).unwrap().map(|e| e.unwrap().path()).collect();
    reports.sort();
    assert!(!reports.is_empty() && reports.len() <= 4);
    for (i, path) in reports.iter().enumerate() {
        let text = fs::read_to_string(path).unwrap();
        let summary = text.lines().next().unwrap();
        assert!(summary.contains(&format!("\"iteration\":{}", 10 * (i + 1))), "{summary}");
        let stopped = summary.contains("\"stop_filtering\":true");
        let last = i + 1 == reports.len();
        if !last {
            assert!(!stopped, "{summary}");
        } else if reports.len() < 4 {
            assert!(stopped, "{summary}");
        }
    }
}

#[test]
fn training_twice_gives_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let demos = gen(tmp.path(), &cfg);
    let mut csvs = Vec::new();
    for _ in 0..2 {
        let o = smile(&["train", "--config", cfg.to_str().unwrap(), "--demos", demos.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push(fs::read(tmp.path().join("runs/tiny/metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn no_filter_emits_no_reports() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let demos = gen(tmp.path(), &cfg);
    let o = smile(&["train", "--config", cfg.to_str().unwrap(), "--demos", demos.to_str().unwrap(), "--no-filter"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = tmp.path().join("runs/tiny-nofilter");
    assert!(run.join("metrics.csv").is_file());
    assert!(!run.join("filter").exists());
}

#[test]
fn bc_baseline_trains_only_the_baseline() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let demos = gen(tmp.path(), &cfg);
    let o = smile(&["train", "--config", cfg.to_str().unwrap(), "--demos", demos.to_str().unwrap(), "--bc-baseline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = tmp.path().join("runs/tiny-bc");
    assert!(run.join("bc.json").is_file());
    assert!(!run.join("denoiser.json").exists());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    // No denoiser in this path, so its loss column stays empty.
    assert!(metrics.lines().nth(1).unwrap().starts_with("1,32,,"));
}

#[test]
fn dim_mismatch_names_both_dims() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let other = tmp.path().join("other");
    fs::create_dir(&other).unwrap();
    let cfg_1d = write_config(&other, "");
    let text = fs::read_to_string(&cfg_1d).unwrap().replace("pointmass2d", "double_integrator_1d");
    fs::write(&cfg_1d, text).unwrap();
    let demos_1d = gen(&other, &cfg_1d);

    let o = smile(&["train", "--config", cfg.to_str().unwrap(), "--demos", demos_1d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("(2, 1)") && err.contains("(4, 2)"), "{err}");
}

fn trained(tmp: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_config(tmp, "");
    let demos = gen(tmp, &cfg);
    let o = smile(&["train", "--config", cfg.to_str().unwrap(), "--demos", demos.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    (cfg, demos)
}

#[test]
fn audit_prints_bins_and_writes_report() {
    let tmp = TempDir::new().unwrap();
    let (cfg, demos) = trained(tmp.path());
    let run = tmp.path().join("runs/tiny");
    let before = fs::read(&demos).unwrap();
    let report = tmp.path().join("audit.jsonl");
    let o = smile(&[
        "audit",
        "--config",
        cfg.to_str().unwrap(),
        "--denoiser",
        run.join("denoiser.json").to_str().unwrap(),
        "--policy",
        run.join("policy.json").to_str().unwrap(),
        "--demos",
        demos.to_str().unwrap(),
        "--bin-width",
        "1000000",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "return_lo,return_hi,count,mean_step");
    assert_eq!(rows.len(), 2, "{out}");
    assert_eq!(rows[1].split(',').nth(2), Some("10"));
    // Summary line plus one record per trajectory.
    assert_eq!(fs::read_to_string(&report).unwrap().lines().count(), 11);
    assert_eq!(fs::read(&demos).unwrap(), before);
}

#[test]
fn audit_rejects_empty_demo_file() {
    let tmp = TempDir::new().unwrap();
    let (cfg, _) = trained(tmp.path());
    let run = tmp.path().join("runs/tiny");
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = smile(&[
        "audit",
        "--config",
        cfg.to_str().unwrap(),
        "--denoiser",
        run.join("denoiser.json").to_str().unwrap(),
        "--policy",
        run.join("policy.json").to_str().unwrap(),
        "--demos",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn future_checkpoint_version_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let (cfg, demos) = trained(tmp.path());
    let run = tmp.path().join("runs/tiny");
    let ckpt = run.join("denoiser.json");
    let text = fs::read_to_string(&ckpt).unwrap().replacen("\"version\":1", "\"version\":99", 1);
    fs::write(&ckpt, text).unwrap();
    let o = smile(&[
        "audit",
        "--config",
        cfg.to_str().unwrap(),
        "--denoiser",
        ckpt.to_str().unwrap(),
        "--policy",
        run.join("policy.json").to_str().unwrap(),
        "--demos",
        demos.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("version 99"), "{}", stderr(&o));
}

#[test]
fn bench_prints_csv() {
    let tmp = TempDir::new().unwrap();
    let (cfg, _) = trained(tmp.path());
    let run = tmp.path().join("runs/tiny");
    let o = smile(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--denoiser",
        run.join("denoiser.json").to_str().unwrap(),
        "--policy",
        run.join("policy.json").to_str().unwrap(),
        "--decisions",
        "50",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "decisions,steps,one_step_ms_per_1000,naive_ms_per_1000,ratio,mean_gap,mean_abs_gap");
    assert!(rows[1].starts_with("50,10,"), "{out}");
}
