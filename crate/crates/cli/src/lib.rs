//! Commands behind the `smile` binary. Each one reads an experiment config
//! and never modifies its input files.

// Negated float comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use smile_core::diffusion::{DiffusionSchedule, NoiseModel};
use smile_core::envs::{generate_demos, read_demos, write_demos, DemoHeader, DemoStore, EnvSpec, Trajectory};
use smile_core::expertise::{filter_dataset, FilterReport};
use smile_core::mathcore::{Checkpoint, Matrix, SeededRng};
use smile_core::policy::GeneratorPolicy;
use smile_core::trainer::{
    audit_bins, bench_reverse, bin_edges, cost_ratio, evaluate, load_denoiser, load_policy, train, train_bc,
    BenchInit, BenchReport, MetricsRow, TrainObserver, METRICS_HEADER,
};
use smile_core::{Error, Result};

pub use config::ExperimentConfig;

/// Exit code for bad input or configuration.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for failures while running (I/O, divergence).
pub const EXIT_RUNTIME: i32 = 2;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stdout_err(source: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Generates the mixed-quality demo file. Prints one
/// `level,trajectories,mean_return` line per noise level to `out`.
pub fn gen_data(cfg: &ExperimentConfig, dest: Option<&Path>, out: &mut dyn Write) -> Result<PathBuf> {
    let spec = cfg.env.spec();
    if cfg.data.per_level == 0 || cfg.data.levels.is_empty() {
        return Err(Error::InvalidConfig(
            "data.levels and data.per_level must produce at least one trajectory".into(),
        ));
    }
    let store = generate_demos(&spec, &cfg.data.expert, &cfg.data.levels, cfg.data.per_level, &cfg.root_rng().fork("data"))?;
    let path = match dest {
        Some(p) => p.to_path_buf(),
        None => {
            create_dir(&cfg.run_dir())?;
            cfg.run_dir().join("demos.jsonl")
        }
    };
    let header = DemoHeader::new(spec.name.as_str(), spec.state_dim(), spec.action_dim(), spec.horizon, cfg.seed);
    write_demos(&path, &header, &store)?;

    let mut per_level: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for t in store.trajectories() {
        let idx = cfg.data.levels.iter().position(|l| Some(*l) == t.noise_level).unwrap_or(0);
        let e = per_level.entry(idx).or_default();
        e.0 += 1;
        e.1 += t.total_reward()?;
    }
    writeln!(out, "level,trajectories,mean_return").map_err(stdout_err)?;
    for (idx, (n, total)) in per_level {
        writeln!(out, "{},{n},{:.4}", cfg.data.levels[idx], total / n as f64).map_err(stdout_err)?;
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainFlags {
    pub no_filter: bool,
    pub bc_baseline: bool,
}

/// Streams metrics rows to CSV and filter reports to per-pass files.
struct RunObserver {
    dir: PathBuf,
    metrics_path: PathBuf,
    metrics: BufWriter<File>,
}

impl RunObserver {
    fn new(dir: &Path) -> Result<Self> {
        let metrics_path = dir.join("metrics.csv");
        let file = File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        let mut metrics = BufWriter::new(file);
        writeln!(metrics, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics_path,
            metrics,
        })
    }

    fn finish(mut self) -> Result<()> {
        self.metrics.flush().map_err(io_err(&self.metrics_path))
    }
}

impl TrainObserver for RunObserver {
    fn on_metrics(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.metrics, "{}", row.to_csv()).map_err(io_err(&self.metrics_path))?;
        if row.eval_mean.is_some() {
            self.metrics.flush().map_err(io_err(&self.metrics_path))?;
        }
        Ok(())
    }

    fn on_filter(&mut self, pass: usize, report: &FilterReport) -> Result<()> {
        let dir = self.dir.join("filter");
        create_dir(&dir)?;
        report.save(&dir.join(format!("pass-{pass:04}.jsonl")))
    }

    fn on_divergence(&mut self, iteration: u64, denoiser: &NoiseModel, policy: &GeneratorPolicy) {
        // Best effort: the training error is what gets reported.
        let _ = self.metrics.flush();
        let _ = denoiser
            .to_checkpoint()
            .save(&self.dir.join(format!("diverged-{iteration}-denoiser.json")));
        let _ = policy
            .to_checkpoint()
            .save(&self.dir.join(format!("diverged-{iteration}-policy.json")));
    }
}

/// Directory a training run writes to; ablations get their own suffix so
/// paired runs can share a config.
pub fn train_dir(cfg: &ExperimentConfig, flags: TrainFlags) -> PathBuf {
    let suffix = if flags.bc_baseline {
        "-bc"
    } else if flags.no_filter {
        "-nofilter"
    } else {
        ""
    };
    cfg.output_dir.join(format!("{}{suffix}", cfg.run_id))
}

fn load_demos_for(spec: &EnvSpec, path: &Path) -> Result<DemoStore> {
    let (header, store) = read_demos(path, true)?;
    if header.state_dim != spec.state_dim() || header.action_dim != spec.action_dim() {
        return Err(Error::InvalidInput(format!(
            "{}: demos have state/action dims ({}, {}) but the config's {} has ({}, {})",
            path.display(),
            header.state_dim,
            header.action_dim,
            spec.name.as_str(),
            spec.state_dim(),
            spec.action_dim()
        )));
    }
    Ok(store)
}

/// Trains on `demos` and writes metrics, filter reports, checkpoints and
/// the surviving demos into [`train_dir`]. Prints a short summary to `out`.
pub fn train_cmd(cfg: &ExperimentConfig, demos: &Path, flags: TrainFlags, out: &mut dyn Write) -> Result<PathBuf> {
    let spec = cfg.env.spec();
    let store = load_demos_for(&spec, demos)?;
    let mut tcfg = cfg.train.clone();
    if flags.no_filter {
        tcfg.filtering = false;
    }
    let dir = train_dir(cfg, flags);
    create_dir(&dir)?;
    let rng = cfg.root_rng().fork("train");
    let mut observer = RunObserver::new(&dir)?;

    let final_eval = if flags.bc_baseline {
        let outcome = train_bc(&tcfg, &store, Some(&spec), &rng, &mut observer)?;
        observer.finish()?;
        outcome.checkpoint().save(&dir.join("bc.json"))?;
        outcome.log.last_eval()
    } else {
        let outcome = train(&tcfg, &store, Some(&spec), &rng, &mut observer)?;
        observer.finish()?;
        outcome.denoiser_checkpoint().save(&dir.join("denoiser.json"))?;
        outcome.policy_checkpoint().save(&dir.join("policy.json"))?;
        let kept = with_rewards(&outcome.store, &store)?;
        let header = DemoHeader::new(spec.name.as_str(), spec.state_dim(), spec.action_dim(), spec.horizon, cfg.seed);
        write_demos(&dir.join("filtered_demos.jsonl"), &header, &kept)?;
        writeln!(
            out,
            "filter_passes={} store_size={} stop_filtering={}",
            outcome.log.filters.len(),
            outcome.store.len(),
            outcome.stop_filtering
        )
        .map_err(stdout_err)?;
        outcome.log.last_eval()
    };

    if let Some((mean, std)) = final_eval {
        let expert = evaluate(&cfg.data.expert.actor(&spec), &spec, tcfg.eval_episodes, &rng.fork("eval"))?;
        writeln!(
            out,
            "final_return={mean:.4} final_std={std:.4} expert_return={:.4} fraction_of_expert={:.4}",
            expert.mean,
            cost_ratio(mean, expert.mean)
        )
        .map_err(stdout_err)?;
    }
    Ok(dir)
}

/// Copies rewards back from `original` for trajectories that survived whole.
fn with_rewards(kept: &DemoStore, original: &DemoStore) -> Result<DemoStore> {
    let trajectories: Vec<Trajectory> = kept
        .trajectories()
        .iter()
        .map(|t| match original.get(t.id) {
            Some(o) if o.len() == t.len() => o.clone(),
            _ => t.clone(),
        })
        .collect();
    DemoStore::new(trajectories)
}

fn load_models(denoiser: &Path, policy: &Path) -> Result<(NoiseModel, GeneratorPolicy)> {
    let model = load_denoiser(&Checkpoint::load(denoiser)?)?;
    let policy = load_policy(&Checkpoint::load(policy)?)?;
    if model.state_dim() != policy.state_dim() || model.action_dim() != policy.action_dim() {
        return Err(Error::InvalidInput(format!(
            "denoiser dims ({}, {}) and policy dims ({}, {}) differ",
            model.state_dim(),
            model.action_dim(),
            policy.state_dim(),
            policy.action_dim()
        )));
    }
    Ok((model, policy))
}

pub struct AuditArgs<'a> {
    pub denoiser: &'a Path,
    pub policy: &'a Path,
    pub demos: &'a Path,
    pub bin_width: f64,
    /// Where the per-segment report goes.
    pub report: &'a Path,
}

/// Prints the return-bin table as CSV and writes a filter-format report of
/// every trajectory's predicted step. The demo file is only read.
pub fn audit_cmd(cfg: &ExperimentConfig, args: &AuditArgs, out: &mut dyn Write) -> Result<()> {
    let (model, policy) = load_models(args.denoiser, args.policy)?;
    let (header, store) = read_demos(args.demos, true)?;
    if header.state_dim != model.state_dim() || header.action_dim != model.action_dim() {
        return Err(Error::InvalidInput(format!(
            "{}: demos have dims ({}, {}) but the checkpoints expect ({}, {})",
            args.demos.display(),
            header.state_dim,
            header.action_dim,
            model.state_dim(),
            model.action_dim()
        )));
    }
    let sched = DiffusionSchedule::from_config(cfg.train.schedule)?;
    if sched.steps() != model.steps() {
        return Err(Error::InvalidInput(format!(
            "config schedule has {} steps but the denoiser was trained with {}",
            sched.steps(),
            model.steps()
        )));
    }
    let returns = store
        .trajectories()
        .iter()
        .map(Trajectory::total_reward)
        .collect::<Result<Vec<_>>>()?;
    let edges = bin_edges(&returns, args.bin_width)?;
    let rows = audit_bins(&store, &model, &policy, &sched, &edges)?;

    let mut report = filter_dataset(&store, &model, &policy, &sched, &cfg.train.filter, 0)?.report;
    report.annotate_returns(&store);
    report.save(args.report)?;

    writeln!(out, "return_lo,return_hi,count,mean_step").map_err(stdout_err)?;
    for row in rows {
        writeln!(out, "{}", row.to_csv()).map_err(stdout_err)?;
    }
    Ok(())
}

/// Times the one-step generator against the multi-step reverse process on
/// states visited by the generator itself.
pub fn bench_cmd(
    cfg: &ExperimentConfig,
    denoiser: &Path,
    policy: &Path,
    decisions: usize,
    out: &mut dyn Write,
) -> Result<BenchReport> {
    if decisions == 0 {
        return Err(Error::InvalidInput("decisions must be at least 1".into()));
    }
    let (model, policy) = load_models(denoiser, policy)?;
    let spec = cfg.env.spec();
    if model.state_dim() != spec.state_dim() || model.action_dim() != spec.action_dim() {
        return Err(Error::InvalidInput(format!(
            "checkpoints have dims ({}, {}) but {} has ({}, {})",
            model.state_dim(),
            model.action_dim(),
            spec.name.as_str(),
            spec.state_dim(),
            spec.action_dim()
        )));
    }
    let sched = DiffusionSchedule::from_config(cfg.train.schedule)?;
    let root = cfg.root_rng().fork("bench");
    let states = visited_states(&policy, &spec, decisions, &root)?;
    let report = bench_reverse(&model, &policy, &states, &BenchInit::Prior, &sched, &mut root.fork("reverse"))?;
    writeln!(out, "{}", BenchReport::CSV_HEADER).map_err(stdout_err)?;
    writeln!(out, "{}", report.to_csv()).map_err(stdout_err)?;
    Ok(report)
}

fn visited_states(policy: &GeneratorPolicy, spec: &EnvSpec, n: usize, root: &SeededRng) -> Result<Matrix> {
    let mut states = Matrix::zeros(n, spec.state_dim());
    let mut filled = 0;
    let mut episode = 0;
    while filled < n {
        let mut rng = root.fork(&format!("episode{episode}"));
        let mut state = spec.reset(&mut rng);
        while filled < n {
            states.row_mut(filled).copy_from_slice(&state.obs);
            filled += 1;
            let a = policy.act_clipped(&state.obs)?;
            let step = spec.step(&state, &a)?;
            if step.done {
                break;
            }
            state = step.next;
        }
        episode += 1;
    }
    Ok(states)
}
