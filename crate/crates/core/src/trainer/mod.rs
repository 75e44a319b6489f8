//! The training loop: interleaved denoiser and generator updates, EMA
//! shadows, periodic self-motivated filtering and evaluation. Also the
//! behavior-cloning baseline loop, the return-bin audit and the
//! one-step versus multi-step reverse benchmark.

mod audit;
mod bench;
mod eval;
mod metrics;

pub use audit::{audit_bins, bin_edges, BinRow};
pub use bench::{bench_reverse, BenchInit, BenchReport};
pub use eval::{cost_ratio, episode_return, evaluate, normalized_score, stats, EvalStats};
pub use metrics::{Instrumentation, MetricsLog, MetricsRow, PhaseTimes, METRICS_HEADER};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    denoiser_loss_with, DiffusionSchedule, LossNorm, NoiseDraws, NoiseModel, NoiseModelArch, ScheduleConfig,
};
use crate::envs::{DemoStore, EnvSpec};
use crate::error::{Error, Result};
use crate::expertise::{filter_dataset, FilterConfig, FilterReport};
use crate::mathcore::{Adam, AdamConfig, Checkpoint, Ema, SeededRng};
use crate::policy::{bc_loss, policy_loss_with, ActionBounds, BcBaseline, GeneratorPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Gradient accumulations per denoiser optimizer step.
    pub denoiser_optimize_every: usize,
    /// Gradient accumulations per generator optimizer step.
    pub policy_optimize_every: usize,
    /// Iterations between EMA updates.
    pub update_ema_every: usize,
    pub ema_decay: f64,
    /// Iterations during which the EMA shadow copies the parameters.
    pub ema_warmup: u64,
    /// Training stops at the first iteration whose consumed transitions
    /// reach this count.
    pub budget: u64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub loss_norm: LossNorm,
    /// When false every batch is drawn from the full, unmodified store.
    pub filtering: bool,
    pub schedule: ScheduleConfig,
    pub filter: FilterConfig,
    pub net: NoiseModelArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-3,
            denoiser_optimize_every: 10,
            policy_optimize_every: 1,
            update_ema_every: 10,
            ema_decay: 0.995,
            ema_warmup: 1000,
            budget: 500_000,
            eval_every: 2500,
            eval_episodes: 10,
            loss_norm: LossNorm::L1,
            filtering: true,
            schedule: ScheduleConfig::default(),
            filter: FilterConfig::default(),
            net: NoiseModelArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("denoiser_optimize_every", self.denoiser_optimize_every),
            ("policy_optimize_every", self.policy_optimize_every),
            ("update_ema_every", self.update_ema_every),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::config("ema_decay must lie in [0, 1]"));
        }
        if self.budget < self.batch_size as u64 {
            return Err(Error::config(format!(
                "budget {} is smaller than batch_size {}",
                self.budget, self.batch_size
            )));
        }
        if self.net.embed_dim == 0 || self.net.hidden.contains(&0) {
            return Err(Error::config("network widths must be positive"));
        }
        let sched = DiffusionSchedule::from_config(self.schedule)?;
        self.filter.validate(sched.steps())
    }

    /// Iterations the budget allows.
    pub fn iterations(&self) -> u64 {
        self.budget.div_ceil(self.batch_size as u64)
    }
}

/// Hooks called as training progresses. All default to doing nothing.
pub trait TrainObserver {
    fn on_metrics(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }

    /// Called once per filter pass, numbered from 1.
    fn on_filter(&mut self, _pass: usize, _report: &FilterReport) -> Result<()> {
        Ok(())
    }

    /// Called with the live models right before a divergence error is
    /// returned.
    fn on_divergence(&mut self, _iteration: u64, _denoiser: &NoiseModel, _policy: &GeneratorPolicy) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub denoiser: NoiseModel,
    pub policy: GeneratorPolicy,
    pub ema_denoiser: NoiseModel,
    pub ema_policy: GeneratorPolicy,
    pub denoiser_opt: Adam,
    pub policy_opt: Adam,
    /// Store at the end of training, rewards stripped.
    pub store: DemoStore,
    pub stop_filtering: bool,
    pub log: MetricsLog,
}

impl TrainOutcome {
    /// Live parameters plus optimizer state and EMA shadow.
    pub fn denoiser_checkpoint(&self) -> Checkpoint {
        let mut c = self.denoiser.to_checkpoint();
        c.optimizer = Some(self.denoiser_opt.clone());
        c.ema_shadow = Some(self.ema_denoiser.params().to_vec());
        c
    }

    pub fn policy_checkpoint(&self) -> Checkpoint {
        let mut c = self.policy.to_checkpoint();
        c.optimizer = Some(self.policy_opt.clone());
        c.ema_shadow = Some(self.ema_policy.params().to_vec());
        c
    }
}

/// Denoiser from a checkpoint, preferring its EMA shadow.
pub fn load_denoiser(ckpt: &Checkpoint) -> Result<NoiseModel> {
    let m = NoiseModel::from_checkpoint(ckpt)?;
    match &ckpt.ema_shadow {
        Some(shadow) => m.with_params(shadow),
        None => Ok(m),
    }
}

/// Generator from a checkpoint, preferring its EMA shadow.
pub fn load_policy(ckpt: &Checkpoint) -> Result<GeneratorPolicy> {
    let p = GeneratorPolicy::from_checkpoint(ckpt)?;
    match &ckpt.ema_shadow {
        Some(shadow) => p.with_params(shadow),
        None => Ok(p),
    }
}

fn bounds_for(env: Option<&EnvSpec>, action_dim: usize) -> ActionBounds {
    match env {
        Some(spec) => spec.bounds(),
        // Finite so checkpoints stay valid JSON.
        None => ActionBounds {
            low: vec![f64::MIN; action_dim],
            high: vec![f64::MAX; action_dim],
        },
    }
}

fn check_dims(store: &DemoStore, env: Option<&EnvSpec>) -> Result<(usize, usize)> {
    let (Some(sd), Some(ad)) = (store.state_dim(), store.action_dim()) else {
        return Err(Error::invalid("cannot train on an empty demo store"));
    };
    if let Some(spec) = env {
        if sd != spec.state_dim() || ad != spec.action_dim() {
            return Err(Error::invalid(format!(
                "demos have state/action dims ({sd}, {ad}) but {} has ({}, {})",
                spec.name.as_str(),
                spec.state_dim(),
                spec.action_dim()
            )));
        }
    }
    Ok((sd, ad))
}

fn finite(what: &str, v: f64, iteration: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("{what} became {v} at iteration {iteration}")))
    }
}

/// Runs the full loop on `store`. Rewards in `store` are stripped before
/// training and only used to annotate filter reports.
pub fn train(
    cfg: &TrainConfig,
    store: &DemoStore,
    env: Option<&EnvSpec>,
    rng: &SeededRng,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (sd, ad) = check_dims(store, env)?;
    let sched = DiffusionSchedule::from_config(cfg.schedule)?;
    let arch = &cfg.net;

    let mut denoiser = NoiseModel::new(sd, ad, sched.steps(), arch, cfg.loss_norm, &mut rng.fork("init/denoiser"))?;
    let mut policy = GeneratorPolicy::new(
        sd,
        &arch.hidden,
        arch.activation,
        bounds_for(env, ad),
        &mut rng.fork("init/policy"),
    )?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut denoiser_opt = Adam::new(adam, denoiser.num_params());
    let mut policy_opt = Adam::new(adam, policy.params().len());
    let mut ema_d = Ema::new(denoiser.params(), cfg.ema_decay, cfg.ema_warmup)?;
    let mut ema_p = Ema::new(policy.params(), cfg.ema_decay, cfg.ema_warmup)?;

    let mut batch_rng = rng.fork("train/batches");
    let mut noise_rng = rng.fork("train/noise");
    let eval_base = rng.fork("eval");

    let mut current = store.without_rewards();
    let mut filtered = false;
    let mut stop_filtering = false;
    let mut filter_passes = 0;
    let mut log = MetricsLog::default();
    let iterations = cfg.iterations();
    let mut grad_d = vec![0.0; denoiser.num_params()];
    let mut grad_p = vec![0.0; policy.params().len()];

    for iteration in 1..=iterations {
        let batch = current.sample_batch(cfg.batch_size, &mut batch_rng)?;
        if filtered {
            log.counters.batches_from_filtered += 1;
        }

        let clock = Instant::now();
        grad_d.fill(0.0);
        let k = cfg.denoiser_optimize_every;
        let mut loss_d = 0.0;
        for _ in 0..k {
            let draws = NoiseDraws::sample(batch.len(), ad, &sched, &mut noise_rng);
            loss_d += denoiser_loss_with(&denoiser, &batch, &sched, &draws, 1.0 / k as f64, &mut grad_d)?;
        }
        log.counters.denoiser_grad_evals += k as u64;
        loss_d /= k as f64;
        let step = finite("denoiser loss", loss_d, iteration)
            .and_then(|_| denoiser_opt.step(denoiser.params_mut(), &grad_d));
        if let Err(e) = step {
            observer.on_divergence(iteration, &denoiser, &policy);
            return Err(diverged(e, "denoiser", iteration));
        }
        log.counters.denoiser_steps += 1;
        log.times.denoiser += clock.elapsed();

        let clock = Instant::now();
        grad_p.fill(0.0);
        let k = cfg.policy_optimize_every;
        let mut loss_p = 0.0;
        for _ in 0..k {
            let draws = NoiseDraws::sample(batch.len(), ad, &sched, &mut noise_rng);
            loss_p += policy_loss_with(&policy, &denoiser, &batch, &sched, &draws, 1.0 / k as f64, &mut grad_p)?;
        }
        log.counters.policy_grad_evals += k as u64;
        loss_p /= k as f64;
        let step = finite("policy loss", loss_p, iteration)
            .and_then(|_| policy_opt.step(policy.params_mut(), &grad_p));
        if let Err(e) = step {
            observer.on_divergence(iteration, &denoiser, &policy);
            return Err(diverged(e, "policy", iteration));
        }
        log.counters.policy_steps += 1;
        log.times.policy += clock.elapsed();

        if iteration % cfg.update_ema_every as u64 == 0 {
            ema_d.update(denoiser.params(), iteration)?;
            ema_p.update(policy.params(), iteration)?;
            log.counters.ema_updates += 1;
        }

        if cfg.filtering && !stop_filtering && iteration % cfg.filter.filter_every as u64 == 0 {
            let clock = Instant::now();
            let snap_d = denoiser.with_params(ema_d.shadow())?;
            let snap_p = policy.with_params(ema_p.shadow())?;
            log.counters.filter_reads_ema += 1;
            let mut outcome = filter_dataset(&current, &snap_d, &snap_p, &sched, &cfg.filter, iteration)?;
            outcome.report.annotate_returns(store);
            filter_passes += 1;
            observer.on_filter(filter_passes, &outcome.report)?;
            stop_filtering = outcome.report.summary.stop_filtering;
            log.filters.push(outcome.report.summary.clone());
            if let Some(next) = outcome.store {
                current = next;
                filtered = true;
            }
            log.times.filter += clock.elapsed();
        }

        let mut eval = None;
        if let Some(spec) = env {
            if iteration % cfg.eval_every as u64 == 0 || iteration == iterations {
                let clock = Instant::now();
                let snap_p = policy.with_params(ema_p.shadow())?;
                eval = Some(evaluate(&snap_p, spec, cfg.eval_episodes, &eval_base)?);
                log.times.eval += clock.elapsed();
            }
        }

        let row = MetricsRow {
            iteration,
            transitions: iteration * cfg.batch_size as u64,
            denoiser_loss: Some(loss_d),
            policy_loss: loss_p,
            eval_mean: eval.map(|e| e.mean),
            eval_std: eval.map(|e| e.std),
            store_size: current.len(),
        };
        observer.on_metrics(&row)?;
        log.push(row);
    }

    let ema_denoiser = denoiser.with_params(ema_d.shadow())?;
    let ema_policy = policy.with_params(ema_p.shadow())?;
    Ok(TrainOutcome {
        denoiser,
        policy,
        ema_denoiser,
        ema_policy,
        denoiser_opt,
        policy_opt,
        store: current,
        stop_filtering,
        log,
    })
}

fn diverged(e: Error, what: &str, iteration: u64) -> Error {
    match e {
        Error::Training(_) => e,
        other => Error::Training(format!("{what} update failed at iteration {iteration}: {other}")),
    }
}

#[derive(Debug, Clone)]
pub struct BcOutcome {
    pub baseline: BcBaseline,
    pub ema_baseline: BcBaseline,
    pub opt: Adam,
    pub log: MetricsLog,
}

impl BcOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = self.baseline.to_checkpoint();
        c.optimizer = Some(self.opt.clone());
        c.ema_shadow = Some(self.ema_baseline.params().to_vec());
        c
    }
}

/// Behavior cloning on the full store with the same batch size, budget, EMA
/// and evaluation schedule as [`train`]. The `policy_loss` column holds the
/// cloning loss; `denoiser_loss` stays empty.
pub fn train_bc(
    cfg: &TrainConfig,
    store: &DemoStore,
    env: Option<&EnvSpec>,
    rng: &SeededRng,
    observer: &mut dyn TrainObserver,
) -> Result<BcOutcome> {
    cfg.validate()?;
    let (sd, ad) = check_dims(store, env)?;
    let arch = &cfg.net;
    let mut baseline = BcBaseline::new(sd, &arch.hidden, arch.activation, bounds_for(env, ad), &mut rng.fork("init/bc"))?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(adam, baseline.params().len());
    let mut ema = Ema::new(baseline.params(), cfg.ema_decay, cfg.ema_warmup)?;
    let mut batch_rng = rng.fork("train/batches");
    let eval_base = rng.fork("eval");
    let current = store.without_rewards();
    let mut log = MetricsLog::default();
    let iterations = cfg.iterations();

    for iteration in 1..=iterations {
        let batch = current.sample_batch(cfg.batch_size, &mut batch_rng)?;
        let clock = Instant::now();
        let lg = bc_loss(&baseline, &batch)?;
        finite("bc loss", lg.loss, iteration)?;
        opt.step(baseline.params_mut(), &lg.grad)
            .map_err(|e| diverged(e, "bc", iteration))?;
        log.counters.policy_steps += 1;
        log.times.policy += clock.elapsed();
        if iteration % cfg.update_ema_every as u64 == 0 {
            ema.update(baseline.params(), iteration)?;
            log.counters.ema_updates += 1;
        }
        let mut eval = None;
        if let Some(spec) = env {
            if iteration % cfg.eval_every as u64 == 0 || iteration == iterations {
                let clock = Instant::now();
                eval = Some(evaluate(&baseline.with_params(ema.shadow())?, spec, cfg.eval_episodes, &eval_base)?);
                log.times.eval += clock.elapsed();
            }
        }
        let row = MetricsRow {
            iteration,
            transitions: iteration * cfg.batch_size as u64,
            denoiser_loss: None,
            policy_loss: lg.loss,
            eval_mean: eval.map(|e| e.mean),
            eval_std: eval.map(|e| e.std),
            store_size: current.len(),
        };
        observer.on_metrics(&row)?;
        log.push(row);
    }
    let ema_baseline = baseline.with_params(ema.shadow())?;
    Ok(BcOutcome {
        baseline,
        ema_baseline,
        opt,
        log,
    })
}
