//! Conditioned Q-values over diffusion steps, per-trajectory step prediction
//! and the self-motivated dataset filter.
//!
//! `Q_t(a | a_ref) = -||a - (a_ref - sigma_t eps(s, a_ref, t))||^2` scores how
//! well `t` denoising steps take the reference action onto the target. The
//! predicted step of a trajectory is the `t` with the best trajectory-mean Q.
//! A step of zero means denoising the current policy does not bring it any
//! closer to the demonstration, so the demonstration is no better than the
//! policy.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionSchedule, NoiseModel};
use crate::envs::{DemoStore, Segment, Trajectory};
use crate::error::{Error, Result};
use crate::mathcore::Matrix;
use crate::policy::GeneratorPolicy;

/// `Q_t(a_target | a_ref)` at one state.
pub fn q_value(
    model: &NoiseModel,
    s: &[f64],
    a_target: &[f64],
    a_ref: &[f64],
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    sched.check_step(t)?;
    if a_target.len() != a_ref.len() {
        return Err(Error::invalid("target and reference actions differ in dim"));
    }
    if t == 0 {
        return Ok(-sq_dist(a_target, a_ref));
    }
    let eps = model.predict(s, a_ref, t)?;
    let sigma = sched.sigma(t);
    Ok(-a_target
        .iter()
        .zip(a_ref)
        .zip(&eps)
        .map(|((y, x), e)| (y - (x - sigma * e)).powi(2))
        .sum::<f64>())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Mean Q over rows for every `t' = 0..=T`.
pub fn q_curve(
    model: &NoiseModel,
    states: &Matrix,
    targets: &Matrix,
    refs: &Matrix,
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    let n = states.rows();
    if n == 0 {
        return Err(Error::invalid("cannot score an empty trajectory"));
    }
    if targets.rows() != n || refs.rows() != n || targets.cols() != refs.cols() {
        return Err(Error::invalid("states, targets and references must align"));
    }
    if model.steps() < sched.steps() {
        return Err(Error::invalid("noise model covers fewer steps than the schedule"));
    }
    let mut curve = Vec::with_capacity(sched.steps() + 1);
    let q0: f64 = (0..n).map(|r| sq_dist(targets.row(r), refs.row(r))).sum();
    curve.push(-q0 / n as f64);
    for t in 1..=sched.steps() {
        let eps = model.predict_at(states, refs, t)?;
        let sigma = sched.sigma(t);
        let mut total = 0.0;
        for r in 0..n {
            for ((y, x), e) in targets.row(r).iter().zip(refs.row(r)).zip(eps.row(r)) {
                total += (y - (x - sigma * e)).powi(2);
            }
        }
        curve.push(-total / n as f64);
    }
    Ok(curve)
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_step(curve: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in curve.iter().enumerate().skip(1) {
        if v > curve[best] {
            best = i;
        }
    }
    best
}

/// Predicted step and mean-Q curve with explicit reference actions.
pub fn step_from_actions(
    model: &NoiseModel,
    states: &Matrix,
    targets: &Matrix,
    refs: &Matrix,
    sched: &DiffusionSchedule,
) -> Result<(usize, Vec<f64>)> {
    let curve = q_curve(model, states, targets, refs, sched)?;
    Ok((argmax_step(&curve), curve))
}

/// `t(tau)`, scoring the trajectory's actions against the policy's.
pub fn predict_diffusion_step(
    model: &NoiseModel,
    policy: &GeneratorPolicy,
    traj: &Trajectory,
    sched: &DiffusionSchedule,
) -> Result<usize> {
    Ok(predict_with_curve(model, policy, traj, sched)?.0)
}

pub fn predict_with_curve(
    model: &NoiseModel,
    policy: &GeneratorPolicy,
    traj: &Trajectory,
    sched: &DiffusionSchedule,
) -> Result<(usize, Vec<f64>)> {
    if traj.is_empty() {
        return Err(Error::invalid(format!("trajectory {} is empty", traj.id)));
    }
    let states = traj.states();
    let refs = policy.act_batch(&states)?;
    step_from_actions(model, &states, &traj.actions(), &refs, sched)
}

fn default_filter_every() -> usize {
    100
}

fn default_min_demos() -> usize {
    10
}

fn default_step_threshold() -> usize {
    1
}

fn default_max_demo_len() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Iterations between filter passes.
    #[serde(default = "default_filter_every")]
    pub filter_every: usize,
    /// A pass that would leave fewer segments than this drops nothing and
    /// switches filtering off.
    #[serde(default = "default_min_demos")]
    pub min_demos: usize,
    /// Segments with `t(tau) <= step_threshold` are dropped.
    #[serde(default = "default_step_threshold")]
    pub step_threshold: usize,
    #[serde(default = "default_max_demo_len")]
    pub max_demo_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            filter_every: default_filter_every(),
            min_demos: default_min_demos(),
            step_threshold: default_step_threshold(),
            max_demo_len: default_max_demo_len(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.filter_every == 0 {
            return Err(Error::config("filter_every must be at least 1"));
        }
        if self.min_demos == 0 {
            return Err(Error::config("min_demos must be at least 1"));
        }
        if self.step_threshold > steps {
            return Err(Error::config(format!(
                "step_threshold {} exceeds the {steps} diffusion steps",
                self.step_threshold
            )));
        }
        if self.max_demo_len == 0 {
            return Err(Error::config("max_demo_len must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Drop,
}

/// Scoring of one segment in a filter pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: u64,
    pub parent: u64,
    pub start: usize,
    pub len: usize,
    pub step: usize,
    pub mean_q: Vec<f64>,
    pub verdict: Verdict,
    pub noise_level: Option<f64>,
    /// Undiscounted return, filled in only for reporting.
    #[serde(rename = "return")]
    pub ret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub iteration: u64,
    pub evaluated: usize,
    pub kept: usize,
    pub dropped: usize,
    pub store_before: usize,
    pub store_after: usize,
    pub step_threshold: usize,
    pub stop_filtering: bool,
    pub committed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub summary: FilterSummary,
    pub records: Vec<SegmentRecord>,
}

impl FilterReport {
    /// One JSON object per line: the summary, then one record per segment.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, &self.summary)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn kept_records(&self) -> impl Iterator<Item = &SegmentRecord> {
        self.records.iter().filter(|r| r.verdict == Verdict::Keep)
    }

    /// Fills in segment returns from a store that still carries rewards,
    /// matching by parent id and offset.
    pub fn annotate_returns(&mut self, original: &DemoStore) {
        for r in &mut self.records {
            r.ret = original.get(r.parent).and_then(|t| {
                t.steps
                    .get(r.start..r.start + r.len)
                    .and_then(|steps| steps.iter().map(|s| s.r).sum::<Option<f64>>())
            });
        }
    }
}

/// Result of a filter pass. `store` is `Some` when the pass committed a
/// reduced store.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub report: FilterReport,
    pub store: Option<DemoStore>,
}

/// Scores every segment and decides what survives. Nothing is dropped if
/// fewer than `min_demos` segments would remain; `stop_filtering` is then set.
pub fn filter_dataset(
    store: &DemoStore,
    model: &NoiseModel,
    policy: &GeneratorPolicy,
    sched: &DiffusionSchedule,
    cfg: &FilterConfig,
    iteration: u64,
) -> Result<FilterOutcome> {
    let segments = store.segmented(cfg.max_demo_len)?;
    let mut scored = Vec::with_capacity(segments.len());
    for seg in &segments {
        scored.push(predict_with_curve(model, policy, &seg.trajectory, sched)?);
    }
    decide(store, segments, scored, cfg, iteration)
}

/// Verdicts for already scored segments.
fn decide(
    store: &DemoStore,
    segments: Vec<Segment>,
    scored: Vec<(usize, Vec<f64>)>,
    cfg: &FilterConfig,
    iteration: u64,
) -> Result<FilterOutcome> {
    let kept = scored.iter().filter(|(t, _)| *t > cfg.step_threshold).count();
    let evaluated = segments.len();
    let stop_filtering = kept < cfg.min_demos;
    let committed = !stop_filtering && kept < evaluated;
    let mut records = Vec::with_capacity(evaluated);
    let mut survivors = Vec::new();
    for (seg, (step, mean_q)) in segments.into_iter().zip(scored) {
        let keep = step > cfg.step_threshold;
        records.push(SegmentRecord {
            id: seg.trajectory.id,
            parent: seg.parent,
            start: seg.start,
            len: seg.trajectory.len(),
            step,
            mean_q,
            verdict: if keep { Verdict::Keep } else { Verdict::Drop },
            noise_level: seg.trajectory.noise_level,
            ret: seg.trajectory.total_reward().ok(),
        });
        if keep || stop_filtering {
            survivors.push(seg.trajectory);
        }
    }
    let new_store = if committed { Some(DemoStore::new(survivors)?) } else { None };
    let store_after = new_store.as_ref().map_or(store.len(), DemoStore::len);
    Ok(FilterOutcome {
        report: FilterReport {
            summary: FilterSummary {
                iteration,
                evaluated,
                kept,
                dropped: evaluated - kept,
                store_before: store.len(),
                store_after,
                step_threshold: cfg.step_threshold,
                stop_filtering,
                committed,
            },
            records,
        },
        store: new_store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{LossNorm, NoiseModelArch};
    use crate::envs::Transition;
    use crate::mathcore::{Activation, SeededRng};
    use proptest::prelude::*;

    fn sched() -> DiffusionSchedule {
        DiffusionSchedule::new(10, 0.05, 0.6).unwrap()
    }

    fn small_model(seed: u64) -> NoiseModel {
        let arch = NoiseModelArch {
            hidden: vec![5],
            embed_dim: 3,
            activation: Activation::Tanh,
        };
        NoiseModel::new(2, 1, 10, &arch, LossNorm::L1, &mut SeededRng::new(seed)).unwrap()
    }

    fn traj(id: u64, n: usize, action: f64) -> Trajectory {
        Trajectory {
            id,
            steps: (0..n)
                .map(|i| Transition {
                    s: vec![i as f64 * 0.1, -0.2],
                    a: vec![action],
                    r: Some(-1.0),
                    terminal: i + 1 == n,
                })
                .collect(),
            noise_level: Some(0.0),
        }
    }

    #[test]
    fn q_at_zero_is_negative_distance() {
        let m = small_model(0);
        let s = sched();
        assert_eq!(q_value(&m, &[0.1, 0.2], &[0.5], &[0.5], 0, &s).unwrap(), 0.0);
        assert_eq!(q_value(&m, &[0.1, 0.2], &[0.5], &[1.5], 0, &s).unwrap(), -1.0);
        assert!(q_value(&m, &[0.1, 0.2], &[0.5], &[0.5], 11, &s).is_err());
    }

    #[test]
    fn exact_denoise_scores_zero() {
        let m = small_model(1);
        let s = sched();
        let (st, a_ref, t) = ([0.3, -0.7], [0.9], 4);
        let eps = m.predict(&st, &a_ref, t).unwrap();
        let target = [a_ref[0] - s.sigma(t) * eps[0]];
        assert_eq!(q_value(&m, &st, &target, &a_ref, t, &s).unwrap(), 0.0);
    }

    #[test]
    fn q_matches_hand_evaluation() {
        let m = small_model(2);
        let s = sched();
        let (st, a, a_ref, t) = ([0.4, 0.1], [-0.2], [0.6], 7);
        let e = m.predict(&st, &a_ref, t).unwrap()[0];
        let expected = -(a[0] - (a_ref[0] - s.sigma(7) * e)).powi(2);
        assert_eq!(q_value(&m, &st, &a, &a_ref, t, &s).unwrap(), expected);
    }

    #[test]
    fn curve_agrees_with_pointwise_q() {
        let m = small_model(3);
        let s = sched();
        let mut rng = SeededRng::new(4);
        let states = Matrix::from_vec(6, 2, rng.gaussian(12)).unwrap();
        let targets = Matrix::from_vec(6, 1, rng.gaussian(6)).unwrap();
        let refs = Matrix::from_vec(6, 1, rng.gaussian(6)).unwrap();
        let curve = q_curve(&m, &states, &targets, &refs, &s).unwrap();
        assert_eq!(curve.len(), 11);
        for (t, c) in curve.iter().enumerate() {
            let mean: f64 = (0..6)
                .map(|r| q_value(&m, states.row(r), targets.row(r), refs.row(r), t, &s).unwrap())
                .sum::<f64>()
                / 6.0;
            assert!((c - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_go_to_smallest_step() {
        assert_eq!(argmax_step(&[0.0, 0.0, -1.0]), 0);
        assert_eq!(argmax_step(&[-3.0, -1.0, -1.0, -2.0]), 1);
        assert_eq!(argmax_step(&[-3.0, -2.0, -1.0]), 2);
    }

    #[test]
    fn zero_model_policy_matching_actions_gives_zero() {
        let mut m = small_model(5);
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let s = sched();
        let bounds = crate::policy::ActionBounds::new(vec![-1.0], vec![1.0]).unwrap();
        let mut p = GeneratorPolicy::new(2, &[], Activation::Tanh, bounds, &mut SeededRng::new(0)).unwrap();
        p.params_mut().iter_mut().for_each(|v| *v = 0.0);
        // With a zero denoiser every Q_t equals Q_0, so the tie rule picks 0.
        assert_eq!(predict_diffusion_step(&m, &p, &traj(0, 5, 0.0), &s).unwrap(), 0);
        let empty = Trajectory {
            id: 9,
            steps: vec![],
            noise_level: None,
        };
        assert!(predict_diffusion_step(&m, &p, &empty, &s).is_err());
    }

    fn store_of(n: usize) -> DemoStore {
        DemoStore::new((0..n as u64).map(|i| traj(i, 3, i as f64)).collect()).unwrap()
    }

    fn fixed_scores(steps: &[usize]) -> Vec<(usize, Vec<f64>)> {
        steps.iter().map(|&t| (t, vec![0.0; 11])).collect()
    }

    #[test]
    fn nothing_dropped_when_all_steps_high() {
        let store = store_of(12);
        let segs = store.segmented(1000).unwrap();
        let out = decide(&store, segs, fixed_scores(&[10; 12]), &FilterConfig::default(), 1).unwrap();
        assert!(out.store.is_none());
        assert!(!out.report.summary.stop_filtering);
        assert_eq!(out.report.summary.kept, 12);
    }

    #[test]
    fn guard_blocks_drop_below_min_demos() {
        let store = store_of(12);
        let segs = store.segmented(1000).unwrap();
        let steps = [0, 1, 0, 1, 1, 5, 5, 5, 5, 5, 5, 5];
        let out = decide(&store, segs, fixed_scores(&steps), &FilterConfig::default(), 1).unwrap();
        let s = &out.report.summary;
        assert_eq!((s.kept, s.dropped), (7, 5));
        assert!(s.stop_filtering);
        assert!(!s.committed);
        assert!(out.store.is_none());
        assert_eq!(s.store_after, 12);
    }

    #[test]
    fn commit_keeps_only_high_steps() {
        let store = store_of(12);
        let segs = store.segmented(1000).unwrap();
        let steps = [0, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 1];
        let out = decide(&store, segs, fixed_scores(&steps), &FilterConfig::default(), 1).unwrap();
        let kept = out.store.unwrap();
        assert_eq!(kept.len(), 10);
        assert!(kept.get(0).is_none() && kept.get(11).is_none());
        assert!(out.report.summary.committed);
    }

    #[test]
    fn report_round_trips_as_json_lines() {
        let store = store_of(12);
        let segs = store.segmented(2).unwrap();
        let n = segs.len();
        let mut out = decide(&store, segs, fixed_scores(&vec![3; n]), &FilterConfig::default(), 7).unwrap();
        out.report.annotate_returns(&store);
        let mut buf = Vec::new();
        out.report.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), n + 1);
        let summary: FilterSummary = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(summary.iteration, 7);
        let rec: SegmentRecord = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(rec.len, 2);
        assert_eq!(rec.ret, Some(-2.0));
        assert!(lines[1].contains("\"verdict\":\"keep\""));
    }

    #[test]
    fn validation() {
        assert!(FilterConfig::default().validate(10).is_ok());
        let bad = FilterConfig {
            step_threshold: 11,
            ..FilterConfig::default()
        };
        assert!(bad.validate(10).is_err());
        let bad = FilterConfig {
            min_demos: 0,
            ..FilterConfig::default()
        };
        assert!(bad.validate(10).is_err());
    }

    proptest! {
        #[test]
        fn kept_never_below_min_demos(steps in proptest::collection::vec(0usize..=10, 1..40), min in 1usize..20, thr in 0usize..=10) {
            let store = store_of(steps.len());
            let segs = store.segmented(1000).unwrap();
            let cfg = FilterConfig { min_demos: min, step_threshold: thr, ..FilterConfig::default() };
            let out = decide(&store, segs, fixed_scores(&steps), &cfg, 0).unwrap();
            let s = &out.report.summary;
            prop_assert_eq!(s.kept + s.dropped, s.evaluated);
            prop_assert_eq!(s.stop_filtering, s.kept < min);
            if let Some(st) = &out.store {
                prop_assert!(st.len() >= min);
            }
        }

        #[test]
        fn monotone_in_threshold(steps in proptest::collection::vec(0usize..=10, 1..30), k in 1usize..=10) {
            let store = store_of(steps.len());
            let verdicts = |thr: usize| {
                let cfg = FilterConfig { min_demos: 1, step_threshold: thr, ..FilterConfig::default() };
                let out = decide(&store, store.segmented(1000).unwrap(), fixed_scores(&steps), &cfg, 0).unwrap();
                out.report.records.iter().map(|r| r.verdict).collect::<Vec<_>>()
            };
            let high = verdicts(k);
            for lower in 0..k {
                for (a, b) in high.iter().zip(verdicts(lower)) {
                    if *a == Verdict::Keep {
                        prop_assert_eq!(b, Verdict::Keep);
                    }
                }
            }
        }
    }
}
