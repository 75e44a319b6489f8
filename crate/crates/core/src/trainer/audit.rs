use crate::diffusion::{DiffusionSchedule, NoiseModel};
use crate::envs::DemoStore;
use crate::error::{Error, Result};
use crate::expertise::predict_diffusion_step;
use crate::policy::GeneratorPolicy;

/// One return bin `(lo, hi]`. `mean_step` is `None` when no trajectory falls
/// in the bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_step: Option<f64>,
}

impl BinRow {
    pub fn to_csv(&self) -> String {
        match self.mean_step {
            Some(m) => format!("{},{},{},{m}", self.lo, self.hi, self.count),
            None => format!("{},{},{},N/A", self.lo, self.hi, self.count),
        }
    }
}

/// Edges at multiples of `width` that cover every value.
pub fn bin_edges(values: &[f64], width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::config("bin width must be positive"));
    }
    if values.is_empty() {
        return Err(Error::invalid("no values to bin"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (min / width).floor();
    let mut edges = vec![first * width];
    let mut k = first;
    loop {
        k += 1.0;
        edges.push(k * width);
        if k * width >= max {
            return Ok(edges);
        }
    }
}

/// Groups `(return, step)` pairs into bins `(edges[i], edges[i + 1]]`; the
/// first bin also takes values equal to its lower edge. Values outside the
/// edges are ignored.
pub fn bin_table(pairs: &[(f64, usize)], edges: &[f64]) -> Result<Vec<BinRow>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("bin edges must be increasing with at least two entries"));
    }
    let mut rows: Vec<BinRow> = edges
        .windows(2)
        .map(|w| BinRow {
            lo: w[0],
            hi: w[1],
            count: 0,
            mean_step: None,
        })
        .collect();
    let mut sums = vec![0.0; rows.len()];
    for &(ret, step) in pairs {
        let idx = if ret == edges[0] {
            Some(0)
        } else {
            rows.iter().position(|r| r.lo < ret && ret <= r.hi)
        };
        if let Some(i) = idx {
            rows[i].count += 1;
            sums[i] += step as f64;
        }
    }
    for (r, s) in rows.iter_mut().zip(sums) {
        if r.count > 0 {
            r.mean_step = Some(s / r.count as f64);
        }
    }
    Ok(rows)
}

/// Mean predicted diffusion step per return bin over whole trajectories.
pub fn audit_bins(
    store: &DemoStore,
    model: &NoiseModel,
    policy: &GeneratorPolicy,
    sched: &DiffusionSchedule,
    edges: &[f64],
) -> Result<Vec<BinRow>> {
    if store.is_empty() {
        return Err(Error::invalid("cannot audit an empty store"));
    }
    let pairs = store
        .trajectories()
        .iter()
        .map(|t| Ok((t.total_reward()?, predict_diffusion_step(model, policy, t, sched)?)))
        .collect::<Result<Vec<_>>>()?;
    bin_table(&pairs, edges)
}
