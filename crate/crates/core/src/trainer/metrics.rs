use std::fmt::Write as _;
use std::io::Write;
use std::time::Duration;

use crate::expertise::FilterSummary;

pub const METRICS_HEADER: &str = "iteration,transitions,denoiser_loss,policy_loss,eval_mean,eval_std,store_size";

/// One line of the metrics CSV. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub transitions: u64,
    pub denoiser_loss: Option<f64>,
    pub policy_loss: f64,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub store_size: usize,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut line = format!("{},{},", self.iteration, self.transitions);
        push_opt(&mut line, self.denoiser_loss);
        write!(line, ",{},", self.policy_loss).unwrap();
        push_opt(&mut line, self.eval_mean);
        line.push(',');
        push_opt(&mut line, self.eval_std);
        write!(line, ",{}", self.store_size).unwrap();
        line
    }
}

fn push_opt(line: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        write!(line, "{v}").unwrap();
    }
}

/// Wall-clock spent per phase. Never written to the CSV, which must stay
/// reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimes {
    pub denoiser: Duration,
    pub policy: Duration,
    pub filter: Duration,
    pub eval: Duration,
}

/// Counters kept by the training loop so tests can check its bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Instrumentation {
    /// Optimizer steps.
    pub denoiser_steps: u64,
    pub policy_steps: u64,
    /// Loss-gradient evaluations accumulated into those steps.
    pub denoiser_grad_evals: u64,
    pub policy_grad_evals: u64,
    pub ema_updates: u64,
    /// Filter passes that scored with the EMA shadows.
    pub filter_reads_ema: u64,
    /// Filter passes that scored with live parameters. Stays zero.
    pub filter_reads_live: u64,
    /// Batches drawn from a store that filtering had already reduced.
    pub batches_from_filtered: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    pub filters: Vec<FilterSummary>,
    pub times: PhaseTimes,
    pub counters: Instrumentation,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.iteration < row.iteration));
        self.rows.push(row);
    }

    pub fn last_eval(&self) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .rev()
            .find_map(|r| r.eval_mean.zip(r.eval_std))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{}", r.to_csv())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}
