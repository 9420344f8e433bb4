use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// One evaluation point. `wall_seconds` goes to a separate timing file so
/// that the metrics file stays a pure function of `(config, seed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub bc_loss: f64,
    pub tr_or_kl_loss: f64,
    pub q_loss: f64,
    pub v_loss: f64,
    pub mean_q: f64,
    pub policy_entropy_estimate: f64,
    pub eval_mean_reward: f64,
    /// Number of modes holding at least 5% of evaluation samples.
    pub mode_coverage: usize,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,bc_loss,tr_or_kl_loss,q_loss,v_loss,mean_q,policy_entropy_estimate,eval_mean_reward,mode_coverage";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.bc_loss,
            r.tr_or_kl_loss,
            r.q_loss,
            r.v_loss,
            r.mean_q,
            r.policy_entropy_estimate,
            r.eval_mean_reward,
            r.mode_coverage
        )
        .expect("string write");
    }
    s
}

pub fn timing_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("epoch,wall_seconds\n");
    for r in rows {
        writeln!(s, "{},{:.3}", r.epoch, r.wall_seconds).expect("string write");
    }
    s
}

/// Writes `metrics.csv` and `timing.csv` into `dir`.
pub fn write_metrics(dir: &Path, rows: &[MetricsRow]) -> Result<()> {
    for (name, text) in [("metrics.csv", metrics_csv(rows)), ("timing.csv", timing_csv(rows))] {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Running mean of per-step losses within an epoch.
#[derive(Clone, Debug, Default)]
pub(crate) struct Accumulator {
    sums: [f64; 5],
    counts: [usize; 5],
}

#[derive(Clone, Copy)]
pub(crate) enum Stat {
    Bc = 0,
    Reg = 1,
    Q = 2,
    V = 3,
    MeanQ = 4,
}

impl Accumulator {
    pub fn add(&mut self, stat: Stat, v: f64) {
        self.sums[stat as usize] += v;
        self.counts[stat as usize] += 1;
    }

    /// NaN when nothing was recorded.
    pub fn mean(&self, stat: Stat) -> f64 {
        let i = stat as usize;
        if self.counts[i] == 0 {
            f64::NAN
        } else {
            self.sums[i] / self.counts[i] as f64
        }
    }
}
