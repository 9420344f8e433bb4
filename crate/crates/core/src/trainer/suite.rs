use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::config::TrainConfig;
use super::train::run;
use crate::{Error, Result};

/// A named run in a suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub config: TrainConfig,
}

/// Final quantities of one successful run.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub modes_occupied: usize,
    pub top_mode_share: f64,
    pub mean_reward: f64,
    /// Policy entropy estimate after each epoch (NaN without a density).
    pub entropy_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmReport {
    pub name: String,
    pub regularizer: String,
    pub policy_kind: String,
    pub seed: u64,
    pub outcome: std::result::Result<ArmSummary, String>,
}

/// Every `*.txt` file in `dir`, sorted by file name; the stem names the run.
pub fn load_suite(dir: &Path) -> Result<Vec<SuiteEntry>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Usage(format!("no *.txt configs in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            Ok(SuiteEntry {
                name: p.file_stem().expect("file").to_string_lossy().into_owned(),
                config: TrainConfig::load(p)?,
            })
        })
        .collect()
}

/// Runs every entry (concurrently, each on its own seeded streams) and
/// collects per-arm summaries; a failing arm is reported, not propagated.
/// With `out_dir`, each run writes into `out_dir/<name>`.
pub fn run_experiment_suite(entries: &[SuiteEntry], out_dir: Option<&Path>) -> Vec<ArmReport> {
    entries
        .par_iter()
        .map(|e| {
            let mut cfg = e.config.clone();
            if let Some(d) = out_dir {
                cfg.output_dir = Some(d.join(&e.name));
            }
            let outcome = run(&cfg)
                .map(|r| {
                    let (modes, share, reward) = match &r.final_eval {
                        Some(ev) => (ev.modes_occupied(), ev.top_mode_share(), ev.mean_reward),
                        None => (0, f64::NAN, r.metrics.last().map_or(f64::NAN, |m| m.eval_mean_reward)),
                    };
                    ArmSummary {
                        modes_occupied: modes,
                        top_mode_share: share,
                        mean_reward: reward,
                        entropy_curve: r.metrics.iter().map(|m| m.policy_entropy_estimate).collect(),
                    }
                })
                .map_err(|err| err.to_string());
            ArmReport {
                name: e.name.clone(),
                regularizer: cfg.regularizer.tag().into(),
                policy_kind: cfg.policy_kind.tag().into(),
                seed: cfg.seed,
                outcome,
            }
        })
        .collect()
}

/// Markdown comparison table plus entropy curves; contains no timings.
pub fn report_markdown(reports: &[ArmReport]) -> String {
    let mut s = String::from("# Suite report\n\n");
    s.push_str("| run | regularizer | policy | seed | status | modes >= 5% | top mode share | mean reward |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        match &r.outcome {
            Ok(m) => writeln!(
                s,
                "| {} | {} | {} | {} | ok | {} | {:.4} | {:.4} |",
                r.name, r.regularizer, r.policy_kind, r.seed, m.modes_occupied, m.top_mode_share, m.mean_reward
            ),
            Err(e) => writeln!(
                s,
                "| {} | {} | {} | {} | failed: {} | - | - | - |",
                r.name,
                r.regularizer,
                r.policy_kind,
                r.seed,
                e.replace('|', "/")
            ),
        }
        .expect("string write");
    }
    s.push_str("\n## Policy entropy by epoch\n\n");
    for r in reports {
        if let Ok(m) = &r.outcome {
            let curve: Vec<String> = m.entropy_curve.iter().map(|x| format!("{x:.4}")).collect();
            writeln!(s, "- {}: {}", r.name, curve.join(", ")).expect("string write");
        }
    }
    s
}
