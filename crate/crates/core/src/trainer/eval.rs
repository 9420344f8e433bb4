use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;

use crate::envs::{BanditScenario, ChainMdp};
use crate::nnkit::Tensor;
use crate::policy::ActionSampler;
use crate::{Error, Result};

/// A mode counts as occupied when it holds at least this share of samples.
pub const OCCUPANCY_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mean_reward: f64,
    /// Share of samples within the coverage radius of each mode center.
    pub coverage: Vec<f64>,
    pub samples: Vec<[f64; 2]>,
    pub rewards: Vec<f64>,
}

impl EvalResult {
    /// Number of modes holding at least [`OCCUPANCY_THRESHOLD`] of the samples.
    pub fn modes_occupied(&self) -> usize {
        self.coverage.iter().filter(|&&c| c >= OCCUPANCY_THRESHOLD).count()
    }

    /// Largest single-mode share.
    pub fn top_mode_share(&self) -> f64 {
        self.coverage.iter().copied().fold(0.0, f64::max)
    }

    /// `x,y,reward` rows.
    pub fn samples_csv(&self) -> String {
        let mut s = String::from("x,y,reward\n");
        for (a, r) in self.samples.iter().zip(&self.rewards) {
            writeln!(s, "{},{},{}", a[0], a[1], r).expect("string write");
        }
        s
    }

    pub fn write_samples(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.samples_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Draws `n` actions for the dummy state, clamps them into the square and
/// scores reward and per-mode occupancy.
pub fn evaluate(
    policy: &dyn ActionSampler,
    scenario: &BanditScenario,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalResult> {
    let s = Tensor::zeros(n, BanditScenario::STATE_DIM);
    let a = policy.sample_actions(&s, rng)?;
    if a.cols() != BanditScenario::ACTION_DIM {
        return Err(Error::shape("evaluated action", BanditScenario::ACTION_DIM, a.cols()));
    }
    let samples: Vec<[f64; 2]> = (0..n)
        .map(|i| [a.get(i, 0).clamp(-1.0, 1.0), a.get(i, 1).clamp(-1.0, 1.0)])
        .collect();
    let rewards: Vec<f64> = samples.iter().map(|&x| scenario.reward_clamped(x)).collect();
    Ok(EvalResult {
        mean_reward: rewards.iter().sum::<f64>() / n.max(1) as f64,
        coverage: scenario.coverage(&samples),
        samples,
        rewards,
    })
}

/// Mean discounted return over all non-goal starts, `horizon` steps each.
pub fn evaluate_chain(
    policy: &dyn ActionSampler,
    mdp: &ChainMdp,
    episodes_per_state: usize,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let starts: Vec<usize> = (0..mdp.goal())
        .flat_map(|s| std::iter::repeat_n(s, episodes_per_state))
        .collect();
    let mut state = starts.clone();
    let mut alive = vec![true; starts.len()];
    let mut ret = vec![0.0; starts.len()];
    let mut disc = 1.0;
    for _ in 0..horizon {
        let rows: Vec<Vec<f64>> = state.iter().map(|&s| mdp.one_hot(s)).collect();
        let a = policy.sample_actions(&Tensor::from_rows(&rows)?, rng)?;
        for i in 0..state.len() {
            if !alive[i] {
                continue;
            }
            let (next, r, done) = mdp.step(state[i], a.get(i, 0).clamp(-1.0, 1.0));
            ret[i] += disc * r;
            state[i] = next;
            alive[i] = !done;
        }
        disc *= mdp.gamma;
    }
    Ok(ret.iter().sum::<f64>() / ret.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::policy::UniformPolicy;

    #[test]
    fn deterministic_given_seed() {
        let sc = BanditScenario::corner25();
        let p = UniformPolicy { action_dim: 2 };
        let a = evaluate(&p, &sc, 200, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = evaluate(&p, &sc, 200, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.coverage.iter().sum::<f64>() <= 1.0);
        assert!(a.samples_csv().starts_with("x,y,reward\n"));
    }

    #[test]
    fn always_right_reaches_goal() {
        struct Right;
        impl ActionSampler for Right {
            fn sample_actions(&self, s: &Tensor, _: &mut dyn RngCore) -> Result<Tensor> {
                Ok(Tensor::full(s.rows(), 1, 0.9))
            }
        }
        let m = ChainMdp::terminal_only(4, 0.5, 1.0).unwrap();
        let v = evaluate_chain(&Right, &m, 1, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // starts 0, 1, 2 need 3, 2, 1 steps: (0.25 + 0.5 + 1) / 3
        assert!((v - 1.75 / 3.0).abs() < 1e-12);
    }
}
