use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta, Transition};
use crate::{Error, Result};

/// Discrete effect of a continuous action in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    Left,
    Stay,
    Right,
}

impl Move {
    pub const ALL: [Move; 3] = [Move::Left, Move::Stay, Move::Right];

    /// Thresholds at `+-1/3` split the action interval into equal thirds.
    pub fn of(a: f64) -> Move {
        if a < -1.0 / 3.0 {
            Move::Left
        } else if a > 1.0 / 3.0 {
            Move::Right
        } else {
            Move::Stay
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Middle of the action bin.
    pub fn center(self) -> f64 {
        match self {
            Move::Left => -2.0 / 3.0,
            Move::Stay => 0.0,
            Move::Right => 2.0 / 3.0,
        }
    }
}

/// Deterministic chain over one-hot states; the last state is an absorbing
/// goal and entering it ends the episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMdp {
    pub n_states: usize,
    pub gamma: f64,
    /// `rewards[s][move]` paid on leaving state `s` with `move`.
    pub rewards: Vec<[f64; 3]>,
}

impl ChainMdp {
    /// Goal reward 1 for entering the last state, plus a small 0.1 payoff
    /// for pushing against the left wall so the optimum is not trivial.
    pub fn new(n_states: usize, gamma: f64) -> Result<Self> {
        let mut m = Self::terminal_only(n_states, gamma, 1.0)?;
        m.rewards[0][Move::Left.index()] = 0.1;
        Ok(m)
    }

    /// Only the transition into the goal is rewarded.
    pub fn terminal_only(n_states: usize, gamma: f64, goal_reward: f64) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::Config(format!("chain needs at least 2 states, got {n_states}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("chain gamma must lie in [0, 1), got {gamma}")));
        }
        let mut rewards = vec![[0.0; 3]; n_states];
        rewards[n_states - 2][Move::Right.index()] = goal_reward;
        Ok(Self {
            n_states,
            gamma,
            rewards,
        })
    }

    pub fn goal(&self) -> usize {
        self.n_states - 1
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s == self.goal()
    }

    pub fn next_state(&self, s: usize, m: Move) -> usize {
        match m {
            Move::Left => s.saturating_sub(1),
            Move::Stay => s,
            Move::Right => (s + 1).min(self.goal()),
        }
    }

    /// `(s', r, done)` for a continuous action.
    pub fn step(&self, s: usize, a: f64) -> (usize, f64, bool) {
        let m = Move::of(a);
        let next = self.next_state(s, m);
        (next, self.rewards[s][m.index()], self.is_terminal(next))
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    /// Decodes a one-hot (or nearly one-hot) state vector.
    pub fn decode(&self, v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Behavior move probabilities `[left, stay, right]`.
const BEHAVIOR: [f64; 3] = [0.3, 0.2, 0.5];
/// Jitter is clipped so behavior actions never leave their bin.
const JITTER_CLIP: f64 = 0.25;

/// Rollouts of a right-leaning noisy policy from uniform non-goal starts.
/// Episodes end only on reaching the goal; the final episode may be cut
/// short at `n` transitions and then carries no done flag.
pub fn gen_chain_dataset<R: Rng + ?Sized>(
    mdp: &ChainMdp,
    behavior_noise: f64,
    n: usize,
    seed: u64,
    rng: &mut R,
) -> Result<Dataset> {
    if n < 100 {
        return Err(Error::Config(format!("chain dataset needs n >= 100, got {n}")));
    }
    let jitter =
        Normal::new(0.0, behavior_noise.max(0.0)).map_err(|e| Error::Config(format!("behavior noise: {e}")))?;
    let meta = DatasetMeta {
        scenario: "chain".into(),
        seed,
        params: serde_json::json!({
            "mdp": mdp,
            "behavior_noise": behavior_noise,
            "behavior_probs": BEHAVIOR,
        }),
    };
    let mut ds = Dataset::new(mdp.n_states, 1, meta);
    let mut s = rng.random_range(0..mdp.goal());
    while ds.len() < n {
        let u: f64 = rng.random();
        let m = if u < BEHAVIOR[0] {
            Move::Left
        } else if u < BEHAVIOR[0] + BEHAVIOR[1] {
            Move::Stay
        } else {
            Move::Right
        };
        let a = m.center() + jitter.sample(rng).clamp(-JITTER_CLIP, JITTER_CLIP);
        let (next, r, done) = mdp.step(s, a);
        ds.push(Transition {
            s: mdp.one_hot(s),
            a: vec![a],
            r,
            s_next: mdp.one_hot(next),
            done,
        })?;
        s = if done { rng.random_range(0..mdp.goal()) } else { next };
    }
    Ok(ds)
}

/// Empirical move frequencies per state in a chain dataset.
pub fn behavior_weights(mdp: &ChainMdp, data: &Dataset) -> Vec<[f64; 3]> {
    let mut counts = vec![[0.0; 3]; mdp.n_states];
    for i in 0..data.len() {
        let s = mdp.decode(data.state(i));
        counts[s][Move::of(data.action(i)[0]).index()] += 1.0;
    }
    for c in &mut counts {
        let total: f64 = c.iter().sum();
        if total > 0.0 {
            c.iter_mut().for_each(|x| *x /= total);
        }
    }
    counts
}

/// How the next-state value is formed from `Q(s', .)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Backup {
    /// `max_a Q(s', a)`.
    Optimal,
    /// The `tau`-expectile of `Q(s', .)` under per-state move weights; for
    /// `tau = 0.5` the weighted mean, which is what expectile value
    /// regression converges to on a fixed dataset.
    Expectile { tau: f64, weights: Vec<[f64; 3]> },
}

/// Q on a uniform action grid, plus the sup-norm change per sweep.
#[derive(Clone, Debug)]
pub struct QTable {
    pub actions: Vec<f64>,
    /// `q[s][k]` for grid action `k`.
    pub q: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl QTable {
    /// Q at an arbitrary action, via its move bin.
    pub fn q_at(&self, s: usize, a: f64) -> f64 {
        let m = Move::of(a);
        let k = self
            .actions
            .iter()
            .position(|&x| Move::of(x) == m)
            .expect("grid covers every bin");
        self.q[s][k]
    }

    pub fn v_max(&self, s: usize) -> f64 {
        self.q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Solves `E_w[|tau - 1(q < v)| (q - v)] = 0` for `v` by bisection.
fn weighted_expectile(values: &[f64; 3], weights: &[f64; 3], tau: f64) -> f64 {
    let support: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&q, &w)| (q, w))
        .collect();
    if support.is_empty() {
        return values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let score = |v: f64| {
        support
            .iter()
            .map(|&(q, w)| w * if q >= v { tau } else { 1.0 - tau } * (q - v))
            .sum::<f64>()
    };
    let mut lo = support.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let mut hi = support.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fixed-point iteration of the Bellman operator on a `resolution`-point
/// action grid until the sup-norm change falls below `1e-10`.
pub fn value_iteration(mdp: &ChainMdp, resolution: usize, backup: &Backup) -> Result<QTable> {
    if resolution < 21 {
        return Err(Error::Config(format!(
            "action grid needs >= 21 points, got {resolution}"
        )));
    }
    if let Backup::Expectile { tau, weights } = backup {
        if !(*tau > 0.0 && *tau < 1.0) || weights.len() != mdp.n_states {
            return Err(Error::Config(
                "expectile backup needs tau in (0, 1) and one weight row per state".into(),
            ));
        }
    }
    let actions: Vec<f64> = (0..resolution)
        .map(|k| -1.0 + 2.0 * k as f64 / (resolution - 1) as f64)
        .collect();
    let mut q = vec![vec![0.0; resolution]; mdp.n_states];
    let mut residuals = Vec::new();
    for _ in 0..100_000 {
        let v: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                if mdp.is_terminal(s) {
                    return 0.0;
                }
                let per_move = Move::ALL.map(|m| {
                    let k = actions.iter().position(|&x| Move::of(x) == m).expect("bin");
                    q[s][k]
                });
                match backup {
                    Backup::Optimal => per_move.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Backup::Expectile { tau, weights } => weighted_expectile(&per_move, &weights[s], *tau),
                }
            })
            .collect();
        let mut delta: f64 = 0.0;
        for (s, row) in q.iter_mut().enumerate() {
            for (k, &a) in actions.iter().enumerate() {
                let new = if mdp.is_terminal(s) {
                    0.0
                } else {
                    let (next, r, done) = mdp.step(s, a);
                    r + if done { 0.0 } else { mdp.gamma * v[next] }
                };
                delta = delta.max((new - row[k]).abs());
                row[k] = new;
            }
        }
        residuals.push(delta);
        if delta < 1e-10 {
            return Ok(QTable { actions, q, residuals });
        }
    }
    Err(Error::NonFinite("value iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn gamma_zero_gives_reward_table() {
        let m = ChainMdp::new(6, 0.0).unwrap();
        let t = value_iteration(&m, 21, &Backup::Optimal).unwrap();
        for s in 0..m.goal() {
            for &a in &t.actions {
                assert_eq!(t.q_at(s, a), m.rewards[s][Move::of(a).index()]);
            }
        }
    }

    #[test]
    fn iterates_contract_by_gamma() {
        let m = ChainMdp::new(8, 0.9).unwrap();
        let t = value_iteration(&m, 21, &Backup::Optimal).unwrap();
        for w in t.residuals.windows(2) {
            if w[0] > 0.0 {
                assert!(w[1] <= 0.9 * w[0] + 1e-15, "{w:?}");
            }
        }
    }

    #[test]
    fn terminal_only_chain_discounts_by_distance() {
        let gamma = 0.9;
        let m = ChainMdp::terminal_only(4, gamma, 1.0).unwrap();
        let t = value_iteration(&m, 21, &Backup::Optimal).unwrap();
        // from state s the goal (3) is 3 - s right moves away; the last move pays 1
        for s in 0..3 {
            let expect = gamma.powi(3 - 1 - s as i32);
            assert!((t.q_at(s, 0.9) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn resolution_must_be_fine_enough() {
        let m = ChainMdp::new(4, 0.9).unwrap();
        assert!(value_iteration(&m, 11, &Backup::Optimal).is_err());
    }

    #[test]
    fn dataset_rewards_and_done_flags() {
        let m = ChainMdp::new(8, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = gen_chain_dataset(&m, 0.1, 5000, 0, &mut rng).unwrap();
        let mut visits = vec![0; m.n_states];
        for i in 0..d.len() {
            let s = m.decode(d.state(i));
            visits[s] += 1;
            let a = d.action(i)[0];
            let (next, r, done) = m.step(s, a);
            assert_eq!(r, d.reward(i));
            assert_eq!(done, d.done(i));
            assert_eq!(m.decode(&d.get(i).s_next), next);
        }
        assert!(visits[..m.goal()].iter().all(|&v| v >= 10), "{visits:?}");
    }

    #[test]
    fn half_expectile_backup_is_weighted_mean() {
        let v = weighted_expectile(&[0.0, 1.0, 4.0], &[0.25, 0.25, 0.5], 0.5);
        assert!((v - 2.25).abs() < 1e-12);
        let v = weighted_expectile(&[0.0, 1.0, 0.0], &[0.5, 0.5, 0.0], 0.9);
        assert!((v - 0.9).abs() < 1e-12);
    }
}
