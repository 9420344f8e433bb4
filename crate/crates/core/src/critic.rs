//! Expectile value regression, double-Q Bellman regression and Polyak targets.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nnkit::{Activation, AdamConfig, Mlp, MlpSpec, ParamMode, Tape, Tensor, Var};
use crate::{Error, Result};

/// `|tau - 1(u < 0)| u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub hidden: usize,
    pub depth: usize,
    pub tau: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            depth: 4,
            tau: 0.7,
            gamma: 0.99,
            rho: 0.995,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// A minibatch of transitions; `r` and `done` are `n x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub s: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    pub s_next: Tensor,
    pub done: Tensor,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.s.rows()
    }
}

/// Two online critics, their targets and a state-value network.
#[derive(Clone, Debug)]
pub struct CriticSet {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub v: Mlp,
    pub cfg: CriticConfig,
    state_dim: usize,
    action_dim: usize,
}

/// Losses from one value/critic update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticStats {
    pub v_loss: f64,
    pub q_loss: f64,
    pub mean_q: f64,
}

const NETS: [&str; 5] = ["q1", "q2", "q1_target", "q2_target", "v"];

impl CriticSet {
    /// Targets start as exact copies of the online critics.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: CriticConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let q_spec = MlpSpec::uniform(state_dim + action_dim, cfg.hidden, 1, cfg.depth, Activation::Mish);
        let v_spec = MlpSpec::uniform(state_dim, cfg.hidden, 1, cfg.depth, Activation::Mish);
        let q1 = Mlp::new(q_spec.clone(), rng)?;
        let q2 = Mlp::new(q_spec, rng)?;
        let v = Mlp::new(v_spec, rng)?;
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            v,
            cfg,
            state_dim,
            action_dim,
        })
    }

    pub fn from_nets(q1: Mlp, q2: Mlp, q1_target: Mlp, q2_target: Mlp, v: Mlp, cfg: CriticConfig) -> Result<Self> {
        cfg.validate()?;
        let q_in = q1.spec().input_width();
        let state_dim = v.spec().input_width();
        if q_in <= state_dim
            || q2.spec() != q1.spec()
            || q1_target.spec() != q1.spec()
            || q2_target.spec() != q1.spec()
            || q1.spec().output_width() != 1
            || v.spec().output_width() != 1
        {
            return Err(Error::Config("critic network shapes are inconsistent".into()));
        }
        Ok(Self {
            q1,
            q2,
            q1_target,
            q2_target,
            v,
            cfg,
            state_dim,
            action_dim: q_in - state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn check(&self, s: &Tensor, a: &Tensor) -> Result<()> {
        if s.cols() != self.state_dim {
            return Err(Error::shape("critic state", self.state_dim, s.cols()));
        }
        if a.cols() != self.action_dim || a.rows() != s.rows() {
            return Err(Error::shape(
                "critic action",
                format!("{} x {}", s.rows(), self.action_dim),
                format!("{} x {}", a.rows(), a.cols()),
            ));
        }
        Ok(())
    }

    fn q_pair(&self, use_target: bool) -> (&Mlp, &Mlp) {
        if use_target {
            (&self.q1_target, &self.q2_target)
        } else {
            (&self.q1, &self.q2)
        }
    }

    /// Element-wise `min(Q1, Q2)` as an `n x 1` tensor.
    pub fn min_q(&self, s: &Tensor, a: &Tensor, use_target: bool) -> Result<Tensor> {
        self.check(s, a)?;
        let sa = Tensor::concat_cols(&[s, a])?;
        let (q1, q2) = self.q_pair(use_target);
        let (x, y) = (q1.eval(&sa)?, q2.eval(&sa)?);
        Ok(x.zip_map(&y, f64::min))
    }

    /// `min(Q1, Q2)` on the tape with frozen critic weights; gradients reach
    /// `a` through whichever critic achieves the minimum.
    pub fn min_q_on_tape(&self, tape: &mut Tape, s: &Tensor, a: Var, use_target: bool) -> Result<Var> {
        self.check(s, tape.value(a))?;
        let sv = tape.constant(s.clone());
        let sa = tape.concat_cols(&[sv, a]);
        let (q1, q2) = self.q_pair(use_target);
        let x = q1.forward(tape, sa, ParamMode::Frozen)?;
        let y = q2.forward(tape, sa, ParamMode::Frozen)?;
        Ok(tape.min(x, y))
    }

    pub fn value(&self, s: &Tensor) -> Result<Tensor> {
        self.v.eval(s)
    }

    /// Expectile regression of `V(s)` onto fixed `n x 1` targets.
    pub fn v_loss_with_targets(&self, s: &Tensor, targets: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        if targets.shape() != [s.rows(), 1] {
            return Err(Error::shape(
                "v targets",
                format!("{} x 1", s.rows()),
                format!("{:?}", targets.shape()),
            ));
        }
        let mut tape = Tape::new();
        let sv = tape.constant(s.clone());
        let v = self.v.forward(&mut tape, sv, ParamMode::Train)?;
        let u = targets.zip_map(tape.value(v), |q, v| q - v);
        let w = tape.constant(u.map(|u| if u < 0.0 { 1.0 - self.cfg.tau } else { self.cfg.tau }));
        let t = tape.constant(targets.clone());
        let diff = tape.sub(t, v);
        let sq = tape.square(diff);
        let weighted = tape.mul(sq, w);
        let loss = tape.mean(weighted);
        let grads = tape.backward_scalar(loss)?;
        Ok((tape.value(loss).item(), grads.for_store(self.v.params())))
    }

    /// `mean L2^tau(min target Q(s, a) - V(s))` and gradients for `V`.
    pub fn v_loss(&self, s: &Tensor, a: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let targets = self.min_q(s, a, true)?;
        self.v_loss_with_targets(s, &targets)
    }

    /// `r + gamma (1 - done) V(s')`.
    pub fn bellman_targets(&self, batch: &Batch) -> Result<Tensor> {
        let v_next = self.value(&batch.s_next)?;
        let gamma = self.cfg.gamma;
        let mut out = batch.r.clone();
        for i in 0..out.rows() {
            let boot = gamma * (1.0 - batch.done.get(i, 0)) * v_next.get(i, 0);
            out.set(i, 0, batch.r.get(i, 0) + boot);
        }
        Ok(out)
    }

    /// Mean over the batch and over both critics of the squared Bellman
    /// residual, with gradients for `(Q1, Q2)` and the mean online `Q1`.
    pub fn q_loss(&self, batch: &Batch) -> Result<(f64, Vec<Tensor>, Vec<Tensor>, f64)> {
        self.check(&batch.s, &batch.a)?;
        let targets = self.bellman_targets(batch)?;
        let sa = Tensor::concat_cols(&[&batch.s, &batch.a])?;
        let mut tape = Tape::new();
        let x = tape.constant(sa);
        let t = tape.constant(targets);
        let q1 = self.q1.forward(&mut tape, x, ParamMode::Train)?;
        let q2 = self.q2.forward(&mut tape, x, ParamMode::Train)?;
        let mean_q = tape.value(q1).mean();
        let d1 = tape.sub(t, q1);
        let d2 = tape.sub(t, q2);
        let s1 = tape.square(d1);
        let s2 = tape.square(d2);
        let both = tape.add(s1, s2);
        let m = tape.mean(both);
        let loss = tape.scale(m, 0.5);
        let grads = tape.backward_scalar(loss)?;
        Ok((
            tape.value(loss).item(),
            grads.for_store(self.q1.params()),
            grads.for_store(self.q2.params()),
            mean_q,
        ))
    }

    /// One Adam step on the value loss.
    pub fn v_update(&mut self, batch: &Batch, adam: &AdamConfig) -> Result<f64> {
        let targets = self.min_q(&batch.s, &batch.a, true)?;
        self.v_update_with_targets(&batch.s, &targets, adam)
    }

    /// One Adam step of expectile regression onto fixed targets.
    pub fn v_update_with_targets(&mut self, s: &Tensor, targets: &Tensor, adam: &AdamConfig) -> Result<f64> {
        let (v_loss, gv) = self.v_loss_with_targets(s, targets)?;
        if !v_loss.is_finite() {
            return Err(Error::NonFinite(format!("v loss {v_loss}")));
        }
        self.v.params_mut().adam_step(&gv, adam)?;
        Ok(v_loss)
    }

    /// One Adam step on both critics; returns `(q_loss, mean Q1)`.
    pub fn q_update(&mut self, batch: &Batch, adam: &AdamConfig) -> Result<(f64, f64)> {
        let (q_loss, g1, g2, mean_q) = self.q_loss(batch)?;
        if !q_loss.is_finite() {
            return Err(Error::NonFinite(format!("q loss {q_loss}")));
        }
        self.q1.params_mut().adam_step(&g1, adam)?;
        self.q2.params_mut().adam_step(&g2, adam)?;
        Ok((q_loss, mean_q))
    }

    /// One value step followed by one critic step, in that order.
    pub fn update(&mut self, batch: &Batch, adam: &AdamConfig) -> Result<CriticStats> {
        let v_loss = self.v_update(batch, adam)?;
        let (q_loss, mean_q) = self.q_update(batch, adam)?;
        Ok(CriticStats { v_loss, q_loss, mean_q })
    }

    /// `target <- rho target + (1 - rho) online` for both critics.
    pub fn polyak_update(&mut self) -> Result<()> {
        let rho = self.cfg.rho;
        self.q1_target.params_mut().polyak_from(self.q1.params(), rho)?;
        self.q2_target.params_mut().polyak_from(self.q2.params(), rho)
    }

    /// Writes `q1.bin`, `q2.bin`, `q1_target.bin`, `q2_target.bin`, `v.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, net) in NETS.iter().zip(self.nets()) {
            net.params().save(&dir.join(format!("{name}.bin")), name)?;
        }
        Ok(())
    }

    /// Loads weights saved by [`CriticSet::save`] into a set with the same layout.
    pub fn load_into(&mut self, dir: &Path) -> Result<()> {
        let cfg = self.cfg;
        let mut nets = [
            &mut self.q1,
            &mut self.q2,
            &mut self.q1_target,
            &mut self.q2_target,
            &mut self.v,
        ];
        for (name, net) in NETS.iter().zip(nets.iter_mut()) {
            let path = dir.join(format!("{name}.bin"));
            let (store, _) = crate::nnkit::ParamStore::load(&path)?;
            **net = Mlp::from_params(net.spec().clone(), store)?;
        }
        self.cfg = cfg;
        Ok(())
    }

    fn nets(&self) -> [&Mlp; 5] {
        [&self.q1, &self.q2, &self.q1_target, &self.q2_target, &self.v]
    }
}
