//! One-step policies: a tanh-squashed Gaussian and an implicit generator
//! sharing the denoiser architecture.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, DenoiserConfig};
use crate::edm::EdmSchedule;
use crate::nnkit::{Activation, Mlp, MlpSpec, ParamMode, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Dataset actions are pulled inside `(-1, 1)` by this margin before `atanh`.
pub const ACTION_CLIP: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Gaussian,
    Implicit,
}

impl PolicyKind {
    pub fn tag(self) -> &'static str {
        match self {
            PolicyKind::Gaussian => "gaussian",
            PolicyKind::Implicit => "implicit",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(PolicyKind::Gaussian),
            "implicit" => Ok(PolicyKind::Implicit),
            other => Err(Error::Config(format!("unknown policy kind `{other}`"))),
        }
    }
}

/// Which quantity the entropy regularizer estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// `-E_{(s,a) ~ D} log pi(a|s)`, evaluated on dataset actions.
    DataCrossEntropy,
    /// `-E_{a ~ pi} log pi(a|s)`, reparameterized through policy samples.
    PolicyEntropy,
}

impl std::str::FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" | "data_cross_entropy" => Ok(EntropyMode::DataCrossEntropy),
            "policy" | "policy_entropy" => Ok(EntropyMode::PolicyEntropy),
            other => Err(Error::Config(format!("unknown entropy mode `{other}`"))),
        }
    }
}

/// `pi(a|s) = tanh(N(mean(s), diag(exp(log_std(s))^2)))`.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    net: Mlp,
    state_dim: usize,
    action_dim: usize,
}

/// Tape handles for one reparameterized draw.
pub struct PolicySample {
    pub action: Var,
    /// `n x 1` log-density of each drawn action; Gaussian only.
    pub log_prob: Option<Var>,
    /// `n x action_dim` clamped log-std; Gaussian only.
    pub log_std: Option<Var>,
}

impl GaussianPolicy {
    /// `depth` linear layers (ReLU) producing `[mean, log_std]`.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::uniform(state_dim, hidden, 2 * action_dim, depth, Activation::Relu);
        Self::from_net(Mlp::new(spec, rng)?, state_dim, action_dim)
    }

    pub fn from_net(net: Mlp, state_dim: usize, action_dim: usize) -> Result<Self> {
        let spec = net.spec();
        if spec.input_width() != state_dim || spec.output_width() != 2 * action_dim {
            return Err(Error::Config(format!(
                "gaussian policy trunk {:?} incompatible with state_dim={state_dim}, action_dim={action_dim}",
                spec.layer_widths
            )));
        }
        Ok(Self {
            net,
            state_dim,
            action_dim,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn check_states(&self, s: &Tensor) -> Result<()> {
        if s.cols() != self.state_dim {
            return Err(Error::shape("policy state", self.state_dim, s.cols()));
        }
        Ok(())
    }

    /// `(mean, clamped log_std)` heads on the tape.
    pub fn heads_on_tape(&self, tape: &mut Tape, s: &Tensor, mode: ParamMode) -> Result<(Var, Var)> {
        self.check_states(s)?;
        let sv = tape.constant(s.clone());
        let out = self.net.forward(tape, sv, mode)?;
        let mean = tape.slice_cols(out, 0, self.action_dim);
        let raw = tape.slice_cols(out, self.action_dim, self.action_dim);
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std))
    }

    /// Reparameterized draw `a = tanh(mean + exp(log_std) * eps)` with its
    /// log-density including the `-sum log(1 - a^2)` squash correction.
    pub fn sample_on_tape(&self, tape: &mut Tape, s: &Tensor, eps: &Tensor, mode: ParamMode) -> Result<PolicySample> {
        if eps.shape() != [s.rows(), self.action_dim] {
            return Err(Error::shape("policy noise", self.action_dim, eps.cols()));
        }
        let (mean, log_std) = self.heads_on_tape(tape, s, mode)?;
        let std = tape.exp(log_std);
        let e = tape.constant(eps.clone());
        let spread = tape.mul(std, e);
        let u = tape.add(mean, spread);
        let action = tape.tanh(u);

        // log N(u) = -eps^2/2 - log_std - ln(2 pi)/2
        // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
        let base = eps.map(|x| -0.5 * x * x - 0.5 * (2.0 * PI).ln() - 2.0 * LN_2);
        let base = tape.constant(base);
        let lp = tape.sub(base, log_std);
        let two_u = tape.scale(u, 2.0);
        let neg_two_u = tape.scale(u, -2.0);
        let sp = tape.softplus(neg_two_u);
        let two_sp = tape.scale(sp, 2.0);
        let lp = tape.add(lp, two_u);
        let lp = tape.add(lp, two_sp);
        let log_prob = tape.sum_cols(lp);
        Ok(PolicySample {
            action,
            log_prob: Some(log_prob),
            log_std: Some(log_std),
        })
    }

    /// Draw actions and their log-densities.
    pub fn sample<R: Rng + ?Sized>(&self, s: &Tensor, rng: &mut R) -> Result<(Tensor, Vec<f64>)> {
        let eps = Tensor::randn(s.rows(), self.action_dim, rng);
        let mut tape = Tape::new();
        let out = self.sample_on_tape(&mut tape, s, &eps, ParamMode::Frozen)?;
        let lp = tape.value(out.log_prob.expect("gaussian")).data().to_vec();
        Ok((tape.value(out.action).clone(), lp))
    }

    /// `n x 1` log-density of given actions (clipped into `(-1, 1)`).
    pub fn log_prob_on_tape(&self, tape: &mut Tape, s: &Tensor, a: &Tensor, mode: ParamMode) -> Result<Var> {
        if a.shape() != [s.rows(), self.action_dim] {
            return Err(Error::shape("log_prob action", self.action_dim, a.cols()));
        }
        let clipped = a.data().iter().filter(|x| x.abs() > ACTION_CLIP).count();
        let a = a.map(|x| x.clamp(-ACTION_CLIP, ACTION_CLIP));
        if clipped > 0 {
            log::debug!("log_prob: {clipped} action coordinates clipped to +-{ACTION_CLIP}");
        }
        let (mean, log_std) = self.heads_on_tape(tape, s, mode)?;
        let u = tape.constant(a.map(f64::atanh));
        let diff = tape.sub(u, mean);
        let neg_log_std = tape.scale(log_std, -1.0);
        let inv_std = tape.exp(neg_log_std);
        let z = tape.mul(diff, inv_std);
        let z2 = tape.square(z);
        let half_z2 = tape.scale(z2, -0.5);
        let lp = tape.sub(half_z2, log_std);
        let corr = tape.constant(a.map(|x| -0.5 * (2.0 * PI).ln() - (1.0 - x * x).ln()));
        let lp = tape.add(lp, corr);
        Ok(tape.sum_cols(lp))
    }

    pub fn log_prob(&self, s: &Tensor, a: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let lp = self.log_prob_on_tape(&mut tape, s, a, ParamMode::Frozen)?;
        Ok(tape.value(lp).data().to_vec())
    }

    /// `-mean log pi(a|s)` over dataset pairs.
    pub fn entropy_term_on_tape(&self, tape: &mut Tape, s: &Tensor, a: &Tensor, mode: ParamMode) -> Result<Var> {
        let lp = self.log_prob_on_tape(tape, s, a, mode)?;
        let m = tape.mean(lp);
        Ok(tape.scale(m, -1.0))
    }

    pub fn entropy_term(&self, s: &Tensor, a: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let h = self.entropy_term_on_tape(&mut tape, s, a, ParamMode::Train)?;
        let g = tape.backward_scalar(h)?;
        Ok((tape.value(h).item(), g.for_store(self.net.params())))
    }

    /// Monte-Carlo differential entropy `-E_{a ~ pi} log pi(a|s)` for the given states.
    pub fn entropy_estimate<R: Rng + ?Sized>(&self, s: &Tensor, samples_per_state: usize, rng: &mut R) -> Result<f64> {
        let states = s.repeat_rows(samples_per_state.max(1));
        let (_, lp) = self.sample(&states, rng)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Clamped log-std per state.
    pub fn log_std(&self, s: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (_, ls) = self.heads_on_tape(&mut tape, s, ParamMode::Frozen)?;
        Ok(tape.value(ls).clone())
    }
}

/// `a = c_out(sigma_g) F(c_in(sigma_g) sigma_g eps, c_noise(sigma_g) | s)`:
/// the denoiser trunk applied once at a fixed generation noise level,
/// without the skip term so the output depends on the weights alone.
#[derive(Clone, Debug)]
pub struct ImplicitPolicy {
    net: Denoiser,
    gen_sigma: f64,
}

impl ImplicitPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: DenoiserConfig,
        schedule: EdmSchedule,
        gen_sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::from_denoiser(Denoiser::new(state_dim, action_dim, cfg, schedule, rng)?, gen_sigma)
    }

    pub fn from_denoiser(net: Denoiser, gen_sigma: f64) -> Result<Self> {
        net.schedule().coefficients(gen_sigma)?;
        Ok(Self { net, gen_sigma })
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.net
    }

    pub fn gen_sigma(&self) -> f64 {
        self.gen_sigma
    }

    pub fn sample_on_tape(&self, tape: &mut Tape, s: &Tensor, eps: &Tensor, mode: ParamMode) -> Result<Var> {
        let sigmas = vec![self.gen_sigma; s.rows()];
        self.net.check_batch(eps, s, sigmas.len())?;
        let pre = self.net.precondition(&sigmas)?;
        let z = tape.constant(eps.scale(self.gen_sigma));
        let f = self.net.trunk_on_tape(tape, z, &pre, s, mode)?;
        let c_out = tape.constant(pre.c_out);
        Ok(tape.mul(f, c_out))
    }

    pub fn act(&self, s: &Tensor, eps: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let a = self.sample_on_tape(&mut tape, s, eps, ParamMode::Frozen)?;
        Ok(tape.value(a).clone())
    }
}

/// The deployable policy in either parameterization.
#[derive(Clone, Debug)]
pub enum OneStepPolicy {
    Gaussian(GaussianPolicy),
    Implicit(ImplicitPolicy),
}

impl OneStepPolicy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            OneStepPolicy::Gaussian(_) => PolicyKind::Gaussian,
            OneStepPolicy::Implicit(_) => PolicyKind::Implicit,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            OneStepPolicy::Gaussian(p) => p.action_dim,
            OneStepPolicy::Implicit(p) => p.net.action_dim(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            OneStepPolicy::Gaussian(p) => p.state_dim,
            OneStepPolicy::Implicit(p) => p.net.state_dim(),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            OneStepPolicy::Gaussian(p) => p.net.params(),
            OneStepPolicy::Implicit(p) => p.net.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            OneStepPolicy::Gaussian(p) => p.net.params_mut(),
            OneStepPolicy::Implicit(p) => p.net.params_mut(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianPolicy> {
        match self {
            OneStepPolicy::Gaussian(p) => Some(p),
            OneStepPolicy::Implicit(_) => None,
        }
    }

    /// Reparameterized draw with caller-provided standard-normal noise.
    pub fn sample_on_tape(&self, tape: &mut Tape, s: &Tensor, eps: &Tensor, mode: ParamMode) -> Result<PolicySample> {
        match self {
            OneStepPolicy::Gaussian(p) => p.sample_on_tape(tape, s, eps, mode),
            OneStepPolicy::Implicit(p) => Ok(PolicySample {
                action: p.sample_on_tape(tape, s, eps, mode)?,
                log_prob: None,
                log_std: None,
            }),
        }
    }

    /// Draw one action per state; log-densities only for the Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, s: &Tensor, rng: &mut R) -> Result<(Tensor, Option<Vec<f64>>)> {
        match self {
            OneStepPolicy::Gaussian(p) => p.sample(s, rng).map(|(a, lp)| (a, Some(lp))),
            OneStepPolicy::Implicit(p) => {
                let eps = Tensor::randn(s.rows(), p.net.action_dim(), rng);
                Ok((p.act(s, &eps)?, None))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params().save(path, self.kind().tag())
    }
}

/// Anything that emits actions for a batch of states.
pub trait ActionSampler {
    fn sample_actions(&self, s: &Tensor, rng: &mut dyn rand::RngCore) -> Result<Tensor>;
}

impl ActionSampler for OneStepPolicy {
    fn sample_actions(&self, s: &Tensor, rng: &mut dyn rand::RngCore) -> Result<Tensor> {
        self.sample(s, rng).map(|(a, _)| a)
    }
}

/// Uniform actions on `[-1, 1]^action_dim`.
pub struct UniformPolicy {
    pub action_dim: usize,
}

impl ActionSampler for UniformPolicy {
    fn sample_actions(&self, s: &Tensor, rng: &mut dyn rand::RngCore) -> Result<Tensor> {
        let data = (0..s.rows() * self.action_dim)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        Tensor::from_vec(s.rows(), self.action_dim, data)
    }
}
