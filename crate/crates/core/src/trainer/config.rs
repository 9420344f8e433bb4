use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::edm::EdmSchedule;
use crate::policy::{EntropyMode, PolicyKind};
use crate::{Error, Result};

/// Behavior regularizer applied to the one-step policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// Trust-region loss through the frozen denoiser, Jacobian included.
    Tr,
    /// Score-distillation KL with a fake-score network.
    Kl,
    /// Trust-region objective with the denoiser Jacobian detached.
    Sds,
}

impl Regularizer {
    pub fn tag(self) -> &'static str {
        match self {
            Regularizer::Tr => "tr",
            Regularizer::Kl => "kl",
            Regularizer::Sds => "sds",
        }
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tr" => Ok(Regularizer::Tr),
            "kl" => Ok(Regularizer::Kl),
            "sds" => Ok(Regularizer::Sds),
            other => Err(Error::Config(format!("unknown regularizer `{other}` (tr, kl, sds)"))),
        }
    }
}

/// Every knob of a run. Parsed from flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Bandit scenario name or `chain`.
    pub scenario: String,
    /// Existing dataset file; generated from `seed` when absent.
    pub dataset: Option<PathBuf>,
    pub dataset_size: usize,
    pub regularizer: Regularizer,
    pub policy_kind: PolicyKind,
    pub alpha: f64,
    /// Divide the Q term by the detached batch mean of `|Q|`.
    pub q_norm: bool,
    pub tau: f64,
    pub gamma: f64,
    pub rho: f64,
    pub entropy_enabled: bool,
    pub entropy_coef: f64,
    pub entropy_mode: EntropyMode,
    pub lr: f64,
    pub critic_lr: Option<f64>,
    pub bc_lr: Option<f64>,
    pub lr_decay: bool,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub hidden: usize,
    pub denoiser_depth: usize,
    pub policy_depth: usize,
    pub critic_depth: usize,
    pub embed_dim: usize,
    pub implicit_sigma: f64,
    pub eval_samples: usize,
    pub chain_states: usize,
    pub behavior_noise: f64,
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub logistic_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scenario: "corner25".into(),
            dataset: None,
            dataset_size: 10_000,
            regularizer: Regularizer::Tr,
            policy_kind: PolicyKind::Gaussian,
            alpha: 1.0,
            q_norm: false,
            tau: 0.7,
            gamma: 0.99,
            rho: 0.995,
            entropy_enabled: false,
            entropy_coef: 0.05,
            entropy_mode: EntropyMode::DataCrossEntropy,
            lr: 3e-4,
            critic_lr: None,
            bc_lr: None,
            lr_decay: false,
            batch_size: 256,
            pretrain_epochs: 50,
            epochs: 1,
            steps_per_epoch: 1000,
            seed: 0,
            output_dir: None,
            hidden: 256,
            denoiser_depth: 4,
            policy_depth: 3,
            critic_depth: 4,
            embed_dim: 16,
            implicit_sigma: 2.5,
            eval_samples: 1000,
            chain_states: 8,
            behavior_noise: 0.1,
            sigma_data: 0.5,
            sigma_min: 0.002,
            sigma_max: 80.0,
            logistic_scale: 0.5,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

fn parse_opt_path(v: &str) -> Option<PathBuf> {
    if v.is_empty() || v == "none" {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = v.to_string(),
            "dataset" => self.dataset = parse_opt_path(v),
            "dataset_size" => self.dataset_size = parse_num(key, v)?,
            "regularizer" => self.regularizer = v.parse()?,
            "policy_kind" => self.policy_kind = v.parse()?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "q_norm" => self.q_norm = parse_bool(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "rho" => self.rho = parse_num(key, v)?,
            "entropy_enabled" => self.entropy_enabled = parse_bool(key, v)?,
            "entropy_coef" => self.entropy_coef = parse_num(key, v)?,
            "entropy_mode" => self.entropy_mode = v.parse()?,
            "lr" => self.lr = parse_num(key, v)?,
            "critic_lr" => self.critic_lr = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "bc_lr" => self.bc_lr = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "lr_decay" => self.lr_decay = parse_bool(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "output_dir" => self.output_dir = parse_opt_path(v),
            "hidden" => self.hidden = parse_num(key, v)?,
            "denoiser_depth" => self.denoiser_depth = parse_num(key, v)?,
            "policy_depth" => self.policy_depth = parse_num(key, v)?,
            "critic_depth" => self.critic_depth = parse_num(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "implicit_sigma" => self.implicit_sigma = parse_num(key, v)?,
            "eval_samples" => self.eval_samples = parse_num(key, v)?,
            "chain_states" => self.chain_states = parse_num(key, v)?,
            "behavior_noise" => self.behavior_noise = parse_num(key, v)?,
            "sigma_data" => self.sigma_data = parse_num(key, v)?,
            "sigma_min" => self.sigma_min = parse_num(key, v)?,
            "sigma_max" => self.sigma_max = parse_num(key, v)?,
            "logistic_scale" => self.logistic_scale = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{raw}`", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0) {
            return fail(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1".into());
        }
        if self.steps_per_epoch < 1 || self.batch_size < 1 || self.hidden < 1 || self.eval_samples < 1 {
            return fail("steps_per_epoch, batch_size, hidden and eval_samples must be positive".into());
        }
        for (name, lr) in [
            ("lr", Some(self.lr)),
            ("critic_lr", self.critic_lr),
            ("bc_lr", self.bc_lr),
        ] {
            if let Some(lr) = lr {
                if !(lr > 0.0) {
                    return fail(format!("{name} must be > 0, got {lr}"));
                }
            }
        }
        if self.entropy_coef < 0.0 {
            return fail("entropy_coef must be >= 0".into());
        }
        if self.entropy_enabled && self.policy_kind == PolicyKind::Implicit {
            return Err(Error::Unsupported("the entropy term needs a gaussian policy".into()));
        }
        if self.regularizer == Regularizer::Kl && self.policy_kind != PolicyKind::Implicit {
            return fail("the kl regularizer copies the denoiser into the policy; set policy_kind = implicit".into());
        }
        if !(self.implicit_sigma > 0.0) {
            return fail("implicit_sigma must be > 0".into());
        }
        self.schedule()?;
        Ok(())
    }

    /// Noise schedule shared by the denoiser, the implicit policy and the fake-score net.
    pub fn schedule(&self) -> Result<EdmSchedule> {
        EdmSchedule::new(self.sigma_data, self.sigma_min, self.sigma_max, self.logistic_scale)
    }

    pub fn critic_lr(&self) -> f64 {
        self.critic_lr.unwrap_or(self.lr)
    }

    pub fn bc_lr(&self) -> f64 {
        self.bc_lr.unwrap_or(self.lr)
    }

    pub fn is_chain(&self) -> bool {
        self.scenario == "chain"
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into())
        };
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
        let entropy_mode = match self.entropy_mode {
            EntropyMode::DataCrossEntropy => "data",
            EntropyMode::PolicyEntropy => "policy",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("scenario", self.scenario.clone());
        kv("dataset", path(&self.dataset));
        kv("dataset_size", self.dataset_size.to_string());
        kv("regularizer", self.regularizer.tag().into());
        kv("policy_kind", self.policy_kind.tag().into());
        kv("alpha", self.alpha.to_string());
        kv("q_norm", self.q_norm.to_string());
        kv("tau", self.tau.to_string());
        kv("gamma", self.gamma.to_string());
        kv("rho", self.rho.to_string());
        kv("entropy_enabled", self.entropy_enabled.to_string());
        kv("entropy_coef", self.entropy_coef.to_string());
        kv("entropy_mode", entropy_mode.into());
        kv("lr", self.lr.to_string());
        kv("critic_lr", opt(self.critic_lr));
        kv("bc_lr", opt(self.bc_lr));
        kv("lr_decay", self.lr_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("epochs", self.epochs.to_string());
        kv("steps_per_epoch", self.steps_per_epoch.to_string());
        kv("seed", self.seed.to_string());
        kv("output_dir", path(&self.output_dir));
        kv("hidden", self.hidden.to_string());
        kv("denoiser_depth", self.denoiser_depth.to_string());
        kv("policy_depth", self.policy_depth.to_string());
        kv("critic_depth", self.critic_depth.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("implicit_sigma", self.implicit_sigma.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("chain_states", self.chain_states.to_string());
        kv("behavior_noise", self.behavior_noise.to_string());
        kv("sigma_data", self.sigma_data.to_string());
        kv("sigma_min", self.sigma_min.to_string());
        kv("sigma_max", self.sigma_max.to_string());
        kv("logistic_scale", self.logistic_scale.to_string());
        s
    }
}
