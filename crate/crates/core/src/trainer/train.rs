use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Regularizer, TrainConfig};
use super::eval::{evaluate, evaluate_chain, EvalResult};
use super::metrics::{write_metrics, Accumulator, MetricsRow, Stat};
use crate::critic::{Batch, CriticConfig, CriticSet};
use crate::diffusion::{bc_step, sds_grad_with_loss, trust_region_loss_on_tape, Denoiser, DenoiserConfig};
use crate::edm::NoiseDraw;
use crate::envs::{gen_chain_dataset, BanditScenario, ChainMdp, Dataset};
use crate::kl::{
    copy_into_policy, fake_score_update, kl_direction, kl_pseudo_loss_on_tape, FakeScoreNet, WeightingMode,
};
use crate::nnkit::{AdamConfig, ParamMode, ParamStore, Tape, Tensor};
use crate::policy::{EntropyMode, GaussianPolicy, ImplicitPolicy, OneStepPolicy, PolicyKind};
use crate::{Error, Result};

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Pretrain = 3,
    Train = 4,
    Eval = 5,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Train,
}

/// Instrumentation points, emitted in execution order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    ValueUpdate,
    QUpdate,
    BcUpdate,
    PolicyUpdate { lr: f64 },
    FakeScoreUpdate,
    PolyakUpdate,
    Evaluate { epoch: usize },
}

pub trait TrainObserver {
    fn on_event(&mut self, phase: Phase, step: usize, event: Event);
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {
    fn on_event(&mut self, _: Phase, _: usize, _: Event) {}
}

/// Keeps every event for later assertions.
#[derive(Default)]
pub struct RecordingObserver {
    pub events: Vec<(Phase, usize, Event)>,
}

impl TrainObserver for RecordingObserver {
    fn on_event(&mut self, phase: Phase, step: usize, event: Event) {
        self.events.push((phase, step, event));
    }
}

/// The environment a run is scored against.
#[derive(Clone, Debug)]
pub enum Task {
    Bandit(BanditScenario),
    Chain(ChainMdp),
}

impl Task {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        if cfg.is_chain() {
            Ok(Task::Chain(ChainMdp::new(cfg.chain_states, cfg.gamma)?))
        } else {
            Ok(Task::Bandit(BanditScenario::by_name(&cfg.scenario)?))
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Task::Bandit(_) => (BanditScenario::STATE_DIM, BanditScenario::ACTION_DIM),
            Task::Chain(m) => (m.n_states, 1),
        }
    }
}

/// Reads the configured dataset or generates it from the data stream.
pub fn load_dataset(cfg: &TrainConfig, task: &Task) -> Result<Dataset> {
    if let Some(path) = &cfg.dataset {
        if !path.exists() {
            return Err(Error::Usage(format!("dataset {} does not exist", path.display())));
        }
        let d = Dataset::read(path)?;
        if (d.state_dim, d.action_dim) != task.dims() {
            return Err(Error::Config(format!(
                "dataset dims {}x{} do not match scenario {}",
                d.state_dim, d.action_dim, cfg.scenario
            )));
        }
        return Ok(d);
    }
    let mut rng = rng_for(cfg.seed, Stream::Data);
    match task {
        Task::Bandit(sc) => sc.generate(cfg.dataset_size, cfg.seed, &mut rng),
        Task::Chain(m) => gen_chain_dataset(m, cfg.behavior_noise, cfg.dataset_size, cfg.seed, &mut rng),
    }
}

/// Behavior model and critics after pretraining.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub denoiser: Denoiser,
    pub critics: CriticSet,
}

/// Everything a run trains.
#[derive(Clone, Debug)]
pub struct Models {
    pub denoiser: Denoiser,
    pub critics: CriticSet,
    pub policy: OneStepPolicy,
    pub fake: Option<FakeScoreNet>,
}

pub fn denoiser_config(cfg: &TrainConfig) -> DenoiserConfig {
    DenoiserConfig {
        hidden: cfg.hidden,
        depth: cfg.denoiser_depth,
        embed_dim: cfg.embed_dim,
    }
}

pub fn critic_config(cfg: &TrainConfig) -> CriticConfig {
    CriticConfig {
        hidden: cfg.hidden,
        depth: cfg.critic_depth,
        tau: cfg.tau,
        gamma: cfg.gamma,
        rho: cfg.rho,
    }
}

fn fresh_policy(cfg: &TrainConfig, sd: usize, ad: usize, rng: &mut ChaCha8Rng) -> Result<OneStepPolicy> {
    Ok(match cfg.policy_kind {
        PolicyKind::Gaussian => {
            OneStepPolicy::Gaussian(GaussianPolicy::new(sd, ad, cfg.hidden, cfg.policy_depth, rng)?)
        }
        PolicyKind::Implicit => OneStepPolicy::Implicit(ImplicitPolicy::new(
            sd,
            ad,
            denoiser_config(cfg),
            cfg.schedule()?,
            cfg.implicit_sigma,
            rng,
        )?),
    })
}

impl Models {
    /// Fresh networks from the init stream; draw order is fixed so that a
    /// run with supplied pretrained nets sees the same policy init.
    pub fn init(cfg: &TrainConfig, state_dim: usize, action_dim: usize) -> Result<Self> {
        let mut rng = rng_for(cfg.seed, Stream::Init);
        let policy = fresh_policy(cfg, state_dim, action_dim, &mut rng)?;
        let denoiser = Denoiser::new(state_dim, action_dim, denoiser_config(cfg), cfg.schedule()?, &mut rng)?;
        let critics = CriticSet::new(state_dim, action_dim, critic_config(cfg), &mut rng)?;
        Ok(Self {
            denoiser,
            critics,
            policy,
            fake: None,
        })
    }

    pub fn all_finite(&self) -> bool {
        let c = &self.critics;
        let mut stores: Vec<&ParamStore> = vec![
            self.denoiser.params(),
            self.policy.params(),
            c.q1.params(),
            c.q2.params(),
            c.q1_target.params(),
            c.q2_target.params(),
            c.v.params(),
        ];
        if let Some(f) = &self.fake {
            stores.push(f.net.params());
        }
        stores.iter().all(|s| s.values().iter().all(Tensor::all_finite))
    }

    /// Writes `denoiser.bin`, `policy.bin`, `critics/*.bin` and `fake.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.denoiser.params().save(&dir.join("denoiser.bin"), "denoiser")?;
        self.policy.save(&dir.join("policy.bin"))?;
        self.critics.save(&dir.join("critics"))?;
        if let Some(f) = &self.fake {
            f.net.params().save(&dir.join("fake.bin"), "fake")?;
        }
        Ok(())
    }

    /// Rebuilds models for `cfg` and loads weights written by [`Models::save`].
    pub fn load(cfg: &TrainConfig, dir: &Path) -> Result<Self> {
        let task = Task::from_config(cfg)?;
        let (sd, ad) = task.dims();
        let mut m = Self::init(cfg, sd, ad)?;
        let load_into = |store: &mut ParamStore, path: &Path, tag: Option<&str>| -> Result<()> {
            let (loaded, found) = ParamStore::load(path)?;
            if let Some(t) = tag {
                if t != found {
                    return Err(Error::Config(format!(
                        "{} holds a `{found}` checkpoint, expected `{t}`",
                        path.display()
                    )));
                }
            }
            if !store.same_layout(&loaded) {
                return Err(Error::Config(format!(
                    "{} does not match the configured architecture",
                    path.display()
                )));
            }
            store.copy_values_from(&loaded)
        };
        load_into(m.denoiser.params_mut(), &dir.join("denoiser.bin"), Some("denoiser"))?;
        let tag = cfg.policy_kind.tag();
        load_into(m.policy.params_mut(), &dir.join("policy.bin"), Some(tag))?;
        m.critics.load_into(&dir.join("critics"))?;
        let fake_path = dir.join("fake.bin");
        if fake_path.exists() {
            let mut fake = FakeScoreNet {
                net: m.denoiser.clone(),
            };
            load_into(fake.net.params_mut(), &fake_path, Some("fake"))?;
            m.fake = Some(fake);
        }
        Ok(m)
    }
}

/// `lr` or its cosine decay to 10% over `total` steps.
pub fn lr_at(cfg: &TrainConfig, base: f64, step: usize, total: usize) -> f64 {
    if !cfg.lr_decay || total <= 1 {
        return base;
    }
    let frac = step as f64 / (total - 1) as f64;
    base * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

fn guard(what: &str, step: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("divergence: {what} = {v} at step {step}")))
    }
}

/// Behavior cloning plus value/critic regression; no policy updates.
pub fn pretrain(
    cfg: &TrainConfig,
    data: &Dataset,
    mut denoiser: Denoiser,
    mut critics: CriticSet,
    obs: &mut dyn TrainObserver,
) -> Result<Pretrained> {
    if data.is_empty() {
        return Err(Error::Usage("pretraining needs a non-empty dataset".into()));
    }
    let mut rng = rng_for(cfg.seed, Stream::Pretrain);
    let steps = cfg.pretrain_epochs * cfg.steps_per_epoch;
    for step in 0..steps {
        let critic_adam = AdamConfig::with_lr(lr_at(cfg, cfg.critic_lr(), step, steps));
        let bc_adam = AdamConfig::with_lr(lr_at(cfg, cfg.bc_lr(), step, steps));
        let batch = data.sample_batch(cfg.batch_size, &mut rng)?;
        guard("v_loss", step, critics.v_update(&batch, &critic_adam)?)?;
        obs.on_event(Phase::Pretrain, step, Event::ValueUpdate);
        guard("q_loss", step, critics.q_update(&batch, &critic_adam)?.0)?;
        obs.on_event(Phase::Pretrain, step, Event::QUpdate);
        guard(
            "bc_loss",
            step,
            bc_step(&mut denoiser, &batch.s, &batch.a, &bc_adam, &mut rng)?,
        )?;
        obs.on_event(Phase::Pretrain, step, Event::BcUpdate);
        critics.polyak_update()?;
        obs.on_event(Phase::Pretrain, step, Event::PolyakUpdate);
    }
    Ok(Pretrained { denoiser, critics })
}

/// Behavior cloning alone, with the pretraining step budget and lr schedule.
pub fn pretrain_bc(
    cfg: &TrainConfig,
    data: &Dataset,
    mut denoiser: Denoiser,
    obs: &mut dyn TrainObserver,
) -> Result<Denoiser> {
    if data.is_empty() {
        return Err(Error::Usage("pretraining needs a non-empty dataset".into()));
    }
    let mut rng = rng_for(cfg.seed, Stream::Pretrain);
    let steps = cfg.pretrain_epochs * cfg.steps_per_epoch;
    for step in 0..steps {
        let bc_adam = AdamConfig::with_lr(lr_at(cfg, cfg.bc_lr(), step, steps));
        let batch = data.sample_batch(cfg.batch_size, &mut rng)?;
        guard(
            "bc_loss",
            step,
            bc_step(&mut denoiser, &batch.s, &batch.a, &bc_adam, &mut rng)?,
        )?;
        obs.on_event(Phase::Pretrain, step, Event::BcUpdate);
    }
    Ok(denoiser)
}

struct PolicyStepOut {
    reg_loss: f64,
    a_theta: Tensor,
}

/// Lower bound on the `|Q|` scale used by `q_norm`.
const Q_NORM_FLOOR: f64 = 1e-6;

/// `alpha * Reg(a_theta) - mean min_q(s, a_theta) (+ lambda_H * H)`, one Adam step.
/// With `q_norm` the Q term is divided by the detached batch mean of `|Q|`.
fn policy_step(
    cfg: &TrainConfig,
    models: &mut Models,
    batch: &Batch,
    adam: &AdamConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyStepOut> {
    let n = batch.rows();
    let ad = models.policy.action_dim();
    let eps = Tensor::randn(n, ad, rng);
    let noise = NoiseDraw::sample(models.denoiser.schedule(), n, ad, rng);
    let mut tape = Tape::new();
    let sample = models
        .policy
        .sample_on_tape(&mut tape, &batch.s, &eps, ParamMode::Train)?;
    let a = sample.action;
    let a_theta = tape.value(a).clone();

    let (reg, reg_loss) = match cfg.regularizer {
        Regularizer::Tr => {
            let l = trust_region_loss_on_tape(&models.denoiser, &mut tape, a, &batch.s, &noise)?;
            (l, tape.value(l).item())
        }
        Regularizer::Sds => {
            let (loss, g) = sds_grad_with_loss(&models.denoiser, &a_theta, &batch.s, &noise)?;
            // sum(a * g) carries exactly `g` back into a_theta
            let gv = tape.constant(g);
            let prod = tape.mul(a, gv);
            (tape.sum(prod), loss)
        }
        Regularizer::Kl => {
            let fake = models
                .fake
                .as_ref()
                .ok_or_else(|| Error::Usage("kl arm needs a fake-score network".into()))?;
            let dir = kl_direction(
                &models.denoiser,
                fake,
                &a_theta,
                &batch.s,
                &noise,
                WeightingMode::PerRow,
            )?;
            let l = kl_pseudo_loss_on_tape(&mut tape, a, &dir.grad)?;
            (l, tape.value(l).item())
        }
    };
    guard("regularizer", step, reg_loss)?;

    let q = models.critics.min_q_on_tape(&mut tape, &batch.s, a, false)?;
    let mut mean_q = tape.mean(q);
    if cfg.q_norm {
        let scale = tape.value(q).data().iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        mean_q = tape.scale(mean_q, 1.0 / scale.max(Q_NORM_FLOOR));
    }
    let weighted = tape.scale(reg, cfg.alpha);
    let mut loss = tape.sub(weighted, mean_q);

    if cfg.entropy_enabled && cfg.entropy_coef > 0.0 {
        let gp = models
            .policy
            .as_gaussian()
            .ok_or_else(|| Error::Unsupported("the entropy term needs a gaussian policy".into()))?;
        let term = match cfg.entropy_mode {
            EntropyMode::DataCrossEntropy => {
                gp.entropy_term_on_tape(&mut tape, &batch.s, &batch.a, ParamMode::Train)?
            }
            EntropyMode::PolicyEntropy => {
                // maximizing -E log pi means minimizing E log pi
                let lp = sample.log_prob.expect("gaussian sample carries log_prob");
                tape.mean(lp)
            }
        };
        let scaled = tape.scale(term, cfg.entropy_coef);
        loss = tape.add(loss, scaled);
    }
    guard("policy loss", step, tape.value(loss).item())?;
    let grads = tape.backward_scalar(loss)?.for_store(models.policy.params());
    models.policy.params_mut().adam_step(&grads, adam)?;
    Ok(PolicyStepOut { reg_loss, a_theta })
}

/// Monte-Carlo policy entropy on the first few dataset states; NaN for
/// policies without a density.
fn entropy_estimate(models: &Models, data: &Dataset, rng: &mut ChaCha8Rng) -> Result<f64> {
    let Some(gp) = models.policy.as_gaussian() else {
        return Ok(f64::NAN);
    };
    let idx: Vec<usize> = (0..data.len().min(64)).collect();
    let states = data.batch(&idx)?.s;
    let per_state = (1024 / idx.len()).max(1);
    gp.entropy_estimate(&states, per_state, rng)
}

/// Evaluation used for metrics rows.
pub fn evaluate_models(
    cfg: &TrainConfig,
    task: &Task,
    models: &Models,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize, Option<EvalResult>)> {
    match task {
        Task::Bandit(sc) => {
            let r = evaluate(&models.policy, sc, cfg.eval_samples, rng)?;
            Ok((r.mean_reward, r.modes_occupied(), Some(r)))
        }
        Task::Chain(m) => {
            let per = (cfg.eval_samples / m.goal().max(1)).max(1);
            let v = evaluate_chain(&models.policy, m, per, 3 * m.n_states, rng)?;
            Ok((v, 0, None))
        }
    }
}

/// Result of a full run.
pub struct RunOutcome {
    pub models: Models,
    pub metrics: Vec<MetricsRow>,
    pub final_eval: Option<EvalResult>,
}

/// Policy learning in the fixed per-step order: value, critics, behavior
/// cloning (skipped for the KL arm, whose real denoiser stays frozen),
/// policy, fake-score (KL only), Polyak.
pub fn train_dtql(
    cfg: &TrainConfig,
    task: &Task,
    data: &Dataset,
    models: &mut Models,
    obs: &mut dyn TrainObserver,
) -> Result<(Vec<MetricsRow>, Option<EvalResult>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training needs a non-empty dataset".into()));
    }
    let mut rng = rng_for(cfg.seed, Stream::Train);
    let mut eval_rng = rng_for(cfg.seed, Stream::Eval);
    let total = cfg.epochs * cfg.steps_per_epoch;
    let start = Instant::now();
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut last_eval = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut acc = Accumulator::default();
        for _ in 0..cfg.steps_per_epoch {
            let critic_adam = AdamConfig::with_lr(lr_at(cfg, cfg.critic_lr(), step, total));
            let bc_adam = AdamConfig::with_lr(lr_at(cfg, cfg.bc_lr(), step, total));
            let policy_lr = lr_at(cfg, cfg.lr, step, total);
            let policy_adam = AdamConfig::with_lr(policy_lr);
            let batch = data.sample_batch(cfg.batch_size, &mut rng)?;

            acc.add(
                Stat::V,
                guard("v_loss", step, models.critics.v_update(&batch, &critic_adam)?)?,
            );
            obs.on_event(Phase::Train, step, Event::ValueUpdate);
            let (q_loss, mean_q) = models.critics.q_update(&batch, &critic_adam)?;
            acc.add(Stat::Q, guard("q_loss", step, q_loss)?);
            acc.add(Stat::MeanQ, mean_q);
            obs.on_event(Phase::Train, step, Event::QUpdate);

            if cfg.regularizer != Regularizer::Kl {
                let l = bc_step(&mut models.denoiser, &batch.s, &batch.a, &bc_adam, &mut rng)?;
                acc.add(Stat::Bc, guard("bc_loss", step, l)?);
                obs.on_event(Phase::Train, step, Event::BcUpdate);
            }

            let out = policy_step(cfg, models, &batch, &policy_adam, step, &mut rng)?;
            acc.add(Stat::Reg, out.reg_loss);
            obs.on_event(Phase::Train, step, Event::PolicyUpdate { lr: policy_lr });

            if let Some(fake) = models.fake.as_mut() {
                let l = fake_score_update(fake, &out.a_theta, &batch.s, &bc_adam, &mut rng)?;
                guard("fake_score_loss", step, l)?;
                obs.on_event(Phase::Train, step, Event::FakeScoreUpdate);
            }

            models.critics.polyak_update()?;
            obs.on_event(Phase::Train, step, Event::PolyakUpdate);
            step += 1;
        }
        let (reward, coverage, ev) = evaluate_models(cfg, task, models, &mut eval_rng)?;
        let entropy = entropy_estimate(models, data, &mut eval_rng)?;
        obs.on_event(Phase::Train, step, Event::Evaluate { epoch });
        rows.push(MetricsRow {
            epoch,
            bc_loss: acc.mean(Stat::Bc),
            tr_or_kl_loss: acc.mean(Stat::Reg),
            q_loss: acc.mean(Stat::Q),
            v_loss: acc.mean(Stat::V),
            mean_q: acc.mean(Stat::MeanQ),
            policy_entropy_estimate: entropy,
            eval_mean_reward: reward,
            mode_coverage: coverage,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: reg {:.4} q {:.4} reward {reward:.4} modes {coverage}",
            acc.mean(Stat::Reg),
            acc.mean(Stat::Q)
        );
        last_eval = ev;
    }
    Ok((rows, last_eval))
}

/// Full pipeline: dataset, init, pretraining (or the supplied pretrained
/// nets), policy learning, and outputs under `output_dir` when set.
pub fn run_with(cfg: &TrainConfig, pretrained: Option<Pretrained>, obs: &mut dyn TrainObserver) -> Result<RunOutcome> {
    cfg.validate()?;
    let task = Task::from_config(cfg)?;
    let data = load_dataset(cfg, &task)?;
    let (sd, ad) = task.dims();
    let mut models = Models::init(cfg, sd, ad)?;
    let pre = match pretrained {
        Some(p) => p,
        None => {
            if cfg.regularizer == Regularizer::Kl && cfg.pretrain_epochs == 0 {
                return Err(Error::Usage(
                    "the kl arm needs a pretrained denoiser; set pretrain_epochs > 0 or supply one".into(),
                ));
            }
            pretrain(cfg, &data, models.denoiser.clone(), models.critics.clone(), obs)?
        }
    };
    models.denoiser = pre.denoiser;
    models.critics = pre.critics;
    if cfg.regularizer == Regularizer::Kl {
        copy_into_policy(&models.denoiser, &mut models.policy)?;
        models.fake = Some(FakeScoreNet {
            net: models.denoiser.clone(),
        });
    }
    let (metrics, final_eval) = train_dtql(cfg, &task, &data, &mut models, obs)?;
    if let Some(dir) = &cfg.output_dir {
        write_run(cfg, dir, &models, &metrics, final_eval.as_ref())?;
    }
    Ok(RunOutcome {
        models,
        metrics,
        final_eval,
    })
}

pub fn run(cfg: &TrainConfig) -> Result<RunOutcome> {
    run_with(cfg, None, &mut NoopObserver)
}

/// The KL comparison arm; requires a pretrained behavior denoiser.
pub fn train_kl(cfg: &TrainConfig, pretrained: Option<Pretrained>) -> Result<RunOutcome> {
    if cfg.regularizer != Regularizer::Kl {
        return Err(Error::Config("train_kl needs regularizer = kl".into()));
    }
    run_with(cfg, pretrained, &mut NoopObserver)
}

fn write_run(
    cfg: &TrainConfig,
    dir: &Path,
    models: &Models,
    metrics: &[MetricsRow],
    eval: Option<&EvalResult>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    write_metrics(dir, metrics)?;
    models.save(dir)?;
    if let Some(e) = eval {
        e.write_samples(&dir.join("samples.csv"))?;
    }
    Ok(())
}
