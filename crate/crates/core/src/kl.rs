//! KL behavior regularization by score distillation: a fake-score denoiser
//! tracks the policy's action distribution and the difference between the
//! fake and real denoisers gives the update direction for generated actions.

use rand::Rng;

use crate::diffusion::{bc_step, Denoiser};
use crate::edm::NoiseDraw;
use crate::nnkit::{AdamConfig, ParamMode, Tape, Tensor, Var};
use crate::policy::{ImplicitPolicy, OneStepPolicy};
use crate::{Error, Result};

/// Divisor floor for the per-row weighting factor.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Denoiser trained on the policy's own (detached) actions.
#[derive(Clone, Debug)]
pub struct FakeScoreNet {
    pub net: Denoiser,
}

/// How the weighting factor is averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightingMode {
    /// One factor per batch row, averaged over action dimensions.
    #[default]
    PerRow,
    /// A single factor averaged over the whole batch.
    Global,
}

/// Copies the behavior denoiser into a fresh implicit policy and fake-score net.
pub fn init_from(source: &Denoiser, gen_sigma: f64) -> Result<(ImplicitPolicy, FakeScoreNet)> {
    let policy = ImplicitPolicy::from_denoiser(source.clone(), gen_sigma)?;
    Ok((policy, FakeScoreNet { net: source.clone() }))
}

/// Overwrites an implicit policy's weights with the behavior denoiser's.
pub fn copy_into_policy(source: &Denoiser, policy: &mut OneStepPolicy) -> Result<()> {
    match policy {
        OneStepPolicy::Implicit(_) => {
            if !policy.params().same_layout(source.params()) {
                return Err(Error::Config(
                    "implicit policy and denoiser architectures differ".into(),
                ));
            }
            policy.params_mut().copy_values_from(source.params())
        }
        OneStepPolicy::Gaussian(_) => Err(Error::Config(
            "the KL arm copies the denoiser into the policy and needs policy_kind=implicit".into(),
        )),
    }
}

/// Direction for each generated action and the per-row weighting factors.
#[derive(Clone, Debug)]
pub struct KlDirection {
    pub grad: Tensor,
    pub weights: Vec<f64>,
}

/// `(mu_fake(a_t) - mu_real(a_t)) / w` with `a_t = a_theta + sigma eps` and
/// `w = mean |a_theta - mu_real(a_t)|`, evaluated without gradients.
pub fn kl_direction(
    real: &Denoiser,
    fake: &FakeScoreNet,
    a_theta: &Tensor,
    s: &Tensor,
    noise: &NoiseDraw,
    mode: WeightingMode,
) -> Result<KlDirection> {
    if noise.eps.shape() != a_theta.shape() {
        return Err(Error::shape("kl noise", a_theta.cols(), noise.eps.cols()));
    }
    let mut a_t = a_theta.clone();
    for r in 0..a_t.rows() {
        for c in 0..a_t.cols() {
            a_t.set(r, c, a_theta.get(r, c) + noise.sigmas[r] * noise.eps.get(r, c));
        }
    }
    let pred_real = real.denoise_batch(&a_t, &noise.sigmas, s)?;
    let pred_fake = fake.net.denoise_batch(&a_t, &noise.sigmas, s)?;
    let dev = a_theta.zip_map(&pred_real, |a, p| (a - p).abs());
    let cols = a_theta.cols() as f64;
    let mut weights: Vec<f64> = (0..dev.rows())
        .map(|r| dev.row_slice(r).iter().sum::<f64>() / cols)
        .collect();
    if mode == WeightingMode::Global {
        let g = weights.iter().sum::<f64>() / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = g);
    }
    weights.iter_mut().for_each(|w| *w = w.max(WEIGHT_FLOOR));
    let mut grad = pred_fake.zip_map(&pred_real, |f, r| f - r);
    for (r, &w) in weights.iter().enumerate() {
        for c in 0..grad.cols() {
            grad.set(r, c, grad.get(r, c) / w);
        }
    }
    Ok(KlDirection { grad, weights })
}

/// `0.5 mean_{i,j} (a_theta - stopgrad(a_theta - grad))^2`; its gradient
/// with respect to `a_theta` is `grad / (n * action_dim)`.
pub fn kl_pseudo_loss_on_tape(tape: &mut Tape, a_theta: Var, grad: &Tensor) -> Result<Var> {
    let a = tape.value(a_theta);
    if a.shape() != grad.shape() {
        return Err(Error::shape(
            "kl pseudo-loss",
            format!("{:?}", a.shape()),
            format!("{:?}", grad.shape()),
        ));
    }
    let target = tape.constant(a.zip_map(grad, |x, g| x - g));
    let diff = tape.sub(a_theta, target);
    let sq = tape.square(diff);
    let m = tape.mean(sq);
    Ok(tape.scale(m, 0.5))
}

/// Pure KL step quantities: pseudo-loss and policy gradients.
pub struct KlStep {
    pub pseudo_loss: f64,
    pub grads: Vec<Tensor>,
    pub direction: KlDirection,
    pub a_theta: Tensor,
}

/// Draws `a_theta = pi(s, eps)`, forms the distillation direction and
/// backpropagates the pseudo-loss into the policy only.
pub fn kl_policy_step<R: Rng + ?Sized>(
    real: &Denoiser,
    fake: &FakeScoreNet,
    policy: &OneStepPolicy,
    s: &Tensor,
    rng: &mut R,
) -> Result<KlStep> {
    let action_dim = policy.action_dim();
    let eps = Tensor::randn(s.rows(), action_dim, rng);
    let noise = NoiseDraw::sample(real.schedule(), s.rows(), action_dim, rng);
    let mut tape = Tape::new();
    let a = policy.sample_on_tape(&mut tape, s, &eps, ParamMode::Train)?.action;
    let a_theta = tape.value(a).clone();
    let direction = kl_direction(real, fake, &a_theta, s, &noise, WeightingMode::PerRow)?;
    let loss = kl_pseudo_loss_on_tape(&mut tape, a, &direction.grad)?;
    let g = tape.backward_scalar(loss)?;
    Ok(KlStep {
        pseudo_loss: tape.value(loss).item(),
        grads: g.for_store(policy.params()),
        direction,
        a_theta,
    })
}

/// Denoising regression of the fake net onto detached policy actions.
pub fn fake_score_update<R: Rng + ?Sized>(
    fake: &mut FakeScoreNet,
    a_theta: &Tensor,
    s: &Tensor,
    adam: &AdamConfig,
    rng: &mut R,
) -> Result<f64> {
    bc_step(&mut fake.net, s, a_theta, adam, rng)
}
