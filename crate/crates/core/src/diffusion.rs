//! Diffusion behavior-cloning policy and the losses built on a frozen copy
//! of it: the trust-region loss, its detached-Jacobian (SDS) gradient, and
//! loss-field maps over the 2-D action square.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edm::{EdmSchedule, NoiseDraw};
use crate::nnkit::{embed_column, Activation, AdamConfig, Mlp, MlpSpec, ParamMode, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Shape of the denoiser trunk `F`: `depth` linear layers of width `hidden`
/// over `[c_in * a_t, s, embed(c_noise)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub depth: usize,
    pub embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            depth: 4,
            embed_dim: 16,
        }
    }
}

/// Preconditioned noise-conditioned MLP,
/// `mu(a_t, sigma | s) = c_skip a_t + c_out F(c_in a_t, c_noise | s)`.
#[derive(Clone, Debug)]
pub struct Denoiser {
    net: Mlp,
    schedule: EdmSchedule,
    embed_dim: usize,
    state_dim: usize,
    action_dim: usize,
}

/// Per-row preconditioning columns for one batch.
pub(crate) struct Precond {
    pub c_skip: Tensor,
    pub c_out: Tensor,
    pub inv_c_out: Tensor,
    pub c_in: Tensor,
    pub lambda: Tensor,
    pub embed: Tensor,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: DenoiserConfig,
        schedule: EdmSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = Self::trunk_spec(state_dim, action_dim, cfg)?;
        Self::from_net(Mlp::new(spec, rng)?, schedule, state_dim, action_dim, cfg.embed_dim)
    }

    pub fn trunk_spec(state_dim: usize, action_dim: usize, cfg: DenoiserConfig) -> Result<MlpSpec> {
        if cfg.embed_dim < 2 || !cfg.embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embed_dim must be even and >= 2, got {}",
                cfg.embed_dim
            )));
        }
        let spec = MlpSpec::uniform(
            action_dim + state_dim + cfg.embed_dim,
            cfg.hidden,
            action_dim,
            cfg.depth,
            Activation::Mish,
        );
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_net(
        net: Mlp,
        schedule: EdmSchedule,
        state_dim: usize,
        action_dim: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        schedule.validate()?;
        let spec = net.spec();
        if spec.input_width() != action_dim + state_dim + embed_dim || spec.output_width() != action_dim {
            return Err(Error::Config(format!(
                "denoiser trunk {:?} incompatible with action_dim={action_dim}, state_dim={state_dim}, embed_dim={embed_dim}",
                spec.layer_widths
            )));
        }
        Ok(Self {
            net,
            schedule,
            embed_dim,
            state_dim,
            action_dim,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &ParamStore {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.net.params_mut()
    }

    pub fn schedule(&self) -> &EdmSchedule {
        &self.schedule
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub(crate) fn check_batch(&self, a: &Tensor, s: &Tensor, rows: usize) -> Result<()> {
        if a.cols() != self.action_dim {
            return Err(Error::shape("denoiser action", self.action_dim, a.cols()));
        }
        if s.cols() != self.state_dim {
            return Err(Error::shape("denoiser state", self.state_dim, s.cols()));
        }
        if a.rows() != s.rows() || a.rows() != rows {
            return Err(Error::shape(
                "denoiser batch rows",
                a.rows(),
                format!("{} states / {} noise rows", s.rows(), rows),
            ));
        }
        Ok(())
    }

    pub(crate) fn precondition(&self, sigmas: &[f64]) -> Result<Precond> {
        let mut cs = Vec::with_capacity(sigmas.len());
        let mut noise = Vec::with_capacity(sigmas.len());
        for &s in sigmas {
            let c = self.schedule.coefficients(s)?;
            noise.push(c.c_noise);
            cs.push(c);
        }
        let col = |f: &dyn Fn(&crate::edm::Coefficients) -> f64| Tensor::column(&cs.iter().map(f).collect::<Vec<_>>());
        Ok(Precond {
            c_skip: col(&|c| c.c_skip),
            c_out: col(&|c| c.c_out),
            inv_c_out: col(&|c| 1.0 / c.c_out),
            c_in: col(&|c| c.c_in),
            lambda: col(&|c| c.lambda),
            embed: embed_column(&noise, self.embed_dim)?,
        })
    }

    /// Raw trunk output `F(c_in a_t, c_noise | s)` on the tape.
    pub(crate) fn trunk_on_tape(
        &self,
        tape: &mut Tape,
        a_t: Var,
        pre: &Precond,
        s: &Tensor,
        mode: ParamMode,
    ) -> Result<Var> {
        let c_in = tape.constant(pre.c_in.clone());
        let scaled = tape.mul(a_t, c_in);
        let sv = tape.constant(s.clone());
        let emb = tape.constant(pre.embed.clone());
        let input = tape.concat_cols(&[scaled, sv, emb]);
        self.net.forward(tape, input, mode)
    }

    /// Predicted clean action for noisy actions `a_t` (one sigma per row).
    pub fn denoise_on_tape(
        &self,
        tape: &mut Tape,
        a_t: Var,
        sigmas: &[f64],
        s: &Tensor,
        mode: ParamMode,
    ) -> Result<Var> {
        self.check_batch(tape.value(a_t), s, sigmas.len())?;
        let pre = self.precondition(sigmas)?;
        let f = self.trunk_on_tape(tape, a_t, &pre, s, mode)?;
        let c_out = tape.constant(pre.c_out);
        let c_skip = tape.constant(pre.c_skip);
        let skip = tape.mul(a_t, c_skip);
        let out = tape.mul(f, c_out);
        Ok(tape.add(skip, out))
    }

    /// `mu(a_t, sigma | s)` with a per-row noise level.
    pub fn denoise_batch(&self, a_t: &Tensor, sigmas: &[f64], s: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(a_t.clone());
        let y = self.denoise_on_tape(&mut tape, x, sigmas, s, ParamMode::Frozen)?;
        Ok(tape.value(y).clone())
    }

    /// `mu(a_t, sigma | s)` with one noise level for the whole batch.
    pub fn denoise(&self, a_t: &Tensor, sigma: f64, s: &Tensor) -> Result<Tensor> {
        self.denoise_batch(a_t, &vec![sigma; a_t.rows()], s)
    }
}

/// Mean of `sum_cols(x^2)` over rows.
pub(crate) fn mean_sq_norm(tape: &mut Tape, x: Var) -> Var {
    let sq = tape.square(x);
    let per_row = tape.sum_cols(sq);
    tape.mean(per_row)
}

/// Preconditioned denoising loss on the tape. Because `lambda * c_out^2 = 1`
/// the per-row weight drops out and the loss is the plain mean squared
/// residual between `F` and `(a0 - c_skip a_t) / c_out`.
pub fn bc_loss_on_tape(
    d: &Denoiser,
    tape: &mut Tape,
    s: &Tensor,
    a0: &Tensor,
    noise: &NoiseDraw,
    mode: ParamMode,
) -> Result<Var> {
    d.check_batch(a0, s, noise.rows())?;
    if noise.eps.shape() != a0.shape() {
        return Err(Error::shape("bc_loss noise", a0.cols(), noise.eps.cols()));
    }
    let pre = d.precondition(&noise.sigmas)?;
    let mut a_t = a0.clone();
    let mut target = a0.clone();
    for r in 0..a0.rows() {
        let sigma = noise.sigmas[r];
        let (skip, inv_out) = (pre.c_skip.get(r, 0), pre.inv_c_out.get(r, 0));
        for c in 0..a0.cols() {
            let at = a0.get(r, c) + sigma * noise.eps.get(r, c);
            a_t.set(r, c, at);
            target.set(r, c, (a0.get(r, c) - skip * at) * inv_out);
        }
    }
    let a_t = tape.constant(a_t);
    let f = d.trunk_on_tape(tape, a_t, &pre, s, mode)?;
    let target = tape.constant(target);
    let resid = tape.sub(f, target);
    Ok(mean_sq_norm(tape, resid))
}

/// Behavior-cloning loss and gradients for the denoiser parameters.
pub fn bc_loss(d: &Denoiser, s: &Tensor, a0: &Tensor, noise: &NoiseDraw) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let loss = bc_loss_on_tape(d, &mut tape, s, a0, noise, ParamMode::Train)?;
    let grads = tape.backward_scalar(loss)?;
    Ok((tape.value(loss).item(), grads.for_store(d.params())))
}

/// One Adam step on the behavior-cloning loss with fresh noise.
pub fn bc_step<R: Rng + ?Sized>(
    d: &mut Denoiser,
    s: &Tensor,
    a0: &Tensor,
    adam: &AdamConfig,
    rng: &mut R,
) -> Result<f64> {
    let noise = NoiseDraw::sample(d.schedule(), a0.rows(), d.action_dim(), rng);
    let (loss, grads) = bc_loss(d, s, a0, &noise)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("bc loss {loss}")));
    }
    d.params_mut().adam_step(&grads, adam)?;
    Ok(loss)
}

/// Trust-region loss `mean lambda(sigma) ||mu(a + sigma eps | s) - a||^2`
/// for generated actions `a_theta` on the tape. The denoiser is frozen; the
/// gradient reaches `a_theta` both through the residual and through the
/// denoiser input.
pub fn trust_region_loss_on_tape(
    frozen: &Denoiser,
    tape: &mut Tape,
    a_theta: Var,
    s: &Tensor,
    noise: &NoiseDraw,
) -> Result<Var> {
    let a_val = tape.value(a_theta);
    frozen.check_batch(a_val, s, noise.rows())?;
    if noise.eps.shape() != a_val.shape() {
        return Err(Error::shape("trust_region noise", a_val.cols(), noise.eps.cols()));
    }
    let pre = frozen.precondition(&noise.sigmas)?;
    let shift = Tensor::from_vec(
        a_val.rows(),
        a_val.cols(),
        noise
            .eps
            .data()
            .iter()
            .enumerate()
            .map(|(i, e)| noise.sigmas[i / a_val.cols()] * e)
            .collect(),
    )?;
    let shift = tape.constant(shift);
    let a_t = tape.add(a_theta, shift);
    let f = frozen.trunk_on_tape(tape, a_t, &pre, s, ParamMode::Frozen)?;
    // target (a_theta - c_skip a_t) / c_out, kept on the tape
    let c_skip = tape.constant(pre.c_skip);
    let inv_c_out = tape.constant(pre.inv_c_out);
    let skipped = tape.mul(a_t, c_skip);
    let diff = tape.sub(a_theta, skipped);
    let target = tape.mul(diff, inv_c_out);
    let resid = tape.sub(f, target);
    Ok(mean_sq_norm(tape, resid))
}

/// Trust-region loss value and its gradient with respect to `a_theta`.
pub fn trust_region_loss(frozen: &Denoiser, a_theta: &Tensor, s: &Tensor, noise: &NoiseDraw) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let a = tape.input(a_theta.clone());
    let loss = trust_region_loss_on_tape(frozen, &mut tape, a, s, noise)?;
    let grads = tape.backward_scalar(loss)?;
    let g = grads.wrt(a).cloned().expect("a_theta is differentiable");
    Ok((tape.value(loss).item(), g))
}

/// Gradient of the trust-region objective with the denoiser Jacobian
/// detached: row `i` is `(2/n) lambda_i (a_i - mu(a_i + sigma_i eps_i))`.
/// In noise-prediction form this is `w(t) (eps_hat - eps)`.
pub fn sds_grad(frozen: &Denoiser, a_theta: &Tensor, s: &Tensor, noise: &NoiseDraw) -> Result<Tensor> {
    sds_grad_with_loss(frozen, a_theta, s, noise).map(|(_, g)| g)
}

/// [`sds_grad`] together with the trust-region loss value at `a_theta`.
pub fn sds_grad_with_loss(frozen: &Denoiser, a_theta: &Tensor, s: &Tensor, noise: &NoiseDraw) -> Result<(f64, Tensor)> {
    frozen.check_batch(a_theta, s, noise.rows())?;
    if noise.eps.shape() != a_theta.shape() {
        return Err(Error::shape("sds noise", a_theta.cols(), noise.eps.cols()));
    }
    let mut a_t = a_theta.clone();
    for r in 0..a_t.rows() {
        for c in 0..a_t.cols() {
            a_t.set(r, c, a_theta.get(r, c) + noise.sigmas[r] * noise.eps.get(r, c));
        }
    }
    let mu = frozen.denoise_batch(&a_t, &noise.sigmas, s)?;
    let pre = frozen.precondition(&noise.sigmas)?;
    let n = a_theta.rows() as f64;
    let mut g = a_theta.clone();
    let mut loss = 0.0;
    for r in 0..g.rows() {
        let lambda = pre.lambda.get(r, 0);
        for c in 0..g.cols() {
            let d = a_theta.get(r, c) - mu.get(r, c);
            loss += lambda * d * d;
            g.set(r, c, 2.0 * lambda / n * d);
        }
    }
    Ok((loss / n, g))
}

/// Monte-Carlo map of `E_eps ||mu(a + sigma eps, sigma | s) - a||^2` over a
/// square lattice on `[-1, 1]^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossField {
    pub coords: Vec<f64>,
    /// Row-major over `(iy, ix)`.
    pub values: Vec<f64>,
    pub sigma: f64,
    pub n_noise: usize,
    pub seed: u64,
}

impl LossField {
    pub fn grid(&self) -> usize {
        self.coords.len()
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid() + ix]
    }

    /// Cell indices whose value is `<=` all 8 neighbours.
    pub fn local_minima(&self) -> Vec<(usize, usize)> {
        let n = self.grid();
        let mut out = Vec::new();
        for iy in 0..n {
            for ix in 0..n {
                let v = self.value(ix, iy);
                let mut is_min = true;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                        if jx < 0 || jy < 0 || jx >= n as i64 || jy >= n as i64 {
                            continue;
                        }
                        if self.value(jx as usize, jy as usize) < v {
                            is_min = false;
                        }
                    }
                }
                if is_min {
                    out.push((ix, iy));
                }
            }
        }
        out
    }

    /// Value at the cell nearest to `(x, y)`.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let idx = |v: f64| {
            let step = 2.0 / (self.grid() - 1) as f64;
            (((v + 1.0) / step).round() as usize).min(self.grid() - 1)
        };
        self.value(idx(x), idx(y))
    }

    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    /// `x,y,loss` CSV, one row per cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,y,loss\n");
        for iy in 0..self.grid() {
            for ix in 0..self.grid() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    self.coords[ix],
                    self.coords[iy],
                    self.value(ix, iy)
                ));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Grid metadata sidecar (`sigma`, `n_noise`, `seed`, `grid`).
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "sigma": self.sigma,
            "n_noise": self.n_noise,
            "seed": self.seed,
            "grid": self.grid(),
            "range": [-1.0, 1.0],
        });
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&meta).expect("json")).map_err(|e| Error::io(path, e))
    }
}

/// Evaluate the trust-region loss field for a fixed state. The same noise
/// draws are shared by every cell, so the field is smooth and independent
/// of traversal order.
pub fn eval_loss_field(
    frozen: &Denoiser,
    state: &[f64],
    grid: usize,
    sigma: f64,
    n_noise: usize,
    seed: u64,
) -> Result<LossField> {
    if frozen.action_dim() != 2 {
        return Err(Error::Unsupported(format!(
            "loss fields need action_dim = 2, got {}",
            frozen.action_dim()
        )));
    }
    if n_noise == 0 || grid < 2 {
        return Err(Error::Config("loss field needs n_noise >= 1 and grid >= 2".into()));
    }
    if state.len() != frozen.state_dim() {
        return Err(Error::shape("loss field state", frozen.state_dim(), state.len()));
    }
    frozen.schedule().coefficients(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Tensor::randn(n_noise, 2, &mut rng);
    let coords: Vec<f64> = (0..grid).map(|i| -1.0 + 2.0 * i as f64 / (grid - 1) as f64).collect();
    let states = Tensor::row(state).repeat_rows(grid * n_noise);
    let sigmas = vec![sigma; grid * n_noise];

    let rows: Vec<Vec<f64>> = (0..grid)
        .into_par_iter()
        .map(|iy| -> Result<Vec<f64>> {
            let y = coords[iy];
            let mut clean = Vec::with_capacity(grid * n_noise * 2);
            let mut noisy = Vec::with_capacity(grid * n_noise * 2);
            for &x in &coords {
                for j in 0..n_noise {
                    clean.extend([x, y]);
                    noisy.extend([x + sigma * eps.get(j, 0), y + sigma * eps.get(j, 1)]);
                }
            }
            let noisy = Tensor::from_vec(grid * n_noise, 2, noisy)?;
            let mu = frozen.denoise_batch(&noisy, &sigmas, &states)?;
            Ok((0..grid)
                .map(|ix| {
                    let mut acc = 0.0;
                    for j in 0..n_noise {
                        let r = ix * n_noise + j;
                        acc += (mu.get(r, 0) - clean[2 * r]).powi(2) + (mu.get(r, 1) - clean[2 * r + 1]).powi(2);
                    }
                    acc / n_noise as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    Ok(LossField {
        coords,
        values: rows.into_iter().flatten().collect(),
        sigma,
        n_noise,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rng: &mut ChaCha8Rng) -> Denoiser {
        let cfg = DenoiserConfig {
            hidden: 8,
            depth: 3,
            embed_dim: 4,
        };
        Denoiser::new(1, 2, cfg, EdmSchedule::default(), rng).unwrap()
    }

    fn zeroed(d: &Denoiser) -> Denoiser {
        let net = Mlp::zeros(d.net().spec().clone()).unwrap();
        Denoiser::from_net(net, *d.schedule(), 1, 2, d.embed_dim()).unwrap()
    }

    #[test]
    fn zero_trunk_returns_skip_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = zeroed(&small(&mut rng));
        let a_t = Tensor::randn(5, 2, &mut rng);
        let s = Tensor::zeros(5, 1);
        for sigma in [0.01, 0.5, 3.0] {
            let out = d.denoise(&a_t, sigma, &s).unwrap();
            let c_skip = d.schedule().coefficients(sigma).unwrap().c_skip;
            assert_eq!(out.shape(), [5, 2]);
            for (o, a) in out.data().iter().zip(a_t.data()) {
                assert!((o - c_skip * a).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = small(&mut rng);
        assert!(d.denoise(&Tensor::zeros(2, 3), 0.5, &Tensor::zeros(2, 1)).is_err());
        assert!(d.denoise(&Tensor::zeros(2, 2), 0.5, &Tensor::zeros(3, 1)).is_err());
        assert!(matches!(
            d.denoise(&Tensor::zeros(2, 2), 0.0, &Tensor::zeros(2, 1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn bc_loss_is_weighted_denoising_error() {
        // lambda * c_out^2 = 1 means the preconditioned loss equals
        // mean_i lambda_i ||mu_i - a0_i||^2 in action space.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = small(&mut rng);
        let a0 = Tensor::randn(6, 2, &mut rng).map(|x| x.clamp(-1.0, 1.0));
        let s = Tensor::zeros(6, 1);
        let noise = NoiseDraw::sample(d.schedule(), 6, 2, &mut rng);
        let (loss, _) = bc_loss(&d, &s, &a0, &noise).unwrap();
        let mut a_t = a0.clone();
        for r in 0..6 {
            for c in 0..2 {
                a_t.set(r, c, a0.get(r, c) + noise.sigmas[r] * noise.eps.get(r, c));
            }
        }
        let mu = d.denoise_batch(&a_t, &noise.sigmas, &s).unwrap();
        let mut expect = 0.0;
        for r in 0..6 {
            let lam = d.schedule().coefficients(noise.sigmas[r]).unwrap().lambda;
            expect += lam * ((mu.get(r, 0) - a0.get(r, 0)).powi(2) + (mu.get(r, 1) - a0.get(r, 1)).powi(2));
        }
        expect /= 6.0;
        assert!((loss - expect).abs() < 1e-9 * expect.max(1.0), "{loss} vs {expect}");
    }

    #[test]
    fn sds_grad_zero_when_denoiser_reproduces_input() {
        // zero trunk at a = 0, eps = 0: mu = c_skip * 0 = a exactly
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = zeroed(&small(&mut rng));
        let a = Tensor::zeros(4, 2);
        let noise = NoiseDraw {
            sigmas: vec![0.3; 4],
            eps: Tensor::zeros(4, 2),
        };
        let g = sds_grad(&d, &a, &Tensor::zeros(4, 1), &noise).unwrap();
        assert_eq!(g.shape(), a.shape());
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn loss_field_rejects_non_planar_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = DenoiserConfig {
            hidden: 4,
            depth: 2,
            embed_dim: 2,
        };
        let d = Denoiser::new(1, 1, cfg, EdmSchedule::default(), &mut rng).unwrap();
        assert!(matches!(
            eval_loss_field(&d, &[0.0], 5, 0.1, 4, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn loss_field_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = small(&mut rng);
        let a = eval_loss_field(&d, &[0.0], 7, 0.2, 8, 11).unwrap();
        let b = eval_loss_field(&d, &[0.0], 7, 0.2, 8, 11).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.len(), 49);
    }
}
