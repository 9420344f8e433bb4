#![allow(dead_code)]

use dtql::critic::{Batch, CriticConfig, CriticSet};
use dtql::diffusion::{bc_loss, trust_region_loss, Denoiser, DenoiserConfig};
use dtql::edm::{EdmSchedule, NoiseDraw};
use dtql::kl::{kl_direction, kl_pseudo_loss_on_tape, FakeScoreNet, WeightingMode};
use dtql::nnkit::{finite_difference, relative_error, ParamMode, ParamStore, Tape, Tensor};
use dtql::policy::{GaussianPolicy, ImplicitPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;

pub const GRADIENT_CASES: [&str; 9] = [
    "bc_loss",
    "trust_region_loss",
    "v_loss",
    "q_loss",
    "gaussian_sampling",
    "implicit_sampling",
    "entropy_term",
    "kl_pseudo_loss",
    "mlp_backward",
];

fn small_denoiser(rng: &mut ChaCha8Rng) -> Denoiser {
    let cfg = DenoiserConfig {
        hidden: 8,
        depth: 3,
        embed_dim: 4,
    };
    Denoiser::new(1, 2, cfg, EdmSchedule::default(), rng).unwrap()
}

fn small_critics(rng: &mut ChaCha8Rng) -> CriticSet {
    let cfg = CriticConfig {
        hidden: 8,
        depth: 3,
        ..CriticConfig::default()
    };
    let mut c = CriticSet::new(1, 2, cfg, rng).unwrap();
    // decouple targets from the online nets so the min picks either side
    let q2 = c.q2.params().flatten();
    let shifted: Vec<f64> = q2.iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
    c.q2_target.params_mut().assign_flat(&shifted).unwrap();
    c
}

fn states(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(n, 1, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn actions(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(n, 2, (0..n * 2).map(|_| rng.random_range(-0.9..0.9)).collect()).unwrap()
}

fn flat(grads: &[Tensor]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data().iter().copied()).collect()
}

/// Finite differences of `f` over every scalar in `store`.
fn fd_over_store(store: &ParamStore, mut f: impl FnMut(&ParamStore) -> f64) -> Vec<f64> {
    let x = store.flatten();
    let mut probe = store.clone();
    finite_difference(&x, FD_STEP, |p| {
        probe.assign_flat(p).unwrap();
        Ok(f(&probe))
    })
    .unwrap()
}

/// Relative error between the analytic gradient of one loss and central
/// finite differences, for one seed.
pub fn gradient_error(case: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    match case {
        "bc_loss" => {
            let d = small_denoiser(&mut rng);
            let (s, a) = (states(n, &mut rng), actions(n, &mut rng));
            let noise = NoiseDraw::sample(d.schedule(), n, 2, &mut rng);
            let (_, g) = bc_loss(&d, &s, &a, &noise).unwrap();
            let mut probe = d.clone();
            let fd = fd_over_store(d.params(), |p| {
                probe.params_mut().copy_values_from(p).unwrap();
                bc_loss(&probe, &s, &a, &noise).unwrap().0
            });
            relative_error(&flat(&g), &fd, FLOOR)
        }
        "trust_region_loss" => {
            let d = small_denoiser(&mut rng);
            let (s, a) = (states(n, &mut rng), actions(n, &mut rng));
            let noise = NoiseDraw::sample(d.schedule(), n, 2, &mut rng);
            let (_, g) = trust_region_loss(&d, &a, &s, &noise).unwrap();
            let fd = finite_difference(a.data(), FD_STEP, |x| {
                let a = Tensor::from_vec(n, 2, x.to_vec())?;
                Ok(trust_region_loss(&d, &a, &s, &noise)?.0)
            })
            .unwrap();
            relative_error(g.data(), &fd, FLOOR)
        }
        "v_loss" => {
            let c = small_critics(&mut rng);
            let (s, a) = (states(n, &mut rng), actions(n, &mut rng));
            let (_, g) = c.v_loss(&s, &a).unwrap();
            let mut probe = c.clone();
            let fd = fd_over_store(c.v.params(), |p| {
                probe.v.params_mut().copy_values_from(p).unwrap();
                probe.v_loss(&s, &a).unwrap().0
            });
            relative_error(&flat(&g), &fd, FLOOR)
        }
        "q_loss" => {
            let c = small_critics(&mut rng);
            let batch = Batch {
                s: states(n, &mut rng),
                a: actions(n, &mut rng),
                r: Tensor::from_vec(n, 1, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap(),
                s_next: states(n, &mut rng),
                done: Tensor::from_vec(n, 1, (0..n).map(|i| (i % 2) as f64).collect()).unwrap(),
            };
            let (_, g1, g2, _) = c.q_loss(&batch).unwrap();
            let mut probe = c.clone();
            let fd1 = fd_over_store(c.q1.params(), |p| {
                probe.q1.params_mut().copy_values_from(p).unwrap();
                probe.q_loss(&batch).unwrap().0
            });
            let mut probe = c.clone();
            let fd2 = fd_over_store(c.q2.params(), |p| {
                probe.q2.params_mut().copy_values_from(p).unwrap();
                probe.q_loss(&batch).unwrap().0
            });
            let analytic: Vec<f64> = flat(&g1).into_iter().chain(flat(&g2)).collect();
            let fd: Vec<f64> = fd1.into_iter().chain(fd2).collect();
            relative_error(&analytic, &fd, FLOOR)
        }
        "gaussian_sampling" => {
            let p = GaussianPolicy::new(1, 2, 8, 3, &mut rng).unwrap();
            let s = states(n, &mut rng);
            let eps = Tensor::randn(n, 2, &mut rng);
            let w = Tensor::randn(n, 2, &mut rng);
            // sum(w * a) + mean log pi(a|s): both the action and its density
            let loss = |p: &GaussianPolicy, mode: ParamMode| -> (Tape, dtql::nnkit::Var) {
                let mut tape = Tape::new();
                let out = p.sample_on_tape(&mut tape, &s, &eps, mode).unwrap();
                let wv = tape.constant(w.clone());
                let wa = tape.mul(out.action, wv);
                let wa = tape.sum(wa);
                let lp = tape.mean(out.log_prob.unwrap());
                let l = tape.add(wa, lp);
                (tape, l)
            };
            let (tape, l) = loss(&p, ParamMode::Train);
            let g = tape.backward_scalar(l).unwrap().for_store(p.net().params());
            let mut probe = p.clone();
            let fd = fd_over_store(p.net().params(), |ps| {
                probe.net_mut().params_mut().copy_values_from(ps).unwrap();
                let (tape, l) = loss(&probe, ParamMode::Frozen);
                tape.value(l).item()
            });
            relative_error(&flat(&g), &fd, FLOOR)
        }
        "implicit_sampling" => {
            let cfg = DenoiserConfig {
                hidden: 8,
                depth: 3,
                embed_dim: 4,
            };
            let p = ImplicitPolicy::new(1, 2, cfg, EdmSchedule::default(), 2.5, &mut rng).unwrap();
            let s = states(n, &mut rng);
            let eps = Tensor::randn(n, 2, &mut rng);
            let w = Tensor::randn(n, 2, &mut rng);
            let mut tape = Tape::new();
            let a = p.sample_on_tape(&mut tape, &s, &eps, ParamMode::Train).unwrap();
            let wv = tape.constant(w.clone());
            let wa = tape.mul(a, wv);
            let l = tape.sum(wa);
            let g = tape.backward_scalar(l).unwrap().for_store(p.denoiser().params());
            let mut probe = p.clone();
            let fd = fd_over_store(p.denoiser().params(), |ps| {
                let mut d = probe.denoiser().clone();
                d.params_mut().copy_values_from(ps).unwrap();
                probe = ImplicitPolicy::from_denoiser(d, 2.5).unwrap();
                probe.act(&s, &eps).unwrap().zip_map(&w, |a, w| a * w).sum()
            });
            relative_error(&flat(&g), &fd, FLOOR)
        }
        "entropy_term" => {
            let p = GaussianPolicy::new(1, 2, 8, 3, &mut rng).unwrap();
            let (s, a) = (states(n, &mut rng), actions(n, &mut rng));
            let (_, g) = p.entropy_term(&s, &a).unwrap();
            let mut probe = p.clone();
            let fd = fd_over_store(p.net().params(), |ps| {
                probe.net_mut().params_mut().copy_values_from(ps).unwrap();
                probe.entropy_term(&s, &a).unwrap().0
            });
            relative_error(&flat(&g), &fd, FLOOR)
        }
        "kl_pseudo_loss" => {
            let real = small_denoiser(&mut rng);
            let fake = FakeScoreNet {
                net: small_denoiser(&mut rng),
            };
            let cfg = DenoiserConfig {
                hidden: 8,
                depth: 3,
                embed_dim: 4,
            };
            let p = ImplicitPolicy::new(1, 2, cfg, EdmSchedule::default(), 2.5, &mut rng).unwrap();
            let s = states(n, &mut rng);
            let eps = Tensor::randn(n, 2, &mut rng);
            let noise = NoiseDraw::sample(real.schedule(), n, 2, &mut rng);
            let mut tape = Tape::new();
            let a = p.sample_on_tape(&mut tape, &s, &eps, ParamMode::Train).unwrap();
            let a0 = tape.value(a).clone();
            let dir = kl_direction(&real, &fake, &a0, &s, &noise, WeightingMode::PerRow).unwrap();
            let l = kl_pseudo_loss_on_tape(&mut tape, a, &dir.grad).unwrap();
            let g = tape.backward_scalar(l).unwrap().for_store(p.denoiser().params());
            // the stop-gradient target stays at its base-point value
            let target = a0.zip_map(&dir.grad, |x, g| x - g);
            let mut probe = p.clone();
            let fd = fd_over_store(p.denoiser().params(), |ps| {
                let mut d = probe.denoiser().clone();
                d.params_mut().copy_values_from(ps).unwrap();
                probe = ImplicitPolicy::from_denoiser(d, 2.5).unwrap();
                let a = probe.act(&s, &eps).unwrap();
                0.5 * a.zip_map(&target, |x, t| (x - t).powi(2)).sum() / (n * 2) as f64
            });
            relative_error(&flat(&g), &fd, FLOOR)
        }
        "mlp_backward" => {
            use dtql::nnkit::{Activation, Mlp, MlpSpec};
            let net = Mlp::new(MlpSpec::uniform(3, 8, 2, 4, Activation::Mish), &mut rng).unwrap();
            let x = Tensor::randn(n, 3, &mut rng);
            let w = Tensor::randn(n, 2, &mut rng);
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let y = net.forward(&mut tape, xv, ParamMode::Train).unwrap();
            let wv = tape.constant(w.clone());
            let yw = tape.mul(y, wv);
            let l = tape.sum(yw);
            let grads = tape.backward_scalar(l).unwrap();
            let gp = grads.for_store(net.params());
            let gx = grads.wrt(xv).unwrap().clone();
            let mut probe = net.clone();
            let fdp = fd_over_store(net.params(), |ps| {
                probe.params_mut().copy_values_from(ps).unwrap();
                probe.eval(&x).unwrap().zip_map(&w, |a, b| a * b).sum()
            });
            let fdx = finite_difference(x.data(), FD_STEP, |xs| {
                let x = Tensor::from_vec(n, 3, xs.to_vec())?;
                Ok(net.eval(&x)?.zip_map(&w, |a, b| a * b).sum())
            })
            .unwrap();
            let analytic: Vec<f64> = flat(&gp).into_iter().chain(gx.data().iter().copied()).collect();
            let fd: Vec<f64> = fdp.into_iter().chain(fdx).collect();
            relative_error(&analytic, &fd, FLOOR)
        }
        other => panic!("unknown gradient case {other}"),
    }
}

/// Worst relative error of one case across `seeds`.
pub fn worst_gradient_error(case: &str, seeds: std::ops::Range<u64>) -> f64 {
    seeds.map(|s| gradient_error(case, s)).fold(0.0, f64::max)
}
