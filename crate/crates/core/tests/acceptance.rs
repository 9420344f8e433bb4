//! End-to-end acceptance checks. One test runs every criterion in order,
//! prints a PASS/FAIL line for each, and fails if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{worst_gradient_error, FD_TOL, GRADIENT_CASES};
use dtql::critic::{CriticConfig, CriticSet};
use dtql::diffusion::{bc_step, eval_loss_field, trust_region_loss, Denoiser, DenoiserConfig};
use dtql::edm::{EdmSchedule, NoiseDraw};
use dtql::envs::{behavior_weights, gen_chain_dataset, value_iteration, Backup, BanditScenario, ChainMdp};
use dtql::nnkit::{AdamConfig, Tensor};
use dtql::trainer::{
    denoiser_config, load_dataset, metrics_csv, pretrain, pretrain_bc, rng_for, run, run_with, EvalResult, Models,
    NoopObserver, Pretrained, Regularizer, RunOutcome, Stream, Task, TrainConfig,
};
use dtql::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs one criterion, enforcing its wall-clock budget.
fn criterion(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = v.pass && in_time;
    let timing = if in_time {
        format!("{:.1}s", elapsed.as_secs_f64())
    } else {
        format!(
            "{:.1}s, over the {:.0}s budget",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        )
    };
    println!(
        "criterion {id} [{}] {name}: {} ({timing})",
        if pass { "PASS" } else { "FAIL" },
        v.detail
    );
    pass
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let frac = step as f64 / total as f64;
    base * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

fn gradient_integrity() -> Verdict {
    let mut worst = (0.0, "");
    for case in GRADIENT_CASES {
        let e = worst_gradient_error(case, 0..20);
        if e > worst.0 {
            worst = (e, case);
        }
    }
    Verdict::new(
        worst.0 < FD_TOL,
        format!(
            "{} losses x 20 seeds, worst relative error {:.2e} ({})",
            GRADIENT_CASES.len(),
            worst.0,
            worst.1
        ),
    )
}

fn schedule_identities() -> Verdict {
    let sched = EdmSchedule::default();
    let sd2 = sched.sigma_data * sched.sigma_data;
    let mut worst: f64 = 0.0;
    for i in 0..=400 {
        let sigma = 10f64.powf(-3.0 + 5.0 * i as f64 / 400.0);
        let c = sched.coefficients(sigma).unwrap();
        worst = worst
            .max((c.lambda * c.c_out * c.c_out - 1.0).abs())
            .max((c.c_skip + sigma * sigma / (sigma * sigma + sd2) - 1.0).abs());
    }
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut xs: Vec<f64> = (0..n).map(|_| sched.sample_log_sigma(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = sched.log_sigma_cdf(x);
            (f - i as f64 / n as f64)
                .abs()
                .max((f - (i + 1) as f64 / n as f64).abs())
        })
        .fold(0.0, f64::max);
    Verdict::new(
        worst <= 1e-12 && ks < 0.01,
        format!("worst identity residual {worst:.1e} over 401 sigmas, KS distance {ks:.4} at n = 1e5"),
    )
}

fn trust_region_field() -> Verdict {
    let cfg = TrainConfig {
        scenario: "corner25".into(),
        dataset_size: 10_000,
        hidden: 128,
        denoiser_depth: 4,
        embed_dim: 16,
        batch_size: 256,
        pretrain_epochs: 50,
        bc_lr: Some(2e-3),
        lr_decay: true,
        ..TrainConfig::default()
    };
    let task = Task::from_config(&cfg).unwrap();
    let data = load_dataset(&cfg, &task).unwrap();
    let (sd, ad) = task.dims();
    let mut rng = rng_for(cfg.seed, Stream::Init);
    let d = Denoiser::new(sd, ad, denoiser_config(&cfg), cfg.schedule().unwrap(), &mut rng).unwrap();
    let d = pretrain_bc(&cfg, &data, d, &mut NoopObserver).unwrap();
    let field = eval_loss_field(&d, data.state(0), 81, 0.05, 64, 7).unwrap();
    let minima = field.local_minima();
    let sc = BanditScenario::corner25();
    let centers_ok = sc
        .mode_centers
        .iter()
        .filter(|&&c| {
            minima
                .iter()
                .any(|&(ix, iy)| dist([field.coords[ix], field.coords[iy]], c) <= 0.05 + 1e-9)
        })
        .count();
    let (mut below, mut pairs) = (0, 0);
    for &c in &sc.mode_centers {
        for step in [[0.4, 0.0], [0.0, 0.4]] {
            let other = [c[0] + step[0], c[1] + step[1]];
            if other[0] > 0.8 + 1e-9 || other[1] > 0.8 + 1e-9 {
                continue;
            }
            let mid = [0.5 * (c[0] + other[0]), 0.5 * (c[1] + other[1])];
            let vm = field.value_at(mid[0], mid[1]);
            pairs += 1;
            if field.value_at(c[0], c[1]) < vm && field.value_at(other[0], other[1]) < vm {
                below += 1;
            }
        }
    }
    Verdict::new(
        centers_ok == sc.mode_centers.len() && below == pairs,
        format!(
            "{centers_ok}/{} mode centers have a local minimum within 0.05; centers below midpoints in {below}/{pairs} adjacent pairs",
            sc.mode_centers.len()
        ),
    )
}

/// Deterministic quadrature for the expectation over sigma and eps in the
/// trust-region loss. Sigma uses cells of equal width in log sigma, each
/// weighted by its probability under the training law (clamped tails go
/// to the end cells). Eps is a symmetric 2-D cubature: two Gauss-Laguerre
/// radii for |eps|^2 ~ Exp(1/2), four angles each. The restoring force at a
/// data point comes mostly from rare small sigmas (weight ~ 1/sigma^2), which
/// a few dozen random draws miss; the quadrature keeps them.
fn tr_quadrature(schedule: &EdmSchedule, sigma_cells: usize) -> (Vec<f64>, Vec<[f64; 2]>, Vec<f64>) {
    let (lo, hi) = (schedule.sigma_min.ln(), schedule.sigma_max.ln());
    let width = (hi - lo) / sigma_cells as f64;
    let mut sigma_nodes = Vec::new();
    let mut sigma_weights = Vec::new();
    for c in 0..sigma_cells {
        let (a, b) = (lo + c as f64 * width, lo + (c + 1) as f64 * width);
        let lower = if c == 0 { 0.0 } else { schedule.log_sigma_cdf(a) };
        let upper = if c + 1 == sigma_cells {
            1.0
        } else {
            schedule.log_sigma_cdf(b)
        };
        sigma_nodes.push((0.5 * (a + b)).exp());
        sigma_weights.push(upper - lower);
    }
    let s2 = std::f64::consts::SQRT_2;
    let radii = [(2.0 * (2.0 - s2)).sqrt(), (2.0 * (2.0 + s2)).sqrt()];
    let radial_weights = [(2.0 + s2) / 4.0, (2.0 - s2) / 4.0];
    let mut eps = Vec::new();
    let mut eps_weights = Vec::new();
    for (k, (&r, &w)) in radii.iter().zip(&radial_weights).enumerate() {
        for j in 0..4 {
            let theta = std::f64::consts::FRAC_PI_2 * j as f64 + std::f64::consts::FRAC_PI_4 * k as f64 + 0.3;
            eps.push([r * theta.cos(), r * theta.sin()]);
            eps_weights.push(w / 4.0);
        }
    }
    let mut sigmas = Vec::new();
    let mut eps_rows = Vec::new();
    let mut weights = Vec::new();
    for (&s, &ws) in sigma_nodes.iter().zip(&sigma_weights) {
        for (e, &we) in eps.iter().zip(&eps_weights) {
            sigmas.push(s);
            eps_rows.push(*e);
            weights.push(ws * we);
        }
    }
    (sigmas, eps_rows, weights)
}

fn mode_seeking() -> Verdict {
    let acts = [[-0.4, -0.3], [0.4, 0.3]];
    let midpoint = [0.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = DenoiserConfig {
        hidden: 128,
        depth: 3,
        embed_dim: 8,
    };
    let mut d = Denoiser::new(1, 2, cfg, EdmSchedule::default(), &mut rng).unwrap();
    let (bs, steps) = (256, 10_000);
    let s = Tensor::zeros(bs, 1);
    for step in 0..steps {
        let rows: Vec<f64> = (0..bs).flat_map(|_| acts[rng.random_range(0..2)]).collect();
        let a0 = Tensor::from_vec(bs, 2, rows).unwrap();
        let adam = AdamConfig::with_lr(cosine_lr(1e-3, step, steps));
        bc_step(&mut d, &s, &a0, &adam, &mut rng).unwrap();
    }

    let (sigmas, eps, weights) = tr_quadrature(d.schedule(), 12);
    let m = sigmas.len();
    let draws = |k: usize| NoiseDraw {
        sigmas: (0..k).flat_map(|_| sigmas.iter().copied()).collect(),
        eps: Tensor::from_vec(k * m, 2, (0..k).flat_map(|_| eps.iter().flatten().copied()).collect()).unwrap(),
    };
    let repeat = |points: &[[f64; 2]]| {
        Tensor::from_vec(
            points.len() * m,
            2,
            points.iter().flat_map(|p| (0..m).flat_map(move |_| *p)).collect(),
        )
        .unwrap()
    };
    // per-point gradient of the weighted objective for a whole population
    let gradients = |points: &[[f64; 2]]| -> Vec<[f64; 2]> {
        let k = points.len();
        let (_, g) = trust_region_loss(&d, &repeat(points), &Tensor::zeros(k * m, 1), &draws(k)).unwrap();
        // the loss is a plain mean over k * m rows; swap in the quadrature weights
        (0..k)
            .map(|i| [0, 1].map(|c| (0..m).map(|j| weights[j] * g.get(i * m + j, c)).sum::<f64>() * (k * m) as f64))
            .collect()
    };
    // per-point objective values, lambda(sigma) |D(a + sigma eps) - a|^2
    let values = |points: &[[f64; 2]]| -> Vec<f64> {
        let k = points.len();
        let noise = draws(k);
        let clean = repeat(points);
        let noisy = Tensor::from_vec(
            k * m,
            2,
            (0..k * m)
                .flat_map(|r| [0, 1].map(|c| clean.get(r, c) + noise.sigmas[r] * noise.eps.get(r, c)))
                .collect(),
        )
        .unwrap();
        let mu = d
            .denoise_batch(&noisy, &noise.sigmas, &Tensor::zeros(k * m, 1))
            .unwrap();
        (0..k)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let r = i * m + j;
                        let lambda = d.schedule().coefficients(noise.sigmas[r]).unwrap().lambda;
                        let sq = (mu.get(r, 0) - clean.get(r, 0)).powi(2) + (mu.get(r, 1) - clean.get(r, 1)).powi(2);
                        weights[j] * lambda * sq
                    })
                    .sum()
            })
            .collect()
    };

    let starts = 100;
    let mut pts: Vec<[f64; 2]> = (0..starts)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let (b1, b2, lr) = (0.9f64, 0.999f64, 0.01);
    let mut mom = vec![[0.0; 2]; starts];
    let mut var = vec![[0.0; 2]; starts];
    for it in 1..=400 {
        let grads = gradients(&pts);
        for i in 0..starts {
            for c in 0..2 {
                let g = grads[i][c];
                mom[i][c] = b1 * mom[i][c] + (1.0 - b1) * g;
                var[i][c] = b2 * var[i][c] + (1.0 - b2) * g * g;
                let mh = mom[i][c] / (1.0 - b1.powi(it));
                let vh = var[i][c] / (1.0 - b2.powi(it));
                pts[i][c] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
    }
    let at_action = pts
        .iter()
        .filter(|&&p| acts.iter().any(|&a| dist(p, a) <= 0.05))
        .count();
    let at_mid = pts.iter().filter(|&&p| dist(p, midpoint) <= 0.05).count();

    // exhaustive grid oracle over the same objective
    let g = 101;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (g - 1) as f64;
    let cells: Vec<[f64; 2]> = (0..g * g).map(|i| [coord(i % g), coord(i / g)]).collect();
    let grid: Vec<f64> = cells.chunks(g).flat_map(&values).collect();
    let best = (0..g * g).min_by(|&i, &j| grid[i].total_cmp(&grid[j])).unwrap();
    let best_pt = cells[best];
    let oracle_ok = acts.iter().any(|&a| dist(best_pt, a) <= 0.05);
    let v = values(&[midpoint, acts[0], acts[1]]);
    let mid_above = v[1] < v[0] && v[2] < v[0];
    Verdict::new(
        at_action >= 95 && at_mid == 0 && oracle_ok && mid_above,
        format!(
            "{at_action}/100 descents end within 0.05 of an action, {at_mid} at the midpoint; grid minimum at ({:.2}, {:.2}), midpoint above both actions: {mid_above}",
            best_pt[0], best_pt[1]
        ),
    )
}

/// Regularization weight of the kl arm; the distillation direction is
/// normalized per row, so it needs a larger weight than the trust region
/// to hold mass on the data modes against the normalized Q term.
const KL_ALPHA: f64 = 10.0;

/// Matched-budget corner-bandit configuration shared by the contrast and
/// entropy criteria.
fn bandit_config(seed: u64) -> TrainConfig {
    TrainConfig {
        scenario: "corner25".into(),
        dataset_size: 10_000,
        hidden: 64,
        batch_size: 256,
        pretrain_epochs: 10,
        epochs: 5,
        lr: 1e-3,
        bc_lr: Some(2e-3),
        lr_decay: true,
        alpha: 1.0,
        q_norm: true,
        eval_samples: 1000,
        seed,
        ..TrainConfig::default()
    }
}

fn corner_shares(ev: &EvalResult) -> [f64; 4] {
    let corners = [[0.8, 0.8], [-0.8, 0.8], [0.8, -0.8], [-0.8, -0.8]];
    let n = ev.samples.len() as f64;
    corners.map(|c| ev.samples.iter().filter(|&&p| dist(p, c) <= 0.15).count() as f64 / n)
}

fn shares_text(s: [f64; 4]) -> String {
    format!("[{:.2} {:.2} {:.2} {:.2}]", s[0], s[1], s[2], s[3])
}

struct BanditRuns {
    pretrained: Vec<Pretrained>,
    tr: Vec<RunOutcome>,
}

fn pretrained_for(cfg: &TrainConfig) -> Pretrained {
    let task = Task::from_config(cfg).unwrap();
    let data = load_dataset(cfg, &task).unwrap();
    let (sd, ad) = task.dims();
    let m = Models::init(cfg, sd, ad).unwrap();
    pretrain(cfg, &data, m.denoiser, m.critics, &mut NoopObserver).unwrap()
}

fn contrast_tr(runs: &mut BanditRuns) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3 {
        let cfg = bandit_config(seed);
        let pre = pretrained_for(&cfg);
        let out = run_with(&cfg, Some(pre.clone()), &mut NoopObserver).unwrap();
        let shares = corner_shares(out.final_eval.as_ref().unwrap());
        let top = shares.iter().copied().fold(0.0, f64::max);
        pass &= top >= 0.9;
        lines.push(shares_text(shares));
        runs.pretrained.push(pre);
        runs.tr.push(out);
    }
    Verdict::new(pass, format!("tr arm corner shares per seed {}", lines.join(" ")))
}

fn contrast_kl(runs: &BanditRuns) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (seed, pre) in runs.pretrained.iter().enumerate() {
        let mut cfg = bandit_config(seed as u64);
        cfg.regularizer = Regularizer::Kl;
        cfg.policy_kind = "implicit".parse().unwrap();
        cfg.alpha = KL_ALPHA;
        let out = run_with(&cfg, Some(pre.clone()), &mut NoopObserver).unwrap();
        let shares = corner_shares(out.final_eval.as_ref().unwrap());
        let occupied = shares.iter().filter(|&&s| s >= 0.05).count();
        pass &= occupied >= 3;
        lines.push(shares_text(shares));
    }
    Verdict::new(pass, format!("kl arm corner shares per seed {}", lines.join(" ")))
}

fn expectile_oracle() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for tau in [0.5, 0.7, 0.9] {
        let objective =
            |v: f64| 0.5 * (dtql::critic::expectile_loss(-v, tau) + dtql::critic::expectile_loss(1.0 - v, tau));
        let oracle = golden_section(objective, -1.0, 2.0);
        let cfg = CriticConfig {
            hidden: 32,
            depth: 3,
            tau,
            ..CriticConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut c = CriticSet::new(1, 1, cfg, &mut rng).unwrap();
        let n = 256;
        let s = Tensor::zeros(n, 1);
        let targets = Tensor::column(&(0..n).map(|i| (i % 2) as f64).collect::<Vec<_>>());
        let steps = 4000;
        for step in 0..steps {
            let adam = AdamConfig::with_lr(cosine_lr(1e-3, step, steps));
            c.v_update_with_targets(&s, &targets, &adam).unwrap();
        }
        let v = c.value(&Tensor::zeros(1, 1)).unwrap().item();
        pass &= (v - oracle).abs() < 0.01 && (oracle - tau).abs() < 0.01;
        lines.push(format!("tau {tau}: V {v:.4}, oracle {oracle:.4}"));
    }
    Verdict::new(pass, lines.join("; "))
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

fn bellman_oracle() -> Verdict {
    let gamma = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mdp = ChainMdp::new(8, gamma).unwrap();
    let data = gen_chain_dataset(&mdp, 0.02, 5000, 7, &mut rng).unwrap();
    // with tau = 0.5 the value regression targets the behavior-weighted
    // mean of Q(s', .), so the fixed point uses the dataset's move weights
    let weights = behavior_weights(&mdp, &data);
    let oracle = value_iteration(&mdp, 21, &Backup::Expectile { tau: 0.5, weights }).unwrap();
    let optimal = value_iteration(&mdp, 21, &Backup::Optimal).unwrap();
    let cfg = CriticConfig {
        hidden: 64,
        depth: 3,
        tau: 0.5,
        gamma,
        rho: 0.99,
    };
    let mut c = CriticSet::new(mdp.n_states, 1, cfg, &mut rng).unwrap();
    let steps = 10_000;
    for step in 0..steps {
        let b = data.sample_batch(256, &mut rng).unwrap();
        c.update(&b, &AdamConfig::with_lr(cosine_lr(3e-3, step, steps)))
            .unwrap();
        c.polyak_update().unwrap();
    }
    let all = data.batch(&(0..data.len()).collect::<Vec<_>>()).unwrap();
    let q = c.min_q(&all.s, &all.a, false).unwrap();
    let (mut worst, mut gap_to_optimal) = (0.0f64, 0.0f64);
    for i in 0..data.len() {
        let s = mdp.decode(data.state(i));
        let a = data.action(i)[0];
        worst = worst.max((q.get(i, 0) - oracle.q_at(s, a)).abs());
        gap_to_optimal = gap_to_optimal.max((q.get(i, 0) - optimal.q_at(s, a)).abs());
    }
    Verdict::new(
        worst < 0.05,
        format!(
            "max |Q - Q_vi| = {worst:.4} over {} dataset pairs (distance to the max-backup Q: {gap_to_optimal:.3})",
            data.len()
        ),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn entropy_ablation(runs: &BanditRuns) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (seed, (pre, off)) in runs.pretrained.iter().zip(&runs.tr).enumerate() {
        let mut cfg = bandit_config(seed as u64);
        cfg.entropy_enabled = true;
        let on = run_with(&cfg, Some(pre.clone()), &mut NoopObserver).unwrap();
        let h_on = on.metrics.last().unwrap().policy_entropy_estimate;
        let h_off = off.metrics.last().unwrap().policy_entropy_estimate;
        let gp = off.models.policy.as_gaussian().unwrap();
        let task = Task::from_config(&cfg).unwrap();
        let data = load_dataset(&cfg, &task).unwrap();
        let states = data.batch(&(0..data.len().min(256)).collect::<Vec<_>>()).unwrap().s;
        let ls = median(gp.log_std(&states).unwrap().into_vec());
        pass &= h_on > h_off && ls <= dtql::policy::LOG_STD_MIN + 0.5;
        lines.push(format!(
            "seed {seed}: H on {h_on:.2} off {h_off:.2}, off log-std median {ls:.2}"
        ));
    }
    Verdict::new(pass, lines.join("; "))
}

fn determinism_and_guard() -> Verdict {
    let mut cfg = TrainConfig {
        scenario: "corner25".into(),
        dataset_size: 500,
        hidden: 16,
        batch_size: 32,
        pretrain_epochs: 1,
        epochs: 2,
        steps_per_epoch: 50,
        eval_samples: 100,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = metrics_csv(&run(&cfg).unwrap().metrics);
    let b = metrics_csv(&run(&cfg).unwrap().metrics);
    cfg.seed = 10;
    let other = metrics_csv(&run(&cfg).unwrap().metrics);
    let repeatable = a == b && a != other;

    let mut guarded = true;
    let mut notes = Vec::new();
    for lr in [1e6, 1e300] {
        let mut bad = cfg.clone();
        bad.lr = lr;
        bad.bc_lr = Some(lr);
        match run(&bad) {
            Ok(out) => {
                let finite = out.models.all_finite();
                guarded &= finite;
                notes.push(format!("lr {lr:e}: finished, finite params {finite}"));
            }
            Err(Error::NonFinite(msg)) => notes.push(format!("lr {lr:e}: stopped ({msg})")),
            Err(e) => {
                guarded = false;
                notes.push(format!("lr {lr:e}: unexpected error {e}"));
            }
        }
    }
    // the optimizer itself refuses non-finite gradients
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = dtql::nnkit::Mlp::new(
        dtql::nnkit::MlpSpec::uniform(2, 4, 1, 2, dtql::nnkit::Activation::Mish),
        &mut rng,
    )
    .unwrap();
    let before = net.params().flatten();
    let mut grads: Vec<Tensor> = net
        .params()
        .values()
        .iter()
        .map(|t| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    grads[0].data_mut()[0] = f64::NAN;
    let refused =
        net.params_mut().adam_step(&grads, &AdamConfig::with_lr(1e-3)).is_err() && net.params().flatten() == before;
    Verdict::new(
        repeatable && guarded && refused,
        format!(
            "identical metrics on repeat: {}, seed changes metrics: {}; {}; NaN gradient refused: {refused}",
            a == b,
            a != other,
            notes.join("; ")
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut results = vec![
        criterion(1, "gradient integrity", minutes(1), gradient_integrity),
        criterion(2, "schedule identities", minutes(1), schedule_identities),
        criterion(3, "trust-region field", minutes(10), trust_region_field),
        criterion(4, "mode seeking", minutes(2), mode_seeking),
    ];
    let mut runs = BanditRuns {
        pretrained: Vec::new(),
        tr: Vec::new(),
    };
    let tr_ok = criterion(5, "contrast, tr arm", minutes(15), || contrast_tr(&mut runs));
    let kl_ok = criterion(5, "contrast, kl arm", minutes(15), || contrast_kl(&runs));
    results.push(tr_ok && kl_ok);
    results.push(criterion(6, "expectile oracle", minutes(1), expectile_oracle));
    results.push(criterion(7, "bellman oracle", minutes(5), bellman_oracle));
    results.push(criterion(8, "entropy ablation", minutes(30), || {
        entropy_ablation(&runs)
    }));
    results.push(criterion(
        9,
        "determinism and divergence guard",
        minutes(5),
        determinism_and_guard,
    ));
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    assert_eq!(
        passed,
        results.len(),
        "some acceptance criteria failed; see the lines above"
    );
}
