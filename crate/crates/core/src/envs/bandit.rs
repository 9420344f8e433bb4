use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta, Transition};
use crate::{Error, Result};

/// Samples closer than this to a mode center count as occupying it.
pub const COVERAGE_RADIUS: f64 = 0.15;

const GRID: [f64; 5] = [-0.8, -0.4, 0.0, 0.4, 0.8];
const GAUSS_STD: f64 = 0.05;
const SWISS_NOISE: f64 = 0.02;
const SWISS_RADIUS: f64 = 0.9;
const SWISS_CENTERS: usize = 12;

/// Reward over the action square, bounded in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardField {
    /// `max_c exp(-||a - c||^2 / (2 h^2))` over the given peaks.
    Peaks { peaks: Vec<[f64; 2]>, bandwidth: f64 },
    /// `exp(-(||a|| - radius)^2 / (2 w^2))`.
    Ring { radius: f64, width: f64 },
}

impl RewardField {
    fn eval(&self, a: [f64; 2]) -> f64 {
        match self {
            RewardField::Peaks { peaks, bandwidth } => peaks
                .iter()
                .map(|c| (-dist2(a, *c) / (2.0 * bandwidth * bandwidth)).exp())
                .fold(0.0, f64::max),
            RewardField::Ring { radius, width } => {
                let d = dist2(a, [0.0, 0.0]).sqrt() - radius;
                (-d * d / (2.0 * width * width)).exp()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Generator {
    Grid25,
    SwissRoll,
}

/// A one-step bandit with a constant one-dimensional dummy state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditScenario {
    pub name: String,
    pub mode_centers: Vec<[f64; 2]>,
    pub mode_std: f64,
    pub reward_field: RewardField,
    generator: Generator,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn grid_centers() -> Vec<[f64; 2]> {
    GRID.iter().flat_map(|&y| GRID.iter().map(move |&x| [x, y])).collect()
}

fn swiss_point(u: f64) -> [f64; 2] {
    let t = 1.5 * PI * (1.0 + 2.0 * u);
    let k = SWISS_RADIUS / (4.5 * PI);
    [k * t * t.cos(), k * t * t.sin()]
}

impl BanditScenario {
    pub const NAMES: [&'static str; 4] = ["corner25", "swiss_roll", "single_mode", "ring"];

    /// 25-Gaussian data, the four corners equally rewarded.
    pub fn corner25() -> Self {
        Self {
            name: "corner25".into(),
            mode_centers: grid_centers(),
            mode_std: GAUSS_STD,
            reward_field: RewardField::Peaks {
                peaks: vec![[-0.8, -0.8], [0.8, -0.8], [-0.8, 0.8], [0.8, 0.8]],
                bandwidth: 0.15,
            },
            generator: Generator::Grid25,
        }
    }

    /// Swiss-roll data, reward peaked at the origin.
    pub fn swiss_roll() -> Self {
        Self {
            name: "swiss_roll".into(),
            mode_centers: (0..SWISS_CENTERS)
                .map(|i| swiss_point(i as f64 / (SWISS_CENTERS - 1) as f64))
                .collect(),
            mode_std: SWISS_NOISE,
            reward_field: RewardField::Peaks {
                peaks: vec![[0.0, 0.0]],
                bandwidth: 0.2,
            },
            generator: Generator::SwissRoll,
        }
    }

    /// 25-Gaussian data with one rewarded mode.
    pub fn single_mode() -> Self {
        Self {
            name: "single_mode".into(),
            reward_field: RewardField::Peaks {
                peaks: vec![[0.4, 0.4]],
                bandwidth: 0.15,
            },
            ..Self::corner25()
        }
    }

    /// 25-Gaussian data with reward increasing toward a ring of radius 0.8.
    pub fn ring() -> Self {
        Self {
            name: "ring".into(),
            reward_field: RewardField::Ring {
                radius: 0.8,
                width: 0.2,
            },
            ..Self::corner25()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "corner25" => Ok(Self::corner25()),
            "swiss_roll" => Ok(Self::swiss_roll()),
            "single_mode" => Ok(Self::single_mode()),
            "ring" => Ok(Self::ring()),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (expected one of {:?})",
                Self::NAMES
            ))),
        }
    }

    pub const STATE_DIM: usize = 1;
    pub const ACTION_DIM: usize = 2;

    /// Reward without the range check; actions are clamped silently.
    pub fn reward_clamped(&self, a: [f64; 2]) -> f64 {
        self.reward_field.eval([a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)])
    }

    /// Reward of an action; out-of-square actions are clamped with a warning.
    pub fn reward(&self, a: [f64; 2]) -> f64 {
        if a.iter().any(|x| x.abs() > 1.0) {
            log::warn!("action {a:?} outside [-1, 1]^2, clamping");
        }
        self.reward_clamped(a)
    }

    /// Index and distance of the closest mode center.
    pub fn nearest_mode(&self, a: [f64; 2]) -> (usize, f64) {
        self.mode_centers
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, dist2(a, c).sqrt()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("at least one mode")
    }

    /// Share of samples within [`COVERAGE_RADIUS`] of each mode center.
    pub fn coverage(&self, samples: &[[f64; 2]]) -> Vec<f64> {
        let mut counts = vec![0usize; self.mode_centers.len()];
        for &a in samples {
            let (i, d) = self.nearest_mode(a);
            if d <= COVERAGE_RADIUS {
                counts[i] += 1;
            }
        }
        let n = samples.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Draws `n` one-step transitions from the scenario's behavior data.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, seed: u64, rng: &mut R) -> Result<Dataset> {
        let actions = match self.generator {
            Generator::Grid25 => sample_grid25(n, rng)?,
            Generator::SwissRoll => sample_swiss(n, rng)?,
        };
        let meta = DatasetMeta {
            scenario: self.name.clone(),
            seed,
            params: serde_json::to_value(self).expect("serializable"),
        };
        let mut ds = Dataset::new(Self::STATE_DIM, Self::ACTION_DIM, meta);
        for a in actions {
            ds.push(Transition {
                s: vec![0.0],
                a: a.to_vec(),
                r: self.reward_clamped(a),
                s_next: vec![0.0],
                done: true,
            })?;
        }
        Ok(ds)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_grid25<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if n < 25 {
        return Err(Error::Config(format!("25-Gaussian data needs n >= 25, got {n}")));
    }
    let centers = grid_centers();
    Ok((0..n)
        .map(|_| {
            let c = centers[rng.random_range(0..centers.len())];
            [
                (c[0] + GAUSS_STD * normal(rng)).clamp(-1.0, 1.0),
                (c[1] + GAUSS_STD * normal(rng)).clamp(-1.0, 1.0),
            ]
        })
        .collect())
}

fn sample_swiss<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if n == 0 {
        return Err(Error::Config("swiss roll needs n >= 1".into()));
    }
    Ok((0..n)
        .map(|_| {
            let p = swiss_point(rng.random::<f64>());
            [
                (p[0] + SWISS_NOISE * normal(rng)).clamp(-1.0, 1.0),
                (p[1] + SWISS_NOISE * normal(rng)).clamp(-1.0, 1.0),
            ]
        })
        .collect())
}

/// 25-Gaussian actions on a 5x5 grid over `[-0.8, 0.8]^2`.
pub fn gen_25gaussian<R: Rng + ?Sized>(n: usize, seed: u64, rng: &mut R) -> Result<Dataset> {
    BanditScenario::corner25().generate(n, seed, rng)
}

/// 1.5-turn spiral scaled into the unit square.
pub fn gen_swiss_roll<R: Rng + ?Sized>(n: usize, seed: u64, rng: &mut R) -> Result<Dataset> {
    BanditScenario::swiss_roll().generate(n, seed, rng)
}
