//! Minimal float64 neural-network toolkit: tensors, a reverse-mode tape,
//! MLPs, Adam and timestep embeddings.

mod embed;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use embed::{embed_column, sinusoidal_embed};
pub use mlp::{Activation, Mlp, MlpSpec, OutputActivation, ParamMode};
pub use params::{AdamConfig, ParamStore, StoreId};
pub use tape::{mish, sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::Result;

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
