use super::tensor::Tensor;
use crate::{Error, Result};

const MAX_FREQ: f64 = 8.0;

/// Sinusoidal embedding: `[sin(v f_0), cos(v f_0), sin(v f_1), ...]` with
/// frequencies spaced geometrically from 1 to `MAX_FREQ`.
pub fn sinusoidal_embed(value: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("embedding dim must be even and >= 2, got {dim}")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            (MAX_FREQ.ln() * k as f64 / (half - 1) as f64).exp()
        };
        let (s, c) = (value * freq).sin_cos();
        out.push(s);
        out.push(c);
    }
    Ok(out)
}

/// Embed one value per row into an `n x dim` tensor.
pub fn embed_column(values: &[f64], dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(values.len() * dim);
    for &v in values {
        data.extend(sinusoidal_embed(v, dim)?);
    }
    Tensor::from_vec(values.len(), dim, data)
}
