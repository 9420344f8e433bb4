use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DTQLPRM\0";
const VERSION: u32 = 1;

/// Identity of a parameter store; tape bindings refer to stores by id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StoreId(u64);

fn next_id() -> StoreId {
    static NEXT: AtomicU64 = AtomicU64::new(1);
    StoreId(NEXT.fetch_add(1, Ordering::Relaxed))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Named parameter tensors with their Adam moments.
///
/// Cloning yields an independent store with a fresh id, so gradients bound
/// to the original never leak into the copy (e.g. target networks).
#[derive(Debug)]
pub struct ParamStore {
    id: StoreId,
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            id: next_id(),
            names: self.names.clone(),
            values: self.values.clone(),
            first_moment: self.first_moment.clone(),
            second_moment: self.second_moment.clone(),
            step: self.step,
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: next_id(),
            names: Vec::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn id(&self) -> StoreId {
        self.id
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let (r, c) = (value.rows(), value.cols());
        self.names.push(name.into());
        self.values.push(value);
        self.first_moment.push(Tensor::zeros(r, c));
        self.second_moment.push(Tensor::zeros(r, c));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// All parameter values flattened in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrite all values from a flat vector in store order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape("ParamStore::assign_flat", self.num_scalars(), flat.len()));
        }
        let mut off = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Copy values (not moments) from a store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// `self <- rho * self + (1 - rho) * online`.
    pub fn polyak_from(&mut self, online: &ParamStore, rho: f64) -> Result<()> {
        if !self.same_layout(online) {
            return Err(Error::Config("polyak update between different layouts".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&online.values) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = rho * *d + (1.0 - rho) * s;
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so a rejected step leaves the store unchanged.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if cfg.lr.is_nan() || cfg.lr <= 0.0 {
            return Err(Error::Config(format!("adam lr must be > 0, got {}", cfg.lr)));
        }
        if grads.len() != self.values.len() {
            return Err(Error::shape("adam_step grads", self.values.len(), grads.len()));
        }
        for (i, (g, p)) in grads.iter().zip(&self.values).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step grad",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient for `{}` contains NaN/Inf; step aborted",
                    self.names[i]
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = self.values[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Serialize values to the flat binary checkpoint format.
    ///
    /// Layout (little endian): magic `DTQLPRM\0`, u32 version, u32 tag
    /// length and tag bytes, u64 optimizer step, u32 entry count, then per entry
    /// (u32 name length, name, u64 rows, u64 cols), then all payloads as f64.
    pub fn to_bytes(&self, tag: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for (name, v) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(v.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(v.cols() as u64).to_le_bytes());
        }
        for v in &self.values {
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parse a checkpoint, returning the store and its kind tag.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(Self, String)> {
        let mut cur = Cursor { bytes, pos: 0, path };
        let magic = cur.take(8)?;
        if magic != MAGIC {
            return Err(Error::Version {
                path: path.into(),
                found: format!("magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                path: path.into(),
                found: format!("version {version}"),
            });
        }
        let tag_len = cur.u32()? as usize;
        let tag = cur.string(tag_len)?;
        let step = cur.u64()?;
        let count = cur.u32()? as usize;
        let mut header = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = cur.u32()? as usize;
            let name = cur.string(nlen)?;
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            header.push((name, rows, cols));
        }
        let mut store = ParamStore::new();
        for (name, rows, cols) in header {
            let n = rows.checked_mul(cols).ok_or_else(|| Error::Format {
                path: path.into(),
                detail: format!("entry `{name}` has absurd shape {rows}x{cols}"),
            })?;
            let raw = cur.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::from_vec(rows, cols, data).map_err(|e| Error::Format {
                path: path.into(),
                detail: e.to_string(),
            })?;
            store.push(name, t);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                path: path.into(),
                detail: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }
        store.step = step;
        Ok((store, tag))
    }

    pub fn save(&self, path: &Path, tag: &str) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes(tag)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.into(),
                detail: format!("needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            path: self.path.into(),
            detail: "non-utf8 name".into(),
        })
    }
}
