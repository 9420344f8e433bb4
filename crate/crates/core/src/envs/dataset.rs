use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::Batch;
use crate::nnkit::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 7] = b"DTQLDS1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Provenance written next to the binary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenario: String,
    pub seed: u64,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Column-oriented store of transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub state_dim: usize,
    pub action_dim: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    s_next: Vec<f64>,
    done: Vec<bool>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize, meta: DatasetMeta) -> Self {
        Self {
            state_dim,
            action_dim,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            s_next: Vec::new(),
            done: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim {
            return Err(Error::shape("transition state", self.state_dim, t.s.len()));
        }
        if t.a.len() != self.action_dim {
            return Err(Error::shape("transition action", self.action_dim, t.a.len()));
        }
        self.s.extend_from_slice(&t.s);
        self.a.extend_from_slice(&t.a);
        self.r.push(t.r);
        self.s_next.extend_from_slice(&t.s_next);
        self.done.push(t.done);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn get(&self, i: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            s: self.s[i * sd..(i + 1) * sd].to_vec(),
            a: self.a[i * ad..(i + 1) * ad].to_vec(),
            r: self.r[i],
            s_next: self.s_next[i * sd..(i + 1) * sd].to_vec(),
            done: self.done[i],
        }
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.s[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.a[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.r[i]
    }

    pub fn done(&self, i: usize) -> bool {
        self.done[i]
    }

    pub fn actions(&self) -> Tensor {
        Tensor::from_vec(self.len(), self.action_dim, self.a.clone()).expect("consistent")
    }

    pub fn states(&self) -> Tensor {
        Tensor::from_vec(self.len(), self.state_dim, self.s.clone()).expect("consistent")
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        if idx.is_empty() {
            return Err(Error::Usage("cannot build an empty batch".into()));
        }
        let n = idx.len();
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut s = Vec::with_capacity(n * sd);
        let mut a = Vec::with_capacity(n * ad);
        let mut s_next = Vec::with_capacity(n * sd);
        let mut r = Vec::with_capacity(n);
        let mut done = Vec::with_capacity(n);
        for &i in idx {
            s.extend_from_slice(self.state(i));
            a.extend_from_slice(self.action(i));
            s_next.extend_from_slice(&self.s_next[i * sd..(i + 1) * sd]);
            r.push(self.r[i]);
            done.push(if self.done[i] { 1.0 } else { 0.0 });
        }
        Ok(Batch {
            s: Tensor::from_vec(n, sd, s)?,
            a: Tensor::from_vec(n, ad, a)?,
            r: Tensor::from_vec(n, 1, r)?,
            s_next: Tensor::from_vec(n, sd, s_next)?,
            done: Tensor::from_vec(n, 1, done)?,
        })
    }

    /// Uniform minibatch drawn with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::Usage("dataset is empty".into()));
        }
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.batch(&idx)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(32 + n * (2 * self.state_dim + self.action_dim + 2) * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.action_dim as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for i in 0..n {
            let t = self.get(i);
            for x in t.s.iter().chain(&t.a).chain(std::iter::once(&t.r)).chain(&t.s_next) {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&(if t.done { 1.0f64 } else { 0.0 }).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], meta: DatasetMeta, path: &Path) -> Result<Self> {
        let header = MAGIC.len() + 4 + 4 + 4 + 8;
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: "bad magic".into(),
            });
        }
        if bytes.len() < header {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("header needs {header} bytes, file has {}", bytes.len()),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(7);
        if version != DATASET_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version.to_string(),
            });
        }
        let sd = u32_at(11) as usize;
        let ad = u32_at(15) as usize;
        let n = u64::from_le_bytes(bytes[19..27].try_into().expect("8 bytes")) as usize;
        let record = 2 * sd + ad + 2;
        let expected = header + n * record * 8;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("{n} records need {expected} bytes, file has {}", bytes.len()),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("{} trailing bytes", bytes.len() - expected),
            });
        }
        let mut ds = Dataset::new(sd, ad, meta);
        let mut vals = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for _ in 0..n {
            let mut take = |k: usize| (0..k).map(|_| vals.next().expect("length checked")).collect::<Vec<_>>();
            let s = take(sd);
            let a = take(ad);
            let r = take(1)[0];
            let s_next = take(sd);
            let done = take(1)[0] != 0.0;
            ds.push(Transition { s, a, r, s_next, done })?;
        }
        Ok(ds)
    }

    /// Writes the binary file and its JSON sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let meta = serde_json::json!({
            "scenario": self.meta.scenario,
            "seed": self.meta.seed,
            "params": self.meta.params,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "count": self.len(),
        });
        let text = serde_json::to_string_pretty(&meta).expect("json value");
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    /// Reads a dataset; a missing sidecar yields placeholder metadata.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let meta = match fs::read_to_string(&side) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Format {
                path: side.clone(),
                detail: e.to_string(),
            })?,
            Err(_) => DatasetMeta {
                scenario: "unknown".into(),
                seed: 0,
                params: serde_json::Value::Null,
            },
        };
        Self::from_bytes(&bytes, meta, path)
    }
}
