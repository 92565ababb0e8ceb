//! Named parameter arrays, SGD with momentum, and the binary checkpoint
//! container.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::snap_f32;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CDET";
const FORMAT_VERSION: u32 = 1;

pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub momentum: Vec<f64>,
}

/// Insertion-ordered map of unique parameter names to tensors, each with a
/// momentum buffer for the optimizer. Parameter values always lie on the f32
/// grid so that checkpoints round-trip bit-exactly.
#[derive(Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    /// Registers a zero-initialized parameter. Names must be unique.
    pub fn register(&mut self, name: &str, shape: &[usize]) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        let len: usize = shape.iter().product();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor: Tensor::zeros(shape),
            momentum: vec![0.0; len],
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entry(&self, id: usize) -> &ParamEntry {
        &self.entries[id]
    }

    pub fn entry_mut(&mut self, id: usize) -> &mut ParamEntry {
        &mut self.entries[id]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.entries[id].tensor
    }

    /// Fills a parameter with xavier-uniform samples, bound sqrt(6/(fan_in+fan_out)).
    pub fn fill_xavier(&mut self, id: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut self.entries[id].tensor.data {
            *v = snap_f32(rng.gen_range(-bound..bound));
        }
    }

    /// Fills a parameter with zero-mean Gaussian samples.
    pub fn fill_gaussian(&mut self, id: usize, std: f64, rng: &mut ChaCha8Rng) {
        let normal = Normal::new(0.0, std).expect("valid std");
        for v in &mut self.entries[id].tensor.data {
            *v = snap_f32(normal.sample(rng));
        }
    }

    pub fn fill_const(&mut self, id: usize, value: f64) {
        let value = snap_f32(value);
        for v in &mut self.entries[id].tensor.data {
            *v = value;
        }
    }

    pub fn zero_all_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Adds per-parameter gradient buffers (aligned with entry order) into the
    /// store's gradients. Callers serialize this; there is a single writer.
    pub fn accumulate_grads(&mut self, grads: &[Vec<f64>], scale: f64) {
        assert_eq!(grads.len(), self.entries.len());
        for (e, g) in self.entries.iter_mut().zip(grads) {
            assert_eq!(e.tensor.grad.len(), g.len());
            for (dst, src) in e.tensor.grad.iter_mut().zip(g) {
                *dst += scale * src;
            }
        }
    }

    /// Allocates a zeroed gradient buffer set aligned with this store.
    pub fn grad_buffers(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| vec![0.0; e.tensor.len()]).collect()
    }

    /// One SGD step with momentum and weight decay:
    /// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
    /// Gradients are zeroed afterwards; updated values snap to f32.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64, weight_decay: f64) {
        for e in &mut self.entries {
            for i in 0..e.tensor.data.len() {
                let g = e.tensor.grad[i] + weight_decay * e.tensor.data[i];
                let v = momentum * e.momentum[i] + g;
                e.momentum[i] = v;
                e.tensor.data[i] = snap_f32(e.tensor.data[i] - lr * v);
            }
            e.tensor.zero_grad();
        }
    }

    /// Writes the checkpoint container: magic "CDET", format version, a
    /// length-prefixed UTF-8 metadata block (the network's config echo), the
    /// entry count, then per entry name, rank, dims, and raw little-endian
    /// f32 values.
    pub fn save(&self, path: &Path, metadata: &str) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = metadata.as_bytes();
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.tensor.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a checkpoint written by `save`; returns the store and its
    /// metadata block. Momentum buffers start at zero.
    pub fn load(path: &Path) -> Result<(ParameterStore, String)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
            path,
        };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::config(format!(
                "{}: not a checkpoint (bad magic bytes)",
                path.display()
            )));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            )));
        }
        let meta_len = cur.u32()? as usize;
        let metadata = String::from_utf8(cur.take(meta_len)?.to_vec())
            .map_err(|_| Error::config(format!("{}: metadata is not UTF-8", path.display())))?;
        let count = cur.u32()? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::config(format!("{}: name is not UTF-8", path.display())))?;
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let raw = cur.take(4)?;
                data.push(f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as f64);
            }
            if store.index.contains_key(&name) {
                return Err(Error::config(format!(
                    "{}: duplicate parameter {name}",
                    path.display()
                )));
            }
            let id = store.register(&name, &shape);
            store.entries[id].tensor.data = data;
            store.entries[id].tensor.zero_grad();
        }
        if cur.pos != bytes.len() {
            return Err(Error::config(format!(
                "{}: trailing bytes after last entry",
                path.display()
            )));
        }
        Ok((store, metadata))
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
            return Err(Error::config(format!(
                "{}: truncated checkpoint",
                self.path.display()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let raw = self.take(4)?;
        Ok(u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]))
    }
}
