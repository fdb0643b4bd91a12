//! Named parameter storage, initialization and checkpoints.
//!
//! A checkpoint is a directory holding one tensor file per named tensor and
//! a `manifest.txt` with one `<kind> <name> <file>` line each, where kind is
//! `param`, `buffer` or `state`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    buffer_names: Vec<String>,
    buffers: Vec<Tensor>,
    rng: ChaCha8Rng,
    dtype: DType,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            buffer_names: Vec::new(),
            buffers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value.to_dtype(self.dtype));
        ParamId(self.values.len() - 1)
    }

    /// Centered uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, &mut self.rng);
        self.add(name, t)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> BufferId {
        self.buffer_names.push(name.into());
        self.buffers.push(value.to_dtype(DType::F64));
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.values[id.0].shape(), "parameter shape is fixed");
        self.values[id.0] = value.to_dtype(self.dtype);
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Mutable access for optimizers. Values written here must keep the
    /// store's dtype.
    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0]
    }

    pub fn set_buffer(&mut self, id: BufferId, value: Tensor) {
        self.buffers[id.0] = value;
    }

    /// Registers every parameter as a leaf of `tape`, indexed by [`ParamId`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Writes parameters, buffers and any extra `state` tensors.
    pub fn save(&self, dir: &Path, state: &BTreeMap<String, Tensor>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        let entries = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, t)| ("param", n, t))
            .chain(self.buffer_names.iter().zip(&self.buffers).map(|(n, t)| ("buffer", n, t)))
            .chain(state.iter().map(|(n, t)| ("state", n, t)));
        for (kind, name, t) in entries {
            let file = format!("{kind}.{name}.roat");
            write_tensor(&dir.join(&file), t)?;
            manifest.push_str(&format!("{kind} {name} {file}\n"));
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint into a store with the same layout. Returns the
    /// extra `state` tensors.
    pub fn load(&mut self, dir: &Path) -> Result<BTreeMap<String, Tensor>> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut state = BTreeMap::new();
        let mut seen = 0;
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |m: String| Error::Parse {
                location: format!("{}:{}", path.display(), lineno + 1),
                message: m,
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [kind, name, file] = parts[..] else {
                return Err(bad("expected `<kind> <name> <file>`".into()));
            };
            let t = read_tensor(&dir.join(file))?;
            match kind {
                "param" => {
                    let id = self
                        .find(name)
                        .ok_or_else(|| bad(format!("unknown parameter {name}")))?;
                    if t.shape() != self.values[id.0].shape() {
                        return Err(bad(format!("shape mismatch for {name}")));
                    }
                    self.values[id.0] = t.to_dtype(self.dtype);
                    seen += 1;
                }
                "buffer" => {
                    let i = self
                        .buffer_names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| bad(format!("unknown buffer {name}")))?;
                    self.buffers[i] = t;
                }
                "state" => {
                    state.insert(name.to_string(), t);
                }
                other => return Err(bad(format!("unknown entry kind {other}"))),
            }
        }
        if seen != self.values.len() {
            return Err(Error::Parse {
                location: path.display().to_string(),
                message: format!("checkpoint has {seen} of {} parameters", self.values.len()),
            });
        }
        Ok(state)
    }
}
