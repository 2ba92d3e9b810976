//! Named parameter tensors: seeded initialization and the binary
//! checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "CMML" | version: u32 | count: u32 |
//!   count x ( name_len: u16 | name: utf-8 | dtype: u8 | rank: u8 |
//!             extents: rank x u32 | data: prod(extents) x scalar )
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMML";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    /// Normal with standard deviation `gain / sqrt(fan_in)`, where fan-in
    /// is the product of all extents after the first.
    FanInNormal { gain: f64 },
    Zeros,
    /// Identity matrix; for `(C, C, 1, 1)` kernels the channel identity.
    Identity,
    /// Identity times a constant.
    ScaledIdentity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: InitKind) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl InitScheme {
    pub fn materialize<T: Real>(&self, shape: &[usize]) -> Result<Tensor<T>> {
        match self.kind {
            InitKind::Zeros => Ok(Tensor::zeros(shape)),
            InitKind::Identity | InitKind::ScaledIdentity(_) => {
                let scale = match self.kind {
                    InitKind::ScaledIdentity(k) => T::lit(k),
                    _ => T::one(),
                };
                let n = shape[0];
                let square = match shape {
                    [a, b] => a == b,
                    [a, b, 1, 1] => a == b,
                    _ => false,
                };
                if !square {
                    return Err(Error::Config(format!("identity init needs a square shape, got {shape:?}")));
                }
                Ok(Tensor::from_fn(shape, |i| {
                    if i / n == i % n {
                        scale
                    } else {
                        T::zero()
                    }
                }))
            }
            InitKind::FanInNormal { gain } => {
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let std = gain / (fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(Tensor::from_fn(shape, |_| T::lit(normal.sample(&mut rng))))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: HashMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    /// Each tensor draws from its own stream seeded by `(seed, name)`, so
    /// values do not depend on declaration order.
    pub fn initialize(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        for spec in specs {
            let scheme = InitScheme {
                kind: spec.init,
                seed: seed ^ name_hash(&spec.name),
            };
            if store.tensors.contains_key(&spec.name) {
                return Err(Error::Config(format!("duplicate parameter `{}`", spec.name)));
            }
            store.insert(spec.name.clone(), scheme.materialize(&spec.shape)?);
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks names and shapes against a declaration list.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let t = self
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        if self.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model declares {}",
                self.len(),
                specs.len()
            )));
        }
        Ok(())
    }

    /// Registers every tensor as a gradient-requiring graph leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Result<ParamVars> {
        let mut vars = ParamVars::default();
        for (name, t) in &self.tensors {
            vars.insert(name.clone(), graph.param(name, t.clone())?);
        }
        Ok(vars)
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        match self.tensors.iter().find(|(_, t)| !t.is_finite()) {
            Some((name, _)) => Err(name.clone()),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE as u8);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&t.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a checkpoint; tensors stored in another precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
            let mut tag = [0u8; 2];
            read_exact(&mut r, &mut tag)?;
            let dtype = DType::from_tag(tag[0])
                .ok_or_else(|| Error::Checkpoint(format!("unknown dtype tag {}", tag[0])))?;
            let shape = (0..tag[1])
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * dtype.size()];
            read_exact(&mut r, &mut raw)?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            };
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            store.insert(name, t);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
