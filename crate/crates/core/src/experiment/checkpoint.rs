//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       4 bytes  "RENS"
//! version     u32      1
//! kind        u8       0 = model, 1 = composite
//! body        model | composite
//! checksum    32 bytes SHA-256 of everything above
//!
//! model     := arch train_eps:f64 init_seed:u64 count:u32 tensor*
//! arch      := input_dim:u32 n_hidden:u32 hidden:u32* num_classes:u32
//! tensor    := ndim:u32 dim:u32* value:f64*
//! composite := model(robust) model(natural) frozen:u8 head_seed:u64
//!              head_eps:f64 tensor(head weight) tensor(head bias)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::models::{Architecture, CompositeModel, ModelParams};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RENS";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// Anything that can be checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Model(ModelParams),
    Composite(CompositeModel),
}

impl From<ModelParams> for Checkpoint {
    fn from(m: ModelParams) -> Self {
        Checkpoint::Model(m)
    }
}

impl From<CompositeModel> for Checkpoint {
    fn from(c: CompositeModel) -> Self {
        Checkpoint::Composite(c)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend((v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len());
        t.shape().iter().for_each(|&d| self.u32(d));
        t.data().iter().for_each(|&v| self.f64(v));
    }
    fn model(&mut self, m: &ModelParams) {
        let a = m.arch();
        self.u32(a.input_dim);
        self.u32(a.hidden_dims.len());
        a.hidden_dims.iter().for_each(|&h| self.u32(h));
        self.u32(a.num_classes);
        self.f64(m.train_eps);
        self.u64(m.init_seed);
        self.u32(m.params().len());
        m.params().iter().for_each(|t| self.tensor(t));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corruption(format!("body ends early at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()?;
        if ndim > 8 {
            return Err(Error::Corruption(format!("tensor rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n * 8 > self.bytes.len() - self.pos {
            return Err(Error::Corruption(format!("tensor {shape:?} overruns the file")));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Corruption(e.to_string()))
    }
    fn model(&mut self) -> Result<ModelParams> {
        let input_dim = self.u32()?;
        let n_hidden = self.u32()?;
        if n_hidden > 1024 {
            return Err(Error::Corruption(format!("{n_hidden} hidden layers")));
        }
        let hidden_dims = (0..n_hidden).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let num_classes = self.u32()?;
        let train_eps = self.f64()?;
        let init_seed = self.u64()?;
        let count = self.u32()?;
        if count > 2 * (n_hidden + 1) {
            return Err(Error::Corruption(format!("{count} tensors")));
        }
        let params = (0..count).map(|_| self.tensor()).collect::<Result<Vec<_>>>()?;
        let arch = Architecture {
            input_dim,
            hidden_dims,
            num_classes,
        };
        ModelParams::from_parts(arch, params, train_eps, init_seed)
            .map_err(|e| Error::Corruption(e.to_string()))
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend(MAGIC);
    w.0.extend(FORMAT_VERSION.to_le_bytes());
    match ckpt {
        Checkpoint::Model(m) => {
            w.u8(0);
            w.model(m);
        }
        Checkpoint::Composite(c) => {
            w.u8(1);
            w.model(c.robust());
            w.model(c.natural());
            w.u8(c.backbones_frozen() as u8);
            w.u64(c.head_seed);
            w.f64(c.head_eps);
            c.head().iter().for_each(|t| w.tensor(t));
        }
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend(digest);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 1 + CHECKSUM_LEN {
        return Err(Error::Corruption(format!("file of {} bytes is too short", bytes.len())));
    }
    let (content, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(content).as_slice() != stored {
        return Err(Error::Corruption("checksum mismatch".into()));
    }
    if &content[..4] != MAGIC {
        return Err(Error::Corruption("bad magic".into()));
    }
    let version = u32::from_le_bytes(content[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let mut r = Reader {
        bytes: content,
        pos: 8,
    };
    let ckpt = match r.u8()? {
        0 => Checkpoint::Model(r.model()?),
        1 => {
            let robust = r.model()?;
            let natural = r.model()?;
            if r.u8()? != 1 {
                return Err(Error::Corruption("composite stored with unfrozen backbones".into()));
            }
            let head_seed = r.u64()?;
            let head_eps = r.f64()?;
            let head = vec![r.tensor()?, r.tensor()?];
            CompositeModel::from_parts(robust, natural, head, head_seed, head_eps)
                .map(Checkpoint::Composite)
                .map_err(|e| Error::Corruption(e.to_string()))?
        }
        k => return Err(Error::Corruption(format!("unknown checkpoint kind {k}"))),
    };
    if r.pos != content.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes",
            content.len() - r.pos
        )));
    }
    Ok(ckpt)
}

/// Writes `ckpt` to `path` and returns its hex SHA-256 checksum.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = encode(ckpt);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(&bytes[bytes.len() - CHECKSUM_LEN..]))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
