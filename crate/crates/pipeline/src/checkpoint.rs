//! Named-tensor checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSCG"  u32 version=1  u32 count
//! count × { u32 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64), u8 ndim,
//!           u32 dims[ndim], payload (row-major) }
//! u64 metadata_len, metadata (UTF-8)
//! ```

use std::path::Path;

use mscgm_core::{DType, Real, Tensor};
use mscgm_nn::{Network, NetworkState};

use crate::error::{PipelineError, Result};

pub const MAGIC: &[u8; 4] = b"MSCG";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            TensorData::F32(t) => f32::to_le_bytes_vec(t.data()),
            TensorData::F64(t) => f64::to_le_bytes_vec(t.data()),
        }
    }

    /// Converts to `S`, exactly when the stored dtype matches.
    pub fn to_tensor<S: Real>(&self) -> Tensor<S> {
        match self {
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.cast(),
        }
    }

    pub fn from_tensor<S: Real>(t: &Tensor<S>) -> Self {
        match S::DTYPE {
            DType::F32 => TensorData::F32(t.cast()),
            DType::F64 => TensorData::F64(t.cast()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub data: TensorData,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub metadata: String,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(PipelineError::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn decode<S: Real>(bytes: &[u8], shape: &[usize]) -> Result<Tensor<S>> {
    let size = S::DTYPE.size_of();
    let data = bytes.chunks_exact(size).map(S::from_le_chunk).collect();
    Ok(Tensor::new(shape, data)?)
}

impl Checkpoint {
    pub fn new(metadata: String) -> Self {
        Self {
            tensors: Vec::new(),
            metadata,
        }
    }

    pub fn push<S: Real>(&mut self, name: impl Into<String>, t: &Tensor<S>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            data: TensorData::from_tensor(t),
        });
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.dtype().code());
            out.push(t.data.shape().len() as u8);
            for &d in t.data.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&t.data.payload());
        }
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            r.pos = 0;
            return r.fail("bad magic, expected \"MSCG\"");
        }
        let version = r.u32("version")?;
        if version != VERSION {
            r.pos -= 4;
            return r.fail(format!("unsupported version {version}, expected {VERSION}"));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let len = r.u32("name length")? as usize;
            let start = r.pos;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| PipelineError::Format {
                    offset: start as u64,
                    message: format!("tensor {i}: name is not UTF-8"),
                })?
                .to_string();
            let code_pos = r.pos;
            let code = r.u8("dtype")?;
            let Some(dtype) = DType::from_code(code) else {
                r.pos = code_pos;
                return r.fail(format!("tensor '{name}': unknown dtype code {code}"));
            };
            let ndim = r.u8("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dimension")? as usize);
            }
            if ndim == 0 || shape.contains(&0) {
                return r.fail(format!("tensor '{name}': invalid shape {shape:?}"));
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size_of()));
            let Some(nbytes) = numel else {
                return r.fail(format!("tensor '{name}': shape {shape:?} overflows"));
            };
            let payload = r.take(nbytes, &format!("payload of '{name}'"))?;
            let data = match dtype {
                DType::F32 => TensorData::F32(decode(payload, &shape)?),
                DType::F64 => TensorData::F64(decode(payload, &shape)?),
            };
            tensors.push(NamedTensor { name, data });
        }
        let mlen = r.u64("metadata length")? as usize;
        let start = r.pos;
        let metadata = std::str::from_utf8(r.take(mlen, "metadata")?)
            .map_err(|_| PipelineError::Format {
                offset: start as u64,
                message: "metadata is not UTF-8".into(),
            })?
            .to_string();
        if r.pos != bytes.len() {
            return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| PipelineError::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::file(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| PipelineError::file(path, e))
    }

    /// Stores parameters, EMA copy and Adam moments under `prefix/…`.
    pub fn push_network<S: Real>(&mut self, prefix: &str, net: &Network<S>) {
        let st = net.state();
        let names = net.param_names();
        for (group, list) in [
            ("param", &st.params),
            ("ema", &st.ema),
            ("adam_m", &st.adam_m),
            ("adam_v", &st.adam_v),
        ] {
            for (name, t) in names.iter().zip(list) {
                self.push(format!("{prefix}/{group}/{name}"), t);
            }
        }
        let step = Tensor::new(&[1], vec![st.step as f64]).expect("one element");
        self.push(format!("{prefix}/step"), &step);
    }

    /// Restores what [`Checkpoint::push_network`] stored; every tensor must
    /// be present with the network's declared shape.
    pub fn restore_network<S: Real>(&self, prefix: &str, net: &mut Network<S>) -> Result<()> {
        let specs = net.graph().params().to_vec();
        let mut lists: [Vec<Tensor<S>>; 4] = Default::default();
        for (slot, group) in ["param", "ema", "adam_m", "adam_v"].iter().enumerate() {
            for spec in &specs {
                let name = format!("{prefix}/{group}/{}", spec.name);
                let t = self
                    .get(&name)
                    .ok_or_else(|| PipelineError::Config(format!("checkpoint lacks tensor '{name}'")))?;
                if t.shape() != spec.shape.as_slice() {
                    return Err(PipelineError::Config(format!(
                        "tensor '{name}' has shape {:?}, network expects {:?}",
                        t.shape(),
                        spec.shape
                    )));
                }
                lists[slot].push(t.to_tensor());
            }
        }
        let step = self
            .get(&format!("{prefix}/step"))
            .map(|t| t.to_tensor::<f64>().data()[0] as u64)
            .unwrap_or(0);
        let [params, ema, adam_m, adam_v] = lists;
        net.load_state(NetworkState {
            params,
            ema,
            adam_m,
            adam_v,
            step,
        })?;
        Ok(())
    }
}
