//! Binary checkpoint format.
//!
//! ```text
//! "BVCK" | version: u8 | count: u32
//! repeated count times:
//!   name_len: u32 | name: utf-8 | dtype: u8 (0 = f32, 1 = f64) | rank: u8 | dims: rank × u64
//!   payload: product(dims) little-endian elements
//! ```
//! Integers are little-endian. Adam state, when present, is stored as
//! `adam.m.<name>`, `adam.v.<name>` and a one-element `adam.step` tensor.

use crate::adam::AdamState;
use crate::error::CheckpointError;
use crate::params::{ParamKind, ParamStore};
use crate::real::{DType, Real};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"BVCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CkData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: CkData,
}

impl CkTensor {
    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => CkData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => CkData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            dims: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data: Vec<T> = match &self.data {
            CkData::F32(v) => v.iter().map(|&x| T::cast(x as f64)).collect(),
            CkData::F64(v) => v.iter().map(|&x| T::cast(x)).collect(),
        };
        Tensor::from_vec(&self.dims, data).expect("checkpoint dims validated on read")
    }
}

/// Ordered tensor table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<CkTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&CkTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, adam: Option<&AdamState<T>>) -> Self {
        let mut tensors: Vec<CkTensor> = store
            .iter()
            .map(|(_, e)| CkTensor::from_tensor(e.name.clone(), &e.tensor))
            .collect();
        if let Some(adam) = adam {
            for (id, e) in store.iter() {
                if let (Some(m), Some(v)) = (&adam.m[id.index()], &adam.v[id.index()]) {
                    tensors.push(CkTensor::from_tensor(format!("adam.m.{}", e.name), m));
                    tensors.push(CkTensor::from_tensor(format!("adam.v.{}", e.name), v));
                }
            }
            tensors.push(CkTensor {
                name: "adam.step".into(),
                dims: vec![1],
                data: CkData::F64(vec![adam.step as f64]),
            });
        }
        Self { tensors }
    }

    /// Overwrites every tensor in `store` with the same-named checkpoint entry.
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.name.clone())).collect();
        for (id, name) in ids {
            let ck = self.get(&name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let expected = store.get(id).shape().to_vec();
            if ck.dims != expected {
                return Err(CheckpointError::Shape {
                    name,
                    found: ck.dims.clone(),
                    expected,
                });
            }
            *store.get_mut(id) = ck.to_tensor();
        }
        Ok(())
    }

    /// Restores Adam moments saved by [`Checkpoint::from_store`], if any.
    pub fn adam_state<T: Real>(&self, store: &ParamStore<T>) -> Result<Option<AdamState<T>>, CheckpointError> {
        let Some(step) = self.get("adam.step") else {
            return Ok(None);
        };
        let mut state = AdamState::new(store);
        state.step = step.to_tensor::<f64>().data()[0] as u64;
        for (id, e) in store.iter() {
            if e.kind != ParamKind::Trainable {
                continue;
            }
            for (prefix, slot) in [("adam.m.", &mut state.m), ("adam.v.", &mut state.v)] {
                let key = format!("{prefix}{}", e.name);
                let ck = self.get(&key).ok_or(CheckpointError::Missing(key))?;
                slot[id.index()] = Some(ck.to_tensor());
            }
        }
        Ok(Some(state))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let dtype = match t.data {
                CkData::F32(_) => DType::F32,
                CkData::F64(_) => DType::F64,
            };
            out.push(dtype.code());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                CkData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                CkData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not utf-8".into()))?;
            let code = r.take(1, "dtype")?[0];
            let dtype = DType::from_code(code).ok_or(CheckpointError::DType(code))?;
            let rank = r.take(1, "rank")?[0] as usize;
            if rank > 4 {
                return Err(CheckpointError::Malformed(format!("rank {rank} for {name:?}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8, "dims")?.try_into().unwrap());
                dims.push(usize::try_from(d).map_err(|_| CheckpointError::Malformed("dim overflow".into()))?);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed("element count overflow".into()))?;
            let payload = r.take(
                numel
                    .checked_mul(dtype.size())
                    .ok_or_else(|| CheckpointError::Malformed("payload overflow".into()))?,
                "payload",
            )?;
            let data = match dtype {
                DType::F32 => CkData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => CkData::F64(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            tensors.push(CkTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
