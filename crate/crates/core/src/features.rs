//! N-dimensional float32 arrays and their `.atnr` file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ATNR" | u8 version = 1 | u8 dtype = 1 (float32) | u8 ndim | ndim x u64 dims | f32 payload
//! ```

use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"ATNR";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const EXTENSION: &str = "atnr";

/// Row-major float32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArray {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl FeatureArray {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("dims must be positive, got {dims:?}")));
        }
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(FeatureArray { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        FeatureArray {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        FeatureArray {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        FeatureArray::new(dims, self.data)
    }

    /// `(rows, cols)` of a 2-D array.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected 2-D array, got {:?}", self.dims))),
        }
    }

    pub fn at2(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.dims[1] + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Stacks equally shaped arrays along a new leading axis.
    pub fn stack(items: &[FeatureArray]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero arrays".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.dims != first.dims {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    first.dims, item.dims
                )));
            }
            data.extend_from_slice(&item.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        FeatureArray::new(dims, data)
    }

    /// Splits the leading axis back into items.
    pub fn unstack(&self) -> Vec<FeatureArray> {
        let inner: Vec<usize> = if self.dims.len() > 1 {
            self.dims[1..].to_vec()
        } else {
            vec![1]
        };
        let size: usize = inner.iter().product();
        self.data
            .chunks(size)
            .map(|chunk| FeatureArray {
                dims: inner.clone(),
                data: chunk.to_vec(),
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::MalformedFeature(m.to_string());
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(bad("missing ATNR magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(bad(&format!("unsupported dtype {}", bytes[5])));
        }
        let ndim = bytes[6] as usize;
        let header = 7 + 8 * ndim;
        if bytes.len() < header {
            return Err(bad("truncated header"));
        }
        let dims: Vec<usize> = bytes[7..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dims overflow"))?;
        let payload = &bytes[header..];
        if payload.len() != count * 4 {
            return Err(bad(&format!(
                "payload has {} bytes, dims {dims:?} need {}",
                payload.len(),
                count * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        FeatureArray::new(dims, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).at(parent)?;
        }
        std::fs::write(path, self.to_bytes()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes)
    }
}
