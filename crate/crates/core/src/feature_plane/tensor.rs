use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

/// Dense row-major array of 64-bit reals, rank 1 to 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRecord")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<TensorRecord> for Tensor {
    type Error = Error;

    fn try_from(r: TensorRecord) -> Result<Self> {
        Tensor::new(r.shape, r.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 5 {
            return Err(self::shape(format!("unsupported rank {}", shape.len())));
        }
        if shape.contains(&0) {
            return Err(self::shape(format!("zero-sized axis in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(self::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("tensor entries must be finite".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    /// Tensor filled by evaluating `f` at every flat offset.
    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Writes the little-endian fixture format: rank, dims (u32 each), then
    /// the f64 payload.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            let d = u32::try_from(d).map_err(|_| shape("axis exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank == 0 || rank > 5 {
            return Err(shape(format!("unsupported rank {rank} in tensor fixture")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut word)?;
            dims.push(u32::from_le_bytes(word) as usize);
        }
        let n: usize = dims.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::new(dims, data)
    }
}

/// Rank-4 feature volume laid out as (C, T, H, W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor", into = "Tensor")]
pub struct FeatureVolume(Tensor);

impl TryFrom<Tensor> for FeatureVolume {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        FeatureVolume::from_tensor(t)
    }
}

impl From<FeatureVolume> for Tensor {
    fn from(v: FeatureVolume) -> Self {
        v.0
    }
}

impl FeatureVolume {
    pub fn new(c: usize, t: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self(Tensor::new(vec![c, t, h, w], data)?))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(shape(format!("feature volume needs rank 4, got {}", t.rank())));
        }
        Ok(Self(t))
    }

    pub fn from_fn(
        (c, t, h, w): (usize, usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(c * t * h * w);
        for ci in 0..c {
            for ti in 0..t {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f(ci, ti, hi, wi));
                    }
                }
            }
        }
        Self::new(c, t, h, w, data)
    }

    /// `(C, T, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn get(&self, c: usize, t: usize, h: usize, w: usize) -> f64 {
        let (_, tt, hh, ww) = self.dims();
        self.0.data[((c * tt + t) * hh + h) * ww + w]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    /// Temporal slice `t` as a (C, H, W) map.
    pub fn slice(&self, t: usize) -> FeatureMap {
        let (c, _, h, w) = self.dims();
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    data.push(self.get(ci, t, hi, wi));
                }
            }
        }
        FeatureMap(Tensor {
            shape: vec![c, h, w],
            data,
        })
    }
}

/// Rank-2 temporal feature laid out as (C, T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor", into = "Tensor")]
pub struct TemporalFeature(Tensor);

impl TryFrom<Tensor> for TemporalFeature {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        TemporalFeature::from_tensor(t)
    }
}

impl From<TemporalFeature> for Tensor {
    fn from(v: TemporalFeature) -> Self {
        v.0
    }
}

impl TemporalFeature {
    pub fn new(c: usize, t: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self(Tensor::new(vec![c, t], data)?))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(shape(format!("temporal feature needs rank 2, got {}", t.rank())));
        }
        Ok(Self(t))
    }

    /// `(C, T)`.
    pub fn dims(&self) -> (usize, usize) {
        let s = self.0.shape();
        (s[0], s[1])
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.0.data[c * self.dims().1 + t]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Rank-3 spatial feature map laid out as (C, H, W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor", into = "Tensor")]
pub struct FeatureMap(Tensor);

impl TryFrom<Tensor> for FeatureMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        FeatureMap::from_tensor(t)
    }
}

impl From<FeatureMap> for Tensor {
    fn from(v: FeatureMap) -> Self {
        v.0
    }
}

impl FeatureMap {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self(Tensor::new(vec![c, h, w], data)?))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(shape(format!("feature map needs rank 3, got {}", t.rank())));
        }
        Ok(Self(t))
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2])
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        let (_, hh, ww) = self.dims();
        self.0.data[(c * hh + h) * ww + w]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }
}
