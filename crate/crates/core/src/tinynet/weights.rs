//! Named-tensor store and its binary container.
//!
//! Layout (little-endian): the magic `BKW1`, a `u32` tensor count, then for
//! each tensor a `u16` name length, the UTF-8 name, a `u8` rank, `rank`
//! `u32` dimensions and the row-major `f32` payload. Tensors are written in
//! name order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::unet::{layer_plan, NetSpec};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"BKW1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                format!("{dims:?} ({n} values)"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, WeightTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: WeightTensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateTensor(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&WeightTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Checks that every layer of `spec` has weights and biases of the right
    /// shape and that nothing else is stored.
    pub fn validate(&self, spec: &NetSpec) -> Result<()> {
        let plan = layer_plan(spec)?;
        for layer in &plan {
            for (name, dims) in [
                (layer.weight_name(), layer.weight_dims()),
                (layer.bias_name(), vec![layer.out_channels]),
            ] {
                let t = self.get(&name)?;
                if t.dims != dims {
                    return Err(Error::WeightShape {
                        name,
                        expected: dims,
                        found: t.dims.clone(),
                    });
                }
            }
        }
        if self.tensors.len() != plan.len() * 2 {
            let known: Vec<String> = plan
                .iter()
                .flat_map(|l| [l.weight_name(), l.bias_name()])
                .collect();
            let extra = self
                .tensors
                .keys()
                .find(|k| !known.contains(k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::WeightFormat(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.parameter_count() * 4);
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r
            .take(4)
            .map_err(|_| Error::WeightFormat("file shorter than the magic".into()))?;
        if magic != WEIGHT_MAGIC {
            return Err(Error::WeightFormat(format!("bad magic {magic:?}")));
        }
        let count = r
            .u32()
            .map_err(|_| Error::WeightFormat("missing tensor count".into()))?;
        let mut store = WeightStore::new();
        for index in 0..count {
            let unnamed = || Error::WeightTruncated {
                tensor: format!("#{index}"),
            };
            let len = r.u16().map_err(|_| unnamed())? as usize;
            let name = std::str::from_utf8(r.take(len).map_err(|_| unnamed())?)
                .map_err(|_| Error::WeightFormat(format!("tensor #{index} name is not UTF-8")))?
                .to_string();
            let truncated = || Error::WeightTruncated {
                tensor: name.clone(),
            };
            let rank = r.u8().map_err(|_| truncated())? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32().map_err(|_| truncated())? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| {
                    Error::WeightFormat(format!("tensor `{name}` has an absurd shape {dims:?}"))
                })?;
            let payload = r.take(n * 4).map_err(|_| truncated())?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(name, WeightTensor { dims, data })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::WeightFormat(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ()> {
        let end = self.pos.checked_add(n).ok_or(())?;
        let s = self.bytes.get(self.pos..end).ok_or(())?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, ()> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, ()> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> std::result::Result<u32, ()> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_weights(w: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, w.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightStore::from_bytes(&bytes)
}

/// Uniform `(−s, s)` initialisation with `s = sqrt(1 / fan_in)` for both the
/// kernels and the biases of every layer. The same seed always yields the
/// same store.
pub fn random_weights(spec: &NetSpec, seed: u64) -> Result<WeightStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for layer in layer_plan(spec)? {
        let s = (1.0 / layer.fan_in() as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| loop {
                    let v = rng.gen_range(-s..s) as f32;
                    if (v as f64).abs() < s {
                        break v;
                    }
                })
                .collect()
        };
        let dims = layer.weight_dims();
        let n = dims.iter().product();
        store.insert(layer.weight_name(), WeightTensor::new(dims, draw(n))?)?;
        store.insert(
            layer.bias_name(),
            WeightTensor::new(vec![layer.out_channels], draw(layer.out_channels))?,
        )?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_init() {
        let spec = NetSpec::default();
        let a = random_weights(&spec, 7).unwrap();
        let b = random_weights(&spec, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = random_weights(&spec, 8).unwrap();
        assert_ne!(a, c);
        a.validate(&spec).unwrap();
    }

    #[test]
    fn init_bound() {
        let spec = NetSpec::default();
        let store = random_weights(&spec, 1).unwrap();
        for layer in layer_plan(&spec).unwrap() {
            let s = (1.0 / layer.fan_in() as f64).sqrt();
            for name in [layer.weight_name(), layer.bias_name()] {
                assert!(store
                    .get(&name)
                    .unwrap()
                    .data()
                    .iter()
                    .all(|&v| (v as f64).abs() < s));
            }
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = random_weights(&NetSpec::default(), 3).unwrap();
        let back = WeightStore::from_bytes(&store.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), store.to_bytes());
        for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &WeightTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
    }

    #[test]
    fn container_layout() {
        let mut s = WeightStore::new();
        s.insert("ab", WeightTensor::new(vec![2], vec![1.0, -2.5]).unwrap())
            .unwrap();
        let b = s.to_bytes();
        let mut expected = b"BKW1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn format_errors_are_distinct() {
        let store = random_weights(&NetSpec::default(), 3).unwrap();
        let mut bytes = store.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            WeightStore::from_bytes(&bad),
            Err(Error::WeightFormat(_))
        ));

        let cut = &bytes[..bytes.len() - 3];
        match WeightStore::from_bytes(cut) {
            Err(Error::WeightTruncated { tensor }) => {
                assert_eq!(tensor, store.iter().last().unwrap().0)
            }
            other => panic!("expected truncation, got {other:?}"),
        }

        let mut dup = WeightStore::new();
        dup.insert("a", WeightTensor::new(vec![1], vec![0.0]).unwrap())
            .unwrap();
        let mut raw = dup.to_bytes();
        raw[4..8].copy_from_slice(&2u32.to_le_bytes());
        let tail = raw[8..].to_vec();
        raw.extend_from_slice(&tail);
        assert!(matches!(
            WeightStore::from_bytes(&raw),
            Err(Error::DuplicateTensor(_))
        ));

        bytes.push(0);
        assert!(matches!(
            WeightStore::from_bytes(&bytes),
            Err(Error::WeightFormat(_))
        ));
    }

    #[test]
    fn validation_against_spec() {
        let spec = NetSpec::default();
        let store = random_weights(&spec, 0).unwrap();
        let wider = NetSpec {
            base_channels: 8,
            ..spec
        };
        assert!(matches!(
            store.validate(&wider),
            Err(Error::WeightShape { .. })
        ));
        let empty = WeightStore::new();
        assert!(matches!(
            empty.validate(&spec),
            Err(Error::MissingWeight(_))
        ));
        let mut extra = store.clone();
        extra
            .insert("zzz", WeightTensor::new(vec![1], vec![0.0]).unwrap())
            .unwrap();
        assert!(matches!(extra.validate(&spec), Err(Error::WeightFormat(_))));
    }
}
