//! Named parameter blobs and the bit-exact weight file format.
//!
//! Layout: magic `FCNW`, version (u32 LE, currently 1), layer count
//! (u32 LE); per layer a length-prefixed UTF-8 name (u16 LE), a blob count
//! (u8), and per blob a rank (u8), the dims (u32 LE each), then the values
//! as IEEE-754 binary32 little-endian in row-major order. Every store
//! carries a rank-4 weight blob and a rank-1 bias blob per layer.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetError, NetworkSpec};
use crate::graph::ParamSource;
use crate::tensor::{Scalar, Shape, Tensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"FCNW";
const WEIGHT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

/// Map from layer name to parameter blobs, iterated in sorted-name order so
/// every traversal (updates, serialization) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore<T = f32> {
    params: BTreeMap<String, LayerParams<T>>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        WeightStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, weight: Tensor<T>, bias: Vec<T>) {
        self.params.insert(name.into(), LayerParams { weight, bias });
    }

    pub fn get(&self, name: &str) -> Option<&LayerParams<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut LayerParams<T>> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LayerParams<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut LayerParams<T>)> {
        self.params.iter_mut()
    }

    /// Replaces entries present in `other`, leaving the rest untouched.
    pub fn overlay(&mut self, other: WeightStore<T>) {
        for (name, params) in other.params {
            self.params.insert(name, params);
        }
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            params: self
                .params
                .iter()
                .map(|(name, p)| {
                    (
                        name.clone(),
                        LayerParams {
                            weight: p.weight.cast::<U>(),
                            bias: p.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Checks that every parametric layer of `spec` is present with the
    /// resolved shape.
    pub fn validate_against(&self, spec: &NetworkSpec) -> Result<(), NetError> {
        let resolved = spec.resolve()?;
        for (layer, r) in spec.layers.iter().zip(&resolved.layers) {
            let Some(shape) = r.weight_shape else { continue };
            let params = self
                .get(&layer.name)
                .ok_or_else(|| NetError::MissingLayer(layer.name.clone()))?;
            if params.weight.shape() != shape || params.bias.len() != r.bias_len {
                return Err(NetError::ShapeConflict {
                    layer: layer.name.clone(),
                    expected: format!("{shape} + bias {}", r.bias_len),
                    found: format!("{} + bias {}", params.weight.shape(), params.bias.len()),
                });
            }
        }
        Ok(())
    }
}

impl<T: Scalar> ParamSource<T> for WeightStore<T> {
    fn params(&self, name: &str) -> Option<(&Tensor<T>, &[T])> {
        self.params.get(name).map(|p| (&p.weight, p.bias.as_slice()))
    }
}

impl WeightStore<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NetError> {
        w.write_all(WEIGHT_MAGIC)?;
        w.write_all(&WEIGHT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, p) in &self.params {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
            w.write_all(name_bytes)?;
            w.write_all(&[2u8])?; // weight + bias
            let ws = p.weight.shape();
            w.write_all(&[4u8])?;
            for dim in [ws.n, ws.c, ws.h, ws.w] {
                w.write_all(&(dim as u32).to_le_bytes())?;
            }
            for v in p.weight.data() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[1u8])?;
            w.write_all(&(p.bias.len() as u32).to_le_bytes())?;
            for v in &p.bias {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NetError> {
        let bad = |msg: &str| NetError::WeightFormat(msg.to_string());
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != WEIGHT_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = read_u32(r, "version")?;
        if version != WEIGHT_VERSION {
            return Err(NetError::WeightFormat(format!(
                "unsupported version {version}"
            )));
        }
        let layer_count = read_u32(r, "layer count")?;
        let mut store = WeightStore::new();
        for _ in 0..layer_count {
            let name_len = read_u16(r, "name length")? as usize;
            let mut name_bytes = vec![0u8; name_len];
            read_exact(r, &mut name_bytes, "layer name")?;
            let name = String::from_utf8(name_bytes).map_err(|_| bad("name is not UTF-8"))?;
            let mut blob_count = [0u8; 1];
            read_exact(r, &mut blob_count, "blob count")?;
            if blob_count[0] != 2 {
                return Err(NetError::WeightFormat(format!(
                    "layer {name}: expected 2 blobs, found {}",
                    blob_count[0]
                )));
            }
            let weight_dims = read_blob_dims(r, 4, &name)?;
            let shape = Shape::new(weight_dims[0], weight_dims[1], weight_dims[2], weight_dims[3]);
            let weight_data = read_f32s(r, shape.numel(), &name)?;
            let weight = Tensor::from_vec(shape, weight_data)
                .map_err(|e| NetError::WeightFormat(format!("layer {name}: {e}")))?;
            let bias_dims = read_blob_dims(r, 1, &name)?;
            let bias = read_f32s(r, bias_dims[0], &name)?;
            store.insert(name, weight, bias);
        }
        Ok(store)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), NetError> {
    r.read_exact(buf)
        .map_err(|_| NetError::WeightFormat(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, NetError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16, NetError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_blob_dims(r: &mut impl Read, expect_rank: u8, layer: &str) -> Result<Vec<usize>, NetError> {
    let mut rank = [0u8; 1];
    read_exact(r, &mut rank, "blob rank")?;
    if rank[0] != expect_rank {
        return Err(NetError::WeightFormat(format!(
            "layer {layer}: expected rank-{expect_rank} blob, found rank {}",
            rank[0]
        )));
    }
    (0..rank[0])
        .map(|_| read_u32(r, "blob dim").map(|v| v as usize))
        .collect()
}

fn read_f32s(r: &mut impl Read, count: usize, layer: &str) -> Result<Vec<f32>, NetError> {
    let mut bytes = vec![0u8; count * 4];
    read_exact(r, &mut bytes, &format!("values of layer {layer}"))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Which layers a non-strict load carried over, and which it left for the
/// caller to initialize.
#[derive(Clone, Debug, Default)]
pub struct TransplantReport {
    pub transplanted: Vec<String>,
    pub skipped: Vec<String>,
}

/// Loads weights for `spec` from `path`.
///
/// Strict mode requires every parametric layer to be present with matching
/// shapes. Non-strict mode copies name-and-shape-matching layers only and
/// reports both sets, enabling partial transplant across class counts.
pub fn load_weights(
    path: impl AsRef<Path>,
    spec: &NetworkSpec,
    strict: bool,
) -> Result<(WeightStore<f32>, TransplantReport), NetError> {
    let file_store = WeightStore::<f32>::load(path)?;
    let resolved = spec.resolve()?;
    let mut out = WeightStore::new();
    let mut report = TransplantReport::default();
    for (layer, r) in spec.layers.iter().zip(&resolved.layers) {
        let Some(shape) = r.weight_shape else { continue };
        match file_store.get(&layer.name) {
            Some(p) if p.weight.shape() == shape && p.bias.len() == r.bias_len => {
                out.insert(layer.name.clone(), p.weight.clone(), p.bias.clone());
                report.transplanted.push(layer.name.clone());
            }
            Some(p) if strict => {
                return Err(NetError::ShapeConflict {
                    layer: layer.name.clone(),
                    expected: format!("{shape} + bias {}", r.bias_len),
                    found: format!("{} + bias {}", p.weight.shape(), p.bias.len()),
                });
            }
            None if strict => return Err(NetError::MissingLayer(layer.name.clone())),
            _ => report.skipped.push(layer.name.clone()),
        }
    }
    Ok((out, report))
}
