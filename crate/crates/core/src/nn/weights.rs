//! Named parameter storage and the manifest + raw payload file format.
//!
//! A weight file is a pair: a JSON manifest listing every tensor with its
//! shape and byte range, and a little-endian `f32` payload. Tensor order in
//! the payload follows manifest order. Values are held as `f64` in memory but
//! are always rounded to `f32` on insertion, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    BatchNormParams, ConvParams, LinearParams, MlpLayer, MlpParams, NormParams, BATCH_NORM_EPS,
    LAYER_NORM_EPS,
};
use crate::tensor::{FeatureMap, Matrix};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// How a declared parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Symmetric uniform with half-width `sqrt(6 / (fan_in + fan_out))`.
    Uniform { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamDecl {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        Self {
            name: name.into(),
            shape,
            init,
        }
    }
}

/// Anything that can enumerate the parameters it needs.
pub trait ParamLayout {
    fn param_decls(&self) -> Result<Vec<ParamDecl>>;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightSet {
    entries: BTreeMap<String, Tensor>,
    seed: Option<u64>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Insert a tensor, rounding every value to `f32` precision.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) -> Result<()> {
        let name = name.into();
        if let Some(v) = tensor.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("tensor `{name}` holds non-finite value {v}")));
        }
        for v in &mut tensor.data {
            *v = *v as f32 as f64;
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    fn shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::shape(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        Ok(self.shaped(name, &[len])?.data.clone())
    }

    pub fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::from_vec(rows, cols, self.shaped(name, &[rows, cols])?.data.clone())
    }

    pub fn feature_map(&self, name: &str, c: usize, h: usize, w: usize) -> Result<FeatureMap> {
        FeatureMap::from_vec(c, h, w, self.shaped(name, &[c, h, w])?.data.clone())
    }

    /// `{prefix}.weight` (`out × in`) and `{prefix}.bias`.
    pub fn linear(&self, prefix: &str, out_dim: usize, in_dim: usize) -> Result<LinearParams> {
        LinearParams::new(
            self.matrix(&format!("{prefix}.weight"), out_dim, in_dim)?,
            self.vector(&format!("{prefix}.bias"), out_dim)?,
        )
    }

    /// `{prefix}.{k}.weight/bias` for consecutive widths in `dims`.
    pub fn mlp(&self, prefix: &str, dims: &[usize], relu: &[bool]) -> Result<MlpParams> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                Ok(MlpLayer {
                    linear: self.linear(&format!("{prefix}.{k}"), d[1], d[0])?,
                    relu: relu[k],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::new(layers)
    }

    /// `{prefix}.scale` and `{prefix}.shift`.
    pub fn layer_norm(&self, prefix: &str, dim: usize) -> Result<NormParams> {
        NormParams::new(
            self.vector(&format!("{prefix}.scale"), dim)?,
            self.vector(&format!("{prefix}.shift"), dim)?,
            LAYER_NORM_EPS,
        )
    }

    /// `{prefix}.scale/shift/mean/var`.
    pub fn batch_norm(&self, prefix: &str, dim: usize) -> Result<BatchNormParams> {
        BatchNormParams::new(
            NormParams::new(
                self.vector(&format!("{prefix}.scale"), dim)?,
                self.vector(&format!("{prefix}.shift"), dim)?,
                BATCH_NORM_EPS,
            )?,
            self.vector(&format!("{prefix}.mean"), dim)?,
            self.vector(&format!("{prefix}.var"), dim)?,
        )
    }

    /// `{prefix}.weight` (`out × in × 3 × 3`) and `{prefix}.bias`.
    pub fn conv3x3(&self, prefix: &str, c_out: usize, c_in: usize) -> Result<ConvParams> {
        ConvParams::new(
            c_out,
            c_in,
            self.shaped(&format!("{prefix}.weight"), &[c_out, c_in, 3, 3])?
                .data
                .clone(),
            self.vector(&format!("{prefix}.bias"), c_out)?,
        )
    }

    /// Manifest text and payload bytes for this set.
    pub fn serialize(&self, payload_name: &str) -> Result<(String, Vec<u8>)> {
        let mut payload = Vec::new();
        let mut tensors = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let byte_offset = payload.len() as u64;
            for &v in &t.data {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
            tensors.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: "f32".into(),
                byte_offset,
                byte_length: payload.len() as u64 - byte_offset,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            payload: payload_name.to_string(),
            tensors,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
        Ok((text + "\n", payload))
    }

    /// Rebuild from manifest text and payload bytes.
    pub fn deserialize(manifest_text: &str, payload: &[u8]) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(manifest_text)
            .map_err(|e| Error::format(format!("manifest parse: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported weight format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let mut ws = WeightSet {
            entries: BTreeMap::new(),
            seed: manifest.seed,
        };
        let mut expected_offset = 0u64;
        for e in &manifest.tensors {
            if e.dtype != "f32" {
                return Err(Error::format(format!(
                    "tensor `{}` has dtype `{}`, only f32 is supported",
                    e.name, e.dtype
                )));
            }
            let count: u64 = e.shape.iter().map(|&d| d as u64).product();
            if e.byte_length != count * 4 {
                return Err(Error::format(format!(
                    "tensor `{}` declares shape {:?} ({} bytes) but byte_length {}",
                    e.name,
                    e.shape,
                    count * 4,
                    e.byte_length
                )));
            }
            if e.byte_offset != expected_offset {
                return Err(Error::format(format!(
                    "tensor `{}` starts at byte {} but previous tensor ended at {expected_offset}",
                    e.name, e.byte_offset
                )));
            }
            let end = e.byte_offset + e.byte_length;
            if end > payload.len() as u64 {
                return Err(Error::format(format!(
                    "tensor `{}` needs bytes {}..{end} but payload has {}",
                    e.name,
                    e.byte_offset,
                    payload.len()
                )));
            }
            let bytes = &payload[e.byte_offset as usize..end as usize];
            let data: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            if ws.entries.contains_key(&e.name) {
                return Err(Error::format(format!("duplicate tensor `{}`", e.name)));
            }
            ws.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
            expected_offset = end;
        }
        if expected_offset != payload.len() as u64 {
            return Err(Error::format(format!(
                "payload has {} bytes but manifest covers {expected_offset}",
                payload.len()
            )));
        }
        Ok(ws)
    }

    /// Write `<manifest_path>` and its payload next to it (extension `.bin`).
    pub fn save(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let payload_path = manifest_path.with_extension("bin");
        let payload_name = payload_path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::config("weight manifest path has no file name"))?
            .to_string();
        let (text, payload) = self.serialize(&payload_name)?;
        fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
        fs::write(&payload_path, payload).map_err(|e| Error::io(&payload_path, e))?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    payload: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
    byte_length: u64,
}

/// Read a manifest and the payload it names (relative to the manifest).
pub fn load_weights(manifest_path: impl AsRef<Path>) -> Result<WeightSet> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("manifest parse: {e}")))?;
    let payload_path: PathBuf = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.payload);
    let payload = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    WeightSet::deserialize(&text, &payload)
}

/// Deterministic initialization of every declared parameter.
pub fn init_weights<L: ParamLayout + ?Sized>(layout: &L, seed: u64) -> Result<WeightSet> {
    let decls = layout.param_decls()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = WeightSet {
        entries: BTreeMap::new(),
        seed: Some(seed),
    };
    for d in decls {
        if d.shape.is_empty() || d.shape.contains(&0) {
            return Err(Error::config(format!(
                "parameter `{}` has non-positive dimension in {:?}",
                d.name, d.shape
            )));
        }
        let n: usize = d.shape.iter().product();
        let data = match d.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                (0..n).map(|_| rng.gen_range(-a..=a) as f64).collect()
            }
        };
        if ws.entries.contains_key(&d.name) {
            return Err(Error::config(format!("parameter `{}` declared twice", d.name)));
        }
        ws.insert(d.name, Tensor::new(d.shape, data)?)?;
    }
    Ok(ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy;

    impl ParamLayout for Toy {
        fn param_decls(&self) -> Result<Vec<ParamDecl>> {
            Ok(vec![
                ParamDecl::new("a.weight", vec![4, 3], Init::Uniform { fan_in: 3, fan_out: 4 }),
                ParamDecl::new("a.bias", vec![4], Init::Zeros),
                ParamDecl::new("gamma", vec![4], Init::Zeros),
                ParamDecl::new("beta", vec![2], Init::Ones),
            ])
        }
    }

    struct Bad;

    impl ParamLayout for Bad {
        fn param_decls(&self) -> Result<Vec<ParamDecl>> {
            Ok(vec![ParamDecl::new("w", vec![0, 3], Init::Zeros)])
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_weights(&Toy, 7).unwrap();
        let b = init_weights(&Toy, 7).unwrap();
        assert_eq!(a.serialize("p").unwrap(), b.serialize("p").unwrap());
        let c = init_weights(&Toy, 8).unwrap();
        assert_ne!(a.serialize("p").unwrap().1, c.serialize("p").unwrap().1);
        assert!(a.get("a.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(a.get("beta").unwrap().data(), &[1.0, 1.0]);
        let bound = (6.0f64 / 7.0).sqrt() + 1e-6;
        assert!(a.get("a.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn init_rejects_zero_dimension() {
        assert!(matches!(init_weights(&Bad, 1), Err(Error::Config(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let ws = init_weights(&Toy, 1).unwrap();
        ws.save(&path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, ws);
        assert_eq!(back.seed(), Some(1));
    }

    #[test]
    fn shape_payload_mismatch_is_format_error() {
        let manifest = r#"{"format_version":1,"payload":"p.bin","tensors":[
            {"name":"w","shape":[3,4],"dtype":"f32","byte_offset":0,"byte_length":48}]}"#;
        let payload = vec![0u8; 40];
        assert!(matches!(
            WeightSet::deserialize(manifest, &payload),
            Err(Error::Format(_))
        ));
        let manifest = r#"{"format_version":1,"payload":"p.bin","tensors":[
            {"name":"w","shape":[3,4],"dtype":"f32","byte_offset":0,"byte_length":40}]}"#;
        assert!(matches!(
            WeightSet::deserialize(manifest, &payload),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn non_finite_payload_is_data_error() {
        let manifest = r#"{"format_version":1,"payload":"p.bin","tensors":[
            {"name":"w","shape":[2],"dtype":"f32","byte_offset":0,"byte_length":8}]}"#;
        let mut payload = 1.0f32.to_le_bytes().to_vec();
        payload.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            WeightSet::deserialize(manifest, &payload),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn version_guard() {
        let manifest = r#"{"format_version":99,"payload":"p.bin","tensors":[]}"#;
        assert!(matches!(
            WeightSet::deserialize(manifest, &[]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn missing_name_is_lookup_error() {
        let ws = init_weights(&Toy, 1).unwrap();
        assert!(matches!(ws.get("nope"), Err(Error::MissingWeight(_))));
        assert!(matches!(ws.vector("a.bias", 5), Err(Error::Shape(_))));
    }
}
