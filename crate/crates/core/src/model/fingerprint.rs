use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_shapes, init_params, read_params, write_params, ModelParams, ParamSpec};
use crate::error::{invalid, shape_err, Result};
use crate::io::binfmt::{ByteReader, ByteWriter};
use crate::tensor::{Graph, Real, Tensor, Var};

const MAGIC: &[u8; 8] = b"ARIAFPM1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintConfig {
    /// Side length of the square model input.
    pub input_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    /// Output channels of the three conv stages.
    pub widths: [usize; 3],
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            channels: 3,
            embed_dim: 32,
            widths: [16, 32, 64],
        }
    }
}

impl FingerprintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 8 {
            return Err(invalid!("embed_dim must be >= 8, got {}", self.embed_dim));
        }
        if self.widths.contains(&0) || self.channels == 0 {
            return Err(invalid!("channel widths must be positive"));
        }
        if self.input_size < 4 || self.input_size % 4 != 0 {
            return Err(invalid!("input_size must be a positive multiple of 4, got {}", self.input_size));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.input_size, self.input_size]
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let [w1, w2, w3] = self.widths;
        let c = self.channels;
        vec![
            ParamSpec { name: "conv1.weight", shape: vec![w1, c, 3, 3], fan_in: c * 9 },
            ParamSpec { name: "conv1.bias", shape: vec![w1], fan_in: 0 },
            ParamSpec { name: "conv2.weight", shape: vec![w2, w1, 3, 3], fan_in: w1 * 9 },
            ParamSpec { name: "conv2.bias", shape: vec![w2], fan_in: 0 },
            ParamSpec { name: "conv3.weight", shape: vec![w3, w2, 3, 3], fan_in: w2 * 9 },
            ParamSpec { name: "conv3.bias", shape: vec![w3], fan_in: 0 },
            ParamSpec { name: "fc.weight", shape: vec![self.embed_dim, w3], fan_in: w3 },
            ParamSpec { name: "fc.bias", shape: vec![self.embed_dim], fan_in: 0 },
        ]
    }
}

/// Conv trunk and linear embedding, before normalization.
///
/// `p` holds the bound parameters in [`FingerprintConfig`] order.
pub fn fingerprint_forward_raw<T: Real>(g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
    if p.len() != 8 {
        return Err(shape_err!("fingerprint network needs 8 parameter tensors, got {}", p.len()));
    }
    let h = g.conv2d(x, p[0], p[1], 1, 1)?;
    let h = g.relu(h);
    let h = g.avgpool2d(h, 2)?;
    let h = g.conv2d(h, p[2], p[3], 1, 1)?;
    let h = g.relu(h);
    let h = g.avgpool2d(h, 2)?;
    let h = g.conv2d(h, p[4], p[5], 1, 1)?;
    let h = g.relu(h);
    let h = g.global_avgpool(h)?;
    g.dense(h, p[6], p[7])
}

/// Unit-norm embedding `φ(x)`.
pub fn fingerprint_forward<T: Real>(g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
    let raw = fingerprint_forward_raw(g, p, x)?;
    Ok(g.l2_normalize(raw))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintModel {
    config: FingerprintConfig,
    params: ModelParams<f32>,
}

impl FingerprintModel {
    pub fn init(config: FingerprintConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_specs(), seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: FingerprintConfig, params: ModelParams<f32>) -> Result<Self> {
        config.validate()?;
        check_shapes(&params, &config.param_specs())?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &FingerprintConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<f32> {
        &mut self.params
    }

    pub fn check_input(&self, image: &Tensor<f32>) -> Result<()> {
        if image.shape() != self.config.input_shape() {
            return Err(shape_err!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                self.config.input_shape()
            ));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid!("image values must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Embedding before normalization.
    pub fn embed_raw(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(image)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let out = fingerprint_forward_raw(&mut g, &p, x)?;
        Ok(g.value(out).clone())
    }

    pub fn embed(&self, image: &Tensor<f32>) -> Result<Fingerprint> {
        let raw = self.embed_raw(image)?;
        Ok(Fingerprint::from_raw(&raw))
    }

    /// Resizes to the model input if needed, then embeds.
    pub fn embed_any(&self, image: &Tensor<f32>) -> Result<Fingerprint> {
        let s = self.config.input_size;
        if image.shape()[1..] == [s, s] {
            self.embed(image)
        } else {
            self.embed(&crate::transforms::bilinear_resize(image, s, s)?)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(MAGIC);
        let c = &self.config;
        for v in [c.input_size, c.channels, c.embed_dim, c.widths[0], c.widths[1], c.widths[2]] {
            w.usize(v);
        }
        write_params(&mut w, &self.params);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, MAGIC)?;
        let mut next = || r.usize();
        let config = FingerprintConfig {
            input_size: next()?,
            channels: next()?,
            embed_dim: next()?,
            widths: [next()?, next()?, next()?],
        };
        config.validate()?;
        if config.num_values_bound() > r.remaining() / 4 + 1 {
            return Err(crate::error::format_err!("model file too short for its configuration"));
        }
        let params = read_params(&mut r, &config.param_specs())?;
        r.finish()?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl FingerprintConfig {
    fn num_values_bound(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|s| s.shape.iter().fold(1usize, |a, &d| a.saturating_mul(d)))
            .fold(0usize, usize::saturating_add)
    }
}

/// A unit-norm D-dimensional fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub values: Vec<f32>,
}

impl Fingerprint {
    pub fn from_raw(raw: &Tensor<f32>) -> Self {
        Self {
            values: crate::tensor::ops::l2_normalize(raw).into_data(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_tensor(&self) -> Tensor<f32> {
        Tensor::vector(self.values.clone())
    }
}

/// Sign bits of a fingerprint; bit `i` is set when `values[i] >= 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryHash {
    pub bits: Vec<bool>,
}

impl BinaryHash {
    pub fn from_values(values: &[f32]) -> Self {
        Self {
            bits: values.iter().map(|&v| v >= 0.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bits packed little-endian into 64-bit words.
    pub fn words(&self) -> Vec<u64> {
        self.bits
            .chunks(64)
            .map(|c| {
                c.iter()
                    .enumerate()
                    .fold(0u64, |w, (i, &b)| w | ((b as u64) << i))
            })
            .collect()
    }

    pub fn from_words(words: &[u64], len: usize) -> Self {
        Self {
            bits: (0..len).map(|i| words[i / 64] >> (i % 64) & 1 == 1).collect(),
        }
    }

    pub fn hamming(&self, other: &Self) -> u32 {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count() as u32
    }

    /// Target vector of ±1 values.
    pub fn signs(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
    }
}

pub fn sign_hash(fp: &Fingerprint) -> BinaryHash {
    BinaryHash::from_values(&fp.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64, size: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[3, size, size], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = FingerprintConfig::default();
        let a = FingerprintModel::init(cfg, 7).unwrap();
        let b = FingerprintModel::init(cfg, 7).unwrap();
        let c = FingerprintModel::init(cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn kaiming_std() {
        let model = FingerprintModel::init(FingerprintConfig::default(), 3).unwrap();
        let w = model.params().get("conv3.weight").unwrap();
        assert!(w.len() >= 1000);
        let fan_in = 32.0 * 9.0;
        let mean = w.sum_f64() / w.len() as f64;
        let var = w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = (2.0f64 / fan_in).sqrt();
        assert!((var.sqrt() - target).abs() / target < 0.2);
    }

    #[test]
    fn embed_is_unit_and_deterministic() {
        let model = FingerprintModel::init(FingerprintConfig::default(), 1).unwrap();
        for s in 0..5 {
            let x = image(s, 32);
            let a = model.embed(&x).unwrap();
            let n: f64 = a.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
            assert_eq!(a, model.embed(&x).unwrap());
        }
    }

    #[test]
    fn embed_rejects_bad_inputs() {
        let model = FingerprintModel::init(FingerprintConfig::default(), 1).unwrap();
        assert!(model.embed(&image(0, 16)).is_err());
        let mut x = image(0, 32);
        x.data_mut()[5] = 1.5;
        assert!(model.embed(&x).is_err());
    }

    #[test]
    fn sign_hash_cases() {
        let fp = Fingerprint { values: vec![0.2, -0.3, 0.0] };
        assert_eq!(sign_hash(&fp).bits, vec![true, false, true]);
        let pos = Fingerprint { values: vec![0.1; 9] };
        assert!(sign_hash(&pos).bits.iter().all(|&b| b));
        let raw = Tensor::vector(vec![0.5f32, -1.0, 0.25, -0.1]);
        let scaled = raw.map(|v| v * 2.0);
        assert_eq!(
            sign_hash(&Fingerprint::from_raw(&raw)),
            sign_hash(&Fingerprint::from_raw(&scaled))
        );
    }

    #[test]
    fn hash_words_round_trip() {
        let h = BinaryHash::from_values(&(0..70).map(|i| (i % 3) as f32 - 1.0).collect::<Vec<_>>());
        assert_eq!(BinaryHash::from_words(&h.words(), 70), h);
    }

    #[test]
    fn serialization_round_trip() {
        let model = FingerprintModel::init(FingerprintConfig::default(), 11).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..8], b"ARIAFPM1");
        let back = FingerprintModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);
        assert!(FingerprintModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FingerprintModel::from_bytes(&bad).is_err());
    }
}
