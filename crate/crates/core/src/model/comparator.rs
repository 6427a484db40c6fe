use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_shapes, init_params, read_params, write_params, ModelParams, ParamSpec};
use crate::error::{format_err, invalid, shape_err, Result};
use crate::io::binfmt::{ByteReader, ByteWriter};
use crate::tensor::{ops, Graph, Real, Tensor, Var};

const MAGIC: &[u8; 8] = b"ARIACMP1";

pub const NUM_CLASSES: usize = 3;
pub const HEATMAP_GRID: usize = 7;
pub const HEATMAP_CELLS: usize = HEATMAP_GRID * HEATMAP_GRID;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorConfig {
    pub input_size: usize,
    pub channels: usize,
    pub widths: [usize; 3],
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            channels: 3,
            widths: [16, 32, 64],
        }
    }
}

impl ComparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.channels == 0 {
            return Err(invalid!("channel widths must be positive"));
        }
        if self.input_size < 4 || self.input_size % 4 != 0 {
            return Err(invalid!("input_size must be a positive multiple of 4, got {}", self.input_size));
        }
        if self.input_size > 4096 || self.widths.iter().any(|&w| w > 4096) {
            return Err(invalid!("comparator dimensions too large"));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.input_size, self.input_size]
    }

    fn feature_len(&self) -> usize {
        let s = self.input_size / 4;
        self.widths[2] * s * s
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let [w1, w2, w3] = self.widths;
        let c = 2 * self.channels;
        let f = self.feature_len();
        vec![
            ParamSpec { name: "conv1.weight", shape: vec![w1, c, 3, 3], fan_in: c * 9 },
            ParamSpec { name: "conv1.bias", shape: vec![w1], fan_in: 0 },
            ParamSpec { name: "conv2.weight", shape: vec![w2, w1, 3, 3], fan_in: w1 * 9 },
            ParamSpec { name: "conv2.bias", shape: vec![w2], fan_in: 0 },
            ParamSpec { name: "conv3.weight", shape: vec![w3, w2, 3, 3], fan_in: w2 * 9 },
            ParamSpec { name: "conv3.bias", shape: vec![w3], fan_in: 0 },
            ParamSpec { name: "cls.weight", shape: vec![NUM_CLASSES, w3], fan_in: w3 },
            ParamSpec { name: "cls.bias", shape: vec![NUM_CLASSES], fan_in: 0 },
            ParamSpec { name: "heat.weight", shape: vec![HEATMAP_CELLS, f], fan_in: f },
            ParamSpec { name: "heat.bias", shape: vec![HEATMAP_CELLS], fan_in: 0 },
        ]
    }
}

/// Graph nodes produced by the comparator forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ComparatorOutputs {
    pub logits: Var,
    /// Sigmoid heatmap, flattened 7×7.
    pub heatmap: Var,
}

/// Channel-concatenates the pair and runs the trunk and both heads.
pub fn comparator_trunk<T: Real>(g: &mut Graph<T>, p: &[Var], a: Var, b: Var) -> Result<ComparatorOutputs> {
    if p.len() != 10 {
        return Err(shape_err!("comparator needs 10 parameter tensors, got {}", p.len()));
    }
    let x = g.concat(&[a, b])?;
    let h = g.conv2d(x, p[0], p[1], 1, 1)?;
    let h = g.relu(h);
    let h = g.avgpool2d(h, 2)?;
    let h = g.conv2d(h, p[2], p[3], 1, 1)?;
    let h = g.relu(h);
    let h = g.avgpool2d(h, 2)?;
    let h = g.conv2d(h, p[4], p[5], 1, 1)?;
    let features = g.relu(h);
    let pooled = g.global_avgpool(features)?;
    let logits = g.dense(pooled, p[6], p[7])?;
    let n = g.value(features).len();
    let flat = g.reshape(features, &[n])?;
    let heat = g.dense(flat, p[8], p[9])?;
    let heatmap = g.sigmoid(heat);
    Ok(ComparatorOutputs { logits, heatmap })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparatorPrediction {
    pub class_probs: [f32; NUM_CLASSES],
    /// Row-major 7×7 grid in [0, 1].
    pub heatmap: Vec<f32>,
}

impl ComparatorPrediction {
    pub fn predicted_class(&self) -> usize {
        (0..NUM_CLASSES)
            .max_by(|&a, &b| self.class_probs[a].total_cmp(&self.class_probs[b]).then(b.cmp(&a)))
            .expect("nonempty")
    }
}

/// Relationship label of an image pair.
///
/// Class 0: same image, non-editorial change. Class 1: same image with an
/// editorial change (nonzero heatmap). Class 2: different images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub class: usize,
    pub heatmap: Vec<f32>,
}

impl PairLabel {
    pub fn new(class: usize, heatmap: Vec<f32>) -> Result<Self> {
        if class >= NUM_CLASSES {
            return Err(invalid!("class {class} out of range"));
        }
        if heatmap.len() != HEATMAP_CELLS {
            return Err(shape_err!("heatmap must have {HEATMAP_CELLS} cells, got {}", heatmap.len()));
        }
        if heatmap.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid!("heatmap values must lie in [0, 1]"));
        }
        if class != 1 && heatmap.iter().any(|&v| v != 0.0) {
            return Err(invalid!("class {class} requires an all-zero heatmap"));
        }
        Ok(Self { class, heatmap })
    }

    pub fn unedited(class: usize) -> Result<Self> {
        Self::new(class, vec![0.0; HEATMAP_CELLS])
    }

    pub fn has_heatmap(&self) -> bool {
        self.heatmap.iter().any(|&v| v != 0.0)
    }
}

/// `w_c·CE + w_t·(1 − cos(heatmap, t))`; the heatmap term is dropped when
/// `t` is all zero.
pub fn comparator_loss(pred: &ComparatorPrediction, label: &PairLabel, w_c: f64, w_t: f64) -> f64 {
    let p = (pred.class_probs[label.class] as f64).max(f64::MIN_POSITIVE);
    let mut loss = -w_c * p.ln();
    if label.has_heatmap() {
        let cos = ops::cosine_similarity(
            &Tensor::vector(pred.heatmap.clone()),
            &Tensor::vector(label.heatmap.clone()),
        )
        .expect("heatmaps have equal length");
        loss += w_t * (1.0 - cos as f64);
    }
    loss
}

/// Graph form of [`comparator_loss`] on the raw logits.
pub fn comparator_loss_graph<T: Real>(
    g: &mut Graph<T>,
    out: ComparatorOutputs,
    label: &PairLabel,
    w_c: f64,
    w_t: f64,
) -> Result<Var> {
    let logp = g.log_softmax(out.logits);
    let picked = g.select(logp, label.class)?;
    let ce = g.scale(picked, -w_c);
    if !label.has_heatmap() {
        return Ok(ce);
    }
    let t = g.constant(Tensor::vector(
        label.heatmap.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
    ));
    let cos = g.cosine(out.heatmap, t)?;
    let heat = g.scale(cos, -w_t);
    let heat = g.add_scalar(heat, w_t);
    g.add(ce, heat)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparatorModel {
    config: ComparatorConfig,
    params: ModelParams<f32>,
}

impl ComparatorModel {
    pub fn init(config: ComparatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: init_params(&config.param_specs(), seed),
        })
    }

    pub fn from_params(config: ComparatorConfig, params: ModelParams<f32>) -> Result<Self> {
        config.validate()?;
        check_shapes(&params, &config.param_specs())?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ComparatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<f32> {
        &mut self.params
    }

    pub fn check_pair(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
        let s = self.config.input_shape();
        if a.shape() != s || b.shape() != s {
            return Err(shape_err!(
                "pair shapes {:?} / {:?} must both be {:?}",
                a.shape(),
                b.shape(),
                s
            ));
        }
        Ok(())
    }

    pub fn compare(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<ComparatorPrediction> {
        self.check_pair(a, b)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let out = comparator_trunk(&mut g, &p, av, bv)?;
        Ok(prediction_from(&g, out))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(MAGIC);
        let c = &self.config;
        for v in [c.input_size, c.channels, c.widths[0], c.widths[1], c.widths[2]] {
            w.usize(v);
        }
        write_params(&mut w, &self.params);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, MAGIC)?;
        let mut next = || r.usize();
        let config = ComparatorConfig {
            input_size: next()?,
            channels: next()?,
            widths: [next()?, next()?, next()?],
        };
        config.validate().map_err(|e| format_err!("{e}"))?;
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

pub(crate) fn prediction_from<T: Real>(g: &Graph<T>, out: ComparatorOutputs) -> ComparatorPrediction {
    let probs = ops::softmax(g.value(out.logits));
    let mut class_probs = [0.0f32; NUM_CLASSES];
    for (c, p) in class_probs.iter_mut().zip(probs.data()) {
        *c = p.as_f64() as f32;
    }
    ComparatorPrediction {
        class_probs,
        heatmap: g.value(out.heatmap).data().iter().map(|v| v.as_f64() as f32).collect(),
    }
}
