//! The fingerprint network and the pair comparator.

mod comparator;
mod fingerprint;

pub use comparator::{
    comparator_loss, comparator_loss_graph, comparator_trunk, ComparatorConfig, ComparatorModel,
    ComparatorOutputs, ComparatorPrediction, PairLabel, HEATMAP_CELLS, HEATMAP_GRID, NUM_CLASSES,
};
pub use fingerprint::{
    fingerprint_forward, fingerprint_forward_raw, sign_hash, BinaryHash, Fingerprint,
    FingerprintConfig, FingerprintModel,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{format_err, Result};
use crate::io::binfmt::{ByteReader, ByteWriter};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Ordered, named weight tensors of a fixed architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            seed: self.seed,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every tensor as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| g.leaf(t.clone(), requires_grad))
            .collect()
    }

    fn shapes(&self) -> Vec<&[usize]> {
        self.tensors.iter().map(|t| t.shape()).collect()
    }
}

/// Layer descriptor used for initialization: name, shape and fan-in
/// (0 for biases, which start at zero).
pub(crate) struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

/// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub(crate) fn init_params(specs: &[ParamSpec], seed: u64) -> ModelParams<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = specs
        .iter()
        .map(|s| {
            if s.fan_in == 0 {
                Tensor::zeros(&s.shape)
            } else {
                let std = (2.0 / s.fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(&s.shape, |_| normal.sample(&mut rng) as f32)
            }
        })
        .collect();
    ModelParams {
        seed,
        names: specs.iter().map(|s| s.name.to_string()).collect(),
        tensors,
    }
}

pub(crate) fn write_params(w: &mut ByteWriter, params: &ModelParams<f32>) {
    w.u64(params.seed);
    w.usize(params.tensors.len());
    for t in &params.tensors {
        w.tensor(t);
    }
}

pub(crate) fn read_params(r: &mut ByteReader<'_>, specs: &[ParamSpec]) -> Result<ModelParams<f32>> {
    let seed = r.u64()?;
    let count = r.usize()?;
    if count != specs.len() {
        return Err(format_err!("expected {} tensors, found {count}", specs.len()));
    }
    let mut tensors = Vec::with_capacity(count);
    for spec in specs {
        let t = r.tensor()?;
        if t.shape() != spec.shape.as_slice() {
            return Err(format_err!(
                "tensor {} has shape {:?}, expected {:?}",
                spec.name,
                t.shape(),
                spec.shape
            ));
        }
        if !t.is_finite() {
            return Err(format_err!("tensor {} contains non-finite values", spec.name));
        }
        tensors.push(t);
    }
    Ok(ModelParams {
        seed,
        names: specs.iter().map(|s| s.name.to_string()).collect(),
        tensors,
    })
}

pub(crate) fn check_shapes(params: &ModelParams<f32>, specs: &[ParamSpec]) -> Result<()> {
    let expected: Vec<&[usize]> = specs.iter().map(|s| s.shape.as_slice()).collect();
    if params.shapes() != expected {
        return Err(crate::error::invalid!("parameter shapes do not match the architecture"));
    }
    Ok(())
}

/// Plain SGD with heavy-ball momentum: `v = μv + g; θ -= lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<Tensor<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &[Tensor<f32>]) {
        if self.velocity.is_empty() {
            self.velocity = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        }
        for ((p, v), g) in params.tensors.iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
    }
}
