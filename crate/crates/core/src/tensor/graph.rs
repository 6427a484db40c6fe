use super::ops::{self, ConvGeometry, NORM_EPS};
use super::{Real, Tensor};
use crate::error::{shape_err, Result};
use crate::losses::nt_xent_kernel;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Powf(Var, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AvgPool2d(Var, usize),
    GlobalAvgPool(Var),
    L2Normalize(Var),
    Cosine(Var, Var),
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    LogSoftmax(Var),
    Softmax(Var),
    Select(Var, usize),
    Reshape(Var),
    Concat(Vec<Var>),
    Resize {
        input: Var,
        out_h: usize,
        out_w: usize,
    },
    NtXent {
        input: Var,
        tau: f64,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// A reverse-mode tape. Nodes are appended in evaluation order, so the
/// node list is always topologically sorted.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of differentiable leaves, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf; `requires_grad` marks it as differentiable.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar_value(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeometry::new(
            self.value(input).shape(),
            self.value(kernels).shape(),
            self.value(bias).shape(),
            stride,
            pad,
        )?;
        let out = ops::conv2d(self.value(input), self.value(kernels), self.value(bias), stride, pad)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            },
            &[input, kernels, bias],
        ))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::dense(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Dense { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = ops::tanh(self.value(x));
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        self.push(out, Op::Log(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = ops::scale(self.value(x), T::from_f64_lossy(c));
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c_t = T::from_f64_lossy(c);
        let out = self.value(x).map(|v| v + c_t);
        self.push(out, Op::AddScalar(x), &[x])
    }

    /// Elementwise `x^p`; inputs are expected to be non-negative for fractional `p`.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let p_t = T::from_f64_lossy(p);
        let out = self.value(x).map(|v| v.powf(p_t));
        self.push(out, Op::Powf(x, p), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn avgpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let out = ops::avgpool2d(self.value(x), window)?;
        Ok(self.push(out, Op::AvgPool2d(x, window), &[x]))
    }

    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avgpool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let out = ops::l2_normalize(self.value(x));
        self.push(out, Op::L2Normalize(x), &[x])
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let c = ops::cosine_similarity(self.value(a), self.value(b))?;
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), &[a, b]))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).require_same_shape(self.value(b))?;
        let d = ops::dot(self.value(a).data(), self.value(b).data());
        Ok(self.push(Tensor::scalar(T::from_f64_lossy(d)), Op::Dot(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_f64();
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum_f64() / v.len().max(1) as f64;
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::Mean(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = ops::sum_sq(self.value(x).data());
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::SumSquares(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = ops::log_softmax(self.value(x));
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = ops::softmax(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Picks the flat element `index` as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x);
        let Some(&e) = v.data().get(index) else {
            return Err(shape_err!("index {index} out of range for shape {:?}", v.shape()));
        };
        Ok(self.push(Tensor::scalar(e), Op::Select(x, index), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Concatenates along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(shape_err!("concat of zero tensors"));
        };
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if v.shape()[1..] != tail[..] {
                return Err(shape_err!("concat shape mismatch: {:?} vs tail {:?}", v.shape(), tail));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Stacks equal-length vectors into a `rows × dim` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let parts = rows
            .iter()
            .map(|&r| {
                let n = self.value(r).len();
                self.reshape(r, &[1, n])
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&parts)
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::bilinear_resize(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::Resize { input: x, out_h, out_w }, &[x]))
    }

    /// Temperature-scaled contrastive loss over a `2N × D` matrix whose rows
    /// `i` and `N + i` are positives.
    pub fn nt_xent(&mut self, x: Var, tau: f64) -> Result<Var> {
        let v = self.value(x);
        let [rows, dim] = v.shape() else {
            return Err(shape_err!("nt_xent expects a matrix, got {:?}", v.shape()));
        };
        let (loss, _) = nt_xent_kernel(v.data(), *rows, *dim, tau, false)?;
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(loss)),
            Op::NtXent { input: x, tau },
            &[x],
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let shape = self.value(output).shape().to_vec();
        if self.value(output).len() != 1 {
            return Err(shape_err!("backward needs a scalar output, got shape {shape:?}"));
        }
        self.backward_with(output, Tensor::full(&shape, T::one()))
    }

    /// Reverse pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.value(output).require_same_shape(&seed)?;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.into_data());
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, g, &mut grads);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(
                    g.map(|d| Tensor::new(node.value.shape().to_vec(), d).expect("gradient shape"))
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            } => {
                let need = (self.wants(*input), self.wants(*kernels), self.wants(*bias));
                let cg = ops::conv2d_backward(val(*input), val(*kernels), &g, geom, need);
                if let Some(d) = cg.input {
                    accumulate(grads, *input, d);
                }
                if let Some(d) = cg.kernels {
                    accumulate(grads, *kernels, d);
                }
                if let Some(d) = cg.bias {
                    accumulate(grads, *bias, d);
                }
            }
            Op::Dense { input, weight, bias } => {
                let x = val(*input).data();
                let w = val(*weight).data();
                let (m, n) = (g.len(), x.len());
                if self.wants(*input) {
                    let mut dx = vec![0.0f64; n];
                    for i in 0..m {
                        let gi = g[i].as_f64();
                        for (d, wv) in dx.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                            *d += gi * wv.as_f64();
                        }
                    }
                    accumulate(grads, *input, dx.into_iter().map(T::from_f64_lossy).collect());
                }
                if self.wants(*weight) {
                    let mut dw = Vec::with_capacity(m * n);
                    for &gi in &g {
                        dw.extend(x.iter().map(|&xv| gi * xv));
                    }
                    accumulate(grads, *weight, dw);
                }
                if self.wants(*bias) {
                    accumulate(grads, *bias, g);
                }
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = g.iter().zip(node.value.data()).map(|(&gv, &y)| gv * y).collect();
                accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = g.iter().zip(val(*x).data()).map(|(&gv, &xv)| gv / xv).collect();
                accumulate(grads, *x, d);
            }
            Op::Scale(x, c) => {
                let c = T::from_f64_lossy(*c);
                accumulate(grads, *x, g.iter().map(|&gv| gv * c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Powf(x, p) => {
                let pm1 = T::from_f64_lossy(p - 1.0);
                let p = T::from_f64_lossy(*p);
                let d = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv == T::zero() && pm1 > T::zero() { T::zero() } else { gv * p * xv.powf(pm1) })
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g.iter().zip(val(*b).data()).map(|(&gv, &bv)| gv * bv).collect();
                    accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = g.iter().zip(val(*a).data()).map(|(&gv, &av)| gv * av).collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::AvgPool2d(x, window) => {
                let d = ops::avgpool2d_backward(val(*x).shape(), *window, &g);
                accumulate(grads, *x, d);
            }
            Op::GlobalAvgPool(x) => {
                let shape = val(*x).shape();
                let plane = shape[1] * shape[2];
                let inv = T::from_f64_lossy(1.0 / plane as f64);
                let d = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, plane))
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::L2Normalize(x) => {
                let xv = val(*x);
                let norm = xv.norm_l2();
                let d = if norm >= NORM_EPS {
                    let y = node.value.data();
                    let yg = ops::dot(y, &g);
                    g.iter()
                        .zip(y)
                        .map(|(&gv, &yv)| T::from_f64_lossy((gv.as_f64() - yv.as_f64() * yg) / norm))
                        .collect()
                } else {
                    g.iter().map(|&gv| T::from_f64_lossy(gv.as_f64() / NORM_EPS)).collect()
                };
                accumulate(grads, *x, d);
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let gs = g[0].as_f64();
                let (na, nb) = (av.norm_l2(), bv.norm_l2());
                let (da, db) = (na.max(NORM_EPS), nb.max(NORM_EPS));
                let c = node.value.data()[0].as_f64();
                let grad_for = |own: &Tensor<T>, other: &Tensor<T>, n_own: f64, d_own: f64, d_other: f64| -> Vec<T> {
                    own.data()
                        .iter()
                        .zip(other.data())
                        .map(|(&o, &p)| {
                            let mut v = p.as_f64() / (d_own * d_other);
                            if n_own >= NORM_EPS {
                                v -= c * o.as_f64() / (n_own * n_own);
                            }
                            T::from_f64_lossy(gs * v)
                        })
                        .collect()
                };
                if self.wants(*a) {
                    accumulate(grads, *a, grad_for(av, bv, na, da, db));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, grad_for(bv, av, nb, db, da));
                }
            }
            Op::Dot(a, b) => {
                let gs = g[0];
                if self.wants(*a) {
                    accumulate(grads, *a, val(*b).data().iter().map(|&v| gs * v).collect());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, val(*a).data().iter().map(|&v| gs * v).collect());
                }
            }
            Op::Sum(x) => {
                accumulate(grads, *x, vec![g[0]; val(*x).len()]);
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                accumulate(grads, *x, vec![g[0] / T::from_f64_lossy(n as f64); n]);
            }
            Op::SumSquares(x) => {
                let two = T::from_f64_lossy(2.0) * g[0];
                accumulate(grads, *x, val(*x).data().iter().map(|&v| two * v).collect());
            }
            Op::LogSoftmax(x) => {
                let gsum: f64 = g.iter().map(|v| v.as_f64()).sum();
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| T::from_f64_lossy(gv.as_f64() - y.as_f64().exp() * gsum))
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let s = node.value.data();
                let sg = ops::dot(s, &g);
                let d = g
                    .iter()
                    .zip(s)
                    .map(|(&gv, &sv)| T::from_f64_lossy(sv.as_f64() * (gv.as_f64() - sg)))
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Select(x, index) => {
                let mut d = vec![T::zero(); val(*x).len()];
                d[*index] = g[0];
                accumulate(grads, *x, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    if self.wants(*p) {
                        accumulate(grads, *p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Resize { input, out_h, out_w } => {
                let d = ops::bilinear_resize_backward(val(*input).shape(), *out_h, *out_w, &g);
                accumulate(grads, *input, d);
            }
            Op::NtXent { input, tau } => {
                let v = val(*input);
                let (rows, dim) = (v.shape()[0], v.shape()[1]);
                let (_, dz) = nt_xent_kernel(v.data(), rows, dim, *tau, true).expect("validated at construction");
                let gs = g[0].as_f64();
                let d = dz
                    .expect("gradient requested")
                    .into_iter()
                    .map(|x| T::from_f64_lossy(gs * x))
                    .collect();
                accumulate(grads, *input, d);
            }
        }
    }
}
