//! Reverse-mode gradients against central differences, in f64, for every
//! graph op, loss, and attack objective.

use aria_core::attacks::{class_log_prob, embedding_distance, hash_relaxation, heatmap_cosine};
use aria_core::losses::hashing_penalty_graph;
use aria_core::model::{
    comparator_loss_graph, comparator_trunk, fingerprint_forward, fingerprint_forward_raw, ComparatorConfig,
    ComparatorModel, FingerprintConfig, FingerprintModel, ModelParams, PairLabel, HEATMAP_CELLS,
};
use aria_core::tensor::{central_difference, max_relative_error};
use aria_core::tensor::{Graph, Tensor, Var};
use aria_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;
const H: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var>>;

pub struct CaseResult {
    pub name: &'static str,
    pub max_error: f64,
    /// Instances replaced because a kink fell inside the stencil.
    pub redrawn: usize,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, so sign-dependent terms do not flip
/// under the finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Contracts a non-scalar output with fixed random weights.
fn contract(g: &mut Graph<f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(uniform(rng, &shape, -1.0, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn small_fingerprint(seed: u64) -> ModelParams<f64> {
    let cfg = FingerprintConfig {
        input_size: 8,
        channels: 3,
        embed_dim: 8,
        widths: [3, 4, 5],
    };
    perturb_biases(FingerprintModel::init(cfg, seed).unwrap().params().cast(), seed)
}

fn small_comparator(seed: u64) -> ModelParams<f64> {
    let cfg = ComparatorConfig {
        input_size: 8,
        channels: 3,
        widths: [3, 4, 5],
    };
    perturb_biases(ComparatorModel::init(cfg, seed).unwrap().params().cast(), seed)
}

/// Freshly initialized biases are zero; random ones exercise their gradients.
fn perturb_biases(mut p: ModelParams<f64>, seed: u64) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let names: Vec<String> = p.names().to_vec();
    for (t, name) in p.tensors_mut().iter_mut().zip(&names) {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    p
}

/// Binds `params` as constants except tensor `slot`, which becomes `x`.
fn bind_with(g: &mut Graph<f64>, params: &ModelParams<f64>, slot: usize, x: Var) -> Vec<Var> {
    let mut p = params.bind(g, false);
    p[slot] = x;
    p
}

/// One case: a generator of (input, scalar function) instances.
struct Case {
    name: &'static str,
    make: fn(&mut ChaCha8Rng, u64) -> (Tensor<f64>, Build),
}

fn cases() -> Vec<Case> {
    vec![
        Case { name: "conv2d/input", make: |r, _| {
            let k = uniform(r, &[4, 3, 3, 3], -1.0, 1.0);
            let b = uniform(r, &[4], -0.5, 0.5);
            let w = uniform(r, &[4, 6, 6], -1.0, 1.0);
            (uniform(r, &[3, 6, 6], 0.0, 1.0), Box::new(move |g, x| {
                let (k, b, w) = (g.constant(k.clone()), g.constant(b.clone()), g.constant(w.clone()));
                let y = g.conv2d(x, k, b, 1, 1)?;
                let p = g.mul(y, w)?;
                Ok(g.sum(p))
            }))
        }},
        Case { name: "conv2d/kernel (stride 2, no pad)", make: |r, _| {
            let input = uniform(r, &[2, 7, 7], 0.0, 1.0);
            let b = uniform(r, &[3], -0.5, 0.5);
            let w = uniform(r, &[3, 3, 3], -1.0, 1.0);
            (uniform(r, &[3, 2, 3, 3], -1.0, 1.0), Box::new(move |g, k| {
                let (i, b, w) = (g.constant(input.clone()), g.constant(b.clone()), g.constant(w.clone()));
                let y = g.conv2d(i, k, b, 2, 0)?;
                let p = g.mul(y, w)?;
                Ok(g.sum(p))
            }))
        }},
        Case { name: "conv2d/bias", make: |r, _| {
            let input = uniform(r, &[2, 5, 5], 0.0, 1.0);
            let k = uniform(r, &[3, 2, 3, 3], -1.0, 1.0);
            let w = uniform(r, &[3, 5, 5], -1.0, 1.0);
            (uniform(r, &[3], -1.0, 1.0), Box::new(move |g, b| {
                let (i, k, w) = (g.constant(input.clone()), g.constant(k.clone()), g.constant(w.clone()));
                let y = g.conv2d(i, k, b, 1, 1)?;
                let y = g.tanh(y);
                let p = g.mul(y, w)?;
                Ok(g.sum(p))
            }))
        }},
        Case { name: "dense/input", make: |r, _| {
            let w = uniform(r, &[4, 6], -1.0, 1.0);
            let b = uniform(r, &[4], -1.0, 1.0);
            let c = uniform(r, &[4], -1.0, 1.0);
            (uniform(r, &[6], -1.0, 1.0), Box::new(move |g, x| {
                let (w, b, c) = (g.constant(w.clone()), g.constant(b.clone()), g.constant(c.clone()));
                let y = g.dense(x, w, b)?;
                g.dot(y, c)
            }))
        }},
        Case { name: "dense/weight", make: |r, _| {
            let x = uniform(r, &[6], -1.0, 1.0);
            let b = uniform(r, &[4], -1.0, 1.0);
            (uniform(r, &[4, 6], -1.0, 1.0), Box::new(move |g, w| {
                let (x, b) = (g.constant(x.clone()), g.constant(b.clone()));
                let y = g.dense(x, w, b)?;
                let y = g.sigmoid(y);
                Ok(g.sum_squares(y))
            }))
        }},
        Case { name: "relu", make: |r, s| {
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (away_from_zero(r, &[12]), Box::new(move |g, x| {
                let y = g.relu(x);
                contract(g, y, &mut r2.clone())
            }))
        }},
        Case { name: "tanh/sigmoid/exp", make: |r, _| {
            (uniform(r, &[10], -2.0, 2.0), Box::new(|g, x| {
                let a = g.tanh(x);
                let b = g.sigmoid(x);
                let c = g.exp(x);
                let ab = g.mul(a, b)?;
                let abc = g.add(ab, c)?;
                Ok(g.sum(abc))
            }))
        }},
        Case { name: "ln/powf/scale/add_scalar", make: |r, _| {
            (uniform(r, &[10], 0.2, 3.0), Box::new(|g, x| {
                let a = g.ln(x);
                let b = g.powf(x, 1.7);
                let c = g.scale(b, -0.3);
                let d = g.add_scalar(c, 2.0);
                let e = g.sub(a, d)?;
                Ok(g.sum_squares(e))
            }))
        }},
        Case { name: "avgpool2d", make: |r, s| {
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[2, 6, 6], -1.0, 1.0), Box::new(move |g, x| {
                let y = g.avgpool2d(x, 2)?;
                contract(g, y, &mut r2.clone())
            }))
        }},
        Case { name: "global_avgpool", make: |r, s| {
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[3, 4, 5], -1.0, 1.0), Box::new(move |g, x| {
                let y = g.global_avgpool(x)?;
                let y = g.tanh(y);
                contract(g, y, &mut r2.clone())
            }))
        }},
        Case { name: "l2_normalize", make: |r, s| {
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[8], -1.0, 1.0), Box::new(move |g, x| {
                let y = g.l2_normalize(x);
                contract(g, y, &mut r2.clone())
            }))
        }},
        Case { name: "cosine/dot/mean", make: |r, _| {
            let c = uniform(r, &[8], -1.0, 1.0);
            (uniform(r, &[8], -1.0, 1.0), Box::new(move |g, x| {
                let c = g.constant(c.clone());
                let a = g.cosine(x, c)?;
                let b = g.dot(x, c)?;
                let m = g.mean(x);
                let ab = g.mul(a, b)?;
                g.add(ab, m)
            }))
        }},
        Case { name: "log_softmax/softmax/select", make: |r, s| {
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[5], -2.0, 2.0), Box::new(move |g, x| {
                let a = g.log_softmax(x);
                let a = g.select(a, 2)?;
                let b = g.softmax(x);
                let b = contract(g, b, &mut r2.clone())?;
                g.add(a, b)
            }))
        }},
        Case { name: "concat/stack/reshape", make: |r, s| {
            let c = uniform(r, &[2, 3, 3], -1.0, 1.0);
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[1, 3, 3], -1.0, 1.0), Box::new(move |g, x| {
                let c = g.constant(c.clone());
                let cat = g.concat(&[c, x, x])?;
                let flat = g.reshape(x, &[9])?;
                let rows = g.stack(&[flat, flat])?;
                let a = contract(g, cat, &mut r2.clone())?;
                let b = contract(g, rows, &mut r2.clone())?;
                g.add(a, b)
            }))
        }},
        Case { name: "bilinear_resize (64 -> 32)", make: |r, s| {
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[1, 64, 64], 0.0, 1.0), Box::new(move |g, x| {
                let y = g.bilinear_resize(x, 32, 32)?;
                contract(g, y, &mut r2.clone())
            }))
        }},
        Case { name: "bilinear_resize (non-integer scales)", make: |r, s| {
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[2, 10, 5], 0.0, 1.0), Box::new(move |g, x| {
                let y = g.bilinear_resize(x, 7, 8)?;
                let y = g.sigmoid(y);
                contract(g, y, &mut r2.clone())
            }))
        }},
        Case { name: "nt_xent", make: |r, _| {
            let tau = r.random_range(0.1..1.0);
            let n = r.random_range(1..=4usize);
            (uniform(r, &[2 * n, 5], -1.0, 1.0), Box::new(move |g, x| g.nt_xent(x, tau)))
        }},
        Case { name: "hashing_penalty", make: |r, _| {
            (away_from_zero(r, &[16]), Box::new(|g, x| hashing_penalty_graph(g, x)))
        }},
        Case { name: "comparator_loss", make: |r, s| {
            let params = small_comparator(s);
            let a = uniform(r, &[3, 8, 8], 0.0, 1.0);
            let class = r.random_range(0..3usize);
            let heat: Vec<f32> = (0..HEATMAP_CELLS).map(|_| r.random_range(0.0..1.0)).collect();
            let label = if class == 1 { PairLabel::new(1, heat).unwrap() } else { PairLabel::unedited(class).unwrap() };
            (uniform(r, &[3, 8, 8], 0.0, 1.0), Box::new(move |g, x| {
                let p = params.bind(g, false);
                let a = g.constant(a.clone());
                let out = comparator_trunk(g, &p, a, x)?;
                comparator_loss_graph(g, out, &label, 0.5, 0.5)
            }))
        }},
        Case { name: "fingerprint forward/input", make: |r, s| {
            let params = small_fingerprint(s);
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (uniform(r, &[3, 8, 8], 0.0, 1.0), Box::new(move |g, x| {
                let p = params.bind(g, false);
                let z = fingerprint_forward(g, &p, x)?;
                contract(g, z, &mut r2.clone())
            }))
        }},
        Case { name: "fingerprint forward/conv1 weight", make: |r, s| {
            let params = small_fingerprint(s);
            let input = uniform(r, &[3, 8, 8], 0.0, 1.0);
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (params.tensors()[0].clone(), Box::new(move |g, w| {
                let p = bind_with(g, &params, 0, w);
                let i = g.constant(input.clone());
                let z = fingerprint_forward_raw(g, &p, i)?;
                contract(g, z, &mut r2.clone())
            }))
        }},
        Case { name: "fingerprint forward/fc weight", make: |r, s| {
            let params = small_fingerprint(s);
            let input = uniform(r, &[3, 8, 8], 0.0, 1.0);
            let r2 = ChaCha8Rng::seed_from_u64(s ^ 0xc0ffee);
            (params.tensors()[6].clone(), Box::new(move |g, w| {
                let p = bind_with(g, &params, 6, w);
                let i = g.constant(input.clone());
                let z = fingerprint_forward(g, &p, i)?;
                contract(g, z, &mut r2.clone())
            }))
        }},
        Case { name: "comparator loss/heat weight", make: |r, s| {
            let params = small_comparator(s);
            let a = uniform(r, &[3, 8, 8], 0.0, 1.0);
            let b = uniform(r, &[3, 8, 8], 0.0, 1.0);
            let heat: Vec<f32> = (0..HEATMAP_CELLS).map(|_| r.random_range(0.0..1.0)).collect();
            let label = PairLabel::new(1, heat).unwrap();
            (params.tensors()[8].clone(), Box::new(move |g, w| {
                let p = bind_with(g, &params, 8, w);
                let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
                let out = comparator_trunk(g, &p, a, b)?;
                comparator_loss_graph(g, out, &label, 0.5, 0.5)
            }))
        }},
        Case { name: "attack/embedding distance (through resize)", make: |r, s| {
            let params = small_fingerprint(s);
            let reference = uniform(r, &[8], -0.5, 0.5);
            (uniform(r, &[3, 16, 16], 0.0, 1.0), Box::new(move |g, x| {
                let p = params.bind(g, false);
                embedding_distance(g, &p, x, 8, &reference)
            }))
        }},
        Case { name: "attack/comparator class log-probability", make: |r, s| {
            let params = small_comparator(s);
            let reference = uniform(r, &[3, 16, 16], 0.0, 1.0);
            let class = r.random_range(0..3usize);
            (uniform(r, &[3, 16, 16], 0.0, 1.0), Box::new(move |g, x| {
                let p = params.bind(g, false);
                let a = g.constant(reference.clone());
                class_log_prob(g, &p, a, x, 8, class)
            }))
        }},
        Case { name: "attack/heatmap cosine", make: |r, s| {
            let params = small_comparator(s);
            let reference = uniform(r, &[3, 8, 8], 0.0, 1.0);
            let target = uniform(r, &[HEATMAP_CELLS], 0.0, 1.0);
            (uniform(r, &[3, 8, 8], 0.0, 1.0), Box::new(move |g, x| {
                let p = params.bind(g, false);
                let a = g.constant(reference.clone());
                heatmap_cosine(g, &p, a, x, 8, &target)
            }))
        }},
        Case { name: "attack/hash relaxation", make: |r, s| {
            let params = small_fingerprint(s);
            let signs = Tensor::from_fn(&[8], |_| if r.random_bool(0.5) { 1.0 } else { -1.0 });
            let beta = r.random_range(0.5..2.0);
            (uniform(r, &[3, 16, 16], 0.0, 1.0), Box::new(move |g, x| {
                let p = params.bind(g, false);
                hash_relaxation(g, &p, x, 8, &signs, beta)
            }))
        }},
    ]
}

/// Numeric gradient, or `None` when the stencils at `H` and `H / 2`
/// disagree, i.e. a ReLU kink or similar lies within reach of the step.
fn smooth_numeric(build: &Build, x: &Tensor<f64>) -> Result<Option<Vec<f64>>> {
    let f = |p: &Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.leaf(p.clone(), false);
        let out = build(&mut g, v)?;
        g.scalar_value(out)
    };
    let coarse = central_difference(f, x, H)?;
    let fine = central_difference(f, x, H / 2.0)?;
    Ok((max_relative_error(&coarse, &fine) < 5e-5).then_some(coarse))
}

fn analytic(build: &Build, x: &Tensor<f64>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let v = g.leaf(x.clone(), true);
    let out = build(&mut g, v)?;
    Ok(g.backward(out)?.take(v).expect("leaf is differentiable").into_data())
}

/// Worst relative error over [`INSTANCES`] random instances of every case.
/// Instances that are not smooth at the finite-difference scale are redrawn.
pub fn run_all() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        let mut redrawn = 0;
        for k in 0..INSTANCES {
            let mut attempt = 0u64;
            loop {
                let seed = 1000 * ci as u64 + k as u64 + 1_000_000 * attempt;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (x, build) = (case.make)(&mut rng, seed);
                if let Some(numeric) = smooth_numeric(&build, &x)? {
                    worst = worst.max(max_relative_error(&analytic(&build, &x)?, &numeric));
                    break;
                }
                attempt += 1;
                redrawn += 1;
                assert!(attempt < 10, "{}: no smooth instance found", case.name);
            }
        }
        out.push(CaseResult {
            name: case.name,
            max_error: worst,
            redrawn,
        });
    }
    Ok(out)
}
