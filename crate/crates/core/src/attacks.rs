//! Projected gradient attacks on the fingerprint network and the comparator,
//! hash inversion, and the realize-then-requery step.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{
    comparator_trunk, fingerprint_forward, fingerprint_forward_raw, BinaryHash, ComparatorModel,
    FingerprintModel, HEATMAP_CELLS,
};
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::transforms::{bilinear_resize, realize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
}

/// Perturbation radius and step schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBudget {
    pub norm: Norm,
    pub eps: f64,
    pub iters: usize,
    pub step0: f64,
    /// Fractions of `iters` after which the step is divided by `decay_factor`.
    #[serde(default = "default_decay_points")]
    pub decay_points: Vec<f64>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
}

fn default_decay_points() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_decay_factor() -> f64 {
    2.0
}

impl AttackBudget {
    pub fn linf(eps: f64, iters: usize, step0: f64) -> Self {
        Self {
            norm: Norm::Linf,
            eps,
            iters,
            step0,
            decay_points: default_decay_points(),
            decay_factor: default_decay_factor(),
        }
    }

    pub fn l2(eps: f64, iters: usize, step0: f64) -> Self {
        Self {
            norm: Norm::L2,
            ..Self::linf(eps, iters, step0)
        }
    }

    /// ℓ∞ radius 8/255, 50 iterations, step 4/255 halved at 25/50/75%.
    pub fn standard() -> Self {
        Self::linf(8.0 / 255.0, 50, 4.0 / 255.0)
    }

    pub fn constant_step(mut self) -> Self {
        self.decay_points.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(invalid!("eps must be positive, got {}", self.eps));
        }
        if self.iters == 0 {
            return Err(invalid!("iters must be at least 1"));
        }
        if !(self.step0.is_finite() && self.step0 > 0.0) {
            return Err(invalid!("step size must be positive, got {}", self.step0));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor >= 1.0) {
            return Err(invalid!("decay factor must be at least 1"));
        }
        if self.decay_points.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(invalid!("decay points must be fractions in [0, 1]"));
        }
        Ok(())
    }

    /// Step size of iteration `t` (1-based): each decay point `f` counts
    /// once `t > floor(f·iters)`.
    pub fn step_size(&self, t: usize) -> f64 {
        let passed = self
            .decay_points
            .iter()
            .filter(|&&f| t > (f * self.iters as f64).floor() as usize)
            .count();
        self.step0 / self.decay_factor.powi(passed as i32)
    }
}

/// The largest `f32` not exceeding `v`.
fn f32_at_most(v: f64) -> f32 {
    let f = v as f32;
    if f as f64 > v {
        f.next_down()
    } else {
        f
    }
}

/// The perturbation actually applied once `x + d` is rounded to f32.
fn realized(x: f32, d: f32) -> f64 {
    (x + d) as f64 - x as f64
}

/// Moves `d` toward zero one ulp at a time until `x + d` lies in [0, 1] and
/// the realized perturbation is at most `e` in magnitude.
fn box_fix(x: f32, d: f32, e: f64) -> f32 {
    let mut d = d.clamp(-x, 1.0 - x);
    while x + d > 1.0 || realized(x, d) > e {
        d = d.next_down();
    }
    while x + d < 0.0 || realized(x, d) < -e {
        d = d.next_up();
    }
    d
}

fn realized_norm_l2(delta: &Tensor<f32>, x: &Tensor<f32>) -> f64 {
    delta
        .data()
        .iter()
        .zip(x.data())
        .map(|(&d, &xi)| realized(xi, d).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Projects `delta` onto the budget ball intersected with the pixel box
/// around `x`. ℓ2 rescales radially and then clamps to the box. The budget
/// holds for the rounded image `x + δ`, not only for `δ`.
pub fn project(delta: &mut Tensor<f32>, x: &Tensor<f32>, budget: &AttackBudget) -> Result<()> {
    delta.require_same_shape(x)?;
    match budget.norm {
        Norm::Linf => {
            let e = f32_at_most(budget.eps);
            for (d, &xi) in delta.data_mut().iter_mut().zip(x.data()) {
                *d = box_fix(xi, d.clamp(-e, e), budget.eps);
            }
        }
        Norm::L2 => {
            let n = delta.norm_l2();
            if n > budget.eps && realized_norm_l2(delta, x) > budget.eps {
                let s = (budget.eps / n) as f32;
                for d in delta.data_mut() {
                    *d *= s;
                }
            }
            for (d, &xi) in delta.data_mut().iter_mut().zip(x.data()) {
                *d = box_fix(xi, *d, f64::INFINITY);
            }
            // Rounding can push the realized norm just past eps; shrink by
            // a doubling fraction until it fits.
            let mut shrink = 1e-6f32;
            while realized_norm_l2(delta, x) > budget.eps {
                for (d, &xi) in delta.data_mut().iter_mut().zip(x.data()) {
                    *d = box_fix(xi, *d * (1.0 - shrink), f64::INFINITY);
                }
                shrink = (2.0 * shrink).min(1.0);
            }
        }
    }
    Ok(())
}

/// Whether `x + delta`, rounded to f32, lies inside [0, 1] and within the
/// budget of `x`.
pub fn is_feasible(delta: &Tensor<f32>, x: &Tensor<f32>, budget: &AttackBudget) -> bool {
    if delta.shape() != x.shape() {
        return false;
    }
    let in_ball = match budget.norm {
        Norm::Linf => delta.data().iter().zip(x.data()).all(|(&d, &xi)| realized(xi, d).abs() <= budget.eps),
        Norm::L2 => realized_norm_l2(delta, x) <= budget.eps,
    };
    in_ball
        && delta
            .data()
            .iter()
            .zip(x.data())
            .all(|(&d, &xi)| (0.0..=1.0).contains(&(xi + d)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Self::Minimize => a < b,
            Self::Maximize => a > b,
        }
    }
}

/// Objective value and input gradient at one iterate. `done` ends the
/// search and returns this iterate.
pub struct Evaluation {
    pub value: f64,
    pub grad: Tensor<f32>,
    pub done: bool,
}

impl Evaluation {
    pub fn new(value: f64, grad: Tensor<f32>) -> Self {
        Self {
            value,
            grad,
            done: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgdOutcome {
    /// Best iterate found (or the one flagged `done`).
    pub delta: Tensor<f32>,
    /// Objective at each iterate; index 0 is `delta = 0`.
    pub values: Vec<f64>,
    /// Running best of `values`.
    pub best_trace: Vec<f64>,
    pub best_iter: usize,
    /// Every iterate satisfied the constraints.
    pub feasible: bool,
    pub stopped_early: bool,
}

impl PgdOutcome {
    pub fn best_value(&self) -> f64 {
        self.values[self.best_iter]
    }

    pub fn initial_value(&self) -> f64 {
        self.values[0]
    }

    pub fn adversarial(&self, x: &Tensor<f32>) -> Tensor<f32> {
        x.zip_map(&self.delta, |a, d| a + d).expect("delta matches image")
    }
}

fn check_image(x: &Tensor<f32>) -> Result<()> {
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid!("attacked image must lie in [0, 1]"));
    }
    Ok(())
}

/// Projected gradient search from `delta = 0`. `objective` receives `x + δ`.
/// ℓ∞ steps follow the gradient sign, ℓ2 steps the normalized gradient; a
/// zero gradient leaves `δ` in place.
pub fn pgd<F>(x: &Tensor<f32>, budget: &AttackBudget, sense: Sense, mut objective: F) -> Result<PgdOutcome>
where
    F: FnMut(&Tensor<f32>) -> Result<Evaluation>,
{
    budget.validate()?;
    check_image(x)?;
    let dir = match sense {
        Sense::Maximize => 1.0f32,
        Sense::Minimize => -1.0,
    };
    let mut delta = Tensor::zeros(x.shape());
    let mut ev = objective(x)?;
    let mut values = vec![ev.value];
    let mut best_trace = vec![ev.value];
    let mut best_iter = 0;
    let mut best_delta = delta.clone();
    let mut feasible = true;
    let mut stopped_early = ev.done;
    for t in 1..=budget.iters {
        if stopped_early {
            break;
        }
        ev.grad.require_same_shape(x)?;
        if !ev.grad.is_finite() {
            return Err(invalid!("objective gradient is not finite at iteration {}", t - 1));
        }
        let step = budget.step_size(t) as f32;
        match budget.norm {
            Norm::Linf => {
                for (d, &g) in delta.data_mut().iter_mut().zip(ev.grad.data()) {
                    if g != 0.0 {
                        *d += dir * step * g.signum();
                    }
                }
            }
            Norm::L2 => {
                let n = ev.grad.norm_l2();
                if n > 0.0 {
                    let s = dir * step / n as f32;
                    for (d, &g) in delta.data_mut().iter_mut().zip(ev.grad.data()) {
                        *d += s * g;
                    }
                }
            }
        }
        project(&mut delta, x, budget)?;
        let ok = is_feasible(&delta, x, budget);
        debug_assert!(ok, "iterate {t} left the feasible set");
        feasible &= ok;
        let adv = x.zip_map(&delta, |a, d| a + d)?;
        ev = objective(&adv)?;
        values.push(ev.value);
        if ev.done || sense.better(ev.value, values[best_iter]) {
            best_iter = t;
            best_delta.data_mut().copy_from_slice(delta.data());
        }
        best_trace.push(values[best_iter]);
        stopped_early = ev.done;
    }
    Ok(PgdOutcome {
        delta: best_delta,
        values,
        best_trace,
        best_iter,
        feasible,
        stopped_early,
    })
}

/// Differentiable resize of `x` to the model resolution when needed.
pub fn to_model_input<T: Real>(g: &mut Graph<T>, x: Var, size: usize) -> Result<Var> {
    let s = g.value(x).shape();
    if s.len() == 3 && s[1] == size && s[2] == size {
        Ok(x)
    } else {
        g.bilinear_resize(x, size, size)
    }
}

/// `‖φ(x) − reference‖₂²` with the resize inside the graph.
pub fn embedding_distance<T: Real>(
    g: &mut Graph<T>,
    p: &[Var],
    x: Var,
    size: usize,
    reference: &Tensor<T>,
) -> Result<Var> {
    let input = to_model_input(g, x, size)?;
    let z = fingerprint_forward(g, p, input)?;
    let r = g.constant(reference.clone());
    let d = g.sub(z, r)?;
    Ok(g.sum_squares(d))
}

/// `log p_C(reference, x)_class`.
pub fn class_log_prob<T: Real>(
    g: &mut Graph<T>,
    p: &[Var],
    reference: Var,
    x: Var,
    size: usize,
    class: usize,
) -> Result<Var> {
    let a = to_model_input(g, reference, size)?;
    let b = to_model_input(g, x, size)?;
    let out = comparator_trunk(g, p, a, b)?;
    let logp = g.log_softmax(out.logits);
    g.select(logp, class)
}

/// `cos(f_T(reference, x), target)`.
pub fn heatmap_cosine<T: Real>(
    g: &mut Graph<T>,
    p: &[Var],
    reference: Var,
    x: Var,
    size: usize,
    target: &Tensor<T>,
) -> Result<Var> {
    let a = to_model_input(g, reference, size)?;
    let b = to_model_input(g, x, size)?;
    let out = comparator_trunk(g, p, a, b)?;
    let t = g.constant(target.clone());
    g.cosine(out.heatmap, t)
}

/// `‖tanh(β·v(x)) − s‖₂²` on the pre-normalization embedding `v`; the sign
/// pattern of `v` equals that of the normalized fingerprint.
pub fn hash_relaxation<T: Real>(
    g: &mut Graph<T>,
    p: &[Var],
    x: Var,
    size: usize,
    signs: &Tensor<T>,
    beta: f64,
) -> Result<Var> {
    let input = to_model_input(g, x, size)?;
    let raw = fingerprint_forward_raw(g, p, input)?;
    let scaled = g.scale(raw, beta);
    let t = g.tanh(scaled);
    let s = g.constant(signs.clone());
    let d = g.sub(t, s)?;
    Ok(g.sum_squares(d))
}

/// Value and input gradient of a scalar graph built on frozen parameters.
fn value_and_grad(
    params: &crate::model::ModelParams<f32>,
    x: &Tensor<f32>,
    build: impl FnOnce(&mut Graph<f32>, &[Var], Var) -> Result<Var>,
) -> Result<Evaluation> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.leaf(x.clone(), true);
    let out = build(&mut g, &p, xv)?;
    let value = g.scalar_value(out)? as f64;
    let grad = g.backward(out)?.take(xv).expect("input is differentiable");
    Ok(Evaluation::new(value, grad))
}

/// Pushes the query's fingerprint away from the original's (maximizes the
/// squared distance).
pub fn untargeted_embedding_attack(
    model: &FingerprintModel,
    x_query: &Tensor<f32>,
    x_orig: &Tensor<f32>,
    budget: &AttackBudget,
) -> Result<PgdOutcome> {
    let reference = model.embed_any(x_orig)?.as_tensor();
    let size = model.config().input_size;
    pgd(x_query, budget, Sense::Maximize, |adv| {
        value_and_grad(model.params(), adv, |g, p, x| embedding_distance(g, p, x, size, &reference))
    })
}

/// Pulls the query's fingerprint toward the target's.
pub fn targeted_embedding_attack(
    model: &FingerprintModel,
    x_query: &Tensor<f32>,
    x_target: &Tensor<f32>,
    budget: &AttackBudget,
) -> Result<PgdOutcome> {
    let reference = model.embed_any(x_target)?.as_tensor();
    let size = model.config().input_size;
    pgd(x_query, budget, Sense::Minimize, |adv| {
        value_and_grad(model.params(), adv, |g, p, x| embedding_distance(g, p, x, size, &reference))
    })
}

/// Minimizes the log-probability of the true class; only the query moves.
pub fn comparator_class_attack(
    model: &ComparatorModel,
    x_top1: &Tensor<f32>,
    x_query: &Tensor<f32>,
    class: usize,
    budget: &AttackBudget,
) -> Result<PgdOutcome> {
    if class >= crate::model::NUM_CLASSES {
        return Err(invalid!("class {class} out of range"));
    }
    let size = model.config().input_size;
    pgd(x_query, budget, Sense::Minimize, |adv| {
        value_and_grad(model.params(), adv, |g, p, x| {
            let r = g.constant(x_top1.clone());
            class_log_prob(g, p, r, x, size, class)
        })
    })
}

/// Untargeted: minimizes the cosine between the predicted heatmap and the
/// true one. Targeted: maximizes the cosine with `heatmap`.
pub fn heatmap_attack(
    model: &ComparatorModel,
    x_top1: &Tensor<f32>,
    x_query: &Tensor<f32>,
    heatmap: &[f32],
    budget: &AttackBudget,
    targeted: bool,
) -> Result<PgdOutcome> {
    if heatmap.len() != HEATMAP_CELLS {
        return Err(invalid!("heatmap must have {HEATMAP_CELLS} cells, got {}", heatmap.len()));
    }
    if heatmap.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid!("heatmap values must lie in [0, 1]"));
    }
    if heatmap.iter().all(|&v| v == 0.0) {
        return Err(invalid!("heatmap target is all zero; cosine is undefined"));
    }
    let size = model.config().input_size;
    let target = Tensor::vector(heatmap.to_vec());
    let sense = if targeted { Sense::Maximize } else { Sense::Minimize };
    pgd(x_query, budget, sense, |adv| {
        value_and_grad(model.params(), adv, |g, p, x| {
            let r = g.constant(x_top1.clone());
            heatmap_cosine(g, p, r, x, size, &target)
        })
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashInversion {
    pub image: Tensor<f32>,
    pub matched: bool,
    /// Iteration at which the returned image was produced.
    pub iterations: usize,
    pub outcome: PgdOutcome,
}

/// Searches for an image whose sign hash equals `target`, starting from
/// uniform gray with box-only constraints and a constant 4/255 step.
pub fn hash_inversion(model: &FingerprintModel, target: &BinaryHash, beta: f64, iters: usize) -> Result<HashInversion> {
    let cfg = model.config();
    if target.len() != cfg.embed_dim {
        return Err(invalid!("target hash has {} bits, model emits {}", target.len(), cfg.embed_dim));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid!("beta must be positive, got {beta}"));
    }
    let size = cfg.input_size;
    let start = Tensor::full(&cfg.input_shape(), 0.5f32);
    let signs = Tensor::vector(target.signs());
    let budget = AttackBudget::linf(1.0, iters, 4.0 / 255.0).constant_step();
    let outcome = pgd(&start, &budget, Sense::Minimize, |img| {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g, false);
        let xv = g.leaf(img.clone(), true);
        let input = to_model_input(&mut g, xv, size)?;
        let raw = fingerprint_forward_raw(&mut g, &p, input)?;
        let done = BinaryHash::from_values(g.value(raw).data()) == *target;
        let scaled = g.scale(raw, beta);
        let t = g.tanh(scaled);
        let s = g.constant(signs.clone());
        let d = g.sub(t, s)?;
        let out = g.sum_squares(d);
        let value = g.scalar_value(out)? as f64;
        let grad = g.backward(out)?.take(xv).expect("input is differentiable");
        Ok(Evaluation { value, grad, done })
    })?;
    Ok(HashInversion {
        image: outcome.adversarial(&start),
        matched: outcome.stopped_early,
        iterations: outcome.best_iter,
        outcome,
    })
}

/// The image actually queried: `x + δ` after 8-bit quantization and block-DCT
/// compression, at storage resolution.
pub fn realize_and_requery(delta: &Tensor<f32>, x_query: &Tensor<f32>) -> Result<Tensor<f32>> {
    let adv = x_query.zip_map(delta, |a, d| (a + d).clamp(0.0, 1.0))?;
    realize(&adv)
}

/// Per-query attack summary written next to realized adversarial images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub query_id: u64,
    pub objective_trace: Vec<f64>,
    pub feasible: bool,
    pub realized_linf: f64,
}

impl AttackRecord {
    pub fn new(query_id: u64, outcome: &PgdOutcome, x_query: &Tensor<f32>, realized: &Tensor<f32>) -> Result<Self> {
        let adv = outcome.adversarial(x_query);
        let diff = realized.zip_map(&adv, |a, b| a - b)?;
        Ok(Self {
            query_id,
            objective_trace: outcome.best_trace.clone(),
            feasible: outcome.feasible,
            realized_linf: diff.norm_linf(),
        })
    }
}

/// Resizes an image to `size` when its resolution differs.
pub fn at_resolution(image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    if image.shape()[1..] == [size, size] {
        Ok(image.clone())
    } else {
        bilinear_resize(image, size, size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::model::{ComparatorConfig, FingerprintConfig};

    fn image(seed: u64, size: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[3, size, size], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn schedule_enumeration() {
        let b = AttackBudget::standard();
        for t in 1..=50 {
            let expected = match t {
                1..=12 => 4.0,
                13..=25 => 2.0,
                26..=37 => 1.0,
                _ => 0.5,
            } / 255.0;
            assert!((b.step_size(t) - expected).abs() < 1e-15, "t={t}");
        }
    }

    #[test]
    fn projection_examples() {
        let x = Tensor::vector(vec![0.5f32, 0.5]);
        let mut d = Tensor::vector(vec![0.1f32, -0.05]);
        project(&mut d, &x, &AttackBudget::standard()).unwrap();
        assert!((d.data()[0] - 8.0 / 255.0).abs() < 1e-7);
        assert!((d.data()[1] + 8.0 / 255.0).abs() < 1e-7);

        let mut inside = Tensor::vector(vec![0.01f32, -0.02]);
        let before = inside.clone();
        project(&mut inside, &x, &AttackBudget::standard()).unwrap();
        assert_eq!(inside, before);

        let x = Tensor::vector(vec![0.99f32]);
        let mut d = Tensor::vector(vec![0.03f32]);
        project(&mut d, &x, &AttackBudget::linf(0.05, 1, 0.01)).unwrap();
        assert!((d.data()[0] - 0.01).abs() < 1e-6);
        assert!(x.data()[0] + d.data()[0] <= 1.0);
    }

    #[test]
    fn l2_projection_radius() {
        let x = Tensor::full(&[3, 4, 4], 0.5f32);
        let mut d = Tensor::from_fn(&[3, 4, 4], |i| ((i as f32) * 0.37).sin());
        let b = AttackBudget::l2(0.3, 1, 0.1);
        project(&mut d, &x, &b).unwrap();
        assert!(d.norm_l2() <= 0.3);
        assert!(d.norm_l2() > 0.29);
        assert!(is_feasible(&d, &x, &b));
    }

    #[test]
    fn constant_objective_stays_at_zero() {
        let x = image(1, 4);
        let out = pgd(&x, &AttackBudget::standard(), Sense::Maximize, |_| {
            Ok(Evaluation::new(1.0, Tensor::zeros(&[3, 4, 4])))
        })
        .unwrap();
        assert!(out.delta.data().iter().all(|&d| d == 0.0));
        assert_eq!(out.values.len(), 51);
    }

    #[test]
    fn pgd_solves_a_quadratic_inside_the_box() {
        // maximize -(x - c)^2 summed: optimum at c when within budget.
        let x = Tensor::full(&[1, 2, 2], 0.5f32);
        let c = [0.52f32, 0.47, 0.9, 0.1];
        let b = AttackBudget::linf(0.05, 60, 0.01);
        let out = pgd(&x, &b, Sense::Maximize, |adv| {
            let v: f64 = adv.data().iter().zip(&c).map(|(a, c)| -((a - c) as f64).powi(2)).sum();
            let grad = Tensor::new(vec![1, 2, 2], adv.data().iter().zip(&c).map(|(a, c)| -2.0 * (a - c)).collect())?;
            Ok(Evaluation::new(v, grad))
        })
        .unwrap();
        let adv = out.adversarial(&x);
        assert!((adv.data()[0] - 0.52).abs() < 0.003);
        assert!((adv.data()[2] - 0.55).abs() < 1e-6);
        assert!((adv.data()[3] - 0.45).abs() < 1e-6);
        assert!(out.feasible);
        assert!(out.best_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn targeted_self_attack_is_noop() {
        let m = FingerprintModel::init(FingerprintConfig::default(), 2).unwrap();
        let x = image(3, 64);
        let out = targeted_embedding_attack(&m, &x, &x, &AttackBudget::linf(8.0 / 255.0, 3, 4.0 / 255.0)).unwrap();
        assert_eq!(out.best_iter, 0);
        assert!(out.best_value() < 1e-10);
    }

    #[test]
    fn untargeted_attack_increases_distance() {
        let m = FingerprintModel::init(FingerprintConfig::default(), 2).unwrap();
        let x = image(4, 64);
        // At x_query == x_orig the squared distance has zero gradient.
        let q = x.map(|v| (v * 0.9 + 0.05).clamp(0.0, 1.0));
        let out = untargeted_embedding_attack(&m, &q, &x, &AttackBudget::linf(8.0 / 255.0, 5, 4.0 / 255.0)).unwrap();
        assert!(out.best_value() > out.initial_value());
        assert!(out.feasible);
    }

    #[test]
    fn tiny_budget_changes_nothing() {
        let m = ComparatorModel::init(ComparatorConfig::default(), 5).unwrap();
        let (a, b) = (image(6, 32), image(7, 32));
        let out = comparator_class_attack(&m, &a, &b, 1, &AttackBudget::linf(1e-9, 5, 1e-9)).unwrap();
        assert!((out.best_value() - out.initial_value()).abs() < 1e-5);
        let heat = vec![0.5f32; HEATMAP_CELLS];
        let out = heatmap_attack(&m, &a, &b, &heat, &AttackBudget::linf(1e-9, 5, 1e-9), false).unwrap();
        assert!((out.best_value() - out.initial_value()).abs() < 1e-5);
        assert!(out.best_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(heatmap_attack(&m, &a, &b, &[0.0; HEATMAP_CELLS], &AttackBudget::standard(), true).is_err());
    }

    #[test]
    fn hash_of_start_matches_immediately() {
        let m = FingerprintModel::init(FingerprintConfig::default(), 8).unwrap();
        let gray = Tensor::full(&[3, 32, 32], 0.5f32);
        let target = crate::model::sign_hash(&m.embed(&gray).unwrap());
        let inv = hash_inversion(&m, &target, 1.0, 1000).unwrap();
        assert!(inv.matched);
        assert_eq!(inv.iterations, 0);
        assert_eq!(inv.image, gray);
    }

    #[test]
    fn realize_zero_delta() {
        let x = image(9, 16);
        let r = realize_and_requery(&Tensor::zeros(x.shape()), &x).unwrap();
        assert_eq!(r, realize(&x).unwrap());
    }
}
