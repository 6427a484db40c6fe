//! Standard and adversarial (min-max) training of the fingerprint network and
//! the comparator.
//!
//! Each image gets its own tape; the batch loss is built on a separate tape
//! over the per-image outputs, and its gradients seed the per-image reverse
//! passes. Parameter gradients are summed in image order, so results do not
//! depend on the thread count.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{is_feasible, project, AttackBudget};
use crate::corpus::{derive_seed, CorpusImage, Query};
use crate::error::{invalid, Result};
use crate::eval::{build_flat_index, evaluate_queries, make_pair, RetrievalSettings};
use crate::losses::{hashing_penalty_graph, DEFAULT_TEMPERATURE};
use crate::metrics::recall_at_k;
use crate::model::{
    comparator_loss_graph, comparator_trunk, fingerprint_forward_raw, ComparatorModel, FingerprintModel,
    ModelParams, PairLabel, Sgd,
};
use crate::parallel::try_map_indexed;
use crate::retrieval::VectorIndex;
use crate::tensor::{Graph, Tensor, Var};
use crate::transforms::{apply_editorial, apply_non_editorial, bilinear_resize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_pairs: usize,
    pub lr: f32,
    pub momentum: f32,
    /// PGD ascent steps per batch; 0 is standard training.
    pub inner_steps: usize,
    pub train_eps: f64,
    pub inner_step_size: f64,
    /// Weight of the hashing penalty; 0 disables it.
    pub alpha: f64,
    pub temperature: f64,
    /// Leading epochs trained without the inner loop.
    pub warm_start_epochs: usize,
    /// Probability that a positive pair uses an editorial second view.
    pub editorial_prob: f64,
    pub seed: u64,
    /// Evaluate the probe every this many epochs (0 = never).
    pub eval_every: usize,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_pairs: 32,
            lr: 0.01,
            momentum: 0.9,
            inner_steps: 0,
            train_eps: 4.0 / 255.0,
            inner_step_size: 2.0 / 255.0,
            alpha: 0.0,
            temperature: DEFAULT_TEMPERATURE,
            warm_start_epochs: 2,
            editorial_prob: 0.5,
            seed: 0,
            eval_every: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Three inner steps of size `eps / 2`.
    pub fn robust(eps: f64) -> Self {
        Self {
            inner_steps: 3,
            train_eps: eps,
            inner_step_size: eps / 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_pairs < 1 {
            return Err(invalid!("batch must hold at least one pair"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid!("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must be in [0, 1)"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid!("alpha must be non-negative"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid!("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.editorial_prob) {
            return Err(invalid!("editorial_prob must be a probability"));
        }
        if self.inner_steps > 0 {
            self.inner_budget().validate()?;
        }
        Ok(())
    }

    fn inner_budget(&self) -> AttackBudget {
        AttackBudget::linf(self.train_eps, self.inner_steps.max(1), self.inner_step_size).constant_step()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub clean_loss: f64,
    pub robust_loss: f64,
    pub hash_penalty: f64,
    /// Every inner iterate satisfied the budget.
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub epoch: usize,
    pub clean_loss: f64,
    pub robust_loss: f64,
    pub standard_recall_at_1: Option<f64>,
    pub adversarial_recall_at_1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub records: Vec<CurveRecord>,
}

impl TrainingCurve {
    pub fn last(&self) -> Option<&CurveRecord> {
        self.records.last()
    }
}

struct ImagePass {
    graph: Graph<f32>,
    params: Vec<Var>,
    input: Var,
    output: Var,
}

/// One tape through the fingerprint trunk. Either the parameters or the
/// input are differentiable, never both.
fn fingerprint_pass(params: &ModelParams<f32>, image: &Tensor<f32>, param_grads: bool) -> Result<ImagePass> {
    let mut graph = Graph::new();
    let p = params.bind(&mut graph, param_grads);
    let input = graph.leaf(image.clone(), !param_grads);
    let output = fingerprint_forward_raw(&mut graph, &p, input)?;
    Ok(ImagePass {
        graph,
        params: p,
        input,
        output,
    })
}

struct BatchLoss {
    ntxent: f64,
    hash: f64,
    seeds: Vec<Tensor<f32>>,
}

/// NT-Xent over the normalized outputs, plus `alpha` times the mean hashing
/// penalty of the raw outputs when `with_hash` is set. Returns gradients
/// with respect to each raw output.
fn contrastive_loss(passes: &[ImagePass], tau: f64, alpha: f64, with_hash: bool) -> Result<BatchLoss> {
    let mut g = Graph::new();
    let raws: Vec<Var> = passes
        .iter()
        .map(|p| g.leaf(p.graph.value(p.output).clone(), true))
        .collect();
    let zs: Vec<Var> = raws.iter().map(|&r| g.l2_normalize(r)).collect();
    let stacked = g.stack(&zs)?;
    let nt = g.nt_xent(stacked, tau)?;
    let ntxent = g.scalar_value(nt)? as f64;
    let mut hash = 0.0;
    let total = if with_hash && alpha > 0.0 {
        let terms = raws
            .iter()
            .map(|&r| hashing_penalty_graph(&mut g, r))
            .collect::<Result<Vec<_>>>()?;
        let mut sum = terms[0];
        for &t in &terms[1..] {
            sum = g.add(sum, t)?;
        }
        hash = g.scalar_value(sum)? as f64 / raws.len() as f64;
        let weighted = g.scale(sum, alpha / raws.len() as f64);
        g.add(nt, weighted)?
    } else {
        nt
    };
    let mut grads = g.backward(total)?;
    let seeds = raws.iter().map(|&r| grads.take(r).expect("leaf gradient")).collect();
    Ok(BatchLoss { ntxent, hash, seeds })
}

fn input_grads(passes: &[ImagePass], seeds: &[Tensor<f32>], threads: usize) -> Result<Vec<Tensor<f32>>> {
    try_map_indexed(passes.len(), threads, |i| {
        let p = &passes[i];
        let mut grads = p.graph.backward_with(p.output, seeds[i].clone())?;
        Ok(grads.take(p.input).expect("input is differentiable"))
    })
}

/// Per-image parameter gradients, summed in image order and scaled.
fn param_grads(passes: &[ImagePass], seeds: &[Tensor<f32>], scale: f32, threads: usize) -> Result<Vec<Tensor<f32>>> {
    let per_image = try_map_indexed(passes.len(), threads, |i| {
        let p = &passes[i];
        let mut grads = p.graph.backward_with(p.output, seeds[i].clone())?;
        Ok::<_, crate::Error>(p.params.iter().map(|&v| grads.take(v).expect("parameter gradient")).collect::<Vec<_>>())
    })?;
    sum_grads(per_image, scale)
}

fn sum_grads(per_item: Vec<Vec<Tensor<f32>>>, scale: f32) -> Result<Vec<Tensor<f32>>> {
    let mut iter = per_item.into_iter();
    let mut total = iter.next().ok_or_else(|| invalid!("empty batch"))?;
    for grads in iter {
        for (t, g) in total.iter_mut().zip(&grads) {
            t.add_assign(g)?;
        }
    }
    if scale != 1.0 {
        for t in &mut total {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    Ok(total)
}

fn sign_step(delta: &mut Tensor<f32>, grad: &Tensor<f32>, step: f32) {
    for (d, &g) in delta.data_mut().iter_mut().zip(grad.data()) {
        if g != 0.0 {
            *d += step * g.signum();
        }
    }
}

fn add(x: &Tensor<f32>, d: &Tensor<f32>) -> Tensor<f32> {
    x.zip_map(d, |a, b| a + b).expect("same shape")
}

/// One outer update on `views` (rows `i` and `N + i` are positives). With
/// `inner_steps > 0` the update is taken at the best-loss iterate of a joint
/// sign-gradient ascent on NT-Xent over all perturbations.
pub fn robust_contrastive_step(
    params: &mut ModelParams<f32>,
    sgd: &mut Sgd,
    views: &[Tensor<f32>],
    config: &TrainConfig,
    inner_steps: usize,
) -> Result<StepLosses> {
    if views.len() < 2 || views.len() % 2 != 0 {
        return Err(invalid!("a batch needs an even number of at least two views, got {}", views.len()));
    }
    let threads = config.threads;
    let (tau, alpha) = (config.temperature, config.alpha);
    let full = |images: &[Tensor<f32>], p: &ModelParams<f32>| {
        try_map_indexed(images.len(), threads, |i| fingerprint_pass(p, &images[i], true))
    };
    if inner_steps == 0 {
        let passes = full(views, params)?;
        let loss = contrastive_loss(&passes, tau, alpha, true)?;
        let grads = param_grads(&passes, &loss.seeds, 1.0, threads)?;
        sgd.step(params, &grads);
        return Ok(StepLosses {
            clean_loss: loss.ntxent,
            robust_loss: loss.ntxent,
            hash_penalty: loss.hash,
            feasible: true,
        });
    }
    let budget = config.inner_budget();
    let step = config.inner_step_size as f32;
    let mut deltas: Vec<Tensor<f32>> = views.iter().map(|v| Tensor::zeros(v.shape())).collect();
    let mut passes = try_map_indexed(views.len(), threads, |i| fingerprint_pass(params, &views[i], false))?;
    let mut loss = contrastive_loss(&passes, tau, alpha, false)?;
    let clean_loss = loss.ntxent;
    let mut best = (loss.ntxent, deltas.clone());
    let mut feasible = true;
    let mut final_passes = None;
    for s in 1..=inner_steps {
        let grads = input_grads(&passes, &loss.seeds, threads)?;
        for ((d, g), x) in deltas.iter_mut().zip(&grads).zip(views) {
            sign_step(d, g, step);
            project(d, x, &budget)?;
            feasible &= is_feasible(d, x, &budget);
        }
        let adv: Vec<Tensor<f32>> = views.iter().zip(&deltas).map(|(x, d)| add(x, d)).collect();
        if s < inner_steps {
            passes = try_map_indexed(adv.len(), threads, |i| fingerprint_pass(params, &adv[i], false))?;
            loss = contrastive_loss(&passes, tau, alpha, false)?;
            if loss.ntxent > best.0 {
                best = (loss.ntxent, deltas.clone());
            }
        } else {
            // The last iterate is evaluated with parameter gradients so that
            // it can be used directly when it is the best one.
            let last = full(&adv, params)?;
            let last_loss = contrastive_loss(&last, tau, alpha, true)?;
            if last_loss.ntxent > best.0 {
                best = (last_loss.ntxent, deltas.clone());
                final_passes = Some((last, last_loss));
            }
        }
    }
    let (passes, loss) = match final_passes {
        Some(p) => p,
        None => {
            let adv: Vec<Tensor<f32>> = views.iter().zip(&best.1).map(|(x, d)| add(x, d)).collect();
            let passes = full(&adv, params)?;
            let loss = contrastive_loss(&passes, tau, alpha, true)?;
            (passes, loss)
        }
    };
    let grads = param_grads(&passes, &loss.seeds, 1.0, threads)?;
    sgd.step(params, &grads);
    Ok(StepLosses {
        clean_loss,
        robust_loss: loss.ntxent,
        hash_penalty: loss.hash,
        feasible,
    })
}

/// Builds the `2N` views of a batch at model resolution: a non-editorial
/// view of each source, then a second non-editorial or editorial view.
pub fn make_views(
    corpus: &[CorpusImage],
    sources: &[usize],
    size: usize,
    editorial_prob: f64,
    seed: u64,
    threads: usize,
) -> Result<Vec<Tensor<f32>>> {
    let n = sources.len();
    let pairs = try_map_indexed(n, threads, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let x = &corpus[sources[i]].pixels;
        let (a, _) = apply_non_editorial(x, &mut rng)?;
        let b = if corpus.len() > 1 && rng.random_bool(editorial_prob) {
            let mut d = rng.random_range(0..corpus.len() - 1);
            if d >= sources[i] {
                d += 1;
            }
            apply_editorial(x, &corpus[d].pixels, corpus[d].id, &mut rng)?.0
        } else {
            apply_non_editorial(x, &mut rng)?.0
        };
        let fit = |t: Tensor<f32>| -> Result<Tensor<f32>> {
            if t.shape()[1..] == [size, size] {
                Ok(t)
            } else {
                bilinear_resize(&t, size, size)
            }
        };
        Ok::<_, crate::Error>((fit(a)?, fit(b)?))
    })?;
    let (first, second): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(first.into_iter().chain(second).collect())
}

/// Standard and adversarial recall of a fingerprint model on fixed queries.
pub struct RecallProbe<'a> {
    pub database: &'a [CorpusImage],
    pub queries: &'a [Query],
    pub budget: AttackBudget,
    pub realize: bool,
    pub threads: usize,
}

impl RecallProbe<'_> {
    /// `(standard R@1, adversarial R@1)`.
    pub fn measure(&self, model: &FingerprintModel) -> Result<(f64, f64)> {
        let index = VectorIndex::Flat(build_flat_index(model, self.database, self.threads)?);
        let originals: HashMap<u64, &Tensor<f32>> = self.database.iter().map(|c| (c.id, &c.pixels)).collect();
        let settings = RetrievalSettings {
            realize: self.realize,
            threads: self.threads,
            ..RetrievalSettings::default()
        };
        let (clean, _) = evaluate_queries(model, &index, self.queries, &originals, None, &settings)?;
        let (adv, _) = evaluate_queries(model, &index, self.queries, &originals, Some(&self.budget), &settings)?;
        Ok((recall_at_k(&clean, 1)?, recall_at_k(&adv, 1)?))
    }
}

/// Trains `model` in place for `config.epochs` epochs over shuffled batches
/// of `corpus` sources. Final batches with fewer than two pairs are dropped.
pub fn train_fingerprint(
    model: &mut FingerprintModel,
    corpus: &[CorpusImage],
    config: &TrainConfig,
    probe: Option<&RecallProbe<'_>>,
) -> Result<TrainingCurve> {
    config.validate()?;
    let n = config.batch_pairs;
    if config.epochs > 0 && corpus.len() < n.max(2) {
        return Err(invalid!("training needs at least {} sources, got {}", n.max(2), corpus.len()));
    }
    let size = model.config().input_size;
    let mut sgd = Sgd::new(config.lr, config.momentum);
    let mut curve = TrainingCurve::default();
    for epoch in 0..config.epochs {
        let epoch_seed = derive_seed(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let inner = if epoch < config.warm_start_epochs { 0 } else { config.inner_steps };
        let (mut clean, mut robust, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(n).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let views = make_views(
                corpus,
                chunk,
                size,
                config.editorial_prob,
                derive_seed(epoch_seed, 1 + b as u64),
                config.threads,
            )?;
            let losses = robust_contrastive_step(model.params_mut(), &mut sgd, &views, config, inner)?;
            clean += losses.clean_loss;
            robust += losses.robust_loss;
            batches += 1;
        }
        if !model.params().is_finite() {
            return Err(invalid!("training diverged at epoch {}", epoch + 1));
        }
        let due = config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
        let (standard, adversarial) = match (probe, due) {
            (Some(p), true) => {
                let (s, a) = p.measure(model)?;
                (Some(s), Some(a))
            }
            _ => (None, None),
        };
        curve.records.push(CurveRecord {
            epoch: epoch + 1,
            clean_loss: clean / batches.max(1) as f64,
            robust_loss: robust / batches.max(1) as f64,
            standard_recall_at_1: standard,
            adversarial_recall_at_1: adversarial,
        });
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorTrainConfig {
    pub epochs: usize,
    pub batch_pairs: usize,
    /// Pairs drawn per epoch (classes balanced).
    pub pairs_per_epoch: usize,
    pub lr: f32,
    pub momentum: f32,
    pub inner_steps: usize,
    pub train_eps: f64,
    pub inner_step_size: f64,
    pub w_c: f64,
    pub w_t: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ComparatorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_pairs: 32,
            pairs_per_epoch: 1500,
            lr: 0.01,
            momentum: 0.9,
            inner_steps: 0,
            train_eps: 8.0 / 255.0,
            inner_step_size: 4.0 / 255.0,
            w_c: 0.5,
            w_t: 0.5,
            seed: 0,
            threads: 1,
        }
    }
}

impl ComparatorTrainConfig {
    pub fn robust(eps: f64) -> Self {
        Self {
            inner_steps: 3,
            train_eps: eps,
            inner_step_size: eps / 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_pairs < 1 {
            return Err(invalid!("batch must hold at least one pair"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid!("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must be in [0, 1)"));
        }
        if !(self.w_c >= 0.0 && self.w_t >= 0.0) {
            return Err(invalid!("loss weights must be non-negative"));
        }
        if self.inner_steps > 0 {
            self.inner_budget().validate()?;
        }
        Ok(())
    }

    fn inner_budget(&self) -> AttackBudget {
        AttackBudget::linf(self.train_eps, self.inner_steps.max(1), self.inner_step_size).constant_step()
    }
}

/// A training pair at comparator resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub reference: Tensor<f32>,
    pub query: Tensor<f32>,
    pub label: PairLabel,
}

struct PairOutcome {
    clean: f64,
    robust: f64,
    feasible: bool,
    grads: Vec<Tensor<f32>>,
}

fn comparator_value(
    params: &ModelParams<f32>,
    pair: &TrainingPair,
    query: &Tensor<f32>,
    config: &ComparatorTrainConfig,
    param_grads: bool,
) -> Result<(f64, Vec<Tensor<f32>>, Option<Tensor<f32>>)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, param_grads);
    let a = g.constant(pair.reference.clone());
    let b = g.leaf(query.clone(), !param_grads);
    let out = comparator_trunk(&mut g, &p, a, b)?;
    let loss = comparator_loss_graph(&mut g, out, &pair.label, config.w_c, config.w_t)?;
    let value = g.scalar_value(loss)? as f64;
    let mut grads = g.backward(loss)?;
    if param_grads {
        Ok((value, p.iter().map(|&v| grads.take(v).expect("parameter gradient")).collect(), None))
    } else {
        Ok((value, Vec::new(), grads.take(b)))
    }
}

fn comparator_pair_step(
    params: &ModelParams<f32>,
    pair: &TrainingPair,
    config: &ComparatorTrainConfig,
    inner_steps: usize,
) -> Result<PairOutcome> {
    if inner_steps == 0 {
        let (v, grads, _) = comparator_value(params, pair, &pair.query, config, true)?;
        return Ok(PairOutcome {
            clean: v,
            robust: v,
            feasible: true,
            grads,
        });
    }
    let budget = config.inner_budget();
    let step = config.inner_step_size as f32;
    let x = &pair.query;
    let mut delta = Tensor::zeros(x.shape());
    let (clean, _, mut grad) = comparator_value(params, pair, x, config, false)?;
    let mut best = (clean, delta.clone(), None);
    let mut feasible = true;
    for s in 1..=inner_steps {
        sign_step(&mut delta, grad.as_ref().expect("input gradient"), step);
        project(&mut delta, x, &budget)?;
        feasible &= is_feasible(&delta, x, &budget);
        let adv = add(x, &delta);
        if s < inner_steps {
            let (v, _, g) = comparator_value(params, pair, &adv, config, false)?;
            grad = g;
            if v > best.0 {
                best = (v, delta.clone(), None);
            }
        } else {
            let (v, grads, _) = comparator_value(params, pair, &adv, config, true)?;
            if v > best.0 {
                best = (v, delta.clone(), Some(grads));
            }
        }
    }
    let grads = match best.2 {
        Some(g) => g,
        None => comparator_value(params, pair, &add(x, &best.1), config, true)?.1,
    };
    Ok(PairOutcome {
        clean,
        robust: best.0,
        feasible,
        grads,
    })
}

/// One outer update on the mean pair loss. The inner ascent perturbs only
/// the query image of each pair; pairs are independent, so each keeps its
/// own best iterate.
pub fn robust_comparator_step(
    params: &mut ModelParams<f32>,
    sgd: &mut Sgd,
    batch: &[TrainingPair],
    config: &ComparatorTrainConfig,
    inner_steps: usize,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(invalid!("empty comparator batch"));
    }
    let snapshot = &*params;
    let outcomes = try_map_indexed(batch.len(), config.threads, |i| {
        comparator_pair_step(snapshot, &batch[i], config, inner_steps)
    })?;
    let n = batch.len() as f64;
    let clean = outcomes.iter().map(|o| o.clean).sum::<f64>() / n;
    let robust = outcomes.iter().map(|o| o.robust).sum::<f64>() / n;
    let feasible = outcomes.iter().all(|o| o.feasible);
    let grads = sum_grads(outcomes.into_iter().map(|o| o.grads).collect(), 1.0 / n as f32)?;
    sgd.step(params, &grads);
    Ok(StepLosses {
        clean_loss: clean,
        robust_loss: robust,
        hash_penalty: 0.0,
        feasible,
    })
}

/// Draws `n` labelled pairs (classes cycling 0, 1, 2) at `size` resolution.
pub fn make_training_pairs(
    corpus: &[CorpusImage],
    n: usize,
    size: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<TrainingPair>> {
    try_map_indexed(n, threads, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let src = rng.random_range(0..corpus.len());
        let (r, q, label) = make_pair(corpus, src, i % 3, &mut rng)?;
        let fit = |t: Tensor<f32>| -> Result<Tensor<f32>> {
            if t.shape()[1..] == [size, size] {
                Ok(t)
            } else {
                bilinear_resize(&t, size, size)
            }
        };
        Ok(TrainingPair {
            reference: fit(r)?,
            query: fit(q)?,
            label,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparatorEpoch {
    pub epoch: usize,
    pub clean_loss: f64,
    pub robust_loss: f64,
}

pub fn train_comparator(
    model: &mut ComparatorModel,
    corpus: &[CorpusImage],
    config: &ComparatorTrainConfig,
) -> Result<Vec<ComparatorEpoch>> {
    config.validate()?;
    if config.epochs > 0 && corpus.len() < 2 {
        return Err(invalid!("comparator training needs at least two images"));
    }
    let size = model.config().input_size;
    let mut sgd = Sgd::new(config.lr, config.momentum);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_seed = derive_seed(config.seed, epoch as u64);
        let mut pairs = make_training_pairs(corpus, config.pairs_per_epoch, size, epoch_seed, config.threads)?;
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed ^ 0x5eed));
        let (mut clean, mut robust, mut batches) = (0.0, 0.0, 0usize);
        for chunk in pairs.chunks(config.batch_pairs) {
            let losses = robust_comparator_step(model.params_mut(), &mut sgd, chunk, config, config.inner_steps)?;
            clean += losses.clean_loss;
            robust += losses.robust_loss;
            batches += 1;
        }
        if !model.params().is_finite() {
            return Err(invalid!("comparator training diverged at epoch {}", epoch + 1));
        }
        let rec = ComparatorEpoch {
            epoch: epoch + 1,
            clean_loss: clean / batches.max(1) as f64,
            robust_loss: robust / batches.max(1) as f64,
        };
        curve.push(rec);
    }
    Ok(curve)
}

/// Twin runs differing only in the number of inner steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config: TrainConfig,
    pub one_step: TrainingCurve,
    pub three_step: TrainingCurve,
    pub final_adversarial_recall_one_step: Option<f64>,
    pub final_adversarial_recall_three_step: Option<f64>,
}

pub fn overfitting_probe(
    init: &FingerprintModel,
    corpus: &[CorpusImage],
    base: &TrainConfig,
    probe: &RecallProbe<'_>,
) -> Result<ProbeReport> {
    let run = |steps: usize| -> Result<TrainingCurve> {
        let mut model = init.clone();
        let cfg = TrainConfig {
            inner_steps: steps,
            ..base.clone()
        };
        train_fingerprint(&mut model, corpus, &cfg, Some(probe))
    };
    let one_step = run(1)?;
    let three_step = run(3)?;
    let last = |c: &TrainingCurve| c.records.iter().rev().find_map(|r| r.adversarial_recall_at_1);
    Ok(ProbeReport {
        config: base.clone(),
        final_adversarial_recall_one_step: last(&one_step),
        final_adversarial_recall_three_step: last(&three_step),
        one_step,
        three_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use crate::model::{ComparatorConfig, FingerprintConfig};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_pairs: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_params() {
        let corpus = generate_corpus(8, 32, 1).unwrap();
        let mut m = FingerprintModel::init(FingerprintConfig::default(), 3).unwrap();
        let before = m.clone();
        let cfg = TrainConfig { epochs: 0, ..tiny_config() };
        let curve = train_fingerprint(&mut m, &corpus, &cfg, None).unwrap();
        assert!(curve.records.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let corpus = generate_corpus(8, 64, 2).unwrap();
        let init = FingerprintModel::init(FingerprintConfig::default(), 4).unwrap();
        let mut cfg = TrainConfig {
            warm_start_epochs: 0,
            ..TrainConfig::robust(4.0 / 255.0)
        };
        cfg.epochs = 1;
        cfg.batch_pairs = 4;
        let mut a = init.clone();
        let mut b = init.clone();
        let ca = train_fingerprint(&mut a, &corpus, &cfg, None).unwrap();
        cfg.threads = 3;
        let cb = train_fingerprint(&mut b, &corpus, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_ne!(a, init);
    }

    #[test]
    fn robust_loss_dominates_clean_loss() {
        let corpus = generate_corpus(8, 64, 3).unwrap();
        let m = FingerprintModel::init(FingerprintConfig::default(), 5).unwrap();
        let views = make_views(&corpus, &[0, 1, 2, 3], 32, 0.5, 7, 1).unwrap();
        let cfg = TrainConfig::robust(4.0 / 255.0);
        let mut p = m.params().clone();
        let losses = robust_contrastive_step(&mut p, &mut Sgd::new(0.01, 0.9), &views, &cfg, 3).unwrap();
        assert!(losses.feasible);
        assert!(losses.robust_loss >= losses.clean_loss);

        // Zero inner steps report the clean loss as both values.
        let mut p0 = m.params().clone();
        let l0 = robust_contrastive_step(&mut p0, &mut Sgd::new(0.01, 0.9), &views, &cfg, 0).unwrap();
        assert_eq!(l0.clean_loss, l0.robust_loss);
        assert!((l0.clean_loss - losses.clean_loss).abs() < 1e-5);
    }

    #[test]
    fn comparator_step_properties() {
        let corpus = generate_corpus(6, 64, 4).unwrap();
        let pairs = make_training_pairs(&corpus, 6, 32, 1, 1).unwrap();
        let snapshot = pairs.clone();
        let m = ComparatorModel::init(ComparatorConfig::default(), 6).unwrap();
        let cfg = ComparatorTrainConfig::robust(8.0 / 255.0);
        let mut p = m.params().clone();
        let losses = robust_comparator_step(&mut p, &mut Sgd::new(0.01, 0.9), &pairs, &cfg, 3).unwrap();
        assert!(losses.feasible);
        assert!(losses.robust_loss >= losses.clean_loss);
        assert_eq!(pairs, snapshot);
        assert_ne!(&p, m.params());
    }
}
