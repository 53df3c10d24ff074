//! Euclidean-loss training, per-device fine-tuning and distillation.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{apply_shift, shift_lattice, FrameSample};
use crate::error::{Error, Result};
use crate::geometry::Orientation;
use crate::model::{Batch, ModelConfig};
use crate::optim::sgd_step;
use crate::params::{Bindings, ModelParams};
use crate::rng::{stream, tag};
use crate::tensor::{Graph, Tensor, Var};

/// `(1/2N)·Σᵢ‖predᵢ − targetᵢ‖²` on detached tensors.
pub fn euclidean_loss(pred: &Tensor, target: &Tensor) -> Result<f32> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let l = g.euclidean_loss(p, t)?;
    Ok(g.value(l).data()[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_initial: f32,
    pub lr_drop_iteration: usize,
    pub lr_after_drop: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Sample from the 25-fold shifted pool instead of the raw frames.
    pub augment_train: bool,
    /// Largest augmentation shift as a fraction of the crop side.
    pub max_shift_frac: f64,
    /// Record the loss every this many steps (step 0 is always recorded).
    pub trace_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// 150k iterations of 256, lr 0.001 dropping to 0.0001 at 75k,
    /// momentum 0.9, weight decay 0.0005.
    pub fn paper() -> Self {
        TrainConfig {
            iterations: 150_000,
            batch_size: 256,
            lr_initial: 0.001,
            lr_drop_iteration: 75_000,
            lr_after_drop: 0.0001,
            momentum: 0.9,
            weight_decay: 0.0005,
            augment_train: false,
            max_shift_frac: 0.05,
            trace_every: 100,
            seed: 0,
        }
    }

    /// Short schedule for the 32-pixel desk network.
    pub fn desk() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 16,
            lr_drop_iteration: 1500,
            trace_every: 10,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.trace_every == 0 {
            return Err(Error::Config("batch_size and trace_every must be positive".into()));
        }
        if self.lr_drop_iteration > self.iterations {
            return Err(Error::Config(format!(
                "lr_drop_iteration {} exceeds iterations {}",
                self.lr_drop_iteration, self.iterations
            )));
        }
        let rates = [self.lr_initial, self.lr_after_drop];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must be in [0, 1), weight decay ≥ 0".into()));
        }
        if !(0.0..0.5).contains(&self.max_shift_frac) {
            return Err(Error::Config("max_shift_frac must be in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Step schedule: `lr_initial` before the drop iteration, `lr_after_drop` from it on.
    pub fn lr_at(&self, step: usize) -> f32 {
        if step < self.lr_drop_iteration {
            self.lr_initial
        } else {
            self.lr_after_drop
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f32,
    pub loss: f32,
}

/// Loss trace as `step,lr,loss` CSV.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in trace {
        s.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

/// Draws minibatches from a per-epoch permutation of the training pool. With
/// augmentation the pool holds every (frame, lattice shift) pair.
struct Sampler<'a> {
    data: &'a [FrameSample],
    shifts: Option<[crate::data::ShiftKey; 25]>,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a [FrameSample], cfg: &TrainConfig) -> Self {
        let shifts = cfg.augment_train.then(|| {
            shift_lattice(cfg.max_shift_frac * data[0].crop_size() as f64)
        });
        Sampler {
            data,
            shifts,
            seed: cfg.seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        }
    }

    fn pool_len(&self) -> usize {
        self.data.len() * if self.shifts.is_some() { 25 } else { 1 }
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.pool_len()).collect();
            self.order.shuffle(&mut stream(self.seed, &[tag::SHUFFLE, self.epoch]));
            self.epoch += 1;
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn next_batch(&mut self, size: usize) -> Vec<Cow<'a, FrameSample>> {
        (0..size)
            .map(|_| {
                let i = self.next_index();
                match &self.shifts {
                    None => Cow::Borrowed(&self.data[i]),
                    Some(keys) => {
                        let (frame, shift) = (i / 25, i % 25);
                        if shift == 12 {
                            Cow::Borrowed(&self.data[frame])
                        } else {
                            Cow::Owned(apply_shift(&self.data[frame], keys[shift]))
                        }
                    }
                }
            })
            .collect()
    }
}

/// Shared SGD loop. `loss_fn` records one minibatch loss on a fresh graph.
fn run_sgd<F>(
    mut params: ModelParams,
    data: &[FrameSample],
    cfg: &TrainConfig,
    lr_at: impl Fn(usize) -> f32,
    mut loss_fn: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ModelParams, &mut Graph, &[&FrameSample], &mut Bindings) -> Result<Var>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training data is empty".into()));
    }
    let mut sampler = Sampler::new(data, cfg);
    let mut trace = Vec::new();
    for step in 0..cfg.iterations {
        let batch = sampler.next_batch(cfg.batch_size);
        let refs: Vec<&FrameSample> = batch.iter().map(|c| c.as_ref()).collect();
        let mut graph = Graph::new();
        let mut bindings = Bindings::new();
        let loss = loss_fn(&params, &mut graph, &refs, &mut bindings)?;
        let value = graph.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite { step, value });
        }
        let lr = lr_at(step);
        if step % cfg.trace_every == 0 || step + 1 == cfg.iterations {
            trace.push(TraceRow { step, lr, loss: value });
        }
        graph.backward(loss)?;
        params.zero_grads();
        params.absorb_grads(&graph, &bindings)?;
        sgd_step(&mut params, lr, cfg.momentum, cfg.weight_decay)?;
    }
    params.zero_grads();
    Ok(TrainOutcome { params, trace })
}

fn supervised_loss(
    model: &ModelConfig,
    params: &ModelParams,
    graph: &mut Graph,
    samples: &[&FrameSample],
    bindings: &mut Bindings,
) -> Result<Var> {
    let batch = model.batch(samples)?;
    let out = model.forward_graph(params, graph, &batch, bindings)?;
    let t = graph.constant(batch.targets);
    graph.euclidean_loss(out.pred, t)
}

/// Minibatch SGD on the Euclidean loss, starting from `params`.
pub fn train(
    model: &ModelConfig,
    params: ModelParams,
    data: &[FrameSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model.validate()?;
    run_sgd(params, data, cfg, |s| cfg.lr_at(s), |p, g, s, b| supervised_loss(model, p, g, s, b))
}

/// Continues training on a single (device, orientation) subset at the
/// post-drop learning rate. All layers are adjusted.
pub fn fine_tune(
    model: &ModelConfig,
    params: ModelParams,
    data: &[FrameSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let first = data
        .first()
        .ok_or_else(|| Error::Contract("fine-tuning subset is empty".into()))?;
    let key = first.device_key();
    if let Some(other) = data.iter().find(|s| s.device_key() != key) {
        return Err(Error::Contract(format!(
            "fine-tuning subset mixes {} {} with {} {}",
            key.0, key.1, other.device, other.orientation
        )));
    }
    model.validate()?;
    let lr = cfg.lr_after_drop;
    run_sgd(params, data, cfg, |_| lr, |p, g, s, b| supervised_loss(model, p, g, s, b))
}

/// Per-(device, orientation) parameters with a generic fallback.
#[derive(Clone, Debug)]
pub struct FineTuneRegistry {
    pub generic: ModelParams,
    pub tuned: BTreeMap<(String, Orientation), ModelParams>,
}

impl FineTuneRegistry {
    pub fn new(generic: ModelParams) -> Self {
        FineTuneRegistry {
            generic,
            tuned: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, device: &str, o: Orientation, params: ModelParams) {
        self.tuned.insert((device.to_string(), o), params);
    }

    /// Tuned parameters for the key, or the generic model.
    pub fn lookup(&self, device: &str, o: Orientation) -> &ModelParams {
        self.tuned
            .get(&(device.to_string(), o))
            .unwrap_or(&self.generic)
    }
}

pub const PROJECTION: &str = "distill.projection.weight";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the ground-truth term.
    pub alpha: f32,
    /// Weight of the teacher-prediction term.
    pub beta: f32,
    /// Weight of the projected-feature term.
    pub gamma: f32,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("distillation weights must be ≥ 0 and not all zero".into()));
        }
        Ok(())
    }
}

/// `[rows, cols]` matrix with orthonormal columns (`rows ≥ cols`), or
/// orthonormal rows otherwise, from Gram–Schmidt on Gaussian draws.
pub fn orthogonal_init(rows: usize, cols: usize, seed: u64) -> Tensor {
    let (n, k) = (rows.max(cols), rows.min(cols));
    let mut rng = stream(seed, &[tag::INIT, 0x4F52_5448]);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Tensor::from_fn(&[rows, cols], |i| {
        let (r, c) = (i / cols, i % cols);
        if rows >= cols {
            basis[c][r] as f32
        } else {
            basis[r][c] as f32
        }
    })
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub student: ModelParams,
    /// `[teacher feature width, student feature width]`.
    pub projection: Tensor,
    pub trace: Vec<TraceRow>,
}

/// Trains `student` against ground truth, the frozen teacher's predictions,
/// and the teacher's penultimate features through a learned projection.
pub fn distill(
    student_cfg: &ModelConfig,
    student: ModelParams,
    teacher_cfg: &ModelConfig,
    teacher: &ModelParams,
    data: &[FrameSample],
    cfg: &DistillConfig,
    tcfg: &TrainConfig,
) -> Result<DistillOutcome> {
    cfg.validate()?;
    student_cfg.validate()?;
    teacher_cfg.validate()?;
    let mut params = student;
    let proj = orthogonal_init(teacher_cfg.feature_width(), student_cfg.feature_width(), tcfg.seed);
    params.insert(PROJECTION, proj.with_requires_grad())?;

    let loss_fn = |p: &ModelParams, g: &mut Graph, samples: &[&FrameSample], b: &mut Bindings| {
        let batch = Batch::both(samples)?;
        let out = student_cfg.forward_graph(p, g, &batch, b)?;
        let mut terms = Vec::new();
        if cfg.alpha != 0.0 {
            let t = g.constant(batch.targets.clone());
            let l = g.euclidean_loss(out.pred, t)?;
            terms.push(g.scale(l, cfg.alpha));
        }
        if cfg.beta != 0.0 || cfg.gamma != 0.0 {
            let teacher_out = teacher_cfg.predict(teacher, &batch)?;
            if cfg.beta != 0.0 {
                let t = g.constant(teacher_out.pred);
                let l = g.euclidean_loss(out.pred, t)?;
                terms.push(g.scale(l, cfg.beta));
            }
            if cfg.gamma != 0.0 {
                let w = p.bind(g, PROJECTION, b)?;
                let projected = g.fully_connected(out.features, w, None)?;
                let t = g.constant(teacher_out.features);
                let l = g.euclidean_loss(projected, t)?;
                terms.push(g.scale(l, cfg.gamma));
            }
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = g.add(total, *t)?;
        }
        Ok(total)
    };

    // The projection must hold a gradient for every step even when its term is off.
    let uses_projection = cfg.gamma != 0.0;
    let mut outcome = if uses_projection {
        run_sgd(params, data, tcfg, |s| tcfg.lr_at(s), loss_fn)?
    } else {
        let mut frozen_proj = params.remove(PROJECTION)?;
        frozen_proj.set_requires_grad(false);
        let mut o = run_sgd(params, data, tcfg, |s| tcfg.lr_at(s), loss_fn)?;
        o.params.insert(PROJECTION, frozen_proj)?;
        o
    };
    let mut projection = outcome.params.remove(PROJECTION)?;
    projection.set_requires_grad(false);
    Ok(DistillOutcome {
        student: outcome.params,
        projection,
        trace: outcome.trace,
    })
}
