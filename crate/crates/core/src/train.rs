//! Optimization: polynomial learning-rate decay, SGD with momentum, and the training
//! loop that applies a single loss to the canvas after the last unrolled iteration.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, SegSample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Mode, SegmentationModel, BATCH_NORM_MOMENTUM};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Learning-rate floor reached at `total_steps`.
    pub epsilon: f64,
    pub power: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Number of unrolled iterations; the loss is applied to the canvas after the last.
    pub loss_iteration: usize,
    pub seed: u64,
    pub ignore_label: u8,
    pub random_crop: bool,
    pub random_flip: bool,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            epsilon: 1e-6,
            power: 0.9,
            momentum: 0.95,
            nesterov: false,
            total_steps: 2000,
            batch_size: 4,
            loss_iteration: 6,
            seed: 0,
            ignore_label: crate::DEFAULT_IGNORE_LABEL,
            random_crop: false,
            random_flip: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0 && self.epsilon <= self.base_lr) {
            return Err(Error::Config("epsilon must lie in [0, base_lr]".into()));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::Config("power must be positive".into()));
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.loss_iteration == 0 {
            return Err(Error::Config(
                "total_steps, batch_size and loss_iteration must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `(base_lr - ε) · (1 - step/total)^power + ε`.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Config(format!(
            "step {step} beyond total_steps {}",
            cfg.total_steps
        )));
    }
    let remaining = 1.0 - step as f64 / cfg.total_steps as f64;
    Ok((cfg.base_lr - cfg.epsilon) * remaining.powf(cfg.power) + cfg.epsilon)
}

/// Heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`; with Nesterov the step uses
/// `g + μ·v` instead of `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub nesterov: bool,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new<'a>(momentum: f64, nesterov: bool, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        SgdMomentum {
            momentum,
            nesterov,
            velocity: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite or
    /// mis-shaped.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::shape("sgd_momentum_step", "parameter/gradient count mismatch"));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::shape(
                    "sgd_momentum_step",
                    format!("parameter {} vs gradient {}", p.shape(), g.shape()),
                ));
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "gradient" });
        }
        let mu = self.momentum;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = mu * *vv + gv;
                let dir = if self.nesterov { gv + mu * *vv } else { *vv };
                *pv -= lr * dir;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
}

/// Builds an (n, 3, s, s) batch and its labels from samples, cropping each to `crop`.
pub fn assemble_batch(
    samples: &[&SegSample],
    crop: usize,
    rng: Option<&mut ChaCha8Rng>,
    flip: bool,
) -> Result<(Tensor, Vec<u8>)> {
    let mut images = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len() * crop * crop);
    let mut rng = rng;
    for s in samples {
        let (h, w) = (s.label.height, s.label.width);
        if h < crop || w < crop {
            return Err(Error::Config(format!("sample {h}x{w} smaller than crop {crop}")));
        }
        let (y0, x0, mirror) = match rng.as_deref_mut() {
            Some(r) => (
                r.gen_range(0..=h - crop),
                r.gen_range(0..=w - crop),
                flip && r.gen_bool(0.5),
            ),
            None => ((h - crop) / 2, (w - crop) / 2, false),
        };
        let mut img = Tensor::zeros(Shape::new(1, 3, crop, crop));
        let mut lab = LabelMap::new(crop, crop);
        for y in 0..crop {
            for x in 0..crop {
                let sx = if mirror { x0 + crop - 1 - x } else { x0 + x };
                for c in 0..3 {
                    img.set(0, c, y, x, s.image.at(0, c, y0 + y, sx));
                }
                lab.set(y, x, s.label.get(y0 + y, sx));
            }
        }
        images.push(img);
        labels.extend_from_slice(&lab.data);
    }
    Ok((Tensor::stack(&images)?, labels))
}

/// Loss of the canvas after `iterations` steps, upsampled to label resolution.
/// Returns the graph, the loss node and the parameter leaves.
pub fn loss_graph(
    model: &SegmentationModel,
    images: &Tensor,
    labels: &[u8],
    iterations: usize,
    ignore: u8,
    mode: Mode,
) -> Result<(Graph, crate::Var, Vec<crate::Var>, Vec<crate::graph::ChannelStats>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let x = g.constant(images.clone());
    let (features, stats) = model.encode_graph(&mut g, &bound, x, mode)?;
    let fs = g.shape(features);
    let mut canvas = g.constant(Tensor::zeros(Shape::new(fs.n, model.classes(), fs.h, fs.w)));
    let mut states: Vec<_> = model
        .zero_state(fs.n, fs.h, fs.w)
        .iter()
        .map(|s| s.bind(&mut g))
        .collect();
    for _ in 0..iterations {
        canvas = model.iterate_graph(&mut g, &bound, features, canvas, &mut states)?.canvas;
    }
    let is = images.shape();
    let up = g.bilinear_upsample(canvas, is.h, is.w)?;
    let loss = g.softmax_cross_entropy(up, labels, ignore)?;
    Ok((g, loss, bound.vars(), stats))
}

/// Trains in place. `on_step` sees every step after the update is applied (and may
/// checkpoint); an error from it stops training.
pub fn train(
    model: &mut SegmentationModel,
    dataset: &[SegSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&SegmentationModel, &StepRecord) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let k = model.classes();
    for (i, s) in dataset.iter().enumerate() {
        if let Some(bad) = s.label.data.iter().find(|&&l| l != cfg.ignore_label && l as usize >= k) {
            return Err(Error::Config(format!("sample {i} has label {bad} but the model has {k} classes")));
        }
    }
    model.config.iterations = cfg.loss_iteration;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = SgdMomentum::new(
        cfg.momentum,
        cfg.nesterov,
        model.params.named().into_iter().map(|(_, t)| t),
    );
    let mut order: Vec<usize> = Vec::new();
    let mut report = TrainReport::default();
    let crop = model.config.crop_size;
    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            batch.push(&dataset[order.pop().expect("refilled")]);
        }
        let augment = cfg.random_crop || cfg.random_flip;
        let (images, labels) = assemble_batch(
            &batch,
            crop,
            if augment { Some(&mut rng) } else { None },
            cfg.random_flip,
        )?;
        let (g, loss, vars, stats) =
            loss_graph(model, &images, &labels, cfg.loss_iteration, cfg.ignore_label, Mode::Train).map_err(
                |e| match e {
                    Error::NonFinite { .. } => Error::Diverged { step, loss: f64::NAN },
                    other => other,
                },
            )?;
        let loss_value = g.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Diverged { step, loss: loss_value });
        }
        let grads = g.backward(loss)?;
        let grad_refs: Vec<&Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        let lr = lr_at(cfg, step)?;
        opt.step(&mut model.params.tensors_mut(), &grad_refs, lr)
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { step, loss: loss_value },
                other => other,
            })?;
        for (layer, s) in model.params.encoder.iter_mut().zip(&stats) {
            let m = BATCH_NORM_MOMENTUM;
            for (r, v) in layer.running_mean.data_mut().iter_mut().zip(&s.mean) {
                *r = m * *r + (1.0 - m) * v;
            }
            for (r, v) in layer.running_var.data_mut().iter_mut().zip(&s.var) {
                *r = m * *r + (1.0 - m) * v;
            }
        }
        let record = StepRecord {
            step,
            lr,
            loss: loss_value,
        };
        report.steps.push(record);
        on_step(model, &record)?;
    }
    Ok(report)
}
