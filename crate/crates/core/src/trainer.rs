//! Full-batch training through the unrolled integrator.
//!
//! Every epoch rolls each training sample forward from its `t = 0` snapshot,
//! scores the predictions against the stored snapshots and backpropagates
//! through all integrator stages. Samples are processed in parallel, each on
//! its own tape, and their gradients are summed in sample order so results
//! do not depend on thread scheduling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::SnapshotDataset;
use crate::error::{Error, Result};
use crate::integrator::{self, Scheme};
use crate::model::{Domain, GradeModel, TapeSystem};
use crate::params::ParamSet;
use crate::schedule::TrainSchedule;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Mean of squared differences over every entry of every pair.
pub fn mse_loss(pred: &[Tensor], target: &[Tensor]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "mse_loss",
            format!("{} predictions, {} targets", pred.len(), target.len()),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        p.same_shape(t, "mse_loss")?;
        sum += p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Err(Error::shape("mse_loss", "no entries"));
    }
    Ok(sum / count as f64)
}

fn check_grads(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(
            "optimizer",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer",
                format!("gradient for {name} has shape {:?}, expected {:?}", g.shape(), p.shape()),
            ));
        }
    }
    Ok(())
}

/// `w ← w − η·∇w` for every parameter.
pub fn sgd_step(params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
    check_grads(params, grads)?;
    for (p, g) in params.tensors_mut().zip(grads) {
        p.axpy(-lr, g)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer {other:?} (expected sgd|adam)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Adam with bias correction; `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        check_grads(params, grads)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.tensors_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

enum Optimizer {
    Sgd,
    Adam(Box<Adam>),
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Box::new(Adam::new(params))),
        }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, grads, lr),
            Optimizer::Adam(a) => a.step(params, grads, lr),
        }
    }
}

/// Which snapshots enter the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// Every snapshot `1..=τ`.
    #[default]
    All,
    /// Only snapshot `τ`.
    Last,
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TargetMode::All),
            "last" => Ok(TargetMode::Last),
            other => Err(Error::config(format!("unknown target mode {other:?} (expected all|last)"))),
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::All => "all",
            TargetMode::Last => "last",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    pub optimizer: OptimizerKind,
    pub targets: TargetMode,
    pub scheme: Scheme,
}

impl TrainConfig {
    pub fn new(schedule: TrainSchedule) -> Self {
        TrainConfig {
            schedule,
            optimizer: OptimizerKind::Sgd,
            targets: TargetMode::All,
            scheme: Scheme::Rk4_38,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Loss before this epoch's update.
    pub loss: f64,
    /// Seconds since training started, taken after the update.
    pub elapsed: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Loss after the last update, at the last epoch's rollout length.
    pub final_loss: Option<f64>,
    pub checkpoint: Option<std::path::PathBuf>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn elapsed(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.elapsed)
    }

    /// Epoch records as CSV (`epoch,steps,lr,loss,elapsed_s`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,steps,lr,loss,elapsed_s\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{:?},{:?},{:.6}\n", e.epoch, e.steps, e.lr, e.loss, e.elapsed));
        }
        s
    }
}

fn target_indices(steps: usize, mode: TargetMode) -> Vec<usize> {
    match mode {
        TargetMode::All => (1..=steps).collect(),
        TargetMode::Last => vec![steps],
    }
}

/// Sum of squared errors of one sample's rollout, and optionally its
/// parameter gradients.
fn sample_loss(
    model: &GradeModel,
    domain: &Domain,
    ds: &SnapshotDataset,
    sample: usize,
    steps: usize,
    targets: &[usize],
    scheme: Scheme,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, domain)?;
    let mut u = tape.constant(ds.snapshot(sample, 0));
    let mut loss = None;
    for k in 1..=steps {
        u = {
            let mut sys = TapeSystem {
                tape: &mut tape,
                model,
                bound: &bound,
                domain,
            };
            integrator::step(&mut sys, &u, ds.dt, scheme)
                .map_err(|e| e.with_context(format!("sample {sample}, rollout step {k}")))?
        };
        if targets.contains(&k) {
            let term = tape.squared_error(u, Arc::new(ds.snapshot(sample, k)))?;
            loss = Some(match loss {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
    }
    let loss = loss.expect("at least one target");
    let value = tape.value(loss).data()[0];
    if !with_grad {
        return Ok((value, None));
    }
    let mut grads = tape.backward(loss)?;
    Ok((value, Some(bound.params.gradients(model.params(), &mut grads))))
}

/// Mean squared error of `steps`-step rollouts over `samples`, with
/// gradients when `with_grad` is set.
pub fn batch_loss(
    model: &GradeModel,
    domain: &Domain,
    ds: &SnapshotDataset,
    samples: std::ops::Range<usize>,
    steps: usize,
    targets: TargetMode,
    scheme: Scheme,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    if steps == 0 || steps >= ds.n_times {
        return Err(Error::config(format!(
            "rollout of {steps} steps needs snapshots up to index {steps}, dataset has {}",
            ds.n_times
        )));
    }
    if samples.is_empty() || samples.end > ds.n_samples {
        return Err(Error::config(format!(
            "sample range {samples:?} invalid for {} samples",
            ds.n_samples
        )));
    }
    if ds.n_nodes() != domain.n_nodes() || ds.ndim() != domain.ndim() {
        return Err(Error::shape(
            "train",
            format!("dataset grid {:?} does not match the graph", ds.dims),
        ));
    }
    let idx = target_indices(steps, targets);
    let count = (samples.len() * idx.len() * ds.n_nodes() * ds.n_channels()) as f64;
    let parts: Vec<(f64, Option<Vec<Tensor>>)> = samples
        .into_par_iter()
        .map(|s| sample_loss(model, domain, ds, s, steps, &idx, scheme, with_grad))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad_sum: Option<Vec<Tensor>> = None;
    for (l, g) in parts {
        total += l;
        if let Some(g) = g {
            match grad_sum.as_mut() {
                None => grad_sum = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.axpy(1.0, b)?;
                    }
                }
            }
        }
    }
    let grads = grad_sum.map(|gs| gs.into_iter().map(|g| crate::tensor::scale(&g, 1.0 / count)).collect());
    Ok((total / count, grads))
}

/// Run the schedule on all samples of `ds`, updating `model` in place.
pub fn train(model: &mut GradeModel, domain: &Domain, ds: &SnapshotDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let schedule = &cfg.schedule;
    if schedule.max_steps() >= ds.n_times {
        return Err(Error::config(format!(
            "schedule needs snapshot index {}, dataset stores {} snapshots",
            schedule.max_steps(),
            ds.n_times
        )));
    }
    let mut report = TrainReport::default();
    if schedule.epochs() == 0 {
        return Ok(report);
    }
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let start = Instant::now();
    for epoch in 0..schedule.epochs() {
        let steps = schedule.steps(epoch);
        let lr = schedule.lr[epoch];
        let (loss, grads) = batch_loss(model, domain, ds, 0..ds.n_samples, steps, cfg.targets, cfg.scheme, true)
            .map_err(|e| e.with_context(format!("epoch {}", epoch + 1)))?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Numeric {
                context: format!("epoch {}", epoch + 1),
                msg: format!("training diverged, loss {loss:e}"),
            });
        }
        opt.step(model.params_mut(), &grads.expect("gradients requested"), lr)?;
        report.epochs.push(EpochRecord {
            epoch: epoch + 1,
            steps,
            lr,
            loss,
            elapsed: start.elapsed().as_secs_f64(),
        });
    }
    let steps = schedule.steps(schedule.epochs() - 1);
    let (final_loss, _) = batch_loss(model, domain, ds, 0..ds.n_samples, steps, cfg.targets, cfg.scheme, false)
        .map_err(|e| e.with_context("after training"))?;
    report.final_loss = Some(final_loss);
    Ok(report)
}
