//! Losses, Adam with step decay, and the deterministic training loop.
//!
//! The optimization protocol defaults match the reference setup: Adam at
//! learning rate 0.01, decayed by 0.1 after every 10 epochs, 50 epochs.
//! Clip losses sum over classes/frames; a batch averages over its clips.
//! All randomness (shuffling, initialization) flows from the configured
//! seed, so two runs with the same seed produce bit-identical parameters.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::mix_seed;
use crate::dataset::{Dataset, Task};
use crate::eval::{clip_map, per_frame_map, speed_error, MapReport, PredictionSet, SpeedError};
use crate::heads::{Mode, Model, Param};
use crate::tensor::{sigmoid, Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            decay_factor: 0.1,
            decay_every: 10,
            epochs: 50,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.decay_factor <= 0.0
            || self.decay_factor > 1.0
            || self.epochs == 0
            || self.decay_every == 0
            || self.batch_size == 0
        {
            return Err(Error::Config(format!("invalid training config: {self:?}")));
        }
        Ok(())
    }
}

/// Step-decayed learning rate for a 0-based epoch index.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    // repeated multiplication rather than powi: the decayed rates then hit
    // the decimal literals (0.001, 0.0001) users expect to see in history
    let mut lr = config.learning_rate;
    for _ in 0..epoch / config.decay_every {
        lr *= config.decay_factor;
    }
    lr
}

// ---- losses ----

/// Numerically stable sum of per-element binary cross entropies between
/// `logits` and binary `targets`.
fn stable_bce(logits: &Tensor, targets: &[f64], op: &'static str) -> Result<Tensor> {
    let x = logits.data();
    if x.len() != targets.len() {
        return Err(Error::Config(format!(
            "{op}: logits shape {:?} vs {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    // max(x,0) - x z + ln(1 + exp(-|x|)); gradient sigmoid(x) - z
    let mut total = 0.0;
    for (&xi, &zi) in x.iter().zip(targets) {
        total += xi.max(0.0) - xi * zi + (-xi.abs()).exp().ln_1p();
    }
    let xc = x.clone();
    let tc: Vec<f64> = targets.to_vec();
    Ok(logits.unop(vec![1], vec![total], move |g| {
        xc.iter()
            .zip(&tc)
            .map(|(&xi, &zi)| g[0] * (sigmoid(xi) - zi))
            .collect()
    }))
}

/// Multi-label binary cross entropy over C logits.
pub fn bce_multilabel_loss(logits: &Tensor, targets: &[f64]) -> Result<Tensor> {
    stable_bce(logits, targets, "bce_multilabel_loss")
}

/// Per-frame binary cross entropy, summed over frames and classes.
pub fn per_frame_bce(logits: &Tensor, targets: &[f64]) -> Result<Tensor> {
    stable_bce(logits, targets, "per_frame_bce")
}

/// L1 regression loss against a scalar target; subgradient 0 at equality.
pub fn l1_speed_loss(pred: &Tensor, target: f64) -> Result<Tensor> {
    let p = pred.data();
    if p.len() != 1 {
        return Err(Error::Config(format!(
            "l1_speed_loss expects a scalar prediction, got {:?}",
            pred.shape()
        )));
    }
    let r = p[0] - target;
    Ok(pred.unop(vec![1], vec![r.abs()], move |g| {
        vec![g[0] * if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 }]
    }))
}

/// Single-label softmax cross entropy.
pub fn pitch_type_loss(logits: &Tensor, label: usize) -> Result<Tensor> {
    let x = logits.data();
    let k = x.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "pitch_type_loss needs at least 2 classes, got {k}"
        )));
    }
    if label >= k {
        return Err(Error::Config(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|&v| (v - m).exp()).sum();
    let loss = m + z.ln() - x[label];
    let softmax: Vec<f64> = x.iter().map(|&v| (v - m).exp() / z).collect();
    Ok(logits.unop(vec![1], vec![loss], move |g| {
        softmax
            .iter()
            .enumerate()
            .map(|(i, &s)| g[0] * (s - f64::from(i == label)))
            .collect()
    }))
}

// ---- optimizer ----

/// Adam accumulator state; bias-corrected update with the usual constants.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                param.data[i] -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

// ---- training loop ----

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_metric: f64,
}

fn check_compatible(model: &Model, dataset: &Dataset, task: Task) -> Result<()> {
    let cfg = &model.config;
    match (task, dataset) {
        (Task::Detection, Dataset::Continuous(d)) => {
            if cfg.mode != Mode::Continuous {
                return Err(Error::Config(format!(
                    "task detection needs a continuous head, got '{}' in segmented mode",
                    cfg.kind.name()
                )));
            }
            if cfg.c != d.classes.len() {
                return Err(Error::Config(format!(
                    "head has {} classes but dataset has {}",
                    cfg.c,
                    d.classes.len()
                )));
            }
        }
        (Task::Detection, _) => {
            return Err(Error::Config(
                "task detection needs a continuous dataset".into(),
            ))
        }
        (task, Dataset::Segmented(d)) => {
            if cfg.mode != Mode::Segmented {
                return Err(Error::Config(format!(
                    "task {} needs a segmented head, got '{}' in continuous mode",
                    task.name(),
                    cfg.kind.name()
                )));
            }
            let want = match task {
                Task::Speed => 1,
                _ => d.classes.len(),
            };
            if cfg.c != want {
                return Err(Error::Config(format!(
                    "task {} needs {} outputs, head has {}",
                    task.name(),
                    want,
                    cfg.c
                )));
            }
        }
        (task, Dataset::Continuous(_)) => {
            return Err(Error::Config(format!(
                "task {} needs a segmented dataset",
                task.name()
            )))
        }
    }
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    Ok(())
}

/// Per-clip training targets resolved once up front.
enum ClipTarget {
    MultiHot(Vec<f64>),
    FrameMatrix(Vec<f64>),
    Speed(f64),
    ClassIndex(usize),
}

fn resolve_targets(dataset: &Dataset, task: Task) -> Result<Vec<ClipTarget>> {
    match (task, dataset) {
        (Task::Multilabel, Dataset::Segmented(d)) => Ok(d
            .clips
            .iter()
            .map(|(_, ann)| ClipTarget::MultiHot(ann.multi_hot(&d.classes)))
            .collect()),
        (Task::Detection, Dataset::Continuous(d)) => Ok(d
            .videos
            .iter()
            .map(|(_, ann)| ClipTarget::FrameMatrix(ann.frame_matrix(d.classes.len())))
            .collect()),
        (Task::Speed, Dataset::Segmented(d)) => d
            .clips
            .iter()
            .map(|(_, ann)| {
                ann.pitch_speed.map(ClipTarget::Speed).ok_or_else(|| {
                    Error::Config(format!("clip '{}' has no pitch_speed target", ann.id))
                })
            })
            .collect(),
        (Task::PitchType, Dataset::Segmented(d)) => d
            .clips
            .iter()
            .map(|(_, ann)| {
                let pt = ann.pitch_type.as_ref().ok_or_else(|| {
                    Error::Config(format!("clip '{}' has no pitch_type target", ann.id))
                })?;
                d.classes
                    .iter()
                    .position(|c| c == pt)
                    .map(ClipTarget::ClassIndex)
                    .ok_or_else(|| {
                        Error::Config(format!("pitch type '{pt}' not in dataset classes"))
                    })
            })
            .collect(),
        _ => unreachable!("checked by check_compatible"),
    }
}

fn clip_features(dataset: &Dataset, idx: usize) -> (&[f64], usize, usize) {
    match dataset {
        Dataset::Segmented(d) => {
            let seq = &d.clips[idx].0;
            (&seq.values, seq.t, seq.d)
        }
        Dataset::Continuous(d) => {
            let seq = &d.videos[idx].0;
            (&seq.values, seq.t, seq.d)
        }
    }
}

fn clip_loss(
    model: &Model,
    leaves: &[Tensor],
    v: &Tensor,
    target: &ClipTarget,
) -> Result<Tensor> {
    let logits = model.forward(leaves, v)?;
    match target {
        ClipTarget::MultiHot(z) => bce_multilabel_loss(&logits, z),
        ClipTarget::FrameMatrix(z) => per_frame_bce(&logits, z),
        ClipTarget::Speed(mph) => l1_speed_loss(&logits, *mph),
        ClipTarget::ClassIndex(label) => pitch_type_loss(&logits, *label),
    }
}

/// Train `model` in place; returns the per-epoch history. Deterministic
/// given `config.seed`: data order and all updates are seed-derived.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    eval_set: Option<&Dataset>,
    config: &TrainConfig,
    task: Task,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    check_compatible(model, dataset, task)?;
    if let Some(es) = eval_set {
        check_compatible(model, es, task)?;
    }
    let targets = resolve_targets(dataset, task)?;
    let n = targets.len();
    let mut adam = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Vec<f64>> = model
                .params
                .iter()
                .map(|p| vec![0.0; p.data.len()])
                .collect();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let tape = Tape::new();
                let leaves = model.bind(&tape);
                let (values, t, d) = clip_features(dataset, idx);
                let v = tape.constant(vec![t, d], values.to_vec());
                let loss = clip_loss(model, &leaves, &v, &targets[idx])?;
                epoch_loss += loss.item();
                let g = tape.backward(&loss)?;
                for (acc, leaf) in grads.iter_mut().zip(&leaves) {
                    if let Some(grad) = g.get(leaf) {
                        for (a, gi) in acc.iter_mut().zip(grad) {
                            *a += scale * gi;
                        }
                    }
                }
            }
            adam.step(&mut model.params, &grads, lr);
        }
        let eval_metric = evaluate(model, eval_set.unwrap_or(dataset), task, 1)?.primary;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: epoch_loss / n as f64,
            eval_metric,
        });
    }
    Ok(history)
}

// ---- evaluation over a dataset ----

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Task-appropriate headline number: mAP, per-frame mAP, MAE or accuracy.
    pub primary: f64,
    pub map: Option<MapReport>,
    pub accuracy: Option<f64>,
    pub speed: Option<SpeedError>,
}

fn forward_values(model: &Model, values: &[f64], t: usize, d: usize) -> Result<Vec<f64>> {
    let tape = Tape::new();
    // constants: nothing tracked, forward only
    let leaves: Vec<Tensor> = model
        .params
        .iter()
        .map(|p| tape.constant(p.shape.clone(), p.data.clone()))
        .collect();
    let v = tape.constant(vec![t, d], values.to_vec());
    Ok(model.forward(&leaves, &v)?.to_vec())
}

/// Evaluate `model` on a dataset; `threads` fans per-clip forward passes
/// out across worker threads without changing results.
pub fn evaluate(model: &Model, dataset: &Dataset, task: Task, threads: usize) -> Result<Evaluation> {
    check_compatible(model, dataset, task)?;
    let n = dataset.len();
    let threads = threads.clamp(1, n.max(1));
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(n);
    if threads == 1 {
        for idx in 0..n {
            let (values, t, d) = clip_features(dataset, idx);
            outputs.push(forward_values(model, values, t, d)?);
        }
    } else {
        let chunk = n.div_ceil(threads);
        let results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .collect::<Vec<_>>()
                .chunks(chunk)
                .map(|ids| {
                    let ids = ids.to_vec();
                    scope.spawn(move || {
                        ids.iter()
                            .map(|&idx| {
                                let (values, t, d) = clip_features(dataset, idx);
                                forward_values(model, values, t, d)
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in results {
            outputs.extend(r?);
        }
    }
    match (task, dataset) {
        (Task::Multilabel, Dataset::Segmented(d)) => {
            let mut preds = PredictionSet::default();
            for (scores, (_, ann)) in outputs.iter().zip(&d.clips) {
                let labels = ann
                    .multi_hot(&d.classes)
                    .iter()
                    .map(|&z| z > 0.5)
                    .collect();
                preds.push(scores.clone(), labels);
            }
            let report = clip_map(&preds)?;
            Ok(Evaluation {
                primary: report.map,
                map: Some(report),
                accuracy: None,
                speed: None,
            })
        }
        (Task::Detection, Dataset::Continuous(d)) => {
            let c = d.classes.len();
            let mut preds = PredictionSet::default();
            for (scores, (_, ann)) in outputs.iter().zip(&d.videos) {
                let z = ann.frame_matrix(c);
                for ti in 0..ann.t {
                    preds.push(
                        scores[ti * c..(ti + 1) * c].to_vec(),
                        z[ti * c..(ti + 1) * c].iter().map(|&x| x > 0.5).collect(),
                    );
                }
            }
            let report = per_frame_map(&preds)?;
            Ok(Evaluation {
                primary: report.map,
                map: Some(report),
                accuracy: None,
                speed: None,
            })
        }
        (Task::Speed, Dataset::Segmented(d)) => {
            let preds: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let targets: Vec<f64> = d
                .clips
                .iter()
                .map(|(_, ann)| ann.pitch_speed.unwrap_or_default())
                .collect();
            let err = speed_error(&preds, &targets)?;
            Ok(Evaluation {
                primary: err.mae,
                map: None,
                accuracy: None,
                speed: Some(err),
            })
        }
        (Task::PitchType, Dataset::Segmented(d)) => {
            let pred_classes: Vec<usize> = outputs
                .iter()
                .map(|o| {
                    o.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(i, _)| i)
                        .unwrap_or(0)
                })
                .collect();
            let true_classes: Vec<usize> = d
                .clips
                .iter()
                .map(|(_, ann)| {
                    d.classes
                        .iter()
                        .position(|c| Some(c) == ann.pitch_type.as_ref())
                        .unwrap_or(0)
                })
                .collect();
            let acc = crate::eval::accuracy(&pred_classes, &true_classes)?;
            Ok(Evaluation {
                primary: acc,
                map: None,
                accuracy: Some(acc),
                speed: None,
            })
        }
        _ => unreachable!("checked by check_compatible"),
    }
}
