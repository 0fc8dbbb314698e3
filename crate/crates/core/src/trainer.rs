//! AdamW with warmup/decay schedules and the epoch-based training loop.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{set_trainable, Params};
use crate::scalar::Scalar;
use crate::tasks::{to_batch, Split, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
    Constant,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Linear warmup from zero, then linear/cosine decay to zero or a
/// constant rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub base_lr: f64,
}

impl LrSchedule {
    pub fn new(kind: ScheduleKind, warmup_steps: usize, total_steps: usize, base_lr: f64) -> Result<Self> {
        if warmup_steps > total_steps {
            return Err(Error::Config(format!(
                "warmup steps {warmup_steps} exceed total steps {total_steps}"
            )));
        }
        Ok(Self {
            kind,
            warmup_steps,
            total_steps,
            base_lr,
        })
    }

    /// Learning rate at `step`; steps past the end clamp to the final value.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return self.base_lr;
        }
        let done = (step - self.warmup_steps) as f64;
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Linear => self.base_lr * (span as f64 - done) / span as f64,
            ScheduleKind::Cosine => self.base_lr * (1.0 + (std::f64::consts::PI * done / span as f64).cos()) / 2.0,
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub step: u64,
    moments: BTreeMap<String, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// First and second moments of a parameter, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&[S], &[S])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One update of every trainable tensor from its stored gradient.
    /// Frozen tensors are not touched. All gradients are checked before
    /// any value changes.
    pub fn update<P: Params<S> + ?Sized>(&mut self, params: &mut P, lr: f64) -> Result<()> {
        let mut bad = None;
        params.visit("", &mut |name, t| {
            if t.trainable && bad.is_none() {
                match &t.grad {
                    Some(g) if g.iter().all(|x| x.is_finite()) => {}
                    Some(_) => bad = Some(Error::NonFiniteGradient(name.to_string())),
                    None => bad = Some(Error::Model(format!("trainable parameter `{name}` has no gradient"))),
                }
            }
        });
        if let Some(e) = bad {
            return Err(e);
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let bc1 = S::one() - S::of(self.beta1.powi(t));
        let bc2 = S::one() - S::of(self.beta2.powi(t));
        let (lr, wd, eps) = (S::of(lr), S::of(self.weight_decay), S::of(self.eps));
        let moments = &mut self.moments;
        params.visit_mut("", &mut |name, tensor| {
            if !tensor.trainable {
                return;
            }
            let n = tensor.len();
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![S::zero(); n], vec![S::zero(); n]));
            let grad = tensor.grad.take().expect("checked above");
            for (i, p) in tensor.values_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (S::one() - b1) * g;
                v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * *p;
            }
            tensor.grad = Some(grad);
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Only adapters and decoder train; the backbone must be frozen.
    #[default]
    AdapterTune,
    /// Every parameter trains.
    FullFinetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub warmup_fraction: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    pub train_size: usize,
    pub val_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.0,
            schedule: ScheduleKind::Linear,
            warmup_fraction: 0.1,
            mode: Mode::AdapterTune,
            seed: 0,
            grad_clip: None,
            train_size: 2000,
            val_size: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.train_size == 0 || self.val_size == 0 {
            return Err(Error::Config("epochs, batch_size, train_size and val_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight decay must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_size.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        let total = self.total_steps();
        let warmup = (self.warmup_fraction * total as f64).round() as usize;
        LrSchedule::new(self.schedule, warmup.min(total), total, self.lr)
    }
}

/// One validation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: f64,
    pub lr: f64,
    /// Mean training loss over the steps since the previous record.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EvalRecord>,
    pub best_accuracy: f64,
    pub best_step: usize,
    pub trainable_params: usize,
    pub wall_clock_secs: f64,
}

/// Classification accuracy on `count` validation examples.
pub fn evaluate<S: Scalar>(model: &Model<S>, task: &TaskSpec, count: usize) -> Result<f64> {
    let examples = task.examples(Split::Validation, 0, count);
    let mut correct = 0;
    for chunk in examples.chunks(250) {
        let batch = to_batch(chunk)?;
        let preds = model.predict(&batch)?;
        correct += preds.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / count as f64)
}

fn clip_grads<S: Scalar>(model: &mut Model<S>, max_norm: f64) {
    let mut sq = 0.0;
    model.visit("", &mut |_, t| {
        if let Some(g) = &t.grad {
            sq += g.iter().map(|x| x.as_f64().powi(2)).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm {
        let factor = S::of(max_norm / norm);
        model.visit_mut("", &mut |_, t| {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        });
    }
}

/// Trains `model` on `task`, evaluating on the validation split twice per
/// epoch (mid-epoch and at its end). Deterministic given `config.seed`,
/// apart from the reported wall-clock time.
pub fn train<S: Scalar>(model: &mut Model<S>, task: &TaskSpec, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    task.validate()?;
    if model.classes() != task.classes() {
        return Err(Error::Model(format!(
            "decoder has {} classes, task {} has {}",
            model.classes(),
            task.rule,
            task.classes()
        )));
    }
    match config.mode {
        Mode::AdapterTune => {
            if model.adapters.is_none() || !model.backbone.is_frozen() {
                return Err(Error::Model("adapter tuning needs attached adapters and a frozen backbone".into()));
            }
        }
        Mode::FullFinetune => set_trainable(model, true),
    }

    let started = Instant::now();
    let schedule = config.schedule()?;
    let mut optimizer = AdamW::new(config.weight_decay);
    let train_set = task.examples(Split::Train, 0, config.train_size);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let per_epoch = config.steps_per_epoch();
    let mid_epoch = per_epoch.div_ceil(2);
    let mut records = Vec::with_capacity(2 * config.epochs);
    let mut step = 0;
    let (mut loss_sum, mut loss_steps) = (0.0, 0usize);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (i, chunk) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<_> = chunk.iter().map(|&j| train_set[j].clone()).collect();
            let batch = to_batch(&examples)?;
            let loss = model.compute_grads(&batch)?.as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            if let Some(c) = config.grad_clip {
                clip_grads(model, c);
            }
            step += 1;
            let lr = schedule.lr_at(step);
            optimizer.update(model, lr)?;
            loss_sum += loss;
            loss_steps += 1;

            let within = i + 1;
            if within == mid_epoch || within == per_epoch {
                let val_accuracy = evaluate(model, task, config.val_size)?;
                records.push(EvalRecord {
                    step,
                    epoch: epoch as f64 + within as f64 / per_epoch as f64,
                    lr,
                    train_loss: loss_sum / loss_steps as f64,
                    val_accuracy,
                });
                loss_sum = 0.0;
                loss_steps = 0;
            }
        }
    }

    let (best_accuracy, best_step) = records
        .iter()
        .fold((f64::NEG_INFINITY, 0), |b, r| if r.val_accuracy > b.0 { (r.val_accuracy, r.step) } else { b });
    Ok(TrainReport {
        records,
        best_accuracy,
        best_step,
        trainable_params: model.trainable_count(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
