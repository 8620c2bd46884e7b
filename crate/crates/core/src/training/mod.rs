//! Optimization: Adam, the inverse-square-root schedule, the label-smoothed
//! loss and a deterministic training loop.

mod adam;
mod masks;

pub use adam::Adam;
pub use masks::{encode_draw, mask_schedule, LayerDraws};

use crate::data::{accuracy_counts, make_batches, Batch, Example, PAD_ID};
use crate::error::{MatError, Result};
use crate::model::{parse_value, ForwardOptions, MaskPlan, Model};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub label_smoothing: f64,
    pub max_steps: u64,
    /// Target tokens per batch.
    pub batch_tokens: usize,
    pub seed: u64,
    pub log_every: u64,
    /// Elementwise dropout on embeddings and sublayer outputs (not `ρ`).
    pub dropout: f64,
    /// Periodic checkpoint interval; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-4,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            warmup_steps: 4000,
            label_smoothing: 0.1,
            max_steps: 1000,
            batch_tokens: 256,
            seed: 1,
            log_every: 100,
            dropout: 0.0,
            checkpoint_every: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "warmup",
    "label_smoothing",
    "max_steps",
    "batch_tokens",
    "seed",
    "log_every",
    "dropout",
    "checkpoint_every",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            errors.push(format!("lr = {} must be positive", self.base_lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errors.push(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            errors.push(format!("adam_eps = {} must be positive", self.adam_eps));
        }
        if self.warmup_steps == 0 {
            errors.push("warmup must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            errors.push(format!("label_smoothing = {} must lie in [0, 1)", self.label_smoothing));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errors.push(format!("dropout = {} must lie in [0, 1)", self.dropout));
        }
        if self.batch_tokens == 0 {
            errors.push("batch_tokens must be at least 1".to_string());
        }
        if self.log_every == 0 {
            errors.push("log_every must be at least 1".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(MatError::Config(errors))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.base_lr = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "warmup" => self.warmup_steps = parse_value(key, value)?,
            "label_smoothing" => self.label_smoothing = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "batch_tokens" => self.batch_tokens = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "log_every" => self.log_every = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.base_lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("warmup", self.warmup_steps.to_string()),
            ("label_smoothing", self.label_smoothing.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("batch_tokens", self.batch_tokens.to_string()),
            ("seed", self.seed.to_string()),
            ("log_every", self.log_every.to_string()),
            ("dropout", self.dropout.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }
}

/// Linear warmup to `base_lr` at `warmup_steps`, then `1/√step` decay.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step == 0 {
        return Err(MatError::contract("lr_at: steps are numbered from 1"));
    }
    let (s, w) = (step as f64, cfg.warmup_steps as f64);
    Ok(if step <= cfg.warmup_steps {
        cfg.base_lr * s / w
    } else {
        cfg.base_lr * (w / s).sqrt()
    })
}

/// Mean label-smoothed cross-entropy over positions whose target is not
/// `pad_id`.
pub fn label_smoothed_nll<T: crate::Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    eps: f64,
    pad_id: usize,
) -> Result<Var> {
    let targets: Vec<Option<usize>> = targets.iter().map(|&t| (t != pad_id).then_some(t)).collect();
    tape.smoothed_nll(logits, &targets, eps)
}

/// One logged point of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub token_acc: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,lr,loss,token_acc";

    pub fn csv(&self) -> String {
        format!("{},{:e},{},{}", self.step, self.lr, self.loss, self.token_acc)
    }
}

/// Hooks called by [`train_loop`]. Errors abort the run.
pub trait TrainObserver {
    fn on_log(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` steps (if nonzero).
    fn on_checkpoint(&mut self, _step: u64, _model: &Model<f32>) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects logged rows in memory.
#[derive(Default, Debug)]
pub struct Recorder {
    pub rows: Vec<MetricsRow>,
}

impl TrainObserver for Recorder {
    fn on_log(&mut self, row: &MetricsRow) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }
}

pub struct StepResult {
    pub loss: f64,
    pub token_acc: f64,
}

/// Forward, backward and Adam update on one batch. Drop masks are keyed by
/// `(cfg.seed, step)` and shared by every example of the batch.
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut Adam,
    batch: &Batch,
    step: u64,
    cfg: &TrainConfig,
) -> Result<StepResult> {
    let lr = lr_at(step, cfg)?;
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let mut rows = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.num_tokens());
    for i in 0..batch.len() {
        let (src, tgt_in, tgt_out) = batch.example(i);
        let opts = ForwardOptions {
            train: true,
            masks: MaskPlan::Scheduled { seed: cfg.seed, step },
            dropout: cfg.dropout,
            example: i as u64,
        };
        rows.push(model.forward_on(&mut tape, &params, src, tgt_in, &opts)?);
        targets.extend(tgt_out.iter().map(|&t| (t != PAD_ID).then_some(t)));
    }
    let logits = tape.concat_rows(&rows)?;
    let loss = tape.smoothed_nll(logits, &targets, cfg.label_smoothing)?;
    let loss_value = tape.value(loss).data()[0] as f64;
    if !loss_value.is_finite() {
        return Err(MatError::NonFiniteLoss { step });
    }
    let (hits, total) = accuracy_counts(tape.value(logits), &targets);
    let grads = tape.backward(loss)?;
    let grads: Vec<_> = params
        .flat()
        .into_iter()
        .map(|v| grads.get(*v).cloned().expect("every parameter requires grad"))
        .collect();
    adam.step_model(model, &grads, lr)?;
    Ok(StepResult {
        loss: loss_value,
        token_acc: hits as f64 / total as f64,
    })
}

/// Trains for exactly `cfg.max_steps` steps, cycling through seed-shuffled
/// epochs of `data`. Returns the logged metrics.
///
/// A non-finite loss (or a non-finite value anywhere in the forward pass)
/// aborts with [`MatError::NonFiniteLoss`]; checkpoints already handed to the
/// observer are left alone.
pub fn train_loop(
    model: &mut Model<f32>,
    data: &[Example],
    cfg: &TrainConfig,
    observer: &mut impl TrainObserver,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(MatError::contract("training needs at least one example"));
    }
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rows = Vec::new();
    let mut epoch = 0;
    let mut batches = make_batches(data, cfg.batch_tokens, cfg.seed, epoch).into_iter();
    let (mut loss_sum, mut acc_sum, mut n) = (0.0, 0.0, 0u64);
    for step in 1..=cfg.max_steps {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                epoch += 1;
                batches = make_batches(data, cfg.batch_tokens, cfg.seed, epoch).into_iter();
                batches.next().expect("data is non-empty")
            }
        };
        let r = train_step(model, &mut adam, &batch, step, cfg).map_err(|e| match e {
            MatError::NonFinite { .. } | MatError::NonFiniteGradient(_) => MatError::NonFiniteLoss { step },
            e => e,
        })?;
        loss_sum += r.loss;
        acc_sum += r.token_acc;
        n += 1;
        if step % cfg.log_every == 0 || step == cfg.max_steps {
            let row = MetricsRow {
                step,
                lr: lr_at(step, cfg)?,
                loss: loss_sum / n as f64,
                token_acc: acc_sum / n as f64,
            };
            observer.on_log(&row)?;
            rows.push(row);
            (loss_sum, acc_sum, n) = (0.0, 0.0, 0);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(step, model)?;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_task, TaskKind, TaskSpec};
    use crate::model::ModelConfig;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(4000, &cfg).unwrap(), 5e-4);
        assert_eq!(lr_at(2000, &cfg).unwrap(), 2.5e-4);
        assert_eq!(lr_at(16000, &cfg).unwrap(), 2.5e-4);
        assert!(matches!(lr_at(0, &cfg), Err(MatError::Contract(_))));
    }

    #[test]
    fn smoothed_loss_three_class_hand_value() {
        // logits (0, 1, 2), target 2, eps 0.1:
        // lse = ln(1 + e + e^2); nll = lse - 2; smooth = lse - mean = lse - 1
        let lse = (1.0 + 1f64.exp() + 2f64.exp()).ln();
        let expected = 0.9 * (lse - 2.0) + 0.1 * (lse - 1.0);
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0, 2.0], vec![9.0, 9.0, 9.0]]).unwrap());
        let loss = label_smoothed_nll(&mut tape, l, &[2, PAD_ID], 0.1, PAD_ID).unwrap();
        assert!((tape.value(loss).data()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn extreme_correct_logits_give_near_zero_loss() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::from_rows(&[vec![-50.0, 50.0, -50.0]]).unwrap());
        let loss = label_smoothed_nll(&mut tape, l, &[1], 0.0, PAD_ID).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-40);
    }

    #[test]
    fn copy_task_learns_and_is_deterministic() {
        let spec = TaskSpec {
            kind: TaskKind::Copy,
            vocab: 10,
            min_len: 2,
            max_len: 5,
            train: 600,
            valid: 0,
            test: 0,
            seed: 3,
        };
        let data = generate_task(&spec).unwrap();
        let mcfg = ModelConfig {
            d_model: 16,
            d_hidden: 32,
            enc_layers: 1,
            dec_layers: 1,
            vocab_src: 10,
            vocab_tgt: 10,
            max_len: 8,
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig {
            base_lr: 3e-3,
            warmup_steps: 50,
            max_steps: 150,
            batch_tokens: 64,
            log_every: 50,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = Model::<f32>::build(&mcfg, 5).unwrap();
            let rows = train_loop(&mut m, &data.train, &tcfg, &mut ()).unwrap();
            (m, rows)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert!(r1.last().unwrap().loss < r1[0].loss);
    }
}
