//! AdamW training with warmup + cosine schedule, gradient clipping, early
//! stopping on validation mAP@0.50 and per-component loss logging.

mod optim;

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::boxes::BBox;
use crate::checkpoint::{BestMetric, Checkpoint};
use crate::datapipe::{augment, scene_seed, AugmentationConfig, Raster, Sample};
use crate::error::{Error, Result};
use crate::inference::evaluate_model;
use crate::model::Model;
use crate::objectives::{
    batch_targets, detection_loss, geometry_of, LossBreakdown, ObjectiveConfig,
};
use crate::ops::NormMode;
use crate::postprocess::PostprocessConfig;
use crate::tensor::Tensor;

pub use optim::{adamw_step, clip_gradients, lr_at, AdamState, OptimizerConfig, ScheduleConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub objective: ObjectiveConfig,
    pub augmentation: AugmentationConfig,
    /// Decoding settings used for validation.
    pub postprocess: PostprocessConfig,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub patience: usize,
    /// Seeds batch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            objective: ObjectiveConfig::default(),
            augmentation: AugmentationConfig::default(),
            postprocess: PostprocessConfig::default(),
            batch_size: 8,
            max_grad_norm: 1.0,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.objective.validate()?;
        self.augmentation.validate()?;
        self.postprocess.validate()?;
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size and patience must be positive".into(),
            ));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Global step at the end of the epoch.
    pub step: usize,
    /// Rate used by the last update of the epoch.
    pub lr: f64,
    /// Epoch means of the per-batch loss components.
    pub focal: f64,
    pub giou: f64,
    pub bce: f64,
    pub total: f64,
    pub val_map50: f64,
    pub val_map5095: f64,
}

pub const METRICS_COLUMNS: [&str; 9] = [
    "epoch",
    "step",
    "lr",
    "focal",
    "giou",
    "bce",
    "total",
    "val_map50",
    "val_map5095",
];

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: LossBreakdown,
    pub lr: f64,
    pub clip_factor: f64,
}

/// Optimizer state, step counters and early-stopping bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub adam: AdamState,
    pub best_map50: Option<f64>,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub history: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            adam: AdamState::zeros_like(model.params().tensors()),
            best_map50: None,
            best_epoch: 0,
            epochs_since_improvement: 0,
            history: Vec::new(),
        }
    }
}

/// One optimization step on a batch: forward, loss, backward, clip, AdamW.
///
/// Fails without touching the model when the loss or any gradient is not
/// finite.
pub fn train_step(
    model: &mut Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
    images: &Tensor,
    boxes: &[Vec<BBox>],
) -> Result<StepOutcome> {
    let tape = Tape::new();
    let vars = model.bind(&tape, true);
    let x = tape.constant(images.clone());
    let (levels, stats) = model.forward(&vars, x, NormMode::Train)?;
    let targets = batch_targets(boxes, &geometry_of(&levels), &cfg.objective)?;
    let (loss, parts) = detection_loss(&levels, &targets, &cfg.objective)?;
    if !parts.total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss at step {} (focal {}, giou {}, bce {})",
            state.step + 1,
            parts.focal,
            parts.giou,
            parts.centerness_bce
        )));
    }
    tape.backward(loss)?;
    let mut grads: Vec<Tensor> = vars
        .iter()
        .map(|v| v.grad().expect("trainable parameters are tracked leaves"))
        .collect();
    let clip_factor = clip_gradients(&mut grads, model.params().names(), cfg.max_grad_norm)?;
    let lr = lr_at(state.step + 1, &cfg.schedule, &cfg.optimizer);
    adamw_step(
        model.params_mut().tensors_mut(),
        &grads,
        &mut state.adam,
        lr,
        &cfg.optimizer,
    )?;
    model.set_stats(stats)?;
    state.step += 1;
    Ok(StepOutcome {
        loss: parts,
        lr,
        clip_factor,
    })
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Best-so-far checkpoint, rewritten whenever validation mAP improves.
    pub checkpoint: Option<PathBuf>,
    /// Metrics table, one row per epoch.
    pub metrics_log: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub epochs_run: usize,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_map50: f64,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
    /// Per-step loss components, in order.
    pub step_losses: Vec<LossBreakdown>,
}

/// Trains `model` and leaves it holding the weights of the best validation
/// epoch.
///
/// Samples in a batch must share one size, a multiple of the model's
/// coarsest stride. `schedule.steps_per_epoch` is derived from the training
/// set when zero. `on_epoch` sees each log row as it is produced.
pub fn fit(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    opts: &FitOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FitReport> {
    if train.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Training("validation set is empty".into()));
    }
    let mut cfg = cfg.clone();
    if cfg.schedule.steps_per_epoch == 0 {
        cfg.schedule.steps_per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
    }
    cfg.validate()?;
    cfg.schedule.validate(&cfg.optimizer)?;

    let mut log = match &opts.metrics_log {
        Some(p) => Some(metrics_writer(p)?),
        None => None,
    };
    let mut state = TrainState::new(model);
    let mut best = (model.params().clone(), model.stats().to_vec());
    let mut step_losses = Vec::new();
    let mut stopped_early = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    while state.epoch < cfg.schedule.total_epochs {
        state.epoch += 1;
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        let mut last_lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut boxes = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let seed = scene_seed(cfg.augmentation.seed ^ ((state.epoch as u64) << 32), i);
                let (img, b) = augment(&train[i].image, &train[i].boxes, &cfg.augmentation, seed)?;
                images.push(img);
                boxes.push(b);
            }
            let x = Raster::batch_tensor(&images)?;
            let out = train_step(model, &mut state, &cfg, &x, &boxes)?;
            let l = out.loss;
            for (s, v) in sums
                .iter_mut()
                .zip([l.focal, l.giou, l.centerness_bce, l.total])
            {
                *s += v;
            }
            batches += 1;
            last_lr = out.lr;
            step_losses.push(l);
        }
        let report = evaluate_model(model, val, &cfg.postprocess, cfg.batch_size)?;
        let mean = sums.map(|s| s / batches as f64);
        let row = EpochLog {
            epoch: state.epoch,
            step: state.step,
            lr: last_lr,
            focal: mean[0],
            giou: mean[1],
            bce: mean[2],
            total: mean[3],
            val_map50: report.map50,
            val_map5095: report.map5095,
        };
        if let Some(w) = log.as_mut() {
            write_metrics_row(w, &row)?;
        }
        on_epoch(&row);
        state.history.push(row);

        if state.best_map50.is_none_or(|b| report.map50 > b) {
            state.best_map50 = Some(report.map50);
            state.best_epoch = state.epoch;
            state.epochs_since_improvement = 0;
            best = (model.params().clone(), model.stats().to_vec());
            if let Some(path) = &opts.checkpoint {
                save_checkpoint(path, model, &state, &cfg)?;
            }
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                stopped_early = state.epoch < cfg.schedule.total_epochs;
                break;
            }
        }
    }

    *model.params_mut() = best.0;
    model.set_stats(best.1)?;
    Ok(FitReport {
        epochs_run: state.epoch,
        steps: state.step,
        best_epoch: state.best_epoch,
        best_map50: state.best_map50.unwrap_or(0.0),
        stopped_early,
        history: state.history,
        step_losses,
    })
}

fn save_checkpoint(
    path: &Path,
    model: &Model,
    state: &TrainState,
    cfg: &TrainConfig,
) -> Result<()> {
    Checkpoint {
        model: model.clone(),
        optimizer: Some(state.adam.clone()),
        epoch: state.epoch,
        step: state.step,
        best: state.best_map50.map(|value| BestMetric {
            name: "val_map50".into(),
            value,
            epoch: state.best_epoch,
        }),
        train_config: serde_json::to_value(cfg)?,
    }
    .save(path)
}

fn metrics_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(METRICS_COLUMNS)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(w)
}

fn write_metrics_row(w: &mut csv::Writer<File>, row: &EpochLog) -> Result<()> {
    w.write_record([
        row.epoch.to_string(),
        row.step.to_string(),
        row.lr.to_string(),
        row.focal.to_string(),
        row.giou.to_string(),
        row.bce.to_string(),
        row.total.to_string(),
        row.val_map50.to_string(),
        row.val_map5095.to_string(),
    ])?;
    w.flush()
        .map_err(|e| Error::Training(format!("cannot write metrics log: {e}")))
}
