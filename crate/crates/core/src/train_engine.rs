//! Training loop: cross-entropy, Adam, early stopping, plateau learning-rate
//! reduction and best-checkpoint persistence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};
use crate::model_zoo::ModelHandle;
use crate::nn::io::write_atomic;
use crate::nn::{softmax_cross_entropy, Adam, Tensor};
use crate::preprocess::{load_image, ImageTensor, Pipeline};
use crate::seeding::{rng_for, sha256_hex};

pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub max_epochs: usize,
    pub es_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_delta: f64,
    pub seed: u64,
    /// Train only the classifier head.
    pub freeze_backbone: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            initial_lr: 1e-3,
            max_epochs: 50,
            es_patience: 5,
            plateau_patience: 2,
            plateau_factor: 0.1,
            min_delta: 0.0,
            seed: 0,
            freeze_backbone: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.es_patience == 0 || self.plateau_patience == 0 {
            return bad("patiences must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta must be non-negative");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// `-ln p[label]` with the probability clamped to `[1e-12, 1]`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty()
        || label >= probs.len()
        || (sum - 1.0).abs() > 1e-6
        || probs.iter().any(|p| !p.is_finite() || *p < 0.0)
    {
        return Err(Error::InvalidDistribution(format!(
            "{} probabilities summing to {sum}, label {label}",
            probs.len()
        )));
    }
    Ok(-probs[label].clamp(PROB_EPS, 1.0).ln())
}

/// Mean of [`cross_entropy`] over the rows.
pub fn mean_cross_entropy(rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        total += cross_entropy(row, y)?;
    }
    Ok(total / rows.len() as f64)
}

fn improves(best: Option<f64>, loss: f64, min_delta: f64) -> bool {
    best.is_none_or(|b| loss < b - min_delta)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopperState {
    pub best_loss: Option<f64>,
    pub epochs_since_improve: usize,
}

pub fn early_stop_step(
    state: EarlyStopperState,
    val_loss: f64,
    patience: usize,
    min_delta: f64,
) -> (EarlyStopperState, bool) {
    if improves(state.best_loss, val_loss, min_delta) {
        let next = EarlyStopperState {
            best_loss: Some(val_loss),
            epochs_since_improve: 0,
        };
        return (next, false);
    }
    let count = state.epochs_since_improve + 1;
    let next = EarlyStopperState {
        best_loss: state.best_loss,
        epochs_since_improve: count,
    };
    (next, count >= patience)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub current_lr: f64,
    pub best_loss: Option<f64>,
    pub epochs_since_improve: usize,
    /// Number of reductions so far.
    pub reductions: u32,
}

impl PlateauState {
    pub fn new(initial_lr: f64) -> Self {
        PlateauState {
            current_lr: initial_lr,
            best_loss: None,
            epochs_since_improve: 0,
            reductions: 0,
        }
    }
}

/// Uses the same improvement rule as [`early_stop_step`]. When the counter
/// reaches `patience` the rate is multiplied by `factor` and the counter
/// starts again from zero.
pub fn plateau_step(state: PlateauState, val_loss: f64, patience: usize, factor: f64, min_delta: f64) -> PlateauState {
    let mut next = state;
    if improves(state.best_loss, val_loss, min_delta) {
        next.best_loss = Some(val_loss);
        next.epochs_since_improve = 0;
        return next;
    }
    next.epochs_since_improve += 1;
    if next.epochs_since_improve >= patience {
        next.current_lr *= factor;
        next.reductions += 1;
        next.epochs_since_improve = 0;
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub weights_path: PathBuf,
}

/// Replaces the record when `val_loss` is a new minimum, calling `persist`
/// to write the weights first.
pub fn checkpoint_update(
    record: Option<CheckpointRecord>,
    epoch: usize,
    val_loss: f64,
    weights_path: &Path,
    persist: impl FnOnce(&Path) -> Result<()>,
) -> Result<Option<CheckpointRecord>> {
    if record.as_ref().is_some_and(|r| val_loss >= r.best_val_loss) {
        return Ok(record);
    }
    persist(weights_path).map_err(|e| Error::PersistFailure(format!("{}: {e}", weights_path.display())))?;
    Ok(Some(CheckpointRecord {
        best_epoch: epoch,
        best_val_loss: val_loss,
        weights_path: weights_path.to_path_buf(),
    }))
}

pub fn num_batches(n_samples: usize, batch_size: usize) -> usize {
    n_samples.div_ceil(batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub stopped_early: bool,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,lr,stopped_early";

pub fn read_history(path: &Path) -> Result<Vec<EpochLog>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone)]
pub enum Pixels {
    Memory(ImageTensor),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub pixels: Pixels,
}

impl Sample {
    pub fn image(&self) -> Result<ImageTensor> {
        match &self.pixels {
            Pixels::Memory(img) => Ok(img.clone()),
            Pixels::File(path) => load_image(path),
        }
    }
}

/// Preprocesses samples through `pipeline` and stacks them.
pub fn prepare_batch(samples: &[&Sample], pipeline: &Pipeline, epoch: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut images = Vec::with_capacity(samples.len());
    for s in samples {
        images.push(pipeline.apply(&s.image()?, &s.id, epoch)?);
    }
    let labels = samples.iter().map(|s| s.label).collect();
    Ok((ImageTensor::batch(&images)?, labels))
}

/// Softmax probabilities for every sample, in order.
pub fn predict_all(model: &ModelHandle, samples: &[Sample], pipeline: &Pipeline, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = prepare_batch(&refs, pipeline, 0)?;
        out.extend(model.predict_proba(&x)?);
    }
    Ok(out)
}

pub struct TrainingInputs<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub train_pipeline: &'a Pipeline,
    pub eval_pipeline: &'a Pipeline,
    /// Hash recorded in the checkpoint metadata; defaults to the training
    /// config's own hash.
    pub stamp: Option<&'a str>,
}

#[derive(Debug)]
pub struct TrainingOutcome {
    pub model: ModelHandle,
    pub history: Vec<EpochLog>,
    pub checkpoint: CheckpointRecord,
    pub stopped_early: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub config_hash: String,
}

pub fn checkpoint_path(run_dir: &Path, model: &ModelHandle) -> PathBuf {
    run_dir.join(format!("{}__best.ckpt", model.spec.name.slug()))
}

pub fn checkpoint_meta_path(run_dir: &Path, model: &ModelHandle) -> PathBuf {
    run_dir.join(format!("{}__best.json", model.spec.name.slug()))
}

pub fn run_training(
    model: ModelHandle,
    inputs: &TrainingInputs<'_>,
    config: &TrainingConfig,
    run_dir: &Path,
) -> Result<TrainingOutcome> {
    run_training_with(model, inputs, config, run_dir, |_, loss| loss)
}

/// Like [`run_training`], but every measured validation loss is passed
/// through `val_hook(epoch, loss)` before it reaches the controllers.
pub fn run_training_with(
    mut model: ModelHandle,
    inputs: &TrainingInputs<'_>,
    config: &TrainingConfig,
    run_dir: &Path,
    mut val_hook: impl FnMut(usize, f64) -> f64,
) -> Result<TrainingOutcome> {
    config.validate()?;
    if inputs.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if inputs.val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    fs::create_dir_all(run_dir).map_err(|e| io_at(run_dir, e))?;
    model.set_backbone_frozen(config.freeze_backbone);

    let history_path = run_dir.join("history.csv");
    let mut history_file = fs::File::create(&history_path).map_err(|e| io_at(&history_path, e))?;
    writeln!(history_file, "{HISTORY_HEADER}").map_err(|e| io_at(&history_path, e))?;

    let ckpt_path = checkpoint_path(run_dir, &model);
    let tag = format!("{}@{}", model.spec.name.slug(), config.hash());
    let val_labels: Vec<usize> = inputs.val.iter().map(|s| s.label).collect();

    let mut adam = Adam::default();
    let mut stopper = EarlyStopperState::default();
    let mut plateau = PlateauState::new(config.initial_lr);
    let mut record: Option<CheckpointRecord> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..inputs.train.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let lr = plateau.current_lr;
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, "shuffle", &(epoch as u64).to_le_bytes()));
        let mut dropout_rng = rng_for(config.seed, "dropout", &(epoch as u64).to_le_bytes());

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &inputs.train[i]).collect();
            let (x, labels) = prepare_batch(&samples, inputs.train_pipeline, epoch)?;
            let tape = model.network_mut().forward_train(&x, &mut dropout_rng)?;
            let (loss, grad) = softmax_cross_entropy(tape.output(), &labels);
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            loss_sum += loss * labels.len() as f64;
            model.network_mut().backward(&tape, grad);
            adam.step(model.network_mut(), lr);
        }
        let train_loss = loss_sum / inputs.train.len() as f64;

        let probs = predict_all(&model, inputs.val, inputs.eval_pipeline, config.batch_size)?;
        let measured = mean_cross_entropy(&probs, &val_labels).map_err(|_| Error::DivergedLoss { epoch })?;
        let val_loss = val_hook(epoch, measured);
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }

        record = checkpoint_update(record, epoch, val_loss, &ckpt_path, |p| model.save(p, &tag))?;
        plateau = plateau_step(plateau, val_loss, config.plateau_patience, config.plateau_factor, config.min_delta);
        let (next, stop) = early_stop_step(stopper, val_loss, config.es_patience, config.min_delta);
        stopper = next;

        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            stopped_early: stop,
        };
        log::info!(
            "{} epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {lr:e}{}",
            model.spec.name,
            if stop { " (early stop)" } else { "" }
        );
        writeln!(history_file, "{},{},{},{},{}", log.epoch, log.train_loss, log.val_loss, log.lr, log.stopped_early)
            .map_err(|e| io_at(&history_path, e))?;
        history.push(log);
        if stop {
            stopped_early = true;
            break;
        }
    }
    history_file.sync_all().map_err(|e| io_at(&history_path, e))?;

    let checkpoint = record.expect("at least one epoch ran");
    model.load(&checkpoint.weights_path)?;
    let meta = CheckpointMeta {
        architecture: model.spec.name.name().to_string(),
        epoch: checkpoint.best_epoch,
        val_loss: checkpoint.best_val_loss,
        config_hash: inputs.stamp.map(str::to_string).unwrap_or_else(|| config.hash()),
    };
    write_atomic(
        &checkpoint_meta_path(run_dir, &model),
        &serde_json::to_vec_pretty(&meta).expect("metadata serializes"),
    )?;
    Ok(TrainingOutcome {
        model,
        history,
        checkpoint,
        stopped_early,
    })
}
