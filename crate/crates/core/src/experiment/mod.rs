//! Config-driven runs: split, preprocess, initialize, train, evaluate and
//! report one architecture, then compare finished runs.

pub mod plots;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use plots::emit_plots;
pub use synthetic::{generate_synthetic, SyntheticDatasetSpec};

use crate::dataset::{load_manifest, ClassRegistry, DatasetManifest};
use crate::error::{io_at, Error, Result};
use crate::metrics::{classification_report, confusion_matrix_k, fmt3, ClassificationReport, ConfusionMatrix};
use crate::model_zoo::{
    adapt_head, argmax, load_pretrained_from, weights_dir_from_env, Architecture, ArchitectureSpec, BackboneScale,
    ModelHandle,
};
use crate::preprocess::{AugmentationConfig, NormalizationSpec, Pipeline};
use crate::seeding::sha256_hex;
use crate::splitter::{read_split_files, stratified_split, write_split_files, SplitAssignment, SplitKind, SplitSpec};
use crate::train_engine::{
    checkpoint_path, predict_all, read_history, run_training, CheckpointRecord, EpochLog, Pixels, Sample,
    TrainingConfig, TrainingInputs,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `image_id,label` CSV; image ids resolve against its directory.
    pub manifest: PathBuf,
    pub registry: ClassRegistry,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub augmentation: AugmentationConfig,
    pub normalization: NormalizationSpec,
    pub architectures: Vec<String>,
    pub training: TrainingConfig,
    pub out_dir: PathBuf,
    /// Drives splitting, initialization, shuffling and augmentation.
    pub seed: u64,
    /// Square input side for every architecture instead of its native size.
    pub input_size: Option<usize>,
    pub backbone_scale: BackboneScale,
    /// Start from cached ImageNet weights rather than random ones.
    pub pretrained: bool,
    pub weights_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: PathBuf::from("manifest.csv"),
            registry: ClassRegistry::cassava(),
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
            augmentation: AugmentationConfig::default(),
            normalization: NormalizationSpec::default(),
            architectures: Architecture::ALL.iter().map(|a| a.name().to_string()).collect(),
            training: TrainingConfig::default(),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            input_size: None,
            backbone_scale: BackboneScale::FULL,
            pretrained: true,
            weights_dir: None,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(e.to_string())
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| io_at(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.manifest);
        resolve(&mut cfg.out_dir);
        if let Some(w) = cfg.weights_dir.as_mut() {
            resolve(w);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, json + "\n").map_err(|e| io_at(path, e))
    }

    /// Content digest stamped on every artifact of a run.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.train_frac,
            val: self.val_frac,
            test: self.test_frac,
            seed: self.seed,
        }
    }

    pub fn architectures(&self) -> Result<Vec<Architecture>> {
        self.architectures.iter().map(|a| Architecture::parse(a).map_err(invalid)).collect()
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn input_size(&self, arch: Architecture) -> usize {
        self.input_size.unwrap_or(arch.input_size())
    }

    pub fn run_dir(&self, arch: Architecture) -> PathBuf {
        self.out_dir.join(arch.slug())
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(invalid("no architectures listed"));
        }
        let archs = self.architectures()?;
        self.split_spec().validate().map_err(invalid)?;
        self.training.validate().map_err(invalid)?;
        self.augmentation.validate().map_err(invalid)?;
        self.normalization.validate().map_err(invalid)?;
        if self.registry.len() < 2 {
            return Err(invalid("registry needs at least two classes"));
        }
        for arch in archs {
            if self.input_size(arch) < arch.min_input_size() {
                return Err(invalid(format!(
                    "{arch} needs an input of at least {} pixels",
                    arch.min_input_size()
                )));
            }
        }
        let (w, d) = (self.backbone_scale.width, self.backbone_scale.depth);
        if !(w > 0.0 && w <= 1.0 && d > 0.0 && d <= 1.0) {
            return Err(invalid("backbone_scale factors must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub architecture: String,
    pub config_hash: String,
    pub params_millions: f64,
    pub input_size: usize,
    pub backbone_scale: BackboneScale,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub mean_binary_accuracy: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// SHA-256 of every artifact file, keyed by path relative to the run
    /// directory.
    pub artifacts: BTreeMap<String, String>,
}

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub split: SplitAssignment,
    pub history: Vec<EpochLog>,
    pub checkpoint: CheckpointRecord,
    pub report: ClassificationReport,
    pub confusion: ConfusionMatrix,
    pub summary: RunSummary,
    pub plots: Vec<PathBuf>,
}

fn samples(manifest: &DatasetManifest, idx: &[usize]) -> Vec<Sample> {
    idx.iter()
        .map(|&i| Sample {
            id: manifest.records()[i].image_id.clone(),
            label: manifest.records()[i].label,
            pixels: Pixels::File(manifest.image_path(i)),
        })
        .collect()
}

fn pipelines(config: &ExperimentConfig, arch: Architecture) -> Result<(Pipeline, Pipeline)> {
    let side = config.input_size(arch);
    let train = Pipeline::new((side, side), SplitKind::Train, &config.augmentation, &config.normalization, config.seed)?;
    let eval = Pipeline::new((side, side), SplitKind::Test, &config.augmentation, &config.normalization, config.seed)?;
    Ok((train, eval))
}

/// Initial backbone for `arch`: the cached ImageNet checkpoint or a seeded
/// random initialization, with the classifier swapped for the registry's
/// class count.
pub fn initial_model(config: &ExperimentConfig, arch: Architecture) -> Result<ModelHandle> {
    let spec = ArchitectureSpec::of(arch);
    let side = config.input_size(arch);
    let base = if config.pretrained {
        let dir = config.weights_dir.clone().or_else(weights_dir_from_env).ok_or_else(|| {
            Error::WeightsUnavailable(format!(
                "pretrained weights requested but neither weights_dir nor {} is set",
                crate::model_zoo::WEIGHTS_DIR_ENV
            ))
        })?;
        load_pretrained_from(&dir, &spec, config.backbone_scale, side)?
    } else {
        ModelHandle::random(&spec, config.backbone_scale, side, config.seed)?
    };
    adapt_head(base, config.registry.len(), config.seed)
}

fn parse_arch(name: &str) -> Result<Architecture> {
    Architecture::parse(name).map_err(invalid)
}

/// Splits the data and writes the split files for `arch`.
pub fn prepare_split(config: &ExperimentConfig, arch: Architecture) -> Result<(DatasetManifest, SplitAssignment)> {
    let manifest = load_manifest(&config.manifest, &config.registry)?;
    let split = stratified_split(&manifest, &config.split_spec())?;
    write_split_files(&config.run_dir(arch), &split, &manifest)?;
    Ok((manifest, split))
}

/// Trains and evaluates one architecture, writing every artifact under
/// `<out_dir>/<arch>/`.
pub fn run(config: &ExperimentConfig, arch: &str) -> Result<RunArtifacts> {
    let arch = parse_arch(arch)?;
    config.validate()?;
    let run_dir = config.run_dir(arch);
    let (manifest, split) = prepare_split(config, arch)?;
    config.save(&run_dir.join("config.json"))?;
    let (train_pipe, eval_pipe) = pipelines(config, arch)?;
    let model = initial_model(config, arch)?;
    let hash = config.hash();
    let train = samples(&manifest, &split.train);
    let val = samples(&manifest, &split.val);
    let inputs = TrainingInputs {
        train: &train,
        val: &val,
        train_pipeline: &train_pipe,
        eval_pipeline: &eval_pipe,
        stamp: Some(&hash),
    };
    log::info!(
        "{arch}: {} parameters, {} train / {} val / {} test",
        model.param_count(),
        train.len(),
        val.len(),
        split.test.len()
    );
    let outcome = run_training(model, &inputs, &config.training_config(), &run_dir)?;
    finish_run(config, arch, &manifest, split, &eval_pipe, &outcome.model, outcome.history, outcome.checkpoint)
}

/// Re-evaluates the best checkpoint of a finished run on its test split.
pub fn evaluate(config: &ExperimentConfig, arch: &str) -> Result<RunArtifacts> {
    let arch = parse_arch(arch)?;
    config.validate()?;
    let run_dir = config.run_dir(arch);
    let manifest = load_manifest(&config.manifest, &config.registry)?;
    let split = read_split_files(&run_dir, &manifest)?;
    let (_, eval_pipe) = pipelines(config, arch)?;
    let spec = ArchitectureSpec::of(arch);
    let skeleton = ModelHandle::skeleton(&spec, config.backbone_scale, config.input_size(arch))?;
    let mut model = adapt_head(skeleton, config.registry.len(), config.seed)?;
    let ckpt = checkpoint_path(&run_dir, &model);
    model.load(&ckpt)?;
    let history = read_history(&run_dir.join("history.csv"))?;
    let best = history
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .ok_or_else(|| Error::Parse("history.csv has no epochs".into()))?;
    let checkpoint = CheckpointRecord {
        best_epoch: best.epoch,
        best_val_loss: best.val_loss,
        weights_path: ckpt,
    };
    finish_run(config, arch, &manifest, split, &eval_pipe, &model, history, checkpoint)
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    config: &ExperimentConfig,
    arch: Architecture,
    manifest: &DatasetManifest,
    split: SplitAssignment,
    eval_pipe: &Pipeline,
    model: &ModelHandle,
    history: Vec<EpochLog>,
    checkpoint: CheckpointRecord,
) -> Result<RunArtifacts> {
    let run_dir = config.run_dir(arch);
    let test = samples(manifest, &split.test);
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let probs = predict_all(model, &test, eval_pipe, config.training.batch_size)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let cm = confusion_matrix_k(&labels, &preds, config.registry.len())?;
    let report = classification_report(&cm, &config.registry);

    let write = |name: &str, body: &str| -> Result<()> {
        let path = run_dir.join(name);
        fs::write(&path, body).map_err(|e| io_at(&path, e))
    };
    write("report.txt", &report.render())?;
    write("report.csv", &report.to_csv())?;
    write("confusion.txt", &cm.to_grid(&config.registry))?;

    let plots = match emit_plots(&run_dir.join("plots"), manifest, config.registry.len(), &cm, config.seed) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("skipping plots: {e}");
            Vec::new()
        }
    };

    let mut artifacts = BTreeMap::new();
    let mut files: Vec<PathBuf> = ["train.txt", "val.txt", "test.txt", "split.json", "history.csv", "report.txt", "report.csv", "confusion.txt", "config.json"]
        .iter()
        .map(|f| run_dir.join(f))
        .collect();
    files.push(checkpoint.weights_path.clone());
    files.extend(plots.iter().cloned());
    for path in files.into_iter().filter(|p| p.is_file()) {
        let bytes = fs::read(&path).map_err(|e| io_at(&path, e))?;
        let rel = path.strip_prefix(&run_dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        artifacts.insert(rel, sha256_hex(&bytes));
    }

    let a = &report.aggregate;
    let summary = RunSummary {
        architecture: arch.name().to_string(),
        config_hash: config.hash(),
        params_millions: model.param_count() as f64 / 1e6,
        input_size: config.input_size(arch),
        backbone_scale: config.backbone_scale,
        accuracy: a.overall_accuracy,
        precision: a.weighted.precision,
        recall: a.weighted.recall,
        f1: a.weighted.f1,
        macro_f1: a.macro_avg.f1,
        mean_binary_accuracy: a.mean_binary_accuracy,
        best_epoch: checkpoint.best_epoch,
        best_val_loss: checkpoint.best_val_loss,
        epochs_run: history.len(),
        stopped_early: history.last().is_some_and(|h| h.stopped_early),
        artifacts,
    };
    let path = run_dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")
        .map_err(|e| io_at(&path, e))?;
    log::info!("{arch}: test accuracy {} weighted F1 {}", fmt3(a.overall_accuracy), fmt3(a.weighted.f1));

    Ok(RunArtifacts {
        run_dir,
        split,
        history,
        checkpoint,
        report,
        confusion: cm,
        summary,
        plots,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub architecture: String,
    pub params_millions: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&RunSummary> for ComparisonRow {
    fn from(s: &RunSummary) -> Self {
        ComparisonRow {
            architecture: s.architecture.clone(),
            params_millions: s.params_millions,
            accuracy: s.accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_COLUMNS: [&str; 6] = ["architecture", "params_m", "accuracy", "precision", "recall", "f1"];

fn arch_rank(name: &str) -> usize {
    Architecture::parse(name)
        .ok()
        .and_then(|a| Architecture::ALL.iter().position(|&b| b == a))
        .unwrap_or(usize::MAX)
}

fn fmt_params(m: f64) -> String {
    let s = format!("{:.1}", (m * 10.0).round() / 10.0);
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

impl ComparisonTable {
    /// Sorts by F1 descending; ties keep registry order.
    pub fn from_rows(mut rows: Vec<ComparisonRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoRuns);
        }
        rows.sort_by(|a, b| {
            b.f1.total_cmp(&a.f1)
                .then_with(|| arch_rank(&a.architecture).cmp(&arch_rank(&b.architecture)))
                .then_with(|| a.architecture.cmp(&b.architecture))
        });
        Ok(ComparisonTable { rows })
    }

    pub fn render(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.architecture.len()).max().unwrap_or(0).max(12);
        let mut out = format!(
            "{:<name_w$} {:>10} {:>9} {:>9} {:>9} {:>9}\n",
            "Architecture", "Params(M)", "Accuracy", "Precision", "Recall", "F1"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<name_w$} {:>10} {:>9} {:>9} {:>9} {:>9}\n",
                r.architecture,
                fmt_params(r.params_millions),
                fmt3(r.accuracy),
                fmt3(r.precision),
                fmt3(r.recall),
                fmt3(r.f1)
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COMPARISON_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.architecture.clone(),
                r.params_millions.to_string(),
                r.accuracy.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse(format!("missing column {}", COMPARISON_COLUMNS[i])))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("{}: {e}", COMPARISON_COLUMNS[i])))
            };
            rows.push(ComparisonRow {
                architecture: rec.get(0).unwrap_or_default().to_string(),
                params_millions: num(1)?,
                accuracy: num(2)?,
                precision: num(3)?,
                recall: num(4)?,
                f1: num(5)?,
            });
        }
        ComparisonTable::from_rows(rows)
    }
}

pub fn read_summary(run_dir: &Path) -> Result<RunSummary> {
    let path = run_dir.join(SUMMARY_FILE);
    let bytes = fs::read(&path).map_err(|e| io_at(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Collects the summaries found in `dirs`, each either a run directory or
/// an output directory holding one run per architecture.
pub fn compare(dirs: &[PathBuf]) -> Result<ComparisonTable> {
    let mut rows = Vec::new();
    for dir in dirs {
        if dir.join(SUMMARY_FILE).is_file() {
            rows.push(ComparisonRow::from(&read_summary(dir)?));
            continue;
        }
        let Ok(entries) = fs::read_dir(dir) else { continue };
        let mut subdirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        subdirs.sort();
        for sub in subdirs {
            if sub.join(SUMMARY_FILE).is_file() {
                rows.push(ComparisonRow::from(&read_summary(&sub)?));
            }
        }
    }
    ComparisonTable::from_rows(rows)
}
