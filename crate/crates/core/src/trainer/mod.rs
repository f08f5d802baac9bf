//! Seeded training with AdamW, best-epoch selection on validation F1, and
//! the multi-seed protocol.

mod optimizer;

pub use optimizer::AdamW;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentedSample;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion, Averaging, MeanStd, MetricsReport, SummaryRow};
use crate::model::{
    build_model, cross_entropy_loss, BackboneSpec, Init, Model, Normalizer, WeightArchive,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Preset {
    /// Pretrained-scale settings: lr 1e-7, batch 32, 100 epochs.
    Paper,
    /// From-scratch desk-scale settings: lr 1e-3, batch 16, 10 epochs.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seeds: Vec<u64>,
    /// Train only the classifier head.
    #[serde(default)]
    pub freeze_backbone: bool,
    /// Averaging used for every reported metric, including the selection F1.
    #[serde(default)]
    pub averaging: Averaging,
}

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            preset: Preset::Paper,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-7,
            weight_decay: 0.01,
            seeds: DEFAULT_SEEDS.to_vec(),
            freeze_backbone: false,
            averaging: Averaging::Macro,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            preset: Preset::Desk,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seeds: DEFAULT_SEEDS.to_vec(),
            freeze_backbone: false,
            averaging: Averaging::Macro,
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a positive finite number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose checkpoint was kept.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub normalizer: Normalizer,
    pub test: MetricsReport,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Per-epoch series as CSV.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy,val_precision,val_recall,val_f1\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.10},{:.10},{:.10},{:.10},{:.10}\n",
                e.epoch, e.train_loss, e.val.accuracy, e.val.precision, e.val.recall, e.val.f1
            ));
        }
        s
    }
}

/// Training, validation and test samples for one run.
#[derive(Debug, Clone, Copy)]
pub struct RunData<'a> {
    pub train: &'a [AugmentedSample],
    pub val: &'a [AugmentedSample],
    pub test: &'a [AugmentedSample],
}

fn labels(samples: &[AugmentedSample], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| samples[i].label.index()).collect()
}

/// Predicted labels in eval mode.
pub fn predict(
    model: &Model,
    normalizer: &Normalizer,
    samples: &[AugmentedSample],
) -> Result<Vec<Label>> {
    const CHUNK: usize = 32;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let chunks: Vec<Result<Vec<Label>>> = idx
        .par_chunks(CHUNK)
        .map(|c| {
            let logits = model.forward(&normalizer.batch(samples, c)?)?;
            Ok(logits.argmax_rows().into_iter().map(Label::from_index).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate(
    model: &Model,
    normalizer: &Normalizer,
    samples: &[AugmentedSample],
    averaging: Averaging,
) -> Result<MetricsReport> {
    let preds = predict(model, normalizer, samples)?;
    let truths: Vec<Label> = samples.iter().map(|s| s.label).collect();
    compute_metrics(&confusion(&preds, &truths)?, averaging)
}

/// One optimisation step on a fixed batch; returns the pre-update loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    normalizer: &Normalizer,
    samples: &[AugmentedSample],
    idx: &[usize],
    head_only: bool,
) -> Result<f64> {
    let batch = normalizer.batch(samples, idx)?;
    model.zero_grad();
    let logits = model.forward_train(&batch)?;
    let (loss, dlogits) = cross_entropy_loss(&logits, &labels(samples, idx));
    if !loss.is_finite() {
        return Ok(loss);
    }
    model.backward(&dlogits);
    opt.step(model, head_only);
    Ok(loss)
}

const EPOCH_STREAM: u64 = 0x45_50_4f_43;

/// Train `model` for `config.epochs` epochs, keep the weights of the epoch
/// with the highest validation F1 (earliest on ties), and evaluate them on
/// the test samples once. With `out_dir`, the checkpoint, record and
/// metric CSV are written there.
pub fn train_one(
    model: &mut Model,
    data: RunData<'_>,
    config: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunRecord> {
    config.validate()?;
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(Error::InvalidTrainConfig(format!(
            "empty sample set (train {}, val {}, test {})",
            data.train.len(),
            data.val.len(),
            data.test.len()
        )));
    }
    let normalizer = Normalizer::fit(data.train)?;
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::rng_for(seed, &[EPOCH_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let loss = train_step(model, &mut opt, &normalizer, data.train, idx, config.freeze_backbone)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * idx.len() as f64;
        }
        let val = evaluate(model, &normalizer, data.val, config.averaging)?;
        log::debug!("seed {seed} epoch {epoch}: val f1 {:.4}", val.f1);
        if best.as_ref().is_none_or(|(_, f, _)| val.f1 > *f) {
            best = Some((epoch, val.f1, model.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val,
        });
    }

    let (best_epoch, best_val_f1, best_model) = best.expect("at least one epoch");
    *model = best_model;
    let test = evaluate(model, &normalizer, data.test, config.averaging)?;

    let mut record = RunRecord {
        seed,
        epochs,
        best_epoch,
        best_val_f1,
        best_checkpoint: None,
        normalizer,
        test,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = dir.join("checkpoint.ctcw");
        checkpoint_archive(model, &record)?.save(&ckpt)?;
        record.best_checkpoint = Some(PathBuf::from("checkpoint.ctcw"));
        write_file(&dir.join("record.json"), &record.to_json())?;
        write_file(&dir.join("metrics.csv"), &record.metrics_csv())?;
    }
    Ok(record)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn checkpoint_archive(model: &mut Model, record: &RunRecord) -> Result<WeightArchive> {
    let mut a = WeightArchive::from_model(model);
    a.metadata.insert("seed".into(), record.seed.to_string());
    a.metadata.insert("best_epoch".into(), record.best_epoch.to_string());
    a.metadata.insert("normalizer".into(), serde_json::to_string(&record.normalizer)?);
    a.metadata.insert("backbone".into(), serde_json::to_string(&model.spec)?);
    Ok(a)
}

/// Rebuild a model and its normaliser from a checkpoint written by
/// [`train_one`].
pub fn load_checkpoint(path: &Path) -> Result<(Model, Normalizer)> {
    let archive = WeightArchive::load(path)?;
    let meta = |k: &str| {
        archive
            .metadata
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Archive(format!("checkpoint metadata lacks `{k}`")))
    };
    let spec: BackboneSpec = serde_json::from_str(&meta("backbone")?)?;
    let normalizer: Normalizer = serde_json::from_str(&meta("normalizer")?)?;
    let model = build_model(&spec, Init::FromArchive(archive))?;
    Ok((model, normalizer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds_requested: usize,
    pub seeds_completed: usize,
    /// Some requested runs failed; the statistics cover only the rest.
    pub incomplete: bool,
    pub failures: Vec<SeedFailure>,
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    /// `(seed, test F1)` for every completed run.
    pub f1_by_seed: Vec<(u64, f64)>,
}

impl AggregateReport {
    pub fn from_runs(requested: usize, runs: &[RunRecord], failures: Vec<SeedFailure>) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| {
            MeanStd::of(&runs.iter().map(|r| f(&r.test)).collect::<Vec<_>>())
        };
        AggregateReport {
            seeds_requested: requested,
            seeds_completed: runs.len(),
            incomplete: !failures.is_empty() || runs.len() < requested,
            failures,
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            accuracy: col(|m| m.accuracy),
            f1: col(|m| m.f1),
            f1_by_seed: runs.iter().map(|r| (r.seed, r.test.f1)).collect(),
        }
    }

    pub fn to_row(&self, name: &str) -> Option<SummaryRow> {
        Some(SummaryRow {
            name: name.to_string(),
            precision: self.precision?,
            recall: self.recall?,
            accuracy: self.accuracy?,
            f1: self.f1?,
            incomplete: self.incomplete,
        })
    }
}

/// Train one model per seed, each with its own initialisation and data
/// order, on at most `jobs` threads. Outputs go to `out_dir/<seed>/`.
pub fn train_multi_seed(
    spec: &BackboneSpec,
    data: RunData<'_>,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<(Vec<RunRecord>, AggregateReport)> {
    config.validate()?;
    spec.validate()?;
    let run = |seed: u64| -> Result<RunRecord> {
        let mut model = build_model(spec, Init::Random(seed))?;
        let dir = out_dir.map(|d| d.join(seed.to_string()));
        train_one(&mut model, data, config, seed, dir.as_deref())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidTrainConfig(format!("thread pool: {e}")))?;
    let results: Vec<(u64, Result<RunRecord>)> =
        pool.install(|| config.seeds.par_iter().map(|&s| (s, run(s))).collect());
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(rec) => runs.push(rec),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                })
            }
        }
    }
    let agg = AggregateReport::from_runs(config.seeds.len(), &runs, failures);
    Ok((runs, agg))
}
