use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ArmName, ExperimentArm};
use crate::augment::{expand_training_set, load_eval_set, samples_digest, AugmentSettings, PipelinePlan};
use crate::data::{
    load_manifest, make_split, split_report, CellRecord, Channel, DatasetSplit, Manifest,
    SplitCounts, SplitPolicy,
};
use crate::error::{Error, Result};
use crate::metrics::{csv_table, markdown_table, SummaryRow};
use crate::model::BackboneSpec;
use crate::source::{DiskSource, ImageSource};
use crate::stats::Center;
use crate::trainer::{train_multi_seed, AggregateReport, RunData, RunRecord, SeedFailure, TrainConfig};

/// Fully resolved settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub manifest: PathBuf,
    pub split: SplitPolicy,
    pub arm: ArmName,
    /// Arms run by the ablation command.
    pub ablation_arms: Vec<ArmName>,
    pub augment: AugmentSettings,
    pub working_size: u32,
    pub backbone: BackboneSpec,
    /// Registry names (optionally `name:width`) for the backbone comparison.
    pub compare_backbones: Vec<String>,
    pub train: TrainConfig,
    pub alpha: f64,
    pub levene_center: Center,
    /// Root of the output tree; the experiment writes to `<root>/<name>/`.
    pub results_dir: PathBuf,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn output_dir(&self) -> PathBuf {
        self.results_dir.join(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            return Err(Error::Config {
                location: "experiment.name".into(),
                message: format!("`{}` is not a usable directory name", self.name),
            });
        }
        self.split.validate()?;
        self.augment.validate()?;
        self.backbone.validate()?;
        self.train.validate()?;
        if self.backbone.input_size != self.working_size as usize {
            return Err(Error::Config {
                location: "backbone".into(),
                message: format!(
                    "backbone input size {} differs from the working size {}",
                    self.backbone.input_size, self.working_size
                ),
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config {
                location: "stats.alpha".into(),
                message: format!("alpha must lie in (0, 1), got {}", self.alpha),
            });
        }
        Ok(())
    }
}

/// Where arm images come from. Evaluation images are read only through
/// `eval`, so the two can be observed separately.
pub struct Sources<'a> {
    pub train: &'a dyn ImageSource,
    pub eval: &'a dyn ImageSource,
}

/// Inputs shared by every arm of an experiment.
pub struct Prepared {
    pub manifest: Manifest,
    pub split: DatasetSplit,
    pub counts: SplitCounts,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let manifest = load_manifest(&config.manifest).map_err(|e| Error::stage("manifest", e))?;
    let split = make_split(&manifest, &config.split).map_err(|e| Error::stage("split", e))?;
    let counts = split_report(&split, &manifest)?;
    Ok(Prepared {
        manifest,
        split,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: ArmName,
    pub resolution: String,
    pub train_records: usize,
    pub excluded_missing_channel: usize,
    pub train_samples: usize,
    pub train_samples_by_class: [usize; 2],
    pub val_samples: usize,
    pub test_samples: usize,
    pub train_digest: String,
    pub eval_channel: Channel,
}

pub struct ArmOutcome {
    pub summary: ArmSummary,
    pub runs: Vec<RunRecord>,
    pub aggregate: AggregateReport,
}

fn select(manifest: &Manifest, ids: &[String], needs: &[Channel]) -> (Vec<CellRecord>, usize) {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    let mut excluded = 0;
    for r in &manifest.records {
        if wanted.contains(r.cell_id.as_str()) {
            if needs.iter().all(|&c| r.has_channel(c)) {
                out.push(r.clone());
            } else {
                excluded += 1;
            }
        }
    }
    (out, excluded)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Split, expand per the arm recipe, train every seed and evaluate on the
/// arm's primary channel. Results go to `out_dir/<seed>/`, with
/// `aggregate.json`, `f1.csv` and `arm.json` alongside.
pub fn run_arm_with(
    config: &ExperimentConfig,
    prepared: &Prepared,
    arm: ArmName,
    backbone: &BackboneSpec,
    sources: &Sources<'_>,
    out_dir: &Path,
) -> Result<ArmOutcome> {
    let arm_def = ExperimentArm::from_name(arm);
    let primary = arm_def.primary_channel;
    let (train_records, excluded) =
        select(&prepared.manifest, &prepared.split.train, &arm_def.required_channels());
    let (val_records, _) = select(&prepared.manifest, &prepared.split.val, &[primary]);
    let (test_records, _) = select(&prepared.manifest, &prepared.split.test, &[primary]);
    if train_records.is_empty() || val_records.is_empty() || test_records.is_empty() {
        return Err(Error::stage(
            "expansion",
            Error::InvalidSample(format!(
                "arm {arm} has no usable records after channel filtering (train {}, val {}, test {})",
                train_records.len(),
                val_records.len(),
                test_records.len()
            )),
        ));
    }

    let plan = PipelinePlan::for_arm(&arm_def, &config.augment, config.working_size);
    let train = expand_training_set(&train_records, &plan, sources.train)
        .map_err(|e| Error::stage("expansion", e))?;
    let val = load_eval_set(&val_records, primary, config.working_size, sources.eval)
        .map_err(|e| Error::stage("evaluation-load", e))?;
    let test = load_eval_set(&test_records, primary, config.working_size, sources.eval)
        .map_err(|e| Error::stage("evaluation-load", e))?;

    let mut by_class = [0usize; 2];
    for s in &train {
        by_class[1 - s.label.index()] += 1;
    }
    let summary = ArmSummary {
        arm,
        resolution: arm_def.resolution(),
        train_records: train_records.len(),
        excluded_missing_channel: excluded,
        train_samples: train.len(),
        train_samples_by_class: by_class,
        val_samples: val.len(),
        test_samples: test.len(),
        train_digest: samples_digest(&train),
        eval_channel: primary,
    };

    let data = RunData {
        train: &train,
        val: &val,
        test: &test,
    };
    let (runs, aggregate) = train_multi_seed(backbone, data, &config.train, Some(out_dir), config.jobs)
        .map_err(|e| Error::stage("training", e))?;

    write(&out_dir.join("arm.json"), &serde_json::to_string_pretty(&summary)?)?;
    write(&out_dir.join("aggregate.json"), &serde_json::to_string_pretty(&aggregate)?)?;
    write(&out_dir.join("f1.csv"), &f1_csv(&[(arm.as_str().to_string(), &aggregate)]))?;
    Ok(ArmOutcome {
        summary,
        runs,
        aggregate,
    })
}

fn f1_csv(arms: &[(String, &AggregateReport)]) -> String {
    let mut s = String::from("arm,seed,f1\n");
    for (name, agg) in arms {
        for (seed, f1) in &agg.f1_by_seed {
            s.push_str(&format!("{name},{seed},{f1:.10}\n"));
        }
    }
    s
}

/// Run-level provenance written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub split_counts: SplitCounts,
    pub arm_resolutions: BTreeMap<String, String>,
    pub arms: Vec<ArmSummary>,
    pub failed_arms: BTreeMap<String, String>,
}

fn write_common(config: &ExperimentConfig, prepared: &Prepared, dir: &Path) -> Result<()> {
    write(&dir.join("split.json"), &prepared.split.to_json()?)?;
    write(&dir.join("split_counts.md"), &prepared.counts.to_markdown(None))?;
    write(
        &dir.join("experiment.json"),
        &serde_json::to_string_pretty(config)?,
    )
}

fn write_run_manifest(
    config: &ExperimentConfig,
    prepared: &Prepared,
    dir: &Path,
    arms: &[ArmSummary],
    failed: BTreeMap<String, String>,
) -> Result<()> {
    let m = RunManifest {
        experiment: config.name.clone(),
        split_counts: prepared.counts,
        arm_resolutions: ArmName::ALL
            .iter()
            .map(|&a| (a.as_str().to_string(), ExperimentArm::from_name(a).resolution()))
            .collect(),
        arms: arms.to_vec(),
        failed_arms: failed,
    };
    write(&dir.join("run_manifest.json"), &serde_json::to_string_pretty(&m)?)
}

/// Single-arm experiment reading images from disk.
pub fn run_arm(config: &ExperimentConfig) -> Result<ArmOutcome> {
    let prepared = prepare(config)?;
    let disk = DiskSource::new(&prepared.manifest);
    let sources = Sources {
        train: &disk,
        eval: &disk,
    };
    run_arm_in(config, &prepared, config.arm, &sources)
}

/// Single-arm experiment with caller-provided image sources.
pub fn run_arm_in(
    config: &ExperimentConfig,
    prepared: &Prepared,
    arm: ArmName,
    sources: &Sources<'_>,
) -> Result<ArmOutcome> {
    let dir = config.output_dir();
    write_common(config, prepared, &dir)?;
    let out = run_arm_with(config, prepared, arm, &config.backbone, sources, &dir.join(arm.as_str()))?;
    write_run_manifest(config, prepared, &dir, std::slice::from_ref(&out.summary), BTreeMap::new())?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<SummaryRow>,
    pub arms: Vec<ArmName>,
    pub aggregates: BTreeMap<String, AggregateReport>,
    pub failed_arms: BTreeMap<String, String>,
}

impl AblationReport {
    pub fn f1_vector(&self, arm: ArmName) -> Option<Vec<f64>> {
        self.aggregates
            .get(arm.as_str())
            .map(|a| a.f1_by_seed.iter().map(|(_, f)| *f).collect())
    }
}

/// Write `ablation.md`, `ablation.csv` and `f1_vectors.csv` for the given
/// per-arm aggregates, in arm order.
pub fn write_ablation_tables(
    dir: &Path,
    arms: &[ArmName],
    aggregates: &BTreeMap<String, AggregateReport>,
    failed: &BTreeMap<String, String>,
) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let mut vectors = Vec::new();
    for &arm in arms {
        if let Some(agg) = aggregates.get(arm.as_str()) {
            if let Some(row) = agg.to_row(arm.display_name()) {
                rows.push(row);
            }
            vectors.push((arm.as_str().to_string(), agg));
        }
    }
    let mut md = markdown_table("Arm", &rows);
    if !failed.is_empty() {
        md.push_str("\nFailed arms:\n\n");
        for (arm, err) in failed {
            md.push_str(&format!("- {arm}: {err}\n"));
        }
    }
    write(&dir.join("ablation.md"), &md)?;
    write(&dir.join("ablation.csv"), &csv_table("arm", &rows)?)?;
    write(&dir.join("f1_vectors.csv"), &f1_csv(&vectors))?;
    Ok(rows)
}

pub fn run_ablation(config: &ExperimentConfig, arms: &[ArmName]) -> Result<AblationReport> {
    let prepared = prepare(config)?;
    let disk = DiskSource::new(&prepared.manifest);
    let sources = Sources {
        train: &disk,
        eval: &disk,
    };
    run_ablation_in(config, &prepared, arms, &sources)
}

/// Run each arm in turn; an arm that fails is recorded and the rest
/// continue.
pub fn run_ablation_in(
    config: &ExperimentConfig,
    prepared: &Prepared,
    arms: &[ArmName],
    sources: &Sources<'_>,
) -> Result<AblationReport> {
    if arms.is_empty() {
        return Err(Error::Config {
            location: "arm.ablation".into(),
            message: "no arms requested".into(),
        });
    }
    let dir = config.output_dir();
    write_common(config, prepared, &dir)?;
    let mut aggregates = BTreeMap::new();
    let mut failed = BTreeMap::new();
    let mut summaries = Vec::new();
    for &arm in arms {
        match run_arm_with(config, prepared, arm, &config.backbone, sources, &dir.join(arm.as_str())) {
            Ok(out) => {
                summaries.push(out.summary);
                aggregates.insert(arm.as_str().to_string(), out.aggregate);
            }
            Err(e) => {
                log::warn!("arm {arm} failed: {e}");
                failed.insert(arm.as_str().to_string(), e.to_string());
            }
        }
    }
    let rows = write_ablation_tables(&dir, arms, &aggregates, &failed)?;
    write_run_manifest(config, prepared, &dir, &summaries, failed.clone())?;
    Ok(AblationReport {
        rows,
        arms: arms.to_vec(),
        aggregates,
        failed_arms: failed,
    })
}

/// Resolve `name` or `name:width` against the backbone registry.
pub fn resolve_backbone(entry: &str, input_size: usize) -> Result<BackboneSpec> {
    let (name, width) = match entry.split_once(':') {
        Some((n, w)) => {
            let w: usize = w.parse().map_err(|_| Error::InvalidBackbone(format!("bad width in `{entry}`")))?;
            (n, Some(w))
        }
        None => (entry, None),
    };
    let mut spec = crate::model::lookup_backbone(name, input_size)?;
    if let Some(w) = width {
        spec.base_width = w;
        spec.preset_name = Some(entry.to_string());
    }
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<SummaryRow>,
    pub aggregates: BTreeMap<String, AggregateReport>,
}

/// Train the configured arm once per backbone and write `comparison.md`.
pub fn run_backbone_comparison(
    config: &ExperimentConfig,
    backbones: &[(String, BackboneSpec)],
) -> Result<ComparisonReport> {
    let prepared = prepare(config)?;
    let disk = DiskSource::new(&prepared.manifest);
    let sources = Sources {
        train: &disk,
        eval: &disk,
    };
    run_backbone_comparison_in(config, &prepared, backbones, &sources)
}

pub fn run_backbone_comparison_in(
    config: &ExperimentConfig,
    prepared: &Prepared,
    backbones: &[(String, BackboneSpec)],
    sources: &Sources<'_>,
) -> Result<ComparisonReport> {
    if backbones.is_empty() {
        return Err(Error::Config {
            location: "backbone.compare".into(),
            message: "no backbones requested".into(),
        });
    }
    let dir = config.output_dir();
    write_common(config, prepared, &dir)?;
    let mut rows = Vec::new();
    let mut aggregates = BTreeMap::new();
    for (label, spec) in backbones {
        let out_dir = dir.join("comparison").join(label.replace([':', '/'], "_"));
        let out = run_arm_with(config, prepared, config.arm, spec, sources, &out_dir)?;
        if let Some(row) = out.aggregate.to_row(label) {
            rows.push(row);
        }
        aggregates.insert(label.clone(), out.aggregate);
    }
    write(&dir.join("comparison.md"), &markdown_table("Model", &rows))?;
    write(&dir.join("comparison.csv"), &csv_table("model", &rows)?)?;
    Ok(ComparisonReport { rows, aggregates })
}

/// Rebuild the ablation tables of an experiment directory from the
/// persisted per-seed records.
pub fn regenerate_reports(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut aggregates = BTreeMap::new();
    let mut arms = Vec::new();
    for arm in ArmName::ALL {
        let arm_dir = dir.join(arm.as_str());
        if !arm_dir.is_dir() {
            continue;
        }
        let prior: Option<AggregateReport> = std::fs::read_to_string(arm_dir.join("aggregate.json"))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        let mut runs = Vec::new();
        let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(&arm_dir).map_err(|e| Error::io(&arm_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&arm_dir, e))?;
            if let Ok(seed) = entry.file_name().to_string_lossy().parse::<u64>() {
                seeds.push((seed, entry.path().join("record.json")));
            }
        }
        seeds.sort();
        for (_, path) in &seeds {
            let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            runs.push(RunRecord::from_json(&s)?);
        }
        // keep the original seed order and failure list when available
        let (requested, failures, order): (usize, Vec<SeedFailure>, Vec<u64>) = match &prior {
            Some(p) => (p.seeds_requested, p.failures.clone(), p.f1_by_seed.iter().map(|(s, _)| *s).collect()),
            None => (runs.len(), Vec::new(), runs.iter().map(|r| r.seed).collect()),
        };
        runs.sort_by_key(|r| order.iter().position(|s| *s == r.seed).unwrap_or(usize::MAX));
        aggregates.insert(arm.as_str().to_string(), AggregateReport::from_runs(requested, &runs, failures));
        arms.push(arm);
    }
    if arms.is_empty() {
        return Err(Error::InvalidSample(format!("no arm results under {}", dir.display())));
    }
    let failed: BTreeMap<String, String> = std::fs::read_to_string(dir.join("run_manifest.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<RunManifest>(&s).ok())
        .map(|m| m.failed_arms)
        .unwrap_or_default();
    write_ablation_tables(dir, &arms, &aggregates, &failed)
}
