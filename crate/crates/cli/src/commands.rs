//! Subcommand implementations. Each returns the text printed on stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use ctcbench::data::{load_manifest, make_split, split_report, Rounding, SplitMode, SplitPolicy};
use ctcbench::experiments::{
    regenerate_reports, resolve_backbone, run_ablation, run_arm, run_backbone_comparison, ArmName,
    ExperimentArm, ExperimentConfig,
};
use ctcbench::metrics::markdown_table;
use ctcbench::stats::{compare_arms_with, Center, Sample};
use ctcbench::synth::{generate_dataset, SynthSpec};
use ctcbench::{Error, Result};

use crate::config::{load_config, resolved_file, to_toml, RESOLVED_CONFIG, RESULTS_DIR_ENV};

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| io(d, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io(path, e))
}

fn refuse(path: &Path) -> Error {
    Error::Config {
        location: path.display().to_string(),
        message: "already exists; pass --overwrite to replace it".into(),
    }
}

/// Make `dir` an empty directory, clearing it only with `overwrite`.
pub fn claim_dir(dir: &Path, overwrite: bool) -> Result<()> {
    let occupied = dir.is_dir()
        && std::fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .next()
            .is_some();
    if occupied {
        if !overwrite {
            return Err(refuse(dir));
        }
        std::fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
    } else if dir.exists() && !dir.is_dir() {
        return Err(refuse(dir));
    }
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn claim_file(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(refuse(path));
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory for images and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the reference source counts: 529 spiked CTC, 52 patient CTC, 388 leukocytes.
    #[arg(long)]
    pub table1_counts: bool,
    #[arg(long, default_value_t = 100)]
    pub n_spiked_ctc: usize,
    #[arg(long, default_value_t = 10)]
    pub n_patient_ctc: usize,
    #[arg(long, default_value_t = 80)]
    pub n_leuko: usize,
    #[arg(long, default_value_t = 148)]
    pub image_size: u32,
    #[arg(long, default_value_t = 1.0)]
    pub bf_signal_strength: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dapi_informativeness: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub overwrite: bool,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthSpec {
        let (s, p, l) = if self.table1_counts {
            (529, 52, 388)
        } else {
            (self.n_spiked_ctc, self.n_patient_ctc, self.n_leuko)
        };
        SynthSpec {
            n_spiked_ctc: s,
            n_patient_ctc: p,
            n_leuko: l,
            image_size: self.image_size,
            bf_signal_strength: self.bf_signal_strength,
            dapi_informativeness: self.dapi_informativeness,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let spec = args.spec();
    spec.validate()?;
    claim_dir(&args.out, args.overwrite)?;
    let manifest = generate_dataset(&spec, &args.out)?;
    write_file(&args.out.join("synth_spec.json"), &serde_json::to_string_pretty(&spec)?)?;
    Ok(format!(
        "wrote {} records ({} CTC, {} leukocytes) to {}\n",
        manifest.len(),
        spec.n_spiked_ctc + spec.n_patient_ctc,
        spec.n_leuko,
        args.out.join("manifest.csv").display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitModeArg {
    /// Fixed per-class counts; defaults to 50/29 validation, 52/56 test.
    Exact,
    Fractions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoundingArg {
    Floor,
    Nearest,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitModeArg::Exact)]
    pub mode: SplitModeArg,
    #[arg(long, default_value_t = 50)]
    pub val_ctc: usize,
    #[arg(long, default_value_t = 29)]
    pub val_leuko: usize,
    #[arg(long, default_value_t = 52)]
    pub test_ctc: usize,
    #[arg(long, default_value_t = 56)]
    pub test_leuko: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub leuko_test_fraction: f64,
    #[arg(long, value_enum, default_value_t = RoundingArg::Floor)]
    pub rounding: RoundingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split JSON path; the count table goes next to it as `<stem>_counts.md`.
    #[arg(long, default_value = "split.json")]
    pub out: PathBuf,
    /// Arm whose training multiplier fills the "Augmented Train" row.
    #[arg(long, default_value = "BF_W_DAPI")]
    pub arm: ArmName,
    #[arg(long)]
    pub overwrite: bool,
}

impl SplitArgs {
    pub fn policy(&self) -> SplitPolicy {
        let mode = match self.mode {
            SplitModeArg::Exact => SplitMode::ExactCounts {
                val_ctc: self.val_ctc,
                val_leuko: self.val_leuko,
                test_ctc: self.test_ctc,
                test_leuko: self.test_leuko,
            },
            SplitModeArg::Fractions => SplitMode::Fractions {
                val_fraction: self.val_fraction,
                leuko_test_fraction: self.leuko_test_fraction,
                rounding: match self.rounding {
                    RoundingArg::Floor => Rounding::Floor,
                    RoundingArg::Nearest => Rounding::Nearest,
                },
            },
        };
        SplitPolicy {
            mode,
            seed: self.seed,
        }
    }

    pub fn counts_path(&self) -> PathBuf {
        let stem = self
            .out
            .file_stem()
            .map_or_else(|| "split".into(), |s| s.to_string_lossy().into_owned());
        self.out.with_file_name(format!("{stem}_counts.md"))
    }
}

pub fn cmd_split(args: &SplitArgs) -> Result<String> {
    let policy = args.policy();
    policy.validate()?;
    claim_file(&args.out, args.overwrite)?;
    let manifest = load_manifest(&args.manifest).map_err(|e| Error::stage("manifest", e))?;
    let split = make_split(&manifest, &policy).map_err(|e| Error::stage("split", e))?;
    let counts = split_report(&split, &manifest)?;
    let multiplier = ExperimentArm::from_name(args.arm).multiplier();
    write_file(&args.out, &split.to_json()?)?;
    write_file(&args.counts_path(), &counts.to_markdown(Some(multiplier)))?;
    Ok(counts.to_text(Some(multiplier)))
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Parallel seed jobs; overrides `experiment.jobs`.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated seeds; overrides `train.seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub overwrite: bool,
}

/// Load, apply overrides, claim the output directory and persist the
/// resolved config.
fn start_run(
    args: &RunArgs,
    apply: impl FnOnce(&mut ExperimentConfig),
) -> Result<ExperimentConfig> {
    let loaded = load_config(&args.config)?;
    let env = std::env::var_os(RESULTS_DIR_ENV).map(PathBuf::from);
    let mut config = loaded.resolve(env.as_deref())?;
    if let Some(j) = args.jobs {
        config.jobs = j.max(1);
    }
    if let Some(s) = &args.seeds {
        config.train.seeds = s.clone();
    }
    apply(&mut config);
    config.validate()?;
    let dir = config.output_dir();
    claim_dir(&dir, args.overwrite)?;
    write_file(&dir.join(RESOLVED_CONFIG), &to_toml(&resolved_file(&config))?)?;
    Ok(config)
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Arm to train; overrides `arm.name`.
    #[arg(long)]
    pub arm: Option<ArmName>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let config = start_run(&args.run, |c| {
        if let Some(a) = args.arm {
            c.arm = a;
        }
    })?;
    let out = run_arm(&config)?;
    let mut s = String::new();
    let _ = writeln!(s, "arm {}: {}", out.summary.arm, out.summary.resolution);
    let _ = writeln!(
        s,
        "training samples {} (CTC {}, LEUKO {}), validation {}, test {}",
        out.summary.train_samples,
        out.summary.train_samples_by_class[0],
        out.summary.train_samples_by_class[1],
        out.summary.val_samples,
        out.summary.test_samples
    );
    for r in &out.runs {
        let _ = writeln!(s, "seed {}: best epoch {}, test F1 {:.4}", r.seed, r.best_epoch, r.test.f1);
    }
    if let Some(row) = out.aggregate.to_row(out.summary.arm.display_name()) {
        s.push('\n');
        s.push_str(&markdown_table("Arm", &[row]));
    }
    for f in &out.aggregate.failures {
        let _ = writeln!(s, "seed {} failed: {}", f.seed, f.error);
    }
    let _ = writeln!(s, "results in {}", config.output_dir().display());
    if out.aggregate.seeds_completed == 0 {
        return Err(Error::stage("train", Error::InvalidSample(s)));
    }
    Ok(s)
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated arms; overrides `arm.ablation`.
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<ArmName>>,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<String> {
    let config = start_run(&args.run, |c| {
        if let Some(a) = &args.arms {
            c.ablation_arms = a.clone();
        }
    })?;
    let report = run_ablation(&config, &config.ablation_arms)?;
    let mut s = markdown_table("Arm", &report.rows);
    for (arm, err) in &report.failed_arms {
        let _ = writeln!(s, "arm {arm} failed: {err}");
    }
    let _ = writeln!(s, "\nresults in {}", config.output_dir().display());
    if report.rows.is_empty() {
        return Err(Error::stage("ablate", Error::InvalidSample(s)));
    }
    Ok(s)
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated `name[:width]` entries; overrides `backbone.compare`.
    #[arg(long, value_delimiter = ',')]
    pub backbones: Option<Vec<String>>,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String> {
    let config = start_run(&args.run, |c| {
        if let Some(b) = &args.backbones {
            c.compare_backbones = b.clone();
        }
    })?;
    let backbones = config
        .compare_backbones
        .iter()
        .map(|e| Ok((e.clone(), resolve_backbone(e, config.working_size as usize)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = run_backbone_comparison(&config, &backbones)?;
    let mut s = markdown_table("Model", &report.rows);
    let _ = writeln!(s, "\nresults in {}", config.output_dir().display());
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterArg {
    Mean,
    Median,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// CSV with an `f1` column (per-seed F1 of the first arm).
    #[arg(long)]
    pub arm_a: PathBuf,
    #[arg(long)]
    pub arm_b: PathBuf,
    /// Keep only rows whose `arm` column equals this value.
    #[arg(long)]
    pub filter_a: Option<String>,
    #[arg(long)]
    pub filter_b: Option<String>,
    #[arg(long, default_value_t = ctcbench::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = CenterArg::Mean)]
    pub levene_center: CenterArg,
    /// Write the decision trace as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

/// Read the `f1` column of a CSV, optionally filtered on its `arm` column.
pub fn read_f1_column(path: &Path, arm: Option<&str>) -> Result<Vec<f64>> {
    let bad = |m: String| Error::InvalidSample(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let f1_col = headers
        .iter()
        .position(|h| h.trim() == "f1")
        .ok_or_else(|| bad("no `f1` column".into()))?;
    let arm_col = headers.iter().position(|h| h.trim() == "arm");
    if arm.is_some() && arm_col.is_none() {
        return Err(bad("filter given but there is no `arm` column".into()));
    }
    let mut arms_seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if let Some(c) = arm_col {
            let name = row.get(c).unwrap_or("").trim().to_string();
            if arm.is_some_and(|a| a != name) {
                continue;
            }
            arms_seen.insert(name);
        }
        let cell = row.get(f1_col).unwrap_or("").trim();
        let v: f64 = cell
            .parse()
            .map_err(|_| bad(format!("row {}: `{cell}` is not a number", i + 2)))?;
        out.push(v);
    }
    if arm.is_none() && arms_seen.len() > 1 {
        return Err(bad(format!(
            "rows from {} arms; choose one with a filter",
            arms_seen.len()
        )));
    }
    if out.is_empty() {
        return Err(bad("no F1 values".into()));
    }
    Ok(out)
}

fn group_label(path: &Path, filter: Option<&str>) -> String {
    filter.map_or_else(|| path.display().to_string(), str::to_string)
}

pub fn cmd_stats(args: &StatsArgs) -> Result<String> {
    if let Some(p) = &args.out {
        claim_file(p, args.overwrite)?;
    }
    let a = read_f1_column(&args.arm_a, args.filter_a.as_deref())?;
    let b = read_f1_column(&args.arm_b, args.filter_b.as_deref())?;
    let center = match args.levene_center {
        CenterArg::Mean => Center::Mean,
        CenterArg::Median => Center::Median,
    };
    let a = Sample::new(group_label(&args.arm_a, args.filter_a.as_deref()), a);
    let b = Sample::new(group_label(&args.arm_b, args.filter_b.as_deref()), b);
    let trace = compare_arms_with(&a, &b, args.alpha, center)?;
    if let Some(p) = &args.out {
        write_file(p, &trace.to_json())?;
    }
    Ok(trace.summary())
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Experiment directory (`<results>/<name>`).
    #[arg(long)]
    pub results: PathBuf,
}

pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let rows = regenerate_reports(&args.results)?;
    let mut s = markdown_table("Arm", &rows);
    let _ = writeln!(s, "\nrewrote ablation.md, ablation.csv and f1_vectors.csv in {}", args.results.display());
    Ok(s)
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    /// Where to write the documented default config.
    #[arg(long, default_value = "ctcbench.toml")]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

pub fn cmd_init(args: &InitArgs) -> Result<String> {
    claim_file(&args.out, args.overwrite)?;
    write_file(&args.out, crate::config::TEMPLATE)?;
    Ok(format!("wrote {}\n", args.out.display()))
}
