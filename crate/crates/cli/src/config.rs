//! TOML experiment configuration.
//!
//! Every section except `[data]` may be omitted; omitted keys take the
//! defaults listed in [`TEMPLATE`]. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctcbench::augment::AugmentSettings;
use ctcbench::data::{Rounding, SplitMode, SplitPolicy};
use ctcbench::experiments::{resolve_backbone, ArmName, ExperimentConfig};
use ctcbench::metrics::Averaging;
use ctcbench::stats::Center;
use ctcbench::trainer::{Preset, TrainConfig};
use ctcbench::{Error, Result};

/// Environment variable that replaces `experiment.results_dir`.
pub const RESULTS_DIR_ENV: &str = "CTCBENCH_RESULTS_DIR";

/// Name of the resolved config written into every experiment directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

/// Documented configuration with every default spelled out.
pub const TEMPLATE: &str = r#"# ctcbench experiment configuration

[experiment]
name = "experiment"          # output goes to <results_dir>/<name>/
results_dir = "results"      # overridden by CTCBENCH_RESULTS_DIR
jobs = 1                     # parallel seeds; results do not depend on it

[data]
manifest = "data/manifest.csv"   # required
working_size = 148               # images are resized to this square size

[split]
mode = "FRACTIONS"           # FRACTIONS or EXACT_COUNTS
seed = 0
# FRACTIONS keys
val_fraction = 0.1           # share of non-test records per class sent to validation
leuko_test_fraction = 0.15   # share of all leukocytes sent to test
rounding = "floor"           # floor or nearest
# EXACT_COUNTS keys (defaults: 50, 29, 52, 56)
# val_ctc = 50
# val_leuko = 29
# test_ctc = 52
# test_leuko = 56

[arm]
name = "BF_W_DAPI"           # arm used by `train` and `compare`
ablation = ["AUG1", "AUG2", "BF_WO_DAPI", "BF_W_DAPI_NO_AUG", "BF_W_DAPI", "DAPI_WO_BF", "DAPI_W_BF"]

[augment]
seed = 0
one_op = ["GEOMETRIC"]
two_ops = ["GEOMETRIC", "BRIGHTNESS"]

[augment.geometric]
kind = "GEOMETRIC"
rotation_deg = { lo = -180.0, hi = 180.0 }
hflip_prob = 0.5
vflip_prob = 0.5

[augment.brightness]
kind = "BRIGHTNESS"
factor = { lo = 0.7, hi = 1.3 }

[augment.color]
kind = "COLOR"
gamma = { lo = 0.8, hi = 1.25 }
contrast = { lo = 0.8, hi = 1.2 }

[backbone]
name = "mini"                # mini, resnet18-like, resnet34-like, resnet50-like
# base_width = 8             # default: the preset's width
# stage_depths = [1, 1]      # default: the preset's depths
compare = ["mini"]           # entries `name` or `name:width` for `compare`

[train]
preset = "DESK"              # DESK: lr 1e-3, batch 16, 10 epochs; PAPER: lr 1e-7, batch 32, 100 epochs
# epochs, batch_size, learning_rate, weight_decay (0.01) override the preset
seeds = [0, 1, 2, 3, 4]
freeze_backbone = false
averaging = "MACRO"          # MACRO or POSITIVE_CLASS

[stats]
alpha = 0.05
levene_center = "MEAN"       # MEAN or MEDIAN
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub arm: ArmSection,
    #[serde(default)]
    pub augment: AugmentSettings,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub stats: StatsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub results_dir: PathBuf,
    pub jobs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            results_dir: "results".into(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    #[serde(default = "default_working_size")]
    pub working_size: u32,
}

fn default_working_size() -> u32 {
    148
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitModeName {
    #[default]
    Fractions,
    ExactCounts,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitModeName,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leuko_test_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounding: Option<Rounding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_ctc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_leuko: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_ctc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_leuko: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmSection {
    pub name: ArmName,
    pub ablation: Vec<ArmName>,
}

impl Default for ArmSection {
    fn default() -> Self {
        ArmSection {
            name: ArmName::BfWDapi,
            ablation: ArmName::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_depths: Option<Vec<usize>>,
    pub compare: Vec<String>,
}

impl Default for BackboneSection {
    fn default() -> Self {
        BackboneSection {
            name: "mini".into(),
            base_width: None,
            stage_depths: None,
            compare: vec!["mini".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub freeze_backbone: bool,
    pub averaging: Averaging,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            preset: Preset::Desk,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            weight_decay: None,
            seeds: None,
            freeze_backbone: false,
            averaging: Averaging::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub alpha: f64,
    pub levene_center: Center,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            alpha: ctcbench::stats::DEFAULT_ALPHA,
            levene_center: Center::Mean,
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Position of `key` inside `[section]`, or of the section header when the
/// key is absent.
fn locate(source: &str, section: &str, key: &str) -> Option<(usize, usize)> {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in source.lines().enumerate() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix('[') {
            current = rest.trim_end().trim_end_matches(']').trim().to_string();
            if current == section {
                header = Some((i + 1, line.len() - t.len() + 1));
            }
        } else if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some((i + 1, line.len() - t.len() + 1));
                }
            }
        }
    }
    header
}

/// A parsed config together with its source, for error locations.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: ConfigFile,
    pub path: PathBuf,
    source: String,
}

impl LoadedConfig {
    fn error(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        let at = match locate(&self.source, section, key) {
            Some((l, c)) => format!("{}:{l}:{c}", self.path.display()),
            None => self.path.display().to_string(),
        };
        Error::Config {
            location: format!("{at} ({section}.{key})"),
            message: message.into(),
        }
    }

    fn base_dir(&self) -> PathBuf {
        self.path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn split_policy(&self) -> Result<SplitPolicy> {
        let s = &self.file.split;
        let fraction_keys = [
            ("val_fraction", s.val_fraction.is_some()),
            ("leuko_test_fraction", s.leuko_test_fraction.is_some()),
            ("rounding", s.rounding.is_some()),
        ];
        let count_keys = [
            ("val_ctc", s.val_ctc.is_some()),
            ("val_leuko", s.val_leuko.is_some()),
            ("test_ctc", s.test_ctc.is_some()),
            ("test_leuko", s.test_leuko.is_some()),
        ];
        let (stray, mode) = match s.mode {
            SplitModeName::Fractions => (&count_keys[..], "FRACTIONS"),
            SplitModeName::ExactCounts => (&fraction_keys[..], "EXACT_COUNTS"),
        };
        if let Some((key, _)) = stray.iter().find(|(_, set)| *set) {
            return Err(self.error("split", key, format!("`{key}` is not used by mode {mode}")));
        }
        let mode = match s.mode {
            SplitModeName::Fractions => SplitMode::Fractions {
                val_fraction: s.val_fraction.unwrap_or(0.1),
                leuko_test_fraction: s.leuko_test_fraction.unwrap_or(0.15),
                rounding: s.rounding.unwrap_or_default(),
            },
            SplitModeName::ExactCounts => SplitMode::ExactCounts {
                val_ctc: s.val_ctc.unwrap_or(50),
                val_leuko: s.val_leuko.unwrap_or(29),
                test_ctc: s.test_ctc.unwrap_or(52),
                test_leuko: s.test_leuko.unwrap_or(56),
            },
        };
        let policy = SplitPolicy { mode, seed: s.seed };
        policy.validate().map_err(|e| {
            let key = match &e {
                Error::InvalidPolicy(m) if m.starts_with("leuko") => "leuko_test_fraction",
                _ => "val_fraction",
            };
            self.error("split", key, e.to_string())
        })?;
        Ok(policy)
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.file.train;
        let mut c = TrainConfig::from_preset(t.preset);
        if let Some(v) = t.epochs {
            c.epochs = v;
        }
        if let Some(v) = t.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = t.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = t.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = &t.seeds {
            c.seeds = v.clone();
        }
        c.freeze_backbone = t.freeze_backbone;
        c.averaging = t.averaging;
        c.validate().map_err(|e| {
            let msg = e.to_string();
            let key = ["epochs", "batch_size", "learning_rate", "weight_decay", "seeds"]
                .into_iter()
                .find(|k| msg.contains(k))
                .unwrap_or("preset");
            self.error("train", key, msg)
        })?;
        Ok(c)
    }

    /// Turn the file into a validated experiment description.
    /// `results_override` replaces `experiment.results_dir` when set.
    pub fn resolve(&self, results_override: Option<&Path>) -> Result<ExperimentConfig> {
        let f = &self.file;
        let base = self.base_dir();
        let at_base = |p: &Path| {
            let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            std::path::absolute(&joined).unwrap_or(joined)
        };
        let size = f.data.working_size;
        if size < 16 {
            return Err(self.error("data", "working_size", format!("must be >= 16, got {size}")));
        }
        let mut backbone = resolve_backbone(&f.backbone.name, size as usize)
            .map_err(|e| self.error("backbone", "name", e.to_string()))?;
        if let Some(w) = f.backbone.base_width {
            backbone.base_width = w;
        }
        if let Some(d) = &f.backbone.stage_depths {
            backbone.stage_depths = d.clone();
        }
        backbone
            .validate()
            .map_err(|e| self.error("backbone", "stage_depths", e.to_string()))?;
        for entry in &f.backbone.compare {
            resolve_backbone(entry, size as usize)
                .map_err(|e| self.error("backbone", "compare", e.to_string()))?;
        }
        f.augment
            .validate()
            .map_err(|e| self.error("augment", "seed", e.to_string()))?;
        if f.experiment.jobs == 0 {
            return Err(self.error("experiment", "jobs", "must be >= 1"));
        }
        if f.arm.ablation.is_empty() {
            return Err(self.error("arm", "ablation", "at least one arm is required"));
        }
        let manifest = at_base(&f.data.manifest);
        if !manifest.is_file() {
            return Err(self.error(
                "data",
                "manifest",
                format!("{} does not exist", manifest.display()),
            ));
        }
        let config = ExperimentConfig {
            name: f.experiment.name.clone(),
            manifest,
            split: self.split_policy()?,
            arm: f.arm.name,
            ablation_arms: f.arm.ablation.clone(),
            augment: f.augment.clone(),
            working_size: size,
            backbone,
            compare_backbones: f.backbone.compare.clone(),
            train: self.train_config()?,
            alpha: f.stats.alpha,
            levene_center: f.stats.levene_center,
            results_dir: results_override.map_or_else(|| at_base(&f.experiment.results_dir), Path::to_path_buf),
            jobs: f.experiment.jobs,
        };
        config.validate().map_err(|e| match e {
            Error::Config { location, message } => {
                let (section, key) = location.split_once('.').unwrap_or((location.as_str(), ""));
                self.error(section, key, message)
            }
            other => self.error("experiment", "name", other.to_string()),
        })?;
        Ok(config)
    }
}

/// Parse TOML text. Syntax and schema errors carry `path:line:col`.
pub fn parse_config(source: &str, path: &Path) -> Result<LoadedConfig> {
    let file: ConfigFile = toml::from_str(source).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let (l, c) = line_col(source, span.start);
                format!("{}:{l}:{c}", path.display())
            }
            None => path.display().to_string(),
        };
        Error::Config {
            location,
            message: e.message().to_string(),
        }
    })?;
    Ok(LoadedConfig {
        file,
        path: path.to_path_buf(),
        source: source.to_string(),
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::Config {
        location: path.display().to_string(),
        message: format!("cannot read config: {e}"),
    })?;
    parse_config(&source, path)
}

/// Fully explicit config equivalent to `config`; loading it back yields the
/// same experiment.
pub fn resolved_file(config: &ExperimentConfig) -> ConfigFile {
    let mut split = SplitSection {
        seed: config.split.seed,
        ..Default::default()
    };
    match &config.split.mode {
        SplitMode::Fractions {
            val_fraction,
            leuko_test_fraction,
            rounding,
        } => {
            split.mode = SplitModeName::Fractions;
            split.val_fraction = Some(*val_fraction);
            split.leuko_test_fraction = Some(*leuko_test_fraction);
            split.rounding = Some(*rounding);
        }
        SplitMode::ExactCounts {
            val_ctc,
            val_leuko,
            test_ctc,
            test_leuko,
        } => {
            split.mode = SplitModeName::ExactCounts;
            split.val_ctc = Some(*val_ctc);
            split.val_leuko = Some(*val_leuko);
            split.test_ctc = Some(*test_ctc);
            split.test_leuko = Some(*test_leuko);
        }
    }
    let b = &config.backbone;
    let name = b
        .preset_name
        .as_deref()
        .map(|n| n.split(':').next().unwrap_or(n))
        .unwrap_or("mini");
    let t = &config.train;
    ConfigFile {
        experiment: ExperimentSection {
            name: config.name.clone(),
            results_dir: config.results_dir.clone(),
            jobs: config.jobs,
        },
        data: DataSection {
            manifest: config.manifest.clone(),
            working_size: config.working_size,
        },
        split,
        arm: ArmSection {
            name: config.arm,
            ablation: config.ablation_arms.clone(),
        },
        augment: config.augment.clone(),
        backbone: BackboneSection {
            name: name.to_string(),
            base_width: Some(b.base_width),
            stage_depths: Some(b.stage_depths.clone()),
            compare: config.compare_backbones.clone(),
        },
        train: TrainSection {
            preset: t.preset,
            epochs: Some(t.epochs),
            batch_size: Some(t.batch_size),
            learning_rate: Some(t.learning_rate),
            weight_decay: Some(t.weight_decay),
            seeds: Some(t.seeds.clone()),
            freeze_backbone: t.freeze_backbone,
            averaging: t.averaging,
        },
        stats: StatsSection {
            alpha: config.alpha,
            levene_center: config.levene_center,
        },
    }
}

pub fn to_toml(file: &ConfigFile) -> Result<String> {
    toml::to_string_pretty(file).map_err(|e| Error::Serialization(e.to_string()))
}
