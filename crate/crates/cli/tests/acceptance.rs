//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails. Tolerances and time budgets are
//! pinned below.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use ctcbench::augment::{expand_training_set, samples_digest, AugmentSettings, PipelinePlan};
use ctcbench::data::{
    load_manifest, make_split, CellRecord, Channel, DatasetSplit, Label, Manifest, Provenance,
    Rounding, SplitMode, SplitPolicy,
};
use ctcbench::experiments::{
    prepare, run_arm_in, write_ablation_tables, ArmName, ExperimentArm, ExperimentConfig, Sources,
};
use ctcbench::metrics::{compute_metrics, confusion, Averaging, ConfusionMatrix};
use ctcbench::model::{build_model, cross_entropy_loss, BackboneSpec, Batch, Init, Model};
use ctcbench::source::{DiskSource, LoggingSource};
use ctcbench::stats::special::norm_ppf;
use ctcbench::stats::{
    levene_test, mann_whitney_u, shapiro_wilk, shapiro_wilk_statistic, u_statistic, Alternative,
    Center, DecisionTrace, Sample,
};
use ctcbench::trainer::TrainConfig;
use ctcbench_cli::commands::{
    cmd_split, cmd_stats, cmd_synth, CenterArg, RoundingArg, SplitArgs, SplitModeArg, StatsArgs,
    SynthArgs,
};

const SPLIT_BUDGET: Duration = Duration::from_secs(5);
const EXPANSION_BUDGET: Duration = Duration::from_secs(30);
const MW_BUDGET: Duration = Duration::from_secs(60);
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const E2E_BUDGET: Duration = Duration::from_secs(600);

const METRICS_TOL: f64 = 1e-12;
const MW_TOL: f64 = 1e-12;
const GOLDEN_P_TOL: f64 = 1e-3;
const W_INVARIANCE_TOL: f64 = 1e-10;
const GRAD_REL_TOL: f64 = 1e-4;
const MIN_MEAN_F1: f64 = 0.90;

const RANDOM_SPLITS: usize = 1000;
const RANDOM_MATRICES: usize = 10_000;
const TIED_MW_CASES: usize = 200;
const E2E_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, elapsed: Duration) -> Result<(), String> {
    ensure(elapsed <= budget, || {
        format!("took {:.1} s, budget {} s", elapsed.as_secs_f64(), budget.as_secs())
    })
}

/// Outputs kept for the determinism rerun.
#[derive(Default)]
struct Artifacts {
    table1_manifest: PathBuf,
    split_json: Vec<u8>,
    digests: Vec<(ArmName, String)>,
    e2e_data: PathBuf,
    e2e_dir: PathBuf,
}

struct Suite {
    work: tempfile::TempDir,
    art: Artifacts,
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: u32, title: &str, f: impl FnOnce(&Path, &mut Artifacts) -> Check) {
        let t = Instant::now();
        let work = self.work.path().to_path_buf();
        let art = &mut self.art;
        let res = catch_unwind(AssertUnwindSafe(|| f(&work, art)))
            .unwrap_or_else(|e| Err(format!("panicked: {}", panic_text(&*e))));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("[PASS] {id} {title}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                self.failures += 1;
                println!("[FAIL] {id} {title}: {detail} ({secs:.1} s)");
            }
        }
    }
}

fn panic_text(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn split_args(manifest: &Path, out: PathBuf) -> SplitArgs {
    SplitArgs {
        manifest: manifest.to_path_buf(),
        mode: SplitModeArg::Exact,
        val_ctc: 50,
        val_leuko: 29,
        test_ctc: 52,
        test_leuko: 56,
        val_fraction: 0.1,
        leuko_test_fraction: 0.15,
        rounding: RoundingArg::Floor,
        seed: 0,
        out,
        arm: ArmName::BfWDapi,
        overwrite: false,
    }
}

fn table_row(text: &str, name: &str) -> Option<[usize; 2]> {
    text.lines().find_map(|l| {
        let rest = l.strip_prefix(name)?;
        let nums: Vec<usize> = rest.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
        (nums.len() == 2).then(|| [nums[0], nums[1]])
    })
}

/// Per-class counts of a list of ids, looked up by linear scan.
fn class_counts(records: &[CellRecord], ids: &[String]) -> [usize; 2] {
    let mut c = [0; 2];
    for id in ids {
        let r = records.iter().find(|r| &r.cell_id == id).expect("id in manifest");
        c[usize::from(r.label == Label::Leuko)] += 1;
    }
    c
}

/// Provenance and conservation invariants of a split, checked from scratch.
fn check_split(m: &Manifest, split: &DatasetSplit, policy: &SplitPolicy) -> Result<(), String> {
    let by_id: HashMap<&str, &CellRecord> = m.records.iter().map(|r| (r.cell_id.as_str(), r)).collect();
    let mut seen = HashSet::new();
    for (part, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for id in ids.iter() {
            let r = by_id.get(id.as_str()).ok_or_else(|| format!("{id} not in manifest"))?;
            ensure(seen.insert(id.as_str()), || format!("{id} placed twice"))?;
            let patient_ctc = r.label == Label::Ctc && r.provenance == Provenance::Patient;
            match part {
                "test" => ensure(r.provenance != Provenance::Spiked, || format!("spiked {id} in test"))?,
                _ => ensure(!patient_ctc, || format!("patient CTC {id} in {part}"))?,
            }
        }
    }
    let spiked = m.records.iter().filter(|r| r.provenance == Provenance::Spiked).count();
    let leuko = m.records.iter().filter(|r| r.label == Label::Leuko).count();
    let patient = m.records.len() - spiked - leuko;
    let val = class_counts(&m.records, &split.val);
    let test = class_counts(&m.records, &split.test);
    let test_ctc = match policy.mode {
        SplitMode::ExactCounts {
            val_ctc,
            val_leuko,
            test_ctc,
            test_leuko,
        } => {
            ensure(val == [val_ctc, val_leuko] && test == [test_ctc, test_leuko], || {
                format!("counts val {val:?} test {test:?} differ from the policy")
            })?;
            test_ctc
        }
        SplitMode::Fractions { .. } => patient,
    };
    ensure(test[0] == test_ctc, || format!("test CTC {} != {test_ctc}", test[0]))?;
    let placed = split.train.len() + split.val.len() + split.test.len();
    ensure(placed == spiked + leuko + test_ctc, || {
        format!("placed {placed}, eligible {}", spiked + leuko + test_ctc)
    })
}

fn random_manifest(g: &mut ChaCha8Rng) -> Manifest {
    let mut records = Vec::new();
    let kinds = [
        (Label::Ctc, Provenance::Spiked, g.random_range(0..60)),
        (Label::Ctc, Provenance::Patient, g.random_range(0..25)),
        (Label::Leuko, Provenance::Patient, g.random_range(0..25)),
        (Label::Leuko, Provenance::Healthy, g.random_range(0..60)),
    ];
    for (k, (label, provenance, n)) in kinds.into_iter().enumerate() {
        for i in 0..n {
            let id = format!("k{k}_{i}");
            records.push(CellRecord {
                bf_path: format!("{id}_BF.png").into(),
                dapi_path: None,
                cell_id: id,
                label,
                provenance,
                source_tag: String::new(),
            });
        }
    }
    // shuffle so that pools are interleaved
    for i in (1..records.len()).rev() {
        records.swap(i, g.random_range(0..=i));
    }
    Manifest::new(records, ".").unwrap()
}

fn random_policy(g: &mut ChaCha8Rng) -> SplitPolicy {
    let mode = if g.random_bool(0.5) {
        SplitMode::ExactCounts {
            val_ctc: g.random_range(0..20),
            val_leuko: g.random_range(0..20),
            test_ctc: g.random_range(0..20),
            test_leuko: g.random_range(0..20),
        }
    } else {
        SplitMode::Fractions {
            val_fraction: g.random_range(0.01..0.99),
            leuko_test_fraction: g.random_range(0.01..0.99),
            rounding: if g.random_bool(0.5) { Rounding::Nearest } else { Rounding::Floor },
        }
    };
    SplitPolicy { mode, seed: g.random() }
}

fn split_fidelity(work: &Path, art: &mut Artifacts) -> Check {
    let data = work.join("table1");
    cmd_synth(&SynthArgs {
        out: data.clone(),
        table1_counts: true,
        n_spiked_ctc: 0,
        n_patient_ctc: 0,
        n_leuko: 0,
        image_size: 64,
        bf_signal_strength: 1.0,
        dapi_informativeness: 1.0,
        noise_sigma: 0.0,
        seed: 0,
        overwrite: false,
    })
    .map_err(err)?;
    art.table1_manifest = data.join("manifest.csv");

    let t = Instant::now();
    let out = work.join("split_a.json");
    let text = cmd_split(&split_args(&art.table1_manifest, out.clone())).map_err(err)?;
    for (row, want) in [("Train", [479, 303]), ("Validation", [50, 29]), ("Test", [52, 56])] {
        let got = table_row(&text, row).ok_or_else(|| format!("no {row} row in\n{text}"))?;
        ensure(got == want, || format!("{row} {got:?}, expected {want:?}"))?;
    }
    art.split_json = std::fs::read(&out).map_err(err)?;
    let manifest = load_manifest(&art.table1_manifest).map_err(err)?;
    let split = DatasetSplit::from_json(std::str::from_utf8(&art.split_json).map_err(err)?).map_err(err)?;
    check_split(&manifest, &split, &SplitPolicy::table1(0))?;

    let mut g = ChaCha8Rng::seed_from_u64(2024);
    let mut ok = 0;
    for case in 0..RANDOM_SPLITS {
        let m = random_manifest(&mut g);
        let policy = random_policy(&mut g);
        match make_split(&m, &policy) {
            Ok(s) => {
                check_split(&m, &s, &policy).map_err(|e| format!("random case {case}: {e}"))?;
                ok += 1;
            }
            Err(ctcbench::Error::InsufficientPool(_)) => {}
            Err(e) => return Err(format!("random case {case}: unexpected error {e}")),
        }
    }
    within(SPLIT_BUDGET, t.elapsed())?;
    Ok(format!(
        "train 479/303, val 50/29, test 52/56; {ok}/{RANDOM_SPLITS} random splits feasible, all invariants hold"
    ))
}

// ---------------------------------------------------------------- 2

const MULTIPLIERS: [(ArmName, usize); 7] = [
    (ArmName::Aug1, 2),
    (ArmName::Aug2, 3),
    (ArmName::BfWoDapi, 4),
    (ArmName::BfWDapiNoAug, 2),
    (ArmName::BfWDapi, 5),
    (ArmName::DapiWoBf, 4),
    (ArmName::DapiWBf, 5),
];

fn expand_all(manifest_path: &Path, split_json: &[u8]) -> Result<Vec<(ArmName, usize, [usize; 2], String)>, String> {
    let manifest = load_manifest(manifest_path).map_err(err)?;
    let split = DatasetSplit::from_json(std::str::from_utf8(split_json).map_err(err)?).map_err(err)?;
    let train_ids: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let records: Vec<CellRecord> = manifest
        .records
        .iter()
        .filter(|r| train_ids.contains(r.cell_id.as_str()))
        .cloned()
        .collect();
    let src = DiskSource::new(&manifest);
    let settings = AugmentSettings::default();
    let mut out = Vec::new();
    for (arm, _) in MULTIPLIERS {
        let plan = PipelinePlan::for_arm(&ExperimentArm::from_name(arm), &settings, 64);
        let samples = expand_training_set(&records, &plan, &src).map_err(err)?;
        let ctc = samples.iter().filter(|s| s.label == Label::Ctc).count();
        out.push((arm, samples.len(), [ctc, samples.len() - ctc], samples_digest(&samples)));
    }
    Ok(out)
}

fn expansion_counts(_: &Path, art: &mut Artifacts) -> Check {
    let t = Instant::now();
    let expanded = expand_all(&art.table1_manifest, &art.split_json)?;
    for ((arm, n, _, _), (_, mult)) in expanded.iter().zip(MULTIPLIERS) {
        ensure(*n == 782 * mult, || format!("{arm}: {n} samples, expected 782 x {mult}"))?;
    }
    let (_, n, by_class, _) = &expanded[4];
    ensure(*n == 3910 && *by_class == [2395, 1515], || {
        format!("BF_W_DAPI gave {n} ({by_class:?})")
    })?;
    art.digests = expanded.into_iter().map(|(a, _, _, d)| (a, d)).collect();
    within(EXPANSION_BUDGET, t.elapsed())?;
    Ok("782 records -> 3910 samples (2395 CTC / 1515 LEUKO); multipliers 2,3,4,2,5,4,5".into())
}

// ---------------------------------------------------------------- 3

/// Per-class scores recomputed from an explicit list of (prediction, truth)
/// pairs. Undefined ratios count as 0.
fn brute_force(pairs: &[(Label, Label)], averaging: Averaging) -> [f64; 4] {
    let per_class = |c: Label| {
        let tp = pairs.iter().filter(|(p, t)| *p == c && *t == c).count() as f64;
        let predicted = pairs.iter().filter(|(p, _)| *p == c).count() as f64;
        let actual = pairs.iter().filter(|(_, t)| *t == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        [precision, recall, f1]
    };
    let accuracy = pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64;
    let ctc = per_class(Label::Ctc);
    let [p, r, f] = match averaging {
        Averaging::PositiveClass => ctc,
        Averaging::Macro => {
            let leuko = per_class(Label::Leuko);
            [0, 1, 2].map(|i| (ctc[i] + leuko[i]) / 2.0)
        }
    };
    [accuracy, p, r, f]
}

fn metrics_oracle(_: &Path, _: &mut Artifacts) -> Check {
    let mut g = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let mut zero_cells = 0;
    for case in 0..RANDOM_MATRICES {
        // many small counts so that zero rows and columns are common
        let cap = if case % 4 == 0 { 3 } else { 60 };
        let counts: [u64; 4] = std::array::from_fn(|_| g.random_range(0..=cap));
        let [tp, fp, tn, fn_] = counts;
        let mut pairs = Vec::new();
        for (n, pair) in [
            (tp, (Label::Ctc, Label::Ctc)),
            (fp, (Label::Ctc, Label::Leuko)),
            (tn, (Label::Leuko, Label::Leuko)),
            (fn_, (Label::Leuko, Label::Ctc)),
        ] {
            pairs.extend(std::iter::repeat_n(pair, n as usize));
        }
        let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
        if pairs.is_empty() {
            ensure(compute_metrics(&cm, Averaging::Macro).is_err(), || "empty matrix accepted".into())?;
            continue;
        }
        zero_cells += counts.iter().filter(|&&c| c == 0).count();
        let (preds, truths): (Vec<Label>, Vec<Label>) = pairs.iter().copied().unzip();
        ensure(confusion(&preds, &truths).map_err(err)? == cm, || format!("case {case}: confusion differs"))?;
        for averaging in [Averaging::Macro, Averaging::PositiveClass] {
            let r = compute_metrics(&cm, averaging).map_err(err)?;
            let want = brute_force(&pairs, averaging);
            let got = [r.accuracy, r.precision, r.recall, r.f1];
            for (a, b) in got.iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
            ensure(worst <= METRICS_TOL, || {
                format!("case {case} {averaging:?} {cm:?}: got {got:?}, oracle {want:?}")
            })?;
        }
    }
    Ok(format!(
        "{RANDOM_MATRICES} matrices x 2 averagings, max |diff| {worst:.1e} ({zero_cells} zero cells)"
    ))
}

// ---------------------------------------------------------------- 4

fn pair_u2(a: &[f64], b: &[f64]) -> u64 {
    let mut u2 = 0;
    for x in a {
        for y in b {
            u2 += match x.partial_cmp(y).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    u2
}

fn partition(pooled: &[f64], mask: u32) -> (Vec<f64>, Vec<f64>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, v) in pooled.iter().enumerate() {
        if mask >> i & 1 == 1 {
            a.push(*v);
        } else {
            b.push(*v);
        }
    }
    (a, b)
}

/// Doubled U over every labelling of `pooled` with `n1` values in group a.
fn null_u2(pooled: &[f64], n1: usize) -> Vec<u64> {
    (0u32..1 << pooled.len())
        .filter(|m| m.count_ones() as usize == n1)
        .map(|m| {
            let (a, b) = partition(pooled, m);
            pair_u2(&a, &b)
        })
        .collect()
}

fn oracle_p(null: &[u64], u2: u64, n1n2: u64, alt: Alternative) -> f64 {
    let hits = null
        .iter()
        .filter(|&&v| match alt {
            Alternative::TwoSided => v.abs_diff(n1n2) >= u2.abs_diff(n1n2),
            Alternative::Greater => v >= u2,
            Alternative::Less => v <= u2,
        })
        .count();
    hits as f64 / null.len() as f64
}

const ALTERNATIVES: [Alternative; 3] = [Alternative::TwoSided, Alternative::Greater, Alternative::Less];

fn check_mw(a: &[f64], b: &[f64], null: &[u64], worst: &mut f64) -> Result<(), String> {
    let n1n2 = (a.len() * b.len()) as u64;
    let u2 = pair_u2(a, b);
    let u_ab = u_statistic(a, b);
    let u_ba = u_statistic(b, a);
    ensure(u_ab * 2.0 == u2 as f64, || format!("U {u_ab} vs pair count {}", u2 as f64 / 2.0))?;
    ensure(u_ab + u_ba == n1n2 as f64, || format!("U {u_ab} + {u_ba} != {n1n2} for {a:?} {b:?}"))?;
    let (sa, sb) = (Sample::new("a", a.to_vec()), Sample::new("b", b.to_vec()));
    for alt in ALTERNATIVES {
        let r = mann_whitney_u(&sa, &sb, alt).map_err(err)?;
        let want = oracle_p(null, u2, n1n2, alt);
        *worst = worst.max((r.p_value - want).abs());
        ensure((r.p_value - want).abs() <= MW_TOL, || {
            format!("{a:?} vs {b:?} {alt:?}: p {} oracle {want}", r.p_value)
        })?;
        ensure(r.statistic == u_ab, || "statistic differs from u_statistic".into())?;
    }
    let mirrored = |alt| mann_whitney_u(&sb, &sa, alt).map(|r| r.p_value).map_err(err);
    let greater = mann_whitney_u(&sa, &sb, Alternative::Greater).map_err(err)?.p_value;
    ensure((greater - mirrored(Alternative::Less)?).abs() <= MW_TOL, || {
        "Greater(a, b) != Less(b, a)".into()
    })
}

fn mann_whitney_exact(_: &Path, _: &mut Artifacts) -> Check {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    for n1 in 1..=6usize {
        for n2 in 1..=6usize {
            let pooled: Vec<f64> = (1..=n1 + n2).map(|r| r as f64).collect();
            let null = null_u2(&pooled, n1);
            for mask in (0u32..1 << pooled.len()).filter(|m| m.count_ones() as usize == n1) {
                let (a, b) = partition(&pooled, mask);
                check_mw(&a, &b, &null, &mut worst)?;
                configs += 1;
            }
        }
    }
    let mut g = ChaCha8Rng::seed_from_u64(5);
    let mut tied = 0;
    while tied < TIED_MW_CASES {
        let (n1, n2) = (g.random_range(1..=6usize), g.random_range(1..=6usize));
        let levels = g.random_range(1..=4u32);
        let pooled: Vec<f64> = (0..n1 + n2).map(|_| f64::from(g.random_range(0..levels)) * 0.25).collect();
        let distinct: HashSet<u64> = pooled.iter().map(|v| v.to_bits()).collect();
        if distinct.len() == pooled.len() {
            continue;
        }
        let null = null_u2(&pooled, n1);
        let (a, b) = pooled.split_at(n1);
        check_mw(a, b, &null, &mut worst)?;
        tied += 1;
    }
    within(MW_BUDGET, t.elapsed())?;
    Ok(format!(
        "{configs} tie-free configurations (n1, n2 <= 6) and {tied} tied cases, 3 alternatives, max |dp| {worst:.1e}; U(a,b)+U(b,a)=n1*n2 throughout"
    ))
}

// ---------------------------------------------------------------- 5

#[derive(Deserialize)]
struct Goldens {
    shapiro: Vec<SwGold>,
    levene: Vec<LevGold>,
}

#[derive(Deserialize)]
struct SwGold {
    kind: String,
    n: usize,
    p: f64,
}

#[derive(Deserialize)]
struct LevGold {
    kind: String,
    n: usize,
    center: String,
    p: f64,
}

fn quantiles(kind: &str, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            let p = (i as f64 - 0.5) / n as f64;
            match kind {
                "normal" => norm_ppf(p),
                "uniform" => p,
                "exponential" => -(1.0 - p).ln(),
                other => panic!("unknown kind {other}"),
            }
        })
        .collect()
}

fn normality_and_variance(_: &Path, _: &mut Artifacts) -> Check {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/stats_goldens.json");
    let goldens: Goldens = serde_json::from_str(&std::fs::read_to_string(path).map_err(err)?).map_err(err)?;
    let mut worst_p: f64 = 0.0;
    for g in &goldens.shapiro {
        let r = shapiro_wilk(&Sample::new("x", quantiles(&g.kind, g.n))).map_err(err)?;
        worst_p = worst_p.max((r.p_value - g.p).abs());
        ensure((r.p_value - g.p).abs() <= GOLDEN_P_TOL, || {
            format!("Shapiro-Wilk {} n={}: p {} vs {}", g.kind, g.n, r.p_value, g.p)
        })?;
    }
    for g in &goldens.levene {
        let a = quantiles(&g.kind, g.n);
        let b: Vec<f64> = a.iter().rev().enumerate().map(|(i, q)| 2.5 * q * q + 0.3 * i as f64).collect();
        let center = if g.center == "MEAN" { Center::Mean } else { Center::Median };
        let r = levene_test(&Sample::new("a", a), &Sample::new("b", b), center).map_err(err)?;
        worst_p = worst_p.max((r.p_value - g.p).abs());
        ensure((r.p_value - g.p).abs() <= GOLDEN_P_TOL, || {
            format!("Levene {} n={} {}: p {} vs {}", g.kind, g.n, g.center, r.p_value, g.p)
        })?;
    }
    let sizes: HashSet<usize> = goldens.shapiro.iter().map(|g| g.n).collect();
    ensure([5, 10, 20].iter().all(|n| sizes.contains(n)), || format!("golden sizes {sizes:?}"))?;

    let mut g = ChaCha8Rng::seed_from_u64(77);
    let mut worst_w: f64 = 0.0;
    for _ in 0..500 {
        let n = g.random_range(3..=50);
        let x: Vec<f64> = (0..n).map(|_| g.random_range(-3.0..3.0f64).powi(3)).collect();
        let loc = g.random_range(-1e3..1e3);
        let scale = g.random_range(1e-2..1e2) * if g.random_bool(0.5) { 1.0 } else { -1.0 };
        let y: Vec<f64> = x.iter().map(|v| loc + scale * v).collect();
        let (w0, _) = shapiro_wilk_statistic(&x).map_err(err)?;
        let (w1, _) = shapiro_wilk_statistic(&y).map_err(err)?;
        worst_w = worst_w.max((w0 - w1).abs());
    }
    ensure(worst_w <= W_INVARIANCE_TOL, || format!("W changed by {worst_w:e} under a + b x"))?;
    Ok(format!(
        "{} Shapiro-Wilk and {} Levene goldens, max |dp| {worst_p:.1e}; W location-scale drift {worst_w:.1e}",
        goldens.shapiro.len(),
        goldens.levene.len()
    ))
}

// ---------------------------------------------------------------- 6

fn set_param(m: &mut Model, which: usize, k: usize, v: f64) {
    let mut i = 0;
    m.for_each_param(|p, _| {
        if i == which {
            p.value[k] = v;
        }
        i += 1;
    });
}

fn loss(m: &mut Model, batch: &Batch, labels: &[usize]) -> f64 {
    let logits = m.forward_train(batch).unwrap();
    cross_entropy_loss(&logits, labels).0
}

fn gradient_check(_: &Path, _: &mut Artifacts) -> Check {
    let t = Instant::now();
    let mut m = build_model(&BackboneSpec::mini(4, 16), Init::Random(21)).map_err(err)?;
    let mut g = ChaCha8Rng::seed_from_u64(22);
    let data = (0..4 * 16 * 16 * 3).map(|_| g.random_range(-1.5..1.5)).collect();
    let batch = Batch::new(4, 16, data).map_err(err)?;
    let labels = [0, 1, 1, 0];

    m.zero_grad();
    let logits = m.forward_train(&batch).map_err(err)?;
    let (_, dl) = cross_entropy_loss(&logits, &labels);
    m.backward(&dl);
    let mut params = Vec::new();
    m.for_each_param(|p, _| params.push((p.value.clone(), p.grad.clone())));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (pi, (values, grads)) in params.iter().enumerate() {
        for k in 0..values.len() {
            set_param(&mut m, pi, k, values[k] + h);
            let lp = loss(&mut m, &batch, &labels);
            set_param(&mut m, pi, k, values[k] - h);
            let lm = loss(&mut m, &batch, &labels);
            set_param(&mut m, pi, k, values[k]);
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    ensure(worst < GRAD_REL_TOL, || format!("worst relative error {worst:.2e} over {checked} entries"))?;
    within(GRAD_BUDGET, t.elapsed())?;
    Ok(format!("{checked} parameter entries, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 7, 8

fn e2e_config(manifest: PathBuf, results: PathBuf, arm: ArmName, jobs: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: "e2e".into(),
        manifest,
        split: SplitPolicy::fractions(0.1, 0.15, 0),
        arm,
        ablation_arms: vec![ArmName::BfWoDapi, ArmName::BfWDapi],
        augment: AugmentSettings::default(),
        working_size: 64,
        backbone: BackboneSpec::mini(8, 64),
        compare_backbones: vec![],
        train: TrainConfig {
            seeds: E2E_SEEDS.to_vec(),
            ..TrainConfig::desk()
        },
        alpha: 0.05,
        levene_center: Center::Mean,
        results_dir: results,
        jobs,
    }
}

/// Runs one arm with an access-logging evaluation source and checks that
/// evaluation read exactly the primary channel of every val and test cell.
fn run_logged(cfg: &ExperimentConfig, arm: ArmName) -> Result<ctcbench::experiments::ArmOutcome, String> {
    let prepared = prepare(cfg).map_err(err)?;
    let train = DiskSource::new(&prepared.manifest);
    let eval = LoggingSource::new(DiskSource::new(&prepared.manifest));
    let out = run_arm_in(cfg, &prepared, arm, &Sources { train: &train, eval: &eval }).map_err(err)?;
    let primary = ExperimentArm::from_name(arm).primary_channel;
    let touched: HashSet<(String, Channel)> = eval.take().into_iter().collect();
    let expected: HashSet<(String, Channel)> = prepared
        .split
        .val
        .iter()
        .chain(&prepared.split.test)
        .map(|id| (id.clone(), primary))
        .collect();
    ensure(touched == expected, || {
        format!("{arm}: evaluation touched {} (id, channel) pairs, expected {}", touched.len(), expected.len())
    })?;
    Ok(out)
}

fn e2e_data(work: &Path) -> Result<PathBuf, String> {
    let data = work.join("e2e_data");
    cmd_synth(&SynthArgs {
        out: data.clone(),
        table1_counts: false,
        n_spiked_ctc: 120,
        n_patient_ctc: 30,
        n_leuko: 100,
        image_size: 64,
        bf_signal_strength: 0.8,
        dapi_informativeness: 0.8,
        noise_sigma: 0.1,
        seed: 7,
        overwrite: false,
    })
    .map_err(err)?;
    Ok(data.join("manifest.csv"))
}

fn end_to_end(work: &Path, art: &mut Artifacts) -> Check {
    let t = Instant::now();
    art.e2e_data = e2e_data(work)?;
    art.e2e_dir = work.join("e2e_a");
    let cfg = e2e_config(art.e2e_data.clone(), art.e2e_dir.clone(), ArmName::BfWDapi, 4);
    let out = run_logged(&cfg, ArmName::BfWDapi)?;
    let agg = &out.aggregate;
    ensure(agg.seeds_completed == E2E_SEEDS.len(), || format!("{} seeds completed", agg.seeds_completed))?;
    let f1 = agg.f1.ok_or("no F1 aggregate")?;
    let per_seed: Vec<String> = agg.f1_by_seed.iter().map(|(s, f)| format!("{s}:{f:.3}")).collect();
    let detail = format!(
        "BF_W_DAPI test F1 {:.3} ± {:.3} over {} seeds [{}]; evaluation read BF only",
        f1.mean,
        f1.std,
        f1.n,
        per_seed.join(" ")
    );
    ensure(f1.mean >= MIN_MEAN_F1, || format!("{detail}; mean below {MIN_MEAN_F1}"))?;
    within(E2E_BUDGET, t.elapsed())?;
    Ok(detail)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn dapi_helps(_: &Path, art: &mut Artifacts) -> Check {
    ensure(!art.e2e_dir.as_os_str().is_empty(), || "end-to-end run did not complete".into())?;
    let cfg = e2e_config(art.e2e_data.clone(), art.e2e_dir.clone(), ArmName::BfWoDapi, 4);
    let without = run_logged(&cfg, ArmName::BfWoDapi)?.aggregate;
    let dir = cfg.output_dir();
    let with: ctcbench::trainer::AggregateReport = serde_json::from_str(
        &std::fs::read_to_string(dir.join("BF_W_DAPI/aggregate.json")).map_err(err)?,
    )
    .map_err(err)?;
    let arms = [ArmName::BfWoDapi, ArmName::BfWDapi];
    let aggregates: BTreeMap<String, _> = [("BF_WO_DAPI".to_string(), without.clone()), ("BF_W_DAPI".to_string(), with.clone())]
        .into_iter()
        .collect();
    write_ablation_tables(&dir, &arms, &aggregates, &BTreeMap::new()).map_err(err)?;

    let vectors = dir.join("f1_vectors.csv");
    let trace_path = dir.join("trace.json");
    cmd_stats(&StatsArgs {
        arm_a: vectors.clone(),
        arm_b: vectors,
        filter_a: Some("BF_W_DAPI".into()),
        filter_b: Some("BF_WO_DAPI".into()),
        alpha: 0.05,
        levene_center: CenterArg::Mean,
        out: Some(trace_path.clone()),
        overwrite: false,
    })
    .map_err(err)?;
    let trace: DecisionTrace =
        serde_json::from_str(&std::fs::read_to_string(&trace_path).map_err(err)?).map_err(err)?;
    let fp = trace.final_result.p_value;
    ensure((0.0..=1.0).contains(&fp) && trace.reject_null == (fp < trace.alpha), || {
        format!("inconsistent trace: p {fp}, reject {}", trace.reject_null)
    })?;
    ensure(!trace.steps.is_empty(), || "empty decision trace".into())?;

    let f1 = |a: &ctcbench::trainer::AggregateReport| a.f1_by_seed.iter().map(|(_, f)| *f).collect::<Vec<_>>();
    let (mw, mwo) = (median(&f1(&with)), median(&f1(&without)));
    let detail = format!(
        "median F1 with DAPI {mw:.3}, without {mwo:.3}; trace: {} steps, {:?} p = {fp:.4}, reject H0 = {}",
        trace.steps.len(),
        trace.selected,
        trace.reject_null
    );
    ensure(mw >= mwo, || format!("{detail}; DAPI arm is worse"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn determinism(work: &Path, art: &mut Artifacts) -> Check {
    ensure(!art.split_json.is_empty() && !art.digests.is_empty(), || "earlier criteria did not complete".into())?;
    let out = work.join("split_b.json");
    cmd_split(&split_args(&art.table1_manifest, out.clone())).map_err(err)?;
    ensure(std::fs::read(&out).map_err(err)? == art.split_json, || "split JSON differs".into())?;

    let again = expand_all(&art.table1_manifest, &art.split_json)?;
    for ((arm, d0), (_, _, _, d1)) in art.digests.iter().zip(&again) {
        ensure(d0 == d1, || format!("{arm}: sample digest differs"))?;
    }

    ensure(!art.e2e_dir.as_os_str().is_empty(), || "end-to-end run did not complete".into())?;
    let rerun_dir = work.join("e2e_b");
    let cfg = e2e_config(art.e2e_data.clone(), rerun_dir, ArmName::BfWDapi, 1);
    run_logged(&cfg, ArmName::BfWDapi)?;
    let first = e2e_config(art.e2e_data.clone(), art.e2e_dir.clone(), ArmName::BfWDapi, 4).output_dir();
    let second = cfg.output_dir();
    let mut files = vec!["split.json".to_string(), "BF_W_DAPI/f1.csv".into(), "BF_W_DAPI/aggregate.json".into()];
    files.extend(E2E_SEEDS.iter().map(|s| format!("BF_W_DAPI/{s}/metrics.csv")));
    for f in &files {
        let a = std::fs::read(first.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(second.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "split JSON, {} sample digests and {} result files byte-identical (rerun with 1 job instead of 4)",
        again.len(),
        files.len()
    ))
}

fn main() {
    let mut suite = Suite {
        work: tempfile::tempdir().expect("temp dir"),
        art: Artifacts::default(),
        failures: 0,
    };
    let t = Instant::now();
    suite.run(1, "split fidelity", split_fidelity);
    suite.run(2, "expansion counts", expansion_counts);
    suite.run(3, "metric correctness", metrics_oracle);
    suite.run(4, "exact Mann-Whitney", mann_whitney_exact);
    suite.run(5, "normality and variance tests", normality_and_variance);
    suite.run(6, "gradient check", gradient_check);
    suite.run(7, "end-to-end BF_W_DAPI", end_to_end);
    suite.run(8, "DAPI injection vs BF only", dapi_helps);
    suite.run(9, "determinism", determinism);
    println!(
        "acceptance: {} of 9 criteria passed in {:.1} s",
        9 - suite.failures,
        t.elapsed().as_secs_f64()
    );
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
