//! Ablation arms, experiment orchestration and report emission.

mod arm;
mod run;

pub use arm::{ArmName, ExperimentArm};
pub use run::{
    prepare, regenerate_reports, resolve_backbone, run_ablation, run_ablation_in, run_arm,
    run_arm_in, run_arm_with, run_backbone_comparison, run_backbone_comparison_in,
    write_ablation_tables, AblationReport, ArmOutcome, ArmSummary, ComparisonReport,
    ExperimentConfig, Prepared, RunManifest, Sources,
};
