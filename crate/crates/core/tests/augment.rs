use std::collections::HashMap;

use proptest::prelude::*;

use ctcbench::augment::{
    apply_op, expand_training_set, samples_digest, AugmentSettings, AugmentationOp, OpParams,
    Origin, PipelinePlan, Range,
};
use ctcbench::data::{CellRecord, Channel, Label, Provenance};
use ctcbench::experiments::{ArmName, ExperimentArm};
use ctcbench::imaging::GrayImage;
use ctcbench::source::MemorySource;
use ctcbench::synth::SynthSpec;
use ctcbench::Error;

fn fixture(n_ctc: usize, n_leuko: usize, with_dapi: bool) -> (Vec<CellRecord>, MemorySource) {
    let spec = SynthSpec {
        n_spiked_ctc: n_ctc,
        n_patient_ctc: 0,
        n_leuko,
        image_size: 40,
        bf_signal_strength: 0.8,
        dapi_informativeness: 0.8,
        noise_sigma: 0.05,
        seed: 2,
    };
    let mut src = MemorySource::new();
    let records = (0..spec.total())
        .map(|i| {
            let (id, label, provenance, tag) = spec.record_meta(i);
            let (_, bf, dapi) = spec.render(i);
            src.insert(&id, Channel::Bf, bf);
            if with_dapi {
                src.insert(&id, Channel::Dapi, dapi);
            }
            CellRecord {
                bf_path: format!("{id}_BF.png").into(),
                dapi_path: with_dapi.then(|| format!("{id}_DAPI.png").into()),
                cell_id: id,
                label,
                provenance,
                source_tag: tag,
            }
        })
        .collect();
    (records, src)
}

// AUG1, AUG2, BF w/o DAPI, BF w/ DAPI no AUG, BF w/ DAPI, DAPI w/o BF, DAPI w/ BF
const MULTIPLIERS: [(ArmName, usize); 7] = [
    (ArmName::Aug1, 2),
    (ArmName::Aug2, 3),
    (ArmName::BfWoDapi, 4),
    (ArmName::BfWDapiNoAug, 2),
    (ArmName::BfWDapi, 5),
    (ArmName::DapiWoBf, 4),
    (ArmName::DapiWBf, 5),
];

#[test]
fn every_arm_expands_by_its_multiplier() {
    let (records, src) = fixture(7, 5, true);
    let settings = AugmentSettings::default();
    for (name, mult) in MULTIPLIERS {
        let arm = ExperimentArm::from_name(name);
        let plan = PipelinePlan::for_arm(&arm, &settings, 32);
        assert_eq!(plan.multiplier(), mult, "{name}");
        let out = expand_training_set(&records, &plan, &src).unwrap();
        assert_eq!(out.len(), records.len() * mult, "{name}");

        let by_parent: HashMap<&str, &CellRecord> =
            records.iter().map(|r| (r.cell_id.as_str(), r)).collect();
        let mut per_parent: HashMap<&str, Vec<Origin>> = HashMap::new();
        for s in &out {
            let parent = by_parent[s.parent_cell_id.as_str()];
            assert_eq!(s.label, parent.label);
            assert_eq!((s.image.width(), s.image.height()), (32, 32));
            let expected_channel = if s.origin == Origin::OtherChannel {
                arm.primary_channel.other()
            } else {
                arm.primary_channel
            };
            assert_eq!(s.channel, expected_channel);
            per_parent.entry(parent.cell_id.as_str()).or_default().push(s.origin);
        }
        for origins in per_parent.values() {
            assert_eq!(origins.len(), mult);
            assert_eq!(origins.iter().filter(|o| **o == Origin::Original).count(), 1);
            assert_eq!(
                origins.iter().filter(|o| **o == Origin::OtherChannel).count(),
                usize::from(arm.inject_other_channel)
            );
        }
    }
}

#[test]
fn expansion_is_deterministic() {
    let (records, src) = fixture(4, 4, true);
    let plan = PipelinePlan::for_arm(
        &ExperimentArm::from_name(ArmName::BfWDapi),
        &AugmentSettings::default(),
        32,
    );
    let a = expand_training_set(&records, &plan, &src).unwrap();
    let b = expand_training_set(&records, &plan, &src).unwrap();
    assert_eq!(samples_digest(&a), samples_digest(&b));
    let other_seed = AugmentSettings {
        seed: 99,
        ..AugmentSettings::default()
    };
    let plan2 = PipelinePlan::for_arm(&ExperimentArm::from_name(ArmName::BfWDapi), &other_seed, 32);
    let c = expand_training_set(&records, &plan2, &src).unwrap();
    assert_ne!(samples_digest(&a), samples_digest(&c));
}

#[test]
fn injection_without_dapi_is_refused() {
    let (records, src) = fixture(2, 2, false);
    let settings = AugmentSettings::default();
    let inject = PipelinePlan::for_arm(&ExperimentArm::from_name(ArmName::BfWDapi), &settings, 32);
    assert!(matches!(
        expand_training_set(&records, &inject, &src),
        Err(Error::MissingChannel { .. })
    ));
    let plain = PipelinePlan::for_arm(&ExperimentArm::from_name(ArmName::BfWoDapi), &settings, 32);
    assert_eq!(expand_training_set(&records, &plain, &src).unwrap().len(), 16);
}

#[test]
fn reference_training_set_size() {
    // 479 CTC + 303 leukocyte training records
    let records: Vec<CellRecord> = (0..782)
        .map(|i| CellRecord {
            cell_id: format!("c{i}"),
            label: if i < 479 { Label::Ctc } else { Label::Leuko },
            provenance: if i < 479 { Provenance::Spiked } else { Provenance::Healthy },
            bf_path: "x".into(),
            dapi_path: Some("y".into()),
            source_tag: String::new(),
        })
        .collect();
    let mut src = MemorySource::new();
    for r in &records {
        src.insert(&r.cell_id, Channel::Bf, GrayImage::from_pixel(16, 16, image::Luma([100])));
        src.insert(&r.cell_id, Channel::Dapi, GrayImage::from_pixel(16, 16, image::Luma([20])));
    }
    let plan = PipelinePlan::for_arm(
        &ExperimentArm::from_name(ArmName::BfWDapi),
        &AugmentSettings::default(),
        16,
    );
    let out = expand_training_set(&records, &plan, &src).unwrap();
    assert_eq!(out.len(), 3910);
    let ctc = out.iter().filter(|s| s.label == Label::Ctc).count();
    assert_eq!((ctc, out.len() - ctc), (2395, 1515));
}

fn sorted_pixels(img: &GrayImage) -> Vec<u8> {
    let mut v = img.as_raw().clone();
    v.sort_unstable();
    v
}

proptest! {
    #[test]
    fn flips_and_quarter_turns_permute_pixels(
        size in 4u32..20,
        pixels in proptest::collection::vec(any::<u8>(), 400),
        quarter in -2i32..=2,
        hflip in any::<bool>(),
        vflip in any::<bool>(),
        draw in any::<u64>(),
    ) {
        let img = GrayImage::from_fn(size, size, |x, y| image::Luma([pixels[(y * size + x) as usize]]));
        let op = AugmentationOp::new(
            OpParams::Geometric {
                rotation_deg: Range::fixed(90.0 * f64::from(quarter)),
                hflip_prob: if hflip { 1.0 } else { 0.0 },
                vflip_prob: if vflip { 1.0 } else { 0.0 },
            },
            7,
        );
        let out = apply_op(&img, &op, draw).unwrap();
        prop_assert_eq!(out.dimensions(), img.dimensions());
        prop_assert_eq!(sorted_pixels(&out), sorted_pixels(&img));
    }

    #[test]
    fn seeded_draws_are_reproducible(seed in any::<u64>(), draw in any::<u64>()) {
        let img = GrayImage::from_fn(12, 12, |x, y| image::Luma([(x * 20 + y) as u8]));
        for kind in [
            ctcbench::augment::AugmentationKind::Geometric,
            ctcbench::augment::AugmentationKind::Brightness,
            ctcbench::augment::AugmentationKind::Color,
        ] {
            let op = AugmentationOp::default_for(kind, seed);
            prop_assert_eq!(apply_op(&img, &op, draw).unwrap(), apply_op(&img, &op, draw).unwrap());
        }
    }
}
