use ctcbench::data::{load_manifest, Label};
use ctcbench::synth::{generate_dataset, SynthSpec};

/// Accuracy of the best single radius threshold, by exhaustive search over
/// all cut points.
fn best_threshold_accuracy(points: &mut [(f64, Label)]) -> f64 {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = points.len();
    let ctc_total = points.iter().filter(|p| p.1 == Label::Ctc).count();
    // classify "radius > cut" as CTC; cut before position k
    let mut best = 0usize;
    let mut leuko_below = 0;
    let mut ctc_below = 0;
    for k in 0..=n {
        let correct = leuko_below + (ctc_total - ctc_below);
        best = best.max(correct).max(n - correct);
        if k < n {
            match points[k].1 {
                Label::Ctc => ctc_below += 1,
                Label::Leuko => leuko_below += 1,
            }
        }
    }
    best as f64 / n as f64
}

fn spec(strength: f64) -> SynthSpec {
    SynthSpec {
        n_spiked_ctc: 300,
        n_patient_ctc: 0,
        n_leuko: 300,
        image_size: 64,
        bf_signal_strength: strength,
        dapi_informativeness: 0.5,
        noise_sigma: 0.0,
        seed: 11,
    }
}

#[test]
fn separability_grows_with_signal_strength() {
    let grid = [0.0, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0];
    let acc: Vec<f64> = grid
        .iter()
        .map(|&s| {
            let sp = spec(s);
            let mut pts: Vec<(f64, Label)> = (0..sp.total())
                .map(|i| {
                    let g = sp.geometry(i);
                    (g.radius, g.label)
                })
                .collect();
            best_threshold_accuracy(&mut pts)
        })
        .collect();
    for w in acc.windows(2) {
        assert!(w[1] >= w[0], "accuracy not monotone: {acc:?}");
    }
    assert!(acc[0] < 0.6, "{acc:?}");
    assert!(acc[grid.len() - 1] > 0.95, "{acc:?}");
}

#[test]
fn generation_is_byte_identical_and_loads() {
    let sp = SynthSpec {
        n_spiked_ctc: 4,
        n_patient_ctc: 2,
        n_leuko: 4,
        image_size: 40,
        bf_signal_strength: 0.8,
        dapi_informativeness: 0.8,
        noise_sigma: 0.1,
        seed: 5,
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(&sp, a.path()).unwrap();
    generate_dataset(&sp, b.path()).unwrap();
    let read = |d: &std::path::Path, rel: &std::path::Path| std::fs::read(d.join(rel)).unwrap();
    assert_eq!(
        read(a.path(), "manifest.csv".as_ref()),
        read(b.path(), "manifest.csv".as_ref())
    );
    for r in &ma.records {
        assert_eq!(read(a.path(), &r.bf_path), read(b.path(), &r.bf_path));
        let dapi = r.dapi_path.as_ref().unwrap();
        assert_eq!(read(a.path(), dapi), read(b.path(), dapi));
    }
    let loaded = load_manifest(&a.path().join("manifest.csv")).unwrap();
    loaded.verify_images().unwrap();
    assert_eq!(loaded.len(), 10);
    assert_eq!(loaded.count(Label::Ctc, None), 6);
}

#[test]
fn invalid_specs_are_rejected() {
    for sp in [
        SynthSpec { image_size: 16, ..SynthSpec::default() },
        SynthSpec { bf_signal_strength: 1.5, ..SynthSpec::default() },
        SynthSpec { noise_sigma: -0.1, ..SynthSpec::default() },
        SynthSpec { n_spiked_ctc: 0, n_patient_ctc: 0, n_leuko: 0, ..SynthSpec::default() },
    ] {
        assert!(sp.validate().is_err(), "{sp:?}");
    }
}
