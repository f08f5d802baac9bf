use ctcbench::data::Label;
use ctcbench::metrics::{compute_metrics, confusion, Averaging, ConfusionMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class metrics recomputed from explicit label lists.
fn brute_force(preds: &[Label], truths: &[Label]) -> (f64, [(f64, f64, f64); 2]) {
    let mut out = [(0.0, 0.0, 0.0); 2];
    for (k, class) in [Label::Ctc, Label::Leuko].into_iter().enumerate() {
        let hit = preds.iter().zip(truths).filter(|(p, t)| **p == class && **t == class).count() as f64;
        let predicted = preds.iter().filter(|p| **p == class).count() as f64;
        let actual = truths.iter().filter(|t| **t == class).count() as f64;
        let precision = if predicted > 0.0 { hit / predicted } else { 0.0 };
        let recall = if actual > 0.0 { hit / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        out[k] = (precision, recall, f1);
    }
    let correct = preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64;
    (correct / preds.len() as f64, out)
}

fn expand(cm: &ConfusionMatrix) -> (Vec<Label>, Vec<Label>) {
    let mut p = Vec::new();
    let mut t = Vec::new();
    for (n, pl, tl) in [
        (cm.tp, Label::Ctc, Label::Ctc),
        (cm.fp, Label::Ctc, Label::Leuko),
        (cm.tn, Label::Leuko, Label::Leuko),
        (cm.fn_, Label::Leuko, Label::Ctc),
    ] {
        for _ in 0..n {
            p.push(pl);
            t.push(tl);
        }
    }
    (p, t)
}

#[test]
fn macro_metrics_match_brute_force_on_random_matrices() {
    let mut g = ChaCha8Rng::seed_from_u64(10_000);
    let mut done = 0;
    while done < 10_000 {
        // small counts hit the zero-denominator corners often
        let hi = if done % 2 == 0 { 4 } else { 60 };
        let cm = ConfusionMatrix::new(
            g.random_range(0..hi),
            g.random_range(0..hi),
            g.random_range(0..hi),
            g.random_range(0..hi),
        );
        if cm.total() == 0 {
            continue;
        }
        let (p, t) = expand(&cm);
        assert_eq!(confusion(&p, &t).unwrap(), cm);
        let (acc, per) = brute_force(&p, &t);
        let r = compute_metrics(&cm, Averaging::Macro).unwrap();
        let tol = 1e-12;
        assert!((r.accuracy - acc).abs() < tol);
        for k in 0..2 {
            assert!((r.per_class[k].precision - per[k].0).abs() < tol);
            assert!((r.per_class[k].recall - per[k].1).abs() < tol);
            assert!((r.per_class[k].f1 - per[k].2).abs() < tol, "{cm:?}");
        }
        assert!((r.f1 - (per[0].2 + per[1].2) / 2.0).abs() < tol);
        assert!((r.precision - (per[0].0 + per[1].0) / 2.0).abs() < tol);
        assert!((r.recall - (per[0].1 + per[1].1) / 2.0).abs() < tol);
        let pc = compute_metrics(&cm, Averaging::PositiveClass).unwrap();
        assert!((pc.f1 - per[0].2).abs() < tol);
        done += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn positive_class_f1_closed_form(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500) {
        let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
        prop_assume!(cm.total() > 0);
        let r = compute_metrics(&cm, Averaging::PositiveClass).unwrap();
        let expect = if 2 * tp + fp + fn_ == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        prop_assert_eq!(r.f1, expect);
        for v in [r.accuracy, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let m = compute_metrics(&cm, Averaging::Macro).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn pair_order_does_not_matter(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200), seed in any::<u64>()) {
        let lab = |b: bool| if b { Label::Ctc } else { Label::Leuko };
        let (p, t): (Vec<Label>, Vec<Label>) = pairs.iter().map(|&(a, b)| (lab(a), lab(b))).unzip();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<Label> = idx.iter().map(|&i| p[i]).collect();
        let t2: Vec<Label> = idx.iter().map(|&i| t[i]).collect();
        prop_assert_eq!(confusion(&p, &t).unwrap(), confusion(&p2, &t2).unwrap());
    }
}
