use serde::{Deserialize, Serialize};

use super::special::f_sf;
use super::{sorted, Method, Sample, StatTestResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Center {
    #[default]
    Mean,
    /// Brown-Forsythe variant.
    Median,
}

fn median(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Levene's test for equal variances of two groups: one-way ANOVA on the
/// absolute deviations from each group's center.
pub fn levene_test(a: &Sample, b: &Sample, center: Center) -> Result<StatTestResult> {
    a.check(2)?;
    b.check(2)?;
    let deviations = |s: &Sample| -> Vec<f64> {
        let c = match center {
            Center::Mean => s.mean(),
            Center::Median => median(&s.values),
        };
        s.values.iter().map(|v| (v - c).abs()).collect()
    };
    let groups = [deviations(a), deviations(b)];
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n_total as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in &groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        between += g.len() as f64 * (m - grand).powi(2);
        within += g.iter().map(|z| (z - m).powi(2)).sum::<f64>();
    }
    let scale = grand.abs().max(f64::MIN_POSITIVE);
    if within <= 1e-28 * scale * scale * n_total as f64 {
        let msg = if groups.iter().flatten().all(|z| *z == 0.0) {
            "all deviations are zero in both groups"
        } else {
            "deviations are constant within each group"
        };
        return Err(Error::Degenerate(format!("Levene: {msg}")));
    }
    let df2 = (n_total - 2) as f64;
    let stat = df2 * between / within;
    let center_note = match center {
        Center::Mean => "center = mean",
        Center::Median => "center = median",
    };
    Ok(StatTestResult::new("Levene", stat, f_sf(stat, 1.0, df2), Method::Approximate)
        .with_df(&[1.0, df2])
        .note(center_note))
}
