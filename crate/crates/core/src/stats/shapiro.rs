//! Shapiro-Wilk W with Royston's polynomial approximations for the
//! coefficients and the null distribution.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::special::{norm_ppf, norm_sf};
use super::{sorted, Method, Sample, StatTestResult};
use crate::error::{Error, Result};

/// Evaluate `c[0] + c[1] x + c[2] x^2 + ...`.
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Weights for the upper half of the ordered sample, largest first.
fn half_coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![FRAC_1_SQRT_2];
    }
    let an = n as f64;
    // expected normal order statistics, upper half
    let m: Vec<f64> = (0..half)
        .map(|i| -norm_ppf((i as f64 + 1.0 - 0.375) / (an + 0.25)))
        .collect();
    let ssm = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let rssm = ssm.sqrt();
    let u = 1.0 / an.sqrt();
    let mut a: Vec<f64> = m.iter().map(|v| v / rssm).collect();
    let an1 = a[0] + poly(&[0.0, 0.221_157, -0.147_981, -2.071_19, 4.434_685, -2.706_056], u);
    let phi;
    let start;
    if n > 5 {
        let an2 = a[1] + poly(&[0.0, 0.042_981, -0.293_762, -1.752_461, 5.682_633, -3.582_633], u);
        phi = (ssm - 2.0 * m[0].powi(2) - 2.0 * m[1].powi(2))
            / (1.0 - 2.0 * an1.powi(2) - 2.0 * an2.powi(2));
        a[1] = an2;
        start = 2;
    } else {
        phi = (ssm - 2.0 * m[0].powi(2)) / (1.0 - 2.0 * an1.powi(2));
        start = 1;
    }
    a[0] = an1;
    let rphi = phi.sqrt();
    for i in start..half {
        a[i] = m[i] / rphi;
    }
    a
}

/// W and `1 - W` for a sample of at least three values with non-zero range.
pub fn shapiro_wilk_statistic(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidSample(format!(
            "Shapiro-Wilk needs 3 <= n <= 5000, got {n}"
        )));
    }
    let x = sorted(values);
    let range = x[n - 1] - x[0];
    if !(range > 1e-19 * x[n - 1].abs().max(x[0].abs()).max(1.0)) {
        return Err(Error::Degenerate("Shapiro-Wilk: all values identical".into()));
    }
    let half = half_coefficients(n);
    let mut coef = vec![0.0; n];
    for (i, &h) in half.iter().enumerate() {
        coef[n - 1 - i] = h;
        coef[i] = -h;
    }
    // scaled and centred copies keep 1 - W accurate when W is close to one
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let xm = xs.iter().sum::<f64>() / n as f64;
    let am = coef.iter().sum::<f64>() / n as f64;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (a, v) in coef.iter().zip(&xs) {
        let (da, dx) = (a - am, v - xm);
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    let r = (ssa * ssx).sqrt();
    let w1 = (r - sax) * (r + sax) / (ssa * ssx);
    Ok((1.0 - w1, w1))
}

pub fn shapiro_wilk(x: &Sample) -> Result<StatTestResult> {
    x.check(3)?;
    let (w, w1) = shapiro_wilk_statistic(&x.values)?;
    let n = x.len();
    let an = n as f64;
    let p = if n == 3 {
        let w = w.max(0.75);
        (6.0 / PI * (w.sqrt().asin() - 0.75f64.sqrt().asin())).clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = poly(&[-2.273, 0.459], an);
        let y = w1.ln();
        if y >= gamma {
            1e-19
        } else {
            let z = -(gamma - y).ln();
            let mu = poly(&[0.544, -0.399_78, 0.025_054, -6.714e-4], an);
            let sigma = poly(&[1.3822, -0.778_57, 0.062_767, -2.0322e-3], an).exp();
            norm_sf((z - mu) / sigma)
        }
    } else {
        let u = an.ln();
        let mu = poly(&[-1.5861, -0.310_82, -0.083_751, 0.003_891_5], u);
        let sigma = poly(&[-0.4803, -0.082_676, 0.003_030_2], u).exp();
        norm_sf((w1.ln() - mu) / sigma)
    };
    let mut r = StatTestResult::new("Shapiro-Wilk", w, p, Method::Approximate);
    if n > 11 || n == 3 {
        r = r.note(format!("n = {n}"));
    } else {
        r = r.note(format!("n = {n}, small-sample transform"));
    }
    Ok(r)
}
