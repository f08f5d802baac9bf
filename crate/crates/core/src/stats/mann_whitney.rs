use serde::{Deserialize, Serialize};

use super::special::{norm_cdf, norm_sf};
use super::{Method, Sample, StatTestResult};
use crate::error::Result;

/// Largest pooled size for which p-values are enumerated exactly.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
}

/// Midranks of the pooled values (1-based), doubled so ties stay integral.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share (i + j + 2) / 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

fn tie_sizes(pooled: &[f64]) -> Vec<usize> {
    let mut v = pooled.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out
}

/// `U` for `a`: pairs with a > b plus half the tied pairs, via rank sums.
pub fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let r2: u64 = doubled_midranks(&pooled)[..a.len()].iter().sum();
    let n1 = a.len() as u64;
    (r2 - n1 * (n1 + 1)) as f64 / 2.0
}

/// Null counts of `U` for tie-free samples, indexed by U: number of
/// arrangements of `n1` and `n2` items with exactly `u` inversions.
fn tie_free_counts(n1: usize, n2: usize) -> Vec<f64> {
    // f[i][j][u] via f(i, j) = f(i-1, j) shifted by j  +  f(i, j-1)
    let max_u = n1 * n2;
    let mut prev: Vec<Vec<f64>> = (0..=n2)
        .map(|_| {
            let mut v = vec![0.0; max_u + 1];
            v[0] = 1.0;
            v
        })
        .collect();
    for _i in 1..=n1 {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n2 + 1];
        cur[0][0] = 1.0;
        for j in 1..=n2 {
            for u in 0..=max_u {
                let from_a = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = from_a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n2)
}

/// Null distribution of 2U over all ways to pick `n1` of the doubled ranks.
fn tied_counts(ranks: &[u64], n1: usize) -> Vec<(u64, f64)> {
    let mut totals = std::collections::BTreeMap::new();
    fn rec(
        ranks: &[u64],
        start: usize,
        left: usize,
        sum: u64,
        totals: &mut std::collections::BTreeMap<u64, f64>,
    ) {
        if left == 0 {
            *totals.entry(sum).or_insert(0.0) += 1.0;
            return;
        }
        for i in start..=ranks.len() - left {
            rec(ranks, i + 1, left - 1, sum + ranks[i], totals);
        }
    }
    rec(ranks, 0, n1, 0, &mut totals);
    let shift = (n1 * (n1 + 1)) as u64;
    totals.into_iter().map(|(s, c)| (s - shift, c)).collect()
}

fn exact_p(dist: &[(u64, f64)], u2_obs: u64, n1n2: u64, alt: Alternative) -> f64 {
    let total: f64 = dist.iter().map(|(_, c)| c).sum();
    let dev_obs = u2_obs.abs_diff(n1n2);
    let hits: f64 = dist
        .iter()
        .filter(|(u2, _)| match alt {
            Alternative::TwoSided => u2.abs_diff(n1n2) >= dev_obs,
            Alternative::Greater => *u2 >= u2_obs,
            Alternative::Less => *u2 <= u2_obs,
        })
        .map(|(_, c)| c)
        .sum();
    hits / total
}

/// Mann-Whitney U test. Exact when the pooled size is at most
/// [`EXACT_MAX_TOTAL`], otherwise the normal approximation with tie
/// correction and a 0.5 continuity correction.
pub fn mann_whitney_u(a: &Sample, b: &Sample, alternative: Alternative) -> Result<StatTestResult> {
    a.check(1)?;
    b.check(1)?;
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.values.iter().chain(&b.values).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let u2_obs = ranks[..n1].iter().sum::<u64>() - (n1 * (n1 + 1)) as u64;
    let u = u2_obs as f64 / 2.0;
    let n1n2 = (n1 * n2) as u64;
    let ties = tie_sizes(&pooled);
    let has_ties = ties.iter().any(|&t| t > 1);

    if n1 + n2 <= EXACT_MAX_TOTAL {
        let (dist, note) = if has_ties {
            (tied_counts(&ranks, n1), "exact, enumeration over tied midranks")
        } else {
            let counts = tie_free_counts(n1, n2);
            let dist: Vec<(u64, f64)> = counts
                .into_iter()
                .enumerate()
                .map(|(u, c)| (2 * u as u64, c))
                .collect();
            (dist, "exact, no ties")
        };
        let p = exact_p(&dist, u2_obs, n1n2, alternative);
        return Ok(StatTestResult::new("Mann-Whitney U", u, p, Method::Exact).note(note));
    }

    let n = (n1 + n2) as f64;
    let mu = n1n2 as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let sigma = (n1n2 as f64 / 12.0 * ((n + 1.0) - tie_term)).sqrt();
    let p = if sigma == 0.0 {
        1.0
    } else {
        match alternative {
            Alternative::TwoSided => {
                let z = ((u - mu).abs() - 0.5) / sigma;
                (2.0 * norm_sf(z)).min(1.0)
            }
            Alternative::Greater => norm_sf((u - mu - 0.5) / sigma),
            Alternative::Less => norm_cdf((u - mu + 0.5) / sigma),
        }
    };
    let mut r = StatTestResult::new("Mann-Whitney U", u, p, Method::Approximate)
        .note("normal approximation, continuity correction 0.5");
    if has_ties {
        r = r.note("tie-corrected variance");
    }
    Ok(r)
}
