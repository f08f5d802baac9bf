use serde::{Deserialize, Serialize};

use super::special::t_two_sided;
use super::{Method, Sample, StatTestResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TVariant {
    /// Student's t with pooled variance.
    Pooled,
    /// Welch's t with Satterthwaite degrees of freedom.
    Welch,
}

/// Two-sided two-sample t test.
pub fn t_test(a: &Sample, b: &Sample, variant: TVariant) -> Result<StatTestResult> {
    a.check(2)?;
    b.check(2)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (v1, v2) = (a.var(), b.var());
    let diff = a.mean() - b.mean();
    let (se, df, name) = match variant {
        TVariant::Pooled => {
            let df = n1 + n2 - 2.0;
            let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
            ((sp2 * (1.0 / n1 + 1.0 / n2)).sqrt(), df, "Student t (pooled)")
        }
        TVariant::Welch => {
            let (q1, q2) = (v1 / n1, v2 / n2);
            let df = (q1 + q2).powi(2) / (q1 * q1 / (n1 - 1.0) + q2 * q2 / (n2 - 1.0));
            ((q1 + q2).sqrt(), df, "Welch t")
        }
    };
    if se == 0.0 {
        return Err(Error::Degenerate(format!("{name}: both groups have zero variance")));
    }
    let t = diff / se;
    Ok(StatTestResult::new(name, t, t_two_sided(t, df), Method::Approximate).with_df(&[df]))
}
