use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    levene_test, mann_whitney_u, shapiro_wilk, t_test, Alternative, Center, Sample,
    StatTestResult, TVariant,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectedTest {
    MannWhitney,
    PooledT,
    WelchT,
}

/// One sub-test in the decision procedure. `result` is absent when the
/// input was degenerate for that test; `degenerate` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub test: String,
    pub applied_to: String,
    pub result: Option<StatTestResult>,
    pub degenerate: Option<String>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub alpha: f64,
    pub group_a: String,
    pub group_b: String,
    pub steps: Vec<TraceStep>,
    pub variances_equal: bool,
    pub normality_rejected: bool,
    pub selected: SelectedTest,
    pub final_result: StatTestResult,
    pub reject_null: bool,
}

fn capture(
    test: &str,
    applied_to: &str,
    r: Result<StatTestResult>,
    alpha: f64,
) -> Result<TraceStep> {
    match r {
        Ok(res) => {
            let res = res.with_alpha(alpha);
            Ok(TraceStep {
                test: test.into(),
                applied_to: applied_to.into(),
                outcome: if res.reject_null { "reject" } else { "not rejected" }.into(),
                result: Some(res),
                degenerate: None,
            })
        }
        Err(Error::Degenerate(msg)) => Ok(TraceStep {
            test: test.into(),
            applied_to: applied_to.into(),
            result: None,
            degenerate: Some(msg),
            outcome: "degenerate".into(),
        }),
        Err(e) => Err(e),
    }
}

/// Compare per-seed scores of two arms: Levene, then Shapiro-Wilk on each
/// group and on the pooled values. Any normality rejection selects
/// Mann-Whitney; otherwise a t test, pooled when Levene does not reject and
/// Welch when it does.
///
/// A constant group cannot be checked for normality and is routed to
/// Mann-Whitney as if normality had been rejected. A degenerate Levene step
/// (no spread in the deviations) counts as equal variances.
pub fn compare_arms(a: &Sample, b: &Sample, alpha: f64) -> Result<DecisionTrace> {
    compare_arms_with(a, b, alpha, Center::Mean)
}

pub fn compare_arms_with(
    a: &Sample,
    b: &Sample,
    alpha: f64,
    center: Center,
) -> Result<DecisionTrace> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSample(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let pooled = Sample::new(
        format!("{} + {}", a.group_label, b.group_label),
        a.values.iter().chain(&b.values).copied().collect(),
    );
    let both = format!("{} vs {}", a.group_label, b.group_label);

    let mut steps = vec![capture("Levene", &both, levene_test(a, b, center), alpha)?];
    let variances_equal = steps[0].result.as_ref().is_none_or(|r| !r.reject_null);

    let mut normality_rejected = false;
    for s in [a, b, &pooled] {
        let step = capture("Shapiro-Wilk", &s.group_label, shapiro_wilk(s), alpha)?;
        normality_rejected |= step.result.as_ref().is_none_or(|r| r.reject_null);
        steps.push(step);
    }

    let (selected, final_result) = if normality_rejected {
        (SelectedTest::MannWhitney, mann_whitney_u(a, b, Alternative::TwoSided)?)
    } else if variances_equal {
        (SelectedTest::PooledT, t_test(a, b, TVariant::Pooled)?)
    } else {
        (SelectedTest::WelchT, t_test(a, b, TVariant::Welch)?)
    };
    let final_result = final_result.with_alpha(alpha);
    steps.push(TraceStep {
        test: final_result.test_name.clone(),
        applied_to: both,
        outcome: if final_result.reject_null { "reject" } else { "not rejected" }.into(),
        result: Some(final_result.clone()),
        degenerate: None,
    });
    Ok(DecisionTrace {
        alpha,
        group_a: a.group_label.clone(),
        group_b: b.group_label.clone(),
        steps,
        variances_equal,
        normality_rejected,
        selected,
        reject_null: final_result.reject_null,
        final_result,
    })
}

impl DecisionTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialises")
    }

    /// Plain-text table of every step followed by the verdict.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} vs {} (alpha = {})\n\n{:<22}{:<28}{:>12}{:>14}{:>12}  {}\n",
            self.group_a, self.group_b, self.alpha, "test", "applied to", "statistic", "d.o.f.", "p", "outcome"
        );
        for st in &self.steps {
            match &st.result {
                Some(r) => {
                    let df = if r.df.is_empty() {
                        "-".to_string()
                    } else {
                        r.df.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>().join(", ")
                    };
                    let _ = writeln!(
                        s,
                        "{:<22}{:<28}{:>12.4}{:>14}{:>12.4e}  {}",
                        st.test, st.applied_to, r.statistic, df, r.p_value, st.outcome
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "{:<22}{:<28}{:>12}{:>14}{:>12}  {}",
                        st.test,
                        st.applied_to,
                        "-",
                        "-",
                        "-",
                        st.degenerate.as_deref().unwrap_or("degenerate")
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            "\nselected: {:?}; p = {:.6}; {}",
            self.selected,
            self.final_result.p_value,
            if self.reject_null {
                "difference is significant"
            } else {
                "no significant difference"
            }
        );
        s
    }
}
