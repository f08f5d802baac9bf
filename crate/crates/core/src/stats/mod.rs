//! Levene, Shapiro-Wilk, Mann-Whitney and t tests, plus the decision
//! procedure that chains them to compare two arms.

mod compare;
mod levene;
mod mann_whitney;
mod shapiro;
pub mod special;
mod ttest;

pub use compare::{compare_arms, compare_arms_with, DecisionTrace, SelectedTest, TraceStep};
pub use levene::{levene_test, Center};
pub use mann_whitney::{mann_whitney_u, u_statistic, Alternative};
pub use shapiro::{shapiro_wilk, shapiro_wilk_statistic};
pub use ttest::{t_test, TVariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub values: Vec<f64>,
    pub group_label: String,
}

impl Sample {
    pub fn new(group_label: impl Into<String>, values: Vec<f64>) -> Self {
        Sample {
            values,
            group_label: group_label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check(&self, min_len: usize) -> Result<()> {
        if self.values.len() < min_len {
            return Err(Error::InvalidSample(format!(
                "group `{}` has {} value(s), at least {min_len} required",
                self.group_label,
                self.values.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "group `{}` contains non-finite value {v}",
                self.group_label
            )));
        }
        Ok(())
    }

    pub(crate) fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unbiased variance.
    pub(crate) fn var(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (self.values.len() - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test_name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    /// Degrees of freedom where the reference distribution has them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub df: Vec<f64>,
    pub alpha: f64,
    pub reject_null: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl StatTestResult {
    pub(crate) fn new(test_name: &str, statistic: f64, p_value: f64, method: Method) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        StatTestResult {
            test_name: test_name.to_string(),
            statistic,
            p_value,
            method,
            df: Vec::new(),
            alpha: DEFAULT_ALPHA,
            reject_null: p_value < DEFAULT_ALPHA,
            notes: Vec::new(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.reject_null = self.p_value < alpha;
        self
    }

    pub(crate) fn with_df(mut self, df: &[f64]) -> Self {
        self.df = df.to_vec();
        self
    }

    pub(crate) fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Ascending sort of finite values.
pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}
