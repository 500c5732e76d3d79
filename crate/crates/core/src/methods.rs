//! Estimator dispatch by name.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    adaptive_threshold_estimate, default_nercome_split, lw_estimate, nercome_estimate, oracle_rotation_invariant,
};
use crate::error::{CovError, Result};
use crate::gmodel::{msg_estimate, EmOptions, FitReport, MsgOptions, SupportSource};
use crate::la::{center_columns, sample_covariance, CovMode, DataMatrix, SymmetricEstimate};
use crate::posdef::{correct_pd, PdCorrectionConfig};

fn default_delta() -> f64 {
    2.0
}

fn default_splits() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Sample,
    /// Ledoit–Wolf on the centered data.
    Linear,
    Adap {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    Nercome {
        /// First-group size; `ceil(n/2)` when absent.
        #[serde(default)]
        n1: Option<usize>,
        #[serde(default = "default_splits")]
        splits: usize,
    },
    OracleNonlin,
    Msg {
        /// Overrides the run-wide K factor.
        #[serde(default)]
        k_factor: Option<f64>,
    },
    Msgcor {
        #[serde(default)]
        k_factor: Option<f64>,
        #[serde(default)]
        pd: PdCorrectionConfig,
    },
    OracleMsg {
        #[serde(default)]
        k_factor: Option<f64>,
    },
}

impl Method {
    pub const NAMES: [&'static str; 8] =
        ["msg", "msgcor", "sample", "linear", "adap", "nercome", "oracle_nonlin", "oracle_msg"];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sample => "sample",
            Method::Linear => "linear",
            Method::Adap { .. } => "adap",
            Method::Nercome { .. } => "nercome",
            Method::OracleNonlin => "oracle_nonlin",
            Method::Msg { .. } => "msg",
            Method::Msgcor { .. } => "msgcor",
            Method::OracleMsg { .. } => "oracle_msg",
        }
    }

    pub fn needs_truth(&self) -> bool {
        matches!(self, Method::OracleNonlin | Method::OracleMsg { .. })
    }

    pub fn estimate(&self, x: &DataMatrix, ctx: &EstimateContext) -> Result<Estimated> {
        let plain = |estimate| Ok(Estimated { estimate, fit: None });
        match self {
            Method::Sample => plain(sample_covariance(x, CovMode::Centered)?),
            Method::Linear => plain(lw_estimate(&center_columns(x)?)?),
            Method::Adap { delta } => plain(adaptive_threshold_estimate(x, *delta)?),
            Method::Nercome { n1, splits } => {
                let n1 = n1.unwrap_or_else(|| default_nercome_split(x.n()));
                plain(nercome_estimate(x, n1, *splits, ctx.seed)?)
            }
            Method::OracleNonlin => plain(oracle_rotation_invariant(x, ctx.truth()?)?),
            Method::Msg { k_factor } | Method::OracleMsg { k_factor } => {
                let support = match self {
                    Method::OracleMsg { .. } => SupportSource::Oracle(ctx.truth()?.clone()),
                    _ => SupportSource::Sample,
                };
                let fit = msg_estimate(x, &ctx.msg_options(*k_factor, x.p(), support)?)?;
                Ok(Estimated { estimate: fit.estimate, fit: Some(fit.report) })
            }
            Method::Msgcor { k_factor, pd } => {
                let fit = msg_estimate(x, &ctx.msg_options(*k_factor, x.p(), SupportSource::Sample)?)?;
                let corrected = correct_pd(&fit.estimate, pd)?.with_method("msgcor");
                Ok(Estimated { estimate: corrected, fit: Some(fit.report) })
            }
        }
    }
}

impl FromStr for Method {
    type Err = CovError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sample" => Method::Sample,
            "linear" | "lw" => Method::Linear,
            "adap" => Method::Adap { delta: default_delta() },
            "nercome" => Method::Nercome { n1: None, splits: default_splits() },
            "oracle_nonlin" => Method::OracleNonlin,
            "msg" => Method::Msg { k_factor: None },
            "msgcor" => Method::Msgcor { k_factor: None, pd: PdCorrectionConfig::default() },
            "oracle_msg" => Method::OracleMsg { k_factor: None },
            other => {
                return Err(CovError::Config(format!(
                    "unknown method {other:?}; expected one of {}",
                    Method::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A method given either by bare name or as a tagged object with
/// parameters, e.g. `"sample"` or `{"name": "adap", "delta": 1.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(String),
    Spec(Method),
}

impl MethodEntry {
    pub fn resolve(&self) -> Result<Method> {
        match self {
            MethodEntry::Name(s) => s.parse(),
            MethodEntry::Spec(m) => Ok(m.clone()),
        }
    }
}

impl From<Method> for MethodEntry {
    fn from(m: Method) -> Self {
        MethodEntry::Spec(m)
    }
}

/// Everything a method may need besides the data.
#[derive(Debug, Clone)]
pub struct EstimateContext<'a> {
    pub truth: Option<&'a SymmetricEstimate>,
    pub seed: u64,
    pub k_factor: f64,
    pub em: EmOptions,
}

impl Default for EstimateContext<'_> {
    fn default() -> Self {
        Self { truth: None, seed: 0, k_factor: 1.0, em: EmOptions::default() }
    }
}

impl<'a> EstimateContext<'a> {
    fn truth(&self) -> Result<&'a SymmetricEstimate> {
        self.truth.ok_or_else(|| CovError::Config("oracle methods need the true covariance".into()))
    }

    fn msg_options(&self, k_factor: Option<f64>, p: usize, support: SupportSource) -> Result<MsgOptions> {
        Ok(MsgOptions {
            k: Some(support_size(k_factor.unwrap_or(self.k_factor), p)?),
            support,
            seed: self.seed,
            em: self.em,
            ..Default::default()
        })
    }
}

/// `K = round(r · p)`, kept within `1..=p(p−1)/2`.
pub fn support_size(k_factor: f64, p: usize) -> Result<usize> {
    if !(k_factor > 0.0 && k_factor.is_finite()) {
        return Err(CovError::Config(format!("K factor must be a positive number, got {k_factor}")));
    }
    let pairs = (p * p.saturating_sub(1) / 2).max(1);
    Ok(((k_factor * p as f64).round() as usize).clamp(1, pairs))
}

#[derive(Debug, Clone)]
pub struct Estimated {
    pub estimate: SymmetricEstimate,
    pub fit: Option<FitReport>,
}
