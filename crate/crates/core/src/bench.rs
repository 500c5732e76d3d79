//! Monte-Carlo benchmark over the simulation models, train/test split
//! evaluation, and the eigenvector diagnostic.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CovError, Result};
use crate::gmodel::EmOptions;
use crate::la::{eigenvector_distance, sample_covariance, scaled_frobenius_loss, sym_eigen, CovMode, DataMatrix};
use crate::methods::{EstimateContext, Method, MethodEntry};
use crate::seed;
use crate::sim::{make_sigma, sample_mvn, ModelSpec};

fn default_k_factor() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub models: Vec<ModelSpec>,
    pub n: usize,
    pub replicates: usize,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub seed: u64,
    /// `K = round(k_factor · p)` for the g-modeling methods.
    #[serde(default = "default_k_factor", alias = "K_factor")]
    pub k_factor: f64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Worker threads; the global rayon pool when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Record wall-clock time per fit. Off gives byte-reproducible output.
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default)]
    pub em: EmOptions,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<Vec<Method>> {
        if self.models.is_empty() {
            return Err(CovError::Config("no models given".into()));
        }
        if self.replicates == 0 {
            return Err(CovError::Config("replicates must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(CovError::Config(format!("sample size must be >= 2, got {}", self.n)));
        }
        if self.methods.is_empty() {
            return Err(CovError::Config("no methods given".into()));
        }
        if !(self.k_factor > 0.0 && self.k_factor.is_finite()) {
            return Err(CovError::Config(format!("K factor must be positive, got {}", self.k_factor)));
        }
        if self.threads == Some(0) {
            return Err(CovError::Config("threads must be >= 1".into()));
        }
        for m in &self.models {
            m.validate()?;
        }
        self.methods.iter().map(MethodEntry::resolve).collect()
    }
}

/// One `(model, method)` cell: loss quantiles over the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub model: String,
    pub p: usize,
    pub n: usize,
    pub method: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub replicates: usize,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub model: String,
    pub method: String,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<ReplicateFailure>,
}

/// `v[⌊q (N − 1)⌋]` of an ascending slice; the median is the lower median.
pub fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let i = (q * (sorted.len() - 1) as f64).floor() as usize;
    sorted[i.min(sorted.len() - 1)]
}

fn summarize(model: &str, p: usize, n: usize, method: &str, mut losses: Vec<f64>, seconds: f64) -> BenchRecord {
    losses.sort_by(f64::total_cmp);
    let count = losses.len();
    BenchRecord {
        model: model.to_string(),
        p,
        n,
        method: method.to_string(),
        median: lower_quantile(&losses, 0.5),
        q25: lower_quantile(&losses, 0.25),
        q75: lower_quantile(&losses, 0.75),
        replicates: count,
        mean_seconds: if count == 0 { 0.0 } else { seconds / count as f64 },
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| CovError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

type Trial = (std::result::Result<f64, String>, f64);

fn run_trials(x: &DataMatrix, methods: &[Method], ctx: &EstimateContext, timing: bool) -> Vec<Trial> {
    let truth = ctx.truth;
    methods
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let ctx = EstimateContext { seed: seed::derive(ctx.seed, mi as u64), ..ctx.clone() };
            let start = Instant::now();
            let est = m.estimate(x, &ctx);
            let secs = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
            let loss = est.and_then(|e| match truth {
                Some(t) => scaled_frobenius_loss(&e.estimate, t),
                None => Ok(f64::NAN),
            });
            (loss.map_err(|e| e.to_string()), secs)
        })
        .collect()
}

fn collect_cell(
    outcome: &mut BenchOutcome,
    (model, p, n): (&str, usize, usize),
    method: &Method,
    trials: impl Iterator<Item = (usize, Trial)>,
) {
    let mut losses = Vec::new();
    let mut seconds = 0.0;
    for (rep, (loss, secs)) in trials {
        match loss {
            Ok(v) => {
                losses.push(v);
                seconds += secs;
            }
            Err(error) => {
                warn!("model {model}, {method}, replicate {rep}: {error}");
                outcome.failures.push(ReplicateFailure {
                    model: model.to_string(),
                    method: method.name().to_string(),
                    replicate: rep,
                    error,
                });
            }
        }
    }
    outcome.records.push(summarize(model, p, n, method.name(), losses, seconds));
}

/// For each model, draws `replicates` data sets from the fixed `Σ`, runs
/// every method on each, and reports quantiles of the scaled Frobenius loss.
///
/// Replicate `r` of model `i` uses data seed `derive(derive(seed, i), r)`, so
/// results do not depend on the number of threads.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutcome> {
    let methods = cfg.validate()?;
    let sigmas = cfg.models.iter().map(make_sigma).collect::<Result<Vec<_>>>()?;
    with_threads(cfg.threads, || {
        let tasks: Vec<(usize, usize)> =
            (0..cfg.models.len()).flat_map(|mi| (0..cfg.replicates).map(move |r| (mi, r))).collect();
        let trials: Vec<Vec<Trial>> = tasks
            .par_iter()
            .map(|&(mi, r)| {
                let data_seed = seed::derive(seed::derive(cfg.seed, mi as u64), r as u64);
                match sample_mvn(&sigmas[mi], cfg.n, data_seed) {
                    Ok(x) => {
                        let ctx = EstimateContext {
                            truth: Some(&sigmas[mi]),
                            seed: data_seed,
                            k_factor: cfg.k_factor,
                            em: cfg.em,
                        };
                        run_trials(&x, &methods, &ctx, cfg.timing)
                    }
                    Err(e) => methods.iter().map(|_| (Err(e.to_string()), 0.0)).collect(),
                }
            })
            .collect();

        let mut outcome = BenchOutcome::default();
        for (mi, spec) in cfg.models.iter().enumerate() {
            let model = spec.model_id.to_string();
            let rows = &trials[mi * cfg.replicates..(mi + 1) * cfg.replicates];
            for (k, method) in methods.iter().enumerate() {
                let cells = rows.iter().enumerate().map(|(r, t)| (r, t[k].clone()));
                collect_cell(&mut outcome, (&model, spec.p, cfg.n), method, cells);
            }
        }
        outcome
    })
}

pub const RECORD_HEADER: [&str; 9] =
    ["model", "p", "n", "method", "median", "q25", "q75", "replicates", "mean_seconds"];

pub fn write_records(records: &[BenchRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Random train/test splits of `x`: each method is fitted on `train_n` rows
/// and scored against the sample covariance of the remaining rows.
pub fn split_eval(
    x: &DataMatrix,
    train_n: usize,
    repeats: usize,
    seed: u64,
    methods: &[Method],
    ctx: &EstimateContext,
) -> Result<BenchOutcome> {
    let n = x.n();
    if train_n < 3 {
        return Err(CovError::Config(format!("training size must be >= 3, got {train_n}")));
    }
    if n < train_n + 2 {
        return Err(CovError::Data(format!("{n} rows leave fewer than 2 test rows for training size {train_n}")));
    }
    if repeats == 0 || methods.is_empty() {
        return Err(CovError::Config("need at least one repeat and one method".into()));
    }
    if let Some(m) = methods.iter().find(|m| m.needs_truth()) {
        return Err(CovError::Config(format!("{m} needs the true covariance, which real data lacks")));
    }
    let trials: Vec<Vec<Trial>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let split_seed = seed::derive(seed, r as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut seed::rng(split_seed));
            let (train, test) = idx.split_at_mut(train_n);
            train.sort_unstable();
            test.sort_unstable();
            let parts = x
                .select_rows(train)
                .and_then(|tr| Ok((tr, sample_covariance(&x.select_rows(test)?, CovMode::Centered)?)));
            match parts {
                Ok((train_x, target)) => {
                    let ctx = EstimateContext { truth: Some(&target), seed: split_seed, ..ctx.clone() };
                    run_trials(&train_x, methods, &ctx, true)
                }
                Err(e) => methods.iter().map(|_| (Err(e.to_string()), 0.0)).collect(),
            }
        })
        .collect();
    let mut outcome = BenchOutcome::default();
    for (k, method) in methods.iter().enumerate() {
        let cells = trials.iter().enumerate().map(|(r, t)| (r, t[k].clone()));
        collect_cell(&mut outcome, ("data", x.p(), train_n), method, cells);
    }
    Ok(outcome)
}

/// Distance between sample and population eigenvectors over `replicates`
/// data sets of size `n`, summarized like a benchmark cell.
pub fn eigen_diagnostic(spec: &ModelSpec, n: usize, replicates: usize, seed: u64) -> Result<BenchRecord> {
    if replicates == 0 || n < 2 {
        return Err(CovError::Config("need replicates >= 1 and n >= 2".into()));
    }
    let sigma = make_sigma(spec)?;
    let q = sym_eigen(&sigma)?.vectors;
    let dists = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let x = sample_mvn(&sigma, n, seed::derive(seed, r as u64))?;
            let s = sample_covariance(&x, CovMode::Centered)?;
            eigenvector_distance(&sym_eigen(&s)?.vectors, &q)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(&spec.model_id.to_string(), spec.p, n, "eigvec_distance", dists, 0.0))
}
