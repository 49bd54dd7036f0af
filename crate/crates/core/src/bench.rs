//! Evaluation protocol: split construction, repeated paired trials against
//! the mean-pooling baseline, prior-scale sweeps and report emission.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{EmbeddingTensor, SplitKind, SplitSpec, TargetTable};
use crate::error::{Error, Result};
use crate::gp::PredictiveDistribution;
use crate::pooling::{self, MaskVariant};
use crate::synth::support_weight;
use crate::train::{fit, TrainConfig};

pub const ONE_MUT_VALIDATION_SIZE: usize = 10;
pub const UNIFORM_VALIDATION_SIZE: usize = 24;
pub const DEFAULT_TRIALS: usize = 64;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

impl SplitKind {
    pub fn default_validation_size(self) -> usize {
        match self {
            SplitKind::OneMutShuffle => ONE_MUT_VALIDATION_SIZE,
            SplitKind::UniformShuffle => UNIFORM_VALIDATION_SIZE,
            SplitKind::Holdout | SplitKind::Explicit => 0,
        }
    }
}

/// Builds a split. Shuffle kinds draw the validation set from the
/// sequences outside `test_indices`; hold-out trains on all of them and
/// evaluates on `test_indices`.
pub fn make_split(
    table: &TargetTable,
    kind: SplitKind,
    seed: u64,
    val_size: Option<usize>,
    test_indices: &[usize],
) -> Result<SplitSpec> {
    let n = table.len();
    let test: BTreeSet<usize> = test_indices.iter().copied().collect();
    if test.len() != test_indices.len() || test.iter().any(|&i| i >= n) {
        return Err(Error::Data("test indices must be unique and in range".into()));
    }
    let pool: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
    let val_size = val_size.unwrap_or_else(|| kind.default_validation_size());

    let validation = match kind {
        SplitKind::OneMutShuffle | SplitKind::UniformShuffle => {
            let candidates: Vec<usize> = if kind == SplitKind::OneMutShuffle {
                pool.iter()
                    .copied()
                    .filter(|&i| table.mutation_counts[i] == 1)
                    .collect()
            } else {
                pool.clone()
            };
            if val_size == 0 {
                return Err(Error::Config("validation size must be >= 1".into()));
            }
            if val_size >= candidates.len() {
                let what = if kind == SplitKind::OneMutShuffle {
                    "single mutants"
                } else {
                    "training sequences"
                };
                return Err(Error::Data(format!(
                    "insufficient {what}: validation size {val_size} needs more than {} available",
                    candidates.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), val_size)
                .into_iter()
                .map(|j| candidates[j])
                .collect();
            picked.sort_unstable();
            picked
        }
        SplitKind::Holdout => {
            if test.is_empty() {
                return Err(Error::Data("hold-out split needs a test set".into()));
            }
            Vec::new()
        }
        SplitKind::Explicit => {
            return Err(Error::Config("explicit splits are read from a file".into()));
        }
    };

    let val_set: BTreeSet<usize> = validation.iter().copied().collect();
    let train: Vec<usize> = pool.into_iter().filter(|i| !val_set.contains(i)).collect();
    let split = SplitSpec {
        kind,
        seed,
        train_indices: train,
        validation_indices: validation,
        test_indices: test.into_iter().collect(),
    };
    split.validate(n)?;
    Ok(split)
}

pub fn mean_absolute_error(predicted: &[f64], observed: &[f64]) -> f64 {
    assert_eq!(predicted.len(), observed.len());
    predicted
        .iter()
        .zip(observed)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / predicted.len() as f64
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// Zero-variance differences; the p-value is a convention, not a test.
    pub degenerate: bool,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Shape("paired samples differ in length".into()));
    }
    if a.len() < 2 {
        return Err(Error::Data("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_and_std(&diffs);
    let n = diffs.len() as f64;
    let df = n - 1.0;
    if sd == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(PairedTTest {
            mean_difference: mean,
            t_statistic: t,
            degrees_of_freedom: df,
            p_value: p,
            degenerate: true,
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(PairedTTest {
        mean_difference: mean,
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        degenerate: false,
    })
}

/// One pooling method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub variant: MaskVariant,
    pub prior_scale: f64,
}

impl Method {
    pub fn new(variant: MaskVariant, prior_scale: f64) -> Self {
        Self {
            variant,
            prior_scale,
        }
    }

    pub fn name(&self) -> &'static str {
        self.variant.as_str()
    }
}

/// A dataset with its fixed hold-out test set and, for synthetic data, the
/// planted support.
#[derive(Debug, Clone)]
pub struct BenchData {
    pub tensor: EmbeddingTensor,
    pub targets: TargetTable,
    pub test_indices: Vec<usize>,
    pub support: Option<Vec<usize>>,
}

impl BenchData {
    pub fn new(tensor: EmbeddingTensor, targets: TargetTable, test_indices: Vec<usize>) -> Result<Self> {
        targets.check_paired(&tensor)?;
        Ok(Self {
            tensor,
            targets,
            test_indices,
            support: None,
        })
    }

    pub fn with_support(mut self, support: Vec<usize>) -> Self {
        self.support = Some(support);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub mae: f64,
    pub weights: Option<Vec<f64>>,
    pub support_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub split_seed: u64,
    pub results: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub split_seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub n_trials: usize,
    /// Against the mean-pooling baseline; absent for the baseline itself or
    /// when no baseline was run.
    pub vs_baseline: Option<PairedTTest>,
    pub significant: bool,
    pub mean_support_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub split_kind: SplitKind,
    pub n_trials: usize,
    pub effective_trials: usize,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    pub summaries: Vec<MethodSummary>,
    pub notes: Vec<String>,
}

impl TrialReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn maes(&self, method: &str) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.results.iter().find(|r| r.method == method))
            .map(|r| r.mae)
            .collect()
    }

    /// CSV `method,trial,split_seed,mae`, grouped by method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,trial,split_seed,mae\n");
        for m in &self.methods {
            for t in &self.trials {
                if let Some(r) = t.results.iter().find(|r| r.method == m.name()) {
                    out.push_str(&format!("{},{},{},{:?}\n", r.method, t.trial, t.split_seed, r.mae));
                }
            }
        }
        out
    }

    pub fn succeeded_majority(&self) -> bool {
        2 * self.effective_trials >= self.n_trials
    }
}

fn run_trial(
    data: &BenchData,
    kind: SplitKind,
    methods: &[Method],
    trial: usize,
    split_seed: u64,
    val_size: Option<usize>,
    base: &TrainConfig,
) -> Result<TrialRecord> {
    let split = make_split(&data.targets, kind, split_seed, val_size, &data.test_indices)?;
    let eval = match kind {
        SplitKind::Holdout => &split.test_indices,
        _ => &split.validation_indices,
    };
    let train_tensor = data.tensor.select(&split.train_indices)?;
    let train_y: Vec<f64> = split.train_indices.iter().map(|&i| data.targets.values[i]).collect();
    let eval_tensor = data.tensor.select(eval)?;
    let eval_y: Vec<f64> = eval.iter().map(|&i| data.targets.values[i]).collect();

    let mut results = Vec::with_capacity(methods.len());
    for m in methods {
        let config = TrainConfig {
            variant: m.variant,
            prior_scale: m.prior_scale,
            seed: split_seed,
            ..base.clone()
        };
        let model = fit(&train_tensor, &train_y, &config)?;
        let pred = model.predict(&eval_tensor)?;
        let weights = if m.variant.is_trainable() {
            Some(pooling::normalized_weights(&model.head, model.n_positions)?)
        } else {
            None
        };
        let support_weight = match (&weights, &data.support) {
            (Some(w), Some(s)) => Some(support_weight(w, s)),
            _ => None,
        };
        results.push(MethodResult {
            method: m.name().to_string(),
            mae: mean_absolute_error(&pred.mean, &eval_y),
            weights,
            support_weight,
        });
    }
    Ok(TrialRecord {
        trial,
        split_seed,
        results,
    })
}

/// Runs `n_trials` trials. Trial `t` reshuffles the split with seed
/// `base_seed + t` and seeds every fit with the same value; all methods in
/// a trial share the split, so per-trial MAEs are paired.
pub fn run_trials(
    data: &BenchData,
    kind: SplitKind,
    methods: &[Method],
    n_trials: usize,
    base_seed: u64,
    val_size: Option<usize>,
    base_config: &TrainConfig,
) -> Result<TrialReport> {
    if n_trials < 2 {
        return Err(Error::Config("need at least 2 trials".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    let names: BTreeSet<&str> = methods.iter().map(|m| m.name()).collect();
    if names.len() != methods.len() {
        return Err(Error::Config("duplicate methods".into()));
    }
    base_config.validate()?;

    let outcomes: Vec<(usize, u64, Result<TrialRecord>)> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let seed = base_seed.wrapping_add(t as u64);
            (t, seed, run_trial(data, kind, methods, t, seed, val_size, base_config))
        })
        .collect();

    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (trial, split_seed, outcome) in outcomes {
        match outcome {
            Ok(rec) => trials.push(rec),
            Err(e) => failures.push(TrialFailure {
                trial,
                split_seed,
                message: e.to_string(),
            }),
        }
    }

    let mut report = TrialReport {
        split_kind: kind,
        n_trials,
        effective_trials: trials.len(),
        base_seed,
        methods: methods.to_vec(),
        trials,
        failures,
        summaries: Vec::new(),
        notes: vec![
            "targets standardized internally; predictions reported in target units".into(),
            "hyperparameters and masks refit in every trial".into(),
            "significance: paired two-sided t-test on per-trial MAE differences vs mean pooling".into(),
        ],
    };
    report.summaries = summarize(&report);
    Ok(report)
}

fn summarize(report: &TrialReport) -> Vec<MethodSummary> {
    let baseline = MaskVariant::Mean.as_str();
    let baseline_maes = report.maes(baseline);
    let has_baseline = report.methods.iter().any(|m| m.variant == MaskVariant::Mean);
    report
        .methods
        .iter()
        .map(|m| {
            let maes = report.maes(m.name());
            let (mean, std) = mean_and_std(&maes);
            let vs_baseline = if has_baseline && m.variant != MaskVariant::Mean && maes.len() >= 2 {
                paired_t_test(&maes, &baseline_maes).ok()
            } else {
                None
            };
            let significant = vs_baseline
                .map(|t| !t.degenerate && t.p_value < SIGNIFICANCE_LEVEL)
                .unwrap_or(false);
            let sw: Vec<f64> = report
                .trials
                .iter()
                .filter_map(|t| t.results.iter().find(|r| r.method == m.name()))
                .filter_map(|r| r.support_weight)
                .collect();
            MethodSummary {
                method: m.name().to_string(),
                mean_mae: mean,
                std_mae: std,
                n_trials: maes.len(),
                vs_baseline,
                significant,
                mean_support_weight: (!sw.is_empty()).then(|| mean_and_std(&sw).0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub split_kind: SplitKind,
    pub rows: Vec<SweepRow>,
    pub best_sigma: f64,
    pub warnings: Vec<String>,
}

impl SweepReport {
    /// CSV `sigma,mean_mae,std_mae,n_trials`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,mean_mae,std_mae,n_trials\n");
        for r in &self.rows {
            out.push_str(&format!("{:?},{:?},{:?},{}\n", r.sigma, r.mean_mae, r.std_mae, r.n_trials));
        }
        out
    }
}

/// Mean validation MAE of the prior variant for each scale; the argmin is
/// the scale to reuse for later prior-variant runs.
pub fn sweep_prior(
    data: &BenchData,
    kind: SplitKind,
    sigmas: &[f64],
    n_trials: usize,
    base_seed: u64,
    val_size: Option<usize>,
    base_config: &TrainConfig,
) -> Result<SweepReport> {
    if sigmas.is_empty() {
        return Err(Error::Config("empty sigma list".into()));
    }
    let mut warnings = Vec::new();
    let mut unique: Vec<f64> = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("prior scale must be positive, got {s}")));
        }
        if unique.contains(&s) {
            warnings.push(format!("duplicate sigma {s} ignored"));
        } else {
            unique.push(s);
        }
    }

    let mut rows = Vec::with_capacity(unique.len());
    for sigma in unique {
        let method = Method::new(MaskVariant::Prior, sigma);
        let report = run_trials(data, kind, &[method], n_trials, base_seed, val_size, base_config)?;
        let s = &report.summaries[0];
        if report.effective_trials < n_trials {
            warnings.push(format!(
                "sigma {sigma}: {} of {n_trials} trials failed",
                n_trials - report.effective_trials
            ));
        }
        rows.push(SweepRow {
            sigma,
            mean_mae: s.mean_mae,
            std_mae: s.std_mae,
            n_trials: s.n_trials,
        });
    }
    let best_sigma = rows
        .iter()
        .filter(|r| r.mean_mae.is_finite())
        .min_by(|a, b| a.mean_mae.total_cmp(&b.mean_mae))
        .map(|r| r.sigma)
        .ok_or_else(|| Error::Training("every sweep entry failed".into()))?;
    Ok(SweepReport {
        split_kind: kind,
        rows,
        best_sigma,
        warnings,
    })
}

/// Prediction dump `id,y_true,mean,variance`; the `y_true` column is
/// present only when observed values are supplied.
pub fn format_predictions(ids: &[String], observed: Option<&[f64]>, dist: &PredictiveDistribution) -> String {
    let mut out = String::from(if observed.is_some() {
        "id,y_true,mean,variance\n"
    } else {
        "id,mean,variance\n"
    });
    for (i, id) in ids.iter().enumerate() {
        match observed {
            Some(y) => out.push_str(&format!(
                "{id},{:?},{:?},{:?}\n",
                y[i], dist.mean[i], dist.variance[i]
            )),
            None => out.push_str(&format!("{id},{:?},{:?}\n", dist.mean[i], dist.variance[i])),
        }
    }
    out
}
