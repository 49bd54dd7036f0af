//! Joint maximization of the marginal log-likelihood over kernel
//! hyperparameters and mask parameters.
//!
//! The optimizer is first-order ascent on the full parameter vector
//! `[log sf2, log l, log noise, raw_1 .. raw_P]` with per-parameter step
//! scaling (Adam-style moment estimates) and a backtracking line search, so
//! every accepted step is non-decreasing in the objective.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTensor;
use crate::error::{Error, Result};
use crate::gp::{
    self, GpHyperparams, GpPosterior, KernelKind, PredictiveDistribution,
};
use crate::pooling::{self, MaskHead, MaskVariant, PooledFeatures};

pub const DEFAULT_PRIOR_SCALE: f64 = 0.15;
pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const DEFAULT_RESTARTS: usize = 4;
pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
/// Consecutive small-change iterations required to declare convergence.
pub const CONVERGENCE_WINDOW: usize = 5;

const HYPER_BOUNDS: (f64, f64) = (-18.0, 12.0);
const RAW_BOUNDS: (f64, f64) = (-40.0, 40.0);
const MAX_BACKTRACKS: usize = 30;
/// Log-space perturbation of the hyperparameter init for restarts > 0.
const RESTART_PERTURBATION_SD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// Plain gradient direction with a fixed base step.
    Fixed,
    /// Per-parameter scaling from running moment estimates.
    #[default]
    Adaptive,
}

/// Starting point for restart 0, in the model's internal target units.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub hypers: GpHyperparams,
    pub raw_params: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: MaskVariant,
    pub kernel: KernelKind,
    pub prior_scale: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub step_rule: StepRule,
    pub learning_rate: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Standardize targets to zero mean and unit variance before fitting.
    pub standardize: bool,
    /// Keep the raw mask parameters at zero and train only hyperparameters.
    pub freeze_mask: bool,
    pub warm_start: Option<WarmStart>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: MaskVariant::Mean,
            kernel: KernelKind::default(),
            prior_scale: DEFAULT_PRIOR_SCALE,
            max_iters: DEFAULT_MAX_ITERS,
            restarts: DEFAULT_RESTARTS,
            step_rule: StepRule::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            standardize: true,
            freeze_mask: false,
            warm_start: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.variant == MaskVariant::Prior && !(self.prior_scale > 0.0 && self.prior_scale.is_finite()) {
            return Err(Error::Config(format!(
                "prior scale must be positive, got {}",
                self.prior_scale
            )));
        }
        Ok(())
    }

    fn prior_scale_for_head(&self) -> Option<f64> {
        (self.variant == MaskVariant::Prior).then_some(self.prior_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

/// Objective-trace CSV with header `iter,objective,grad_norm`.
pub fn format_trace(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,objective,grad_norm\n");
    for row in trace {
        out.push_str(&format!("{},{:?},{:?}\n", row.iter, row.objective, row.grad_norm));
    }
    out
}

/// Training objective: marginal log-likelihood, plus the Half-Cauchy
/// log-prior for the prior variant.
pub fn objective(
    tensor: &EmbeddingTensor,
    y: &[f64],
    hp: &GpHyperparams,
    head: &MaskHead,
    kind: KernelKind,
) -> Result<f64> {
    let features = pooling::pool(tensor, head)?;
    let mll = gp::log_marginal_likelihood(&features, y, hp, kind)?;
    Ok(mll + prior_term(head)?)
}

fn prior_term(head: &MaskHead) -> Result<f64> {
    if head.variant() == MaskVariant::Prior {
        Ok(pooling::half_cauchy_log_prior(head)?.0)
    } else {
        Ok(0.0)
    }
}

/// Objective value and gradient laid out as `[hypers(3), raw(P)]`.
pub fn objective_and_gradient(
    tensor: &EmbeddingTensor,
    y: &[f64],
    hp: &GpHyperparams,
    head: &MaskHead,
    kind: KernelKind,
) -> Result<(f64, Vec<f64>)> {
    let g = gp::mll_gradients(tensor, head, y, hp, kind)?;
    let mut value = g.value;
    let mut grad = g.hypers().to_vec();
    if let Some(mask) = &g.mask {
        grad.extend_from_slice(mask);
    }
    if head.variant() == MaskVariant::Prior {
        let (lp, lp_grad) = pooling::half_cauchy_log_prior(head)?;
        value += lp;
        for (g, d) in grad[3..].iter_mut().zip(lp_grad) {
            *g += d;
        }
    }
    Ok((value, grad))
}

/// A fitted model: posterior in standardized target units plus the mask
/// head and the constants to map predictions back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub posterior: GpPosterior,
    pub head: MaskHead,
    pub n_positions: usize,
    pub n_dims: usize,
    pub y_mean: f64,
    pub y_scale: f64,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    pub restricted: bool,
}

impl TrainedModel {
    pub fn hypers(&self) -> &GpHyperparams {
        self.posterior.hypers()
    }

    pub fn kernel(&self) -> KernelKind {
        self.posterior.kind()
    }

    pub fn n_train(&self) -> usize {
        self.posterior.targets().len()
    }

    pub fn jitter_used(&self) -> f64 {
        self.posterior.jitter()
    }

    fn pool_checked(&self, tensor: &EmbeddingTensor) -> Result<PooledFeatures> {
        if tensor.n_positions() != self.n_positions || tensor.n_dims() != self.n_dims {
            return Err(Error::Shape(format!(
                "model expects {}x{} embeddings, got {}x{}",
                self.n_positions,
                self.n_dims,
                tensor.n_positions(),
                tensor.n_dims()
            )));
        }
        pooling::pool(tensor, &self.head)
    }

    /// Posterior mean and variance in target units.
    pub fn predict(&self, tensor: &EmbeddingTensor) -> Result<PredictiveDistribution> {
        let z = self.pool_checked(tensor)?;
        let d = self.posterior.predict(&z)?;
        Ok(self.unstandardize(d))
    }

    pub fn predict_full(
        &self,
        tensor: &EmbeddingTensor,
    ) -> Result<(PredictiveDistribution, DMatrix<f64>)> {
        let z = self.pool_checked(tensor)?;
        let (d, cov) = self.posterior.predict_full(&z)?;
        let scale2 = self.y_scale * self.y_scale;
        Ok((self.unstandardize(d), cov * scale2))
    }

    fn unstandardize(&self, d: PredictiveDistribution) -> PredictiveDistribution {
        let scale2 = self.y_scale * self.y_scale;
        PredictiveDistribution {
            mean: d.mean.iter().map(|m| m * self.y_scale + self.y_mean).collect(),
            variance: d.variance.iter().map(|v| v * scale2).collect(),
        }
    }

    /// Signal variance in target units, the prior predictive variance.
    pub fn prior_variance(&self) -> f64 {
        self.hypers().sigma_f2() * self.y_scale * self.y_scale
    }
}

fn standardization(y: &[f64], enabled: bool) -> (f64, f64) {
    if !enabled {
        return (0.0, 1.0);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

fn sample_variance(y: &[f64]) -> f64 {
    let (_, sd) = standardization(y, true);
    sd * sd
}

fn restart_rng(seed: u64, restart: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 20).wrapping_add(restart as u64));
    rng
}

/// Everything a single optimization run needs.
struct Problem<'a> {
    tensor: &'a EmbeddingTensor,
    y: &'a [f64],
    config: &'a TrainConfig,
    template: MaskHead,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        3 + self.template.n_params()
    }

    fn unpack(&self, theta: &[f64]) -> Result<(GpHyperparams, MaskHead)> {
        let hp = GpHyperparams::new(theta[0], theta[1], theta[2])?;
        let head = if self.template.variant() == MaskVariant::Mean {
            self.template.clone()
        } else {
            self.template.with_raw_params(theta[3..].to_vec())?
        };
        Ok((hp, head))
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let (hp, head) = self.unpack(theta)?;
        objective(self.tensor, self.y, &hp, &head, self.config.kernel)
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (hp, head) = self.unpack(theta)?;
        let (v, mut g) = objective_and_gradient(self.tensor, self.y, &hp, &head, self.config.kernel)?;
        if self.config.freeze_mask {
            g[3..].iter_mut().for_each(|x| *x = 0.0);
        }
        Ok((v, g))
    }

    fn clamp(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            let (lo, hi) = if i < 3 { HYPER_BOUNDS } else { RAW_BOUNDS };
            *t = t.clamp(lo, hi);
        }
    }

    fn initial_theta(&self, restart: usize) -> Result<Vec<f64>> {
        let config = self.config;
        let p = self.template.n_params();
        let mut raw = vec![0.0; p];
        if !config.freeze_mask && p > 0 {
            let mut rng = restart_rng(config.seed, restart, 1);
            let init = MaskHead::init(
                self.template.variant(),
                p,
                self.template.prior_scale(),
                &mut rng,
            )?;
            raw.copy_from_slice(init.raw_params());
        }

        let hypers = match (&config.warm_start, restart) {
            (Some(ws), 0) => {
                if let Some(r) = &ws.raw_params {
                    if r.len() != p {
                        return Err(Error::Shape(format!(
                            "warm start has {} mask parameters, head has {p}",
                            r.len()
                        )));
                    }
                    raw.copy_from_slice(r);
                }
                ws.hypers.as_array()
            }
            _ => {
                let head = self.unpack(&[0.0, 0.0, 0.0].iter().chain(&raw).copied().collect::<Vec<_>>())?.1;
                let features = pooling::pool(self.tensor, &head)?;
                let var_y = sample_variance(self.y);
                let mut h = [
                    var_y.ln(),
                    gp::median_pairwise_distance(&features).ln(),
                    (0.1 * var_y).ln(),
                ];
                if restart > 0 {
                    let mut rng = restart_rng(config.seed, restart, 2);
                    let normal = Normal::new(0.0, RESTART_PERTURBATION_SD).expect("valid normal");
                    h.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
                }
                h
            }
        };

        let mut theta: Vec<f64> = hypers.iter().copied().chain(raw).collect();
        self.clamp(&mut theta);
        Ok(theta)
    }

    fn direction(&self, grad: &[f64], state: &mut AdamState, iter: usize) -> Vec<f64> {
        match self.config.step_rule {
            StepRule::Fixed => grad.to_vec(),
            StepRule::Adaptive => state.update(grad, iter),
        }
    }

    fn run(&self, restart: usize) -> Result<RunResult> {
        let config = self.config;
        let mut theta = self.initial_theta(restart)?;
        let (mut value, mut grad) = self.value_and_grad(&theta)?;
        let mut trace = vec![TraceRow {
            iter: 0,
            objective: value,
            grad_norm: norm(&grad),
        }];
        let mut state = AdamState::new(self.n_params());
        let mut step = config.learning_rate;
        let mut small_changes = 0;

        for iter in 1..=config.max_iters {
            let dir = self.direction(&grad, &mut state, iter);
            let mut accepted = None;
            let mut trial_step = step;
            for _ in 0..MAX_BACKTRACKS {
                let mut candidate: Vec<f64> =
                    theta.iter().zip(&dir).map(|(t, d)| t + trial_step * d).collect();
                self.clamp(&mut candidate);
                if candidate == theta {
                    break;
                }
                match self.value(&candidate) {
                    Ok(v) if v.is_finite() && v >= value => {
                        accepted = Some((candidate, v));
                        break;
                    }
                    _ => trial_step *= 0.5,
                }
            }
            let Some((candidate, new_value)) = accepted else {
                break;
            };
            // Re-evaluate with the gradient; a value mismatch here would mean
            // a non-deterministic objective.
            let (v, g) = match self.value_and_grad(&candidate) {
                Ok(vg) => vg,
                Err(_) => break,
            };
            debug_assert_eq!(v, new_value);
            let rel = (v - value).abs() / value.abs().max(1.0);
            theta = candidate;
            value = v;
            grad = g;
            trace.push(TraceRow {
                iter,
                objective: value,
                grad_norm: norm(&grad),
            });
            step = if trial_step < step {
                trial_step.max(config.learning_rate * 1e-6)
            } else {
                (step * 1.2).min(config.learning_rate)
            };
            if rel < config.tolerance {
                small_changes += 1;
                if small_changes >= CONVERGENCE_WINDOW {
                    break;
                }
            } else {
                small_changes = 0;
            }
        }

        Ok(RunResult {
            theta,
            objective: value,
            trace,
        })
    }
}

struct RunResult {
    theta: Vec<f64>,
    objective: f64,
    trace: Vec<TraceRow>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, grad: &[f64], iter: usize) -> Vec<f64> {
        let t = iter as i32;
        let c1 = 1.0 - Self::BETA1.powi(t);
        let c2 = 1.0 - Self::BETA2.powi(t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                // Momentum can point against the current gradient; fall back
                // to the scaled gradient so the direction stays ascent.
                let d = m_hat / (v_hat.sqrt() + Self::EPS);
                if d * g > 0.0 {
                    d
                } else {
                    g / (v_hat.sqrt() + Self::EPS)
                }
            })
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fits hyperparameters and mask jointly, keeping the best of
/// `config.restarts` seeded runs (ties go to the lowest restart index).
pub fn fit(tensor: &EmbeddingTensor, y: &[f64], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if y.len() != tensor.n_sequences() {
        return Err(Error::Shape(format!(
            "{} targets for {} sequences",
            y.len(),
            tensor.n_sequences()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 training sequences, got {}",
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite target at index {i}")));
    }

    let (y_mean, y_scale) = standardization(y, config.standardize);
    let y_std: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
    let template = match config.variant {
        MaskVariant::Mean => MaskHead::mean(),
        v => MaskHead::new(v, vec![0.0; tensor.n_positions()], config.prior_scale_for_head())?,
    };
    let problem = Problem {
        tensor,
        y: &y_std,
        config,
        template,
    };

    let runs: Vec<Result<RunResult>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| problem.run(r))
        .collect();

    let mut best: Option<RunResult> = None;
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.objective > b.objective) {
                    best = Some(run);
                }
            }
            Err(e) => failures.push(format!("restart {r}: {e}")),
        }
    }
    let best = best.ok_or_else(|| {
        Error::Training(format!("all {} restarts failed: {}", config.restarts, failures.join("; ")))
    })?;

    let (hypers, head) = problem.unpack(&best.theta)?;
    let features = pooling::pool(tensor, &head)?;
    let posterior = GpPosterior::fit(&features, &y_std, hypers, config.kernel)?;
    Ok(TrainedModel {
        posterior,
        head,
        n_positions: tensor.n_positions(),
        n_dims: tensor.n_dims(),
        y_mean,
        y_scale,
        objective: best.objective,
        trace: best.trace,
        restricted: false,
    })
}

/// Fits on the single-mutation subset only.
pub fn fit_restricted(
    tensor: &EmbeddingTensor,
    y: &[f64],
    mutation_counts: &[u32],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if mutation_counts.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} mutation counts for {} targets",
            mutation_counts.len(),
            y.len()
        )));
    }
    let singles = single_mutant_indices(mutation_counts);
    if singles.len() < 2 {
        return Err(Error::Training(format!(
            "restricted fit needs at least 2 single mutants, found {}",
            singles.len()
        )));
    }
    let sub = tensor.select(&singles)?;
    let y_sub: Vec<f64> = singles.iter().map(|&i| y[i]).collect();
    let mut model = fit(&sub, &y_sub, config)?;
    model.restricted = true;
    Ok(model)
}

pub fn single_mutant_indices(mutation_counts: &[u32]) -> Vec<usize> {
    mutation_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 1)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(n: usize, p: usize, m: usize, seed: u64) -> EmbeddingTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * p * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingTensor::new(n, p, m, v).unwrap()
    }

    #[test]
    fn mean_objective_is_mll() {
        let t = random_tensor(5, 3, 2, 1);
        let y = [0.3, -0.2, 1.1, 0.4, -0.9];
        let hp = GpHyperparams::from_natural(1.2, 0.7, 0.1).unwrap();
        let head = MaskHead::mean();
        let obj = objective(&t, &y, &hp, &head, KernelKind::Matern32).unwrap();
        let mll = gp::log_marginal_likelihood(
            &pooling::pool(&t, &head).unwrap(),
            &y,
            &hp,
            KernelKind::Matern32,
        )
        .unwrap();
        assert_eq!(obj, mll);
    }

    #[test]
    fn prior_objective_is_additive() {
        let t = random_tensor(5, 3, 2, 2);
        let y = [0.3, -0.2, 1.1, 0.4, -0.9];
        let hp = GpHyperparams::from_natural(1.2, 0.7, 0.1).unwrap();
        let head = MaskHead::prior(vec![0.1, -0.4, 0.3], 0.15).unwrap();
        let obj = objective(&t, &y, &hp, &head, KernelKind::Matern32).unwrap();
        let mll = gp::log_marginal_likelihood(
            &pooling::pool(&t, &head).unwrap(),
            &y,
            &hp,
            KernelKind::Matern32,
        )
        .unwrap();
        let lp = pooling::half_cauchy_log_prior(&head).unwrap().0;
        assert!((obj - (mll + lp)).abs() < 1e-12);
    }

    #[test]
    fn prior_term_decreases_in_weight() {
        // Grid over w with the pooled features held fixed: identical rows.
        let t = EmbeddingTensor::new(3, 2, 1, vec![0.1, 0.1, 0.5, 0.5, -0.4, -0.4]).unwrap();
        let y = [0.2, 0.9, -0.7];
        let hp = GpHyperparams::from_natural(1.0, 1.0, 0.1).unwrap();
        let mut last = f64::INFINITY;
        for raw0 in [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
            let head = MaskHead::prior(vec![raw0, 0.0], 0.15).unwrap();
            let v = objective(&t, &y, &hp, &head, KernelKind::Matern32).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn fit_ascends_and_is_deterministic() {
        let t = random_tensor(5, 3, 2, 3);
        let y = [70.1, 70.9, 69.4, 71.2, 70.0];
        let config = TrainConfig {
            max_iters: 200,
            restarts: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = fit(&t, &y, &config).unwrap();
        let b = fit(&t, &y, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.objective >= a.trace[0].objective);
        assert!(a.trace.windows(2).all(|w| w[1].objective >= w[0].objective));
    }

    #[test]
    fn fit_rejects_tiny_data() {
        let t = random_tensor(1, 2, 2, 4);
        assert!(matches!(fit(&t, &[1.0], &TrainConfig::default()), Err(Error::Training(_))));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            restarts: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            tolerance: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            variant: MaskVariant::Prior,
            prior_scale: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn restricted_needs_single_mutants() {
        let t = random_tensor(4, 2, 2, 5);
        let y = [1.0, 2.0, 3.0, 4.0];
        let err = fit_restricted(&t, &y, &[0, 2, 3, 2], &TrainConfig::default());
        assert!(matches!(err, Err(Error::Training(_))));
    }

    #[test]
    fn trace_csv() {
        let s = format_trace(&[TraceRow {
            iter: 0,
            objective: -1.5,
            grad_norm: 0.25,
        }]);
        assert_eq!(s, "iter,objective,grad_norm\n0,-1.5,0.25\n");
    }
}
