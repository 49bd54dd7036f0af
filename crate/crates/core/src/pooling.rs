//! Positional pooling heads.
//!
//! Each head turns a `P x M` per-residue embedding into one `M`-vector as a
//! convex combination of the position vectors. The weights come from a raw
//! parameter vector of length `P`:
//!
//! | variant   | normalized weight                     |
//! |-----------|---------------------------------------|
//! | `mean`    | `1 / P`                               |
//! | `softmax` | `exp(raw_p) / sum exp(raw)`           |
//! | `sigmoid` | `S(raw_p) / sum S(raw)`               |
//! | `prior`   | `w_p / sum w`, with `w_p = exp(raw_p)` |
//!
//! The prior variant additionally carries a Half-Cauchy(0, sigma) log-density
//! on the positive weights `w_p`, added to the training objective.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTensor;
use crate::error::{Error, Result};

/// Default threshold below which a normalized weight counts as zero.
pub const SPARSITY_THRESHOLD: f64 = 1e-5;

/// Standard deviation of the raw-parameter initialization.
pub const INIT_RAW_SD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskVariant {
    Mean,
    Softmax,
    Sigmoid,
    Prior,
}

impl MaskVariant {
    pub const ALL: [MaskVariant; 4] = [
        MaskVariant::Mean,
        MaskVariant::Softmax,
        MaskVariant::Sigmoid,
        MaskVariant::Prior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskVariant::Mean => "mean",
            MaskVariant::Softmax => "softmax",
            MaskVariant::Sigmoid => "sigmoid",
            MaskVariant::Prior => "prior",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != MaskVariant::Mean
    }
}

impl std::str::FromStr for MaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "baseline" => Ok(MaskVariant::Mean),
            "softmax" | "learned" => Ok(MaskVariant::Softmax),
            "sigmoid" => Ok(MaskVariant::Sigmoid),
            "prior" => Ok(MaskVariant::Prior),
            other => Err(Error::Config(format!("unknown mask variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for MaskVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A pooling variant plus its raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskHead {
    variant: MaskVariant,
    raw_params: Vec<f64>,
    prior_scale: Option<f64>,
}

impl MaskHead {
    pub fn mean() -> Self {
        Self {
            variant: MaskVariant::Mean,
            raw_params: Vec::new(),
            prior_scale: None,
        }
    }

    pub fn softmax(raw_params: Vec<f64>) -> Result<Self> {
        Self::new(MaskVariant::Softmax, raw_params, None)
    }

    pub fn sigmoid(raw_params: Vec<f64>) -> Result<Self> {
        Self::new(MaskVariant::Sigmoid, raw_params, None)
    }

    pub fn prior(raw_params: Vec<f64>, scale: f64) -> Result<Self> {
        Self::new(MaskVariant::Prior, raw_params, Some(scale))
    }

    pub fn new(variant: MaskVariant, raw_params: Vec<f64>, prior_scale: Option<f64>) -> Result<Self> {
        match variant {
            MaskVariant::Mean => {
                if !raw_params.is_empty() {
                    return Err(Error::Config("mean pooling takes no parameters".into()));
                }
            }
            _ => {
                if raw_params.is_empty() {
                    return Err(Error::Config(format!("{variant} head needs raw parameters")));
                }
                if raw_params.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("non-finite mask parameter".into()));
                }
            }
        }
        let prior_scale = match (variant, prior_scale) {
            (MaskVariant::Prior, Some(s)) if s > 0.0 && s.is_finite() => Some(s),
            (MaskVariant::Prior, Some(s)) => {
                return Err(Error::Config(format!("prior scale must be positive, got {s}")))
            }
            (MaskVariant::Prior, None) => {
                return Err(Error::Config("prior head needs a prior scale".into()))
            }
            _ => None,
        };
        Ok(Self {
            variant,
            raw_params,
            prior_scale,
        })
    }

    /// Head with raw parameters drawn i.i.d. from `Normal(0, 0.01^2)`, i.e.
    /// close to mean pooling.
    pub fn init<R: Rng + ?Sized>(
        variant: MaskVariant,
        n_positions: usize,
        prior_scale: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if variant == MaskVariant::Mean {
            return Ok(Self::mean());
        }
        let normal = Normal::new(0.0, INIT_RAW_SD).expect("valid normal");
        let raw = (0..n_positions).map(|_| normal.sample(rng)).collect();
        Self::new(variant, raw, prior_scale)
    }

    pub fn variant(&self) -> MaskVariant {
        self.variant
    }

    pub fn raw_params(&self) -> &[f64] {
        &self.raw_params
    }

    pub fn prior_scale(&self) -> Option<f64> {
        self.prior_scale
    }

    pub fn with_raw_params(&self, raw_params: Vec<f64>) -> Result<Self> {
        Self::new(self.variant, raw_params, self.prior_scale)
    }

    pub fn n_params(&self) -> usize {
        self.raw_params.len()
    }

    fn check_positions(&self, n_positions: usize) -> Result<()> {
        if self.variant != MaskVariant::Mean && self.raw_params.len() != n_positions {
            return Err(Error::Shape(format!(
                "{} head has {} parameters but the tensor has {n_positions} positions",
                self.variant,
                self.raw_params.len()
            )));
        }
        Ok(())
    }
}

/// Pooled representation, one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures(pub DMatrix<f64>);

impl PooledFeatures {
    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Non-negative pooling weights summing to one.
pub fn normalized_weights(head: &MaskHead, n_positions: usize) -> Result<Vec<f64>> {
    head.check_positions(n_positions)?;
    match head.variant {
        MaskVariant::Mean => Ok(vec![1.0 / n_positions as f64; n_positions]),
        MaskVariant::Softmax | MaskVariant::Prior => Ok(softmax(&head.raw_params)),
        MaskVariant::Sigmoid => {
            let s: Vec<f64> = head.raw_params.iter().map(|&r| sigmoid(r)).collect();
            let sum: f64 = s.iter().sum();
            if !(sum > 0.0) || !sum.is_finite() {
                return Err(Error::DegenerateMask(format!(
                    "sigmoid weights sum to {sum}"
                )));
            }
            Ok(s.into_iter().map(|v| v / sum).collect())
        }
    }
}

pub(crate) fn pool_with_weights(tensor: &EmbeddingTensor, weights: &[f64]) -> PooledFeatures {
    let (n, p, m) = (tensor.n_sequences(), tensor.n_positions(), tensor.n_dims());
    debug_assert_eq!(weights.len(), p);
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut row = vec![0.0; m];
        for (pos, &w) in weights.iter().enumerate() {
            for (acc, &x) in row.iter_mut().zip(tensor.position(i, pos)) {
                *acc += w * x;
            }
        }
        for (d, v) in row.into_iter().enumerate() {
            out[(i, d)] = v;
        }
    }
    PooledFeatures(out)
}

pub fn pool(tensor: &EmbeddingTensor, head: &MaskHead) -> Result<PooledFeatures> {
    let weights = normalized_weights(head, tensor.n_positions())?;
    Ok(pool_with_weights(tensor, &weights))
}

/// Vector-Jacobian product of [`pool`] with respect to the raw mask
/// parameters: `sum_{n,m} cotangent[n,m] * d pooled[n,m] / d raw`.
pub fn pool_jacobian_vec(
    tensor: &EmbeddingTensor,
    head: &MaskHead,
    cotangent: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if head.variant == MaskVariant::Mean {
        return Err(Error::NoParameters);
    }
    let (n, p, m) = (tensor.n_sequences(), tensor.n_positions(), tensor.n_dims());
    head.check_positions(p)?;
    if cotangent.nrows() != n || cotangent.ncols() != m {
        return Err(Error::Shape(format!(
            "cotangent is {}x{}, pooled features are {n}x{m}",
            cotangent.nrows(),
            cotangent.ncols()
        )));
    }

    // Gradient with respect to the normalized weights.
    let mut s = vec![0.0; p];
    for i in 0..n {
        for (pos, acc) in s.iter_mut().enumerate() {
            *acc += tensor
                .position(i, pos)
                .iter()
                .enumerate()
                .map(|(d, x)| cotangent[(i, d)] * x)
                .sum::<f64>();
        }
    }

    let weights = normalized_weights(head, p)?;
    let s_bar: f64 = weights.iter().zip(&s).map(|(w, v)| w * v).sum();

    let grad = match head.variant {
        MaskVariant::Softmax | MaskVariant::Prior => weights
            .iter()
            .zip(&s)
            .map(|(w, v)| w * (v - s_bar))
            .collect(),
        MaskVariant::Sigmoid => {
            let u: Vec<f64> = head.raw_params.iter().map(|&r| sigmoid(r)).collect();
            let total: f64 = u.iter().sum();
            u.iter()
                .zip(&s)
                .map(|(u, v)| u * (1.0 - u) * (v - s_bar) / total)
                .collect()
        }
        MaskVariant::Mean => unreachable!(),
    };
    Ok(grad)
}

/// Half-Cauchy(0, sigma) log-density summed over the positive weights
/// `w_p = exp(raw_p)`, and its gradient with respect to `raw`.
///
/// No change-of-variables term is included: the density is on `w`.
pub fn half_cauchy_log_prior(head: &MaskHead) -> Result<(f64, Vec<f64>)> {
    if head.variant != MaskVariant::Prior {
        return Err(Error::Config(format!(
            "half-Cauchy prior applies to the prior variant, not {}",
            head.variant
        )));
    }
    let sigma = head
        .prior_scale
        .filter(|s| *s > 0.0)
        .ok_or_else(|| Error::Config("prior scale must be positive".into()))?;
    let log_norm = LN_2 - PI.ln() - sigma.ln();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(head.raw_params.len());
    for &raw in &head.raw_params {
        let w = raw.exp();
        let z = w / sigma;
        value += log_norm - z.mul_add(z, 1.0).ln();
        // d/draw of -ln(1 + w^2/sigma^2), with dw/draw = w
        grad.push(-2.0 * z * z / z.mul_add(z, 1.0));
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub zero_count: usize,
    pub threshold: f64,
    pub weights: Vec<f64>,
}

/// Counts normalized weights strictly below `threshold`.
pub fn sparsity_report(head: &MaskHead, n_positions: usize, threshold: f64) -> Result<SparsityReport> {
    let weights = normalized_weights(head, n_positions)?;
    let zero_count = weights.iter().filter(|&&w| w < threshold).count();
    Ok(SparsityReport {
        zero_count,
        threshold,
        weights,
    })
}
