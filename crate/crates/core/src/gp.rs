//! Exact Gaussian-process regression on pooled features.
//!
//! Zero-mean prior with a stationary Matérn-family kernel on the Euclidean
//! distance `r` between pooled vectors. Two forms are available:
//!
//! * [`KernelKind::Matern32`] (default): `sf2 (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)`
//! * [`KernelKind::Matern52`]: `sf2 (1 + sqrt(5) r / l + 5 r^2 / (3 l^2)) exp(-sqrt(5) r / l)`
//!
//! All linear algebra goes through a lower Cholesky factor of
//! `K + (noise + jitter) I`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTensor;
use crate::error::{Error, Result};
use crate::pooling::{self, MaskHead, MaskVariant, PooledFeatures};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

/// First jitter tried, relative to the signal variance.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up, relative to the signal variance.
pub const JITTER_MAX: f64 = 1e-4;
/// Negative predictive variances above this are clamped to zero.
pub const VARIANCE_FLOOR: f64 = -1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Matern32,
    Matern52,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Matern32 => "matern32",
            KernelKind::Matern52 => "matern52",
        }
    }

    /// Kernel value from a distance.
    #[inline]
    fn eval(self, r: f64, sf2: f64, l: f64) -> f64 {
        match self {
            KernelKind::Matern32 => {
                let s = SQRT3 * r / l;
                sf2 * (1.0 + s) * (-s).exp()
            }
            KernelKind::Matern52 => {
                let s = SQRT5 * r / l;
                sf2 * (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    /// d k / d log(l) at distance `r`.
    #[inline]
    fn d_log_length(self, r: f64, sf2: f64, l: f64) -> f64 {
        match self {
            KernelKind::Matern32 => {
                let s = SQRT3 * r / l;
                sf2 * s * s * (-s).exp()
            }
            KernelKind::Matern52 => {
                let s = SQRT5 * r / l;
                sf2 * s * s * (1.0 + s) / 3.0 * (-s).exp()
            }
        }
    }

    /// `c(r)` such that `d k(a, b) / d a = -c(r) (a - b)`. Finite at `r = 0`.
    #[inline]
    fn feature_coeff(self, r: f64, sf2: f64, l: f64) -> f64 {
        match self {
            KernelKind::Matern32 => {
                let s = SQRT3 * r / l;
                sf2 * 3.0 / (l * l) * (-s).exp()
            }
            KernelKind::Matern52 => {
                let s = SQRT5 * r / l;
                sf2 * 5.0 / (3.0 * l * l) * (1.0 + s) * (-s).exp()
            }
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matern32" => Ok(KernelKind::Matern32),
            "matern52" => Ok(KernelKind::Matern52),
            other => Err(Error::Config(format!("unknown kernel {other:?}"))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kernel hyperparameters, stored as unconstrained logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub log_sigma_f2: f64,
    pub log_sigma_l: f64,
    pub log_sigma_eps2: f64,
}

impl GpHyperparams {
    pub fn new(log_sigma_f2: f64, log_sigma_l: f64, log_sigma_eps2: f64) -> Result<Self> {
        let hp = Self {
            log_sigma_f2,
            log_sigma_l,
            log_sigma_eps2,
        };
        hp.check()?;
        Ok(hp)
    }

    /// From signal variance, length-scale and noise variance.
    pub fn from_natural(sigma_f2: f64, sigma_l: f64, sigma_eps2: f64) -> Result<Self> {
        Self::new(sigma_f2.ln(), sigma_l.ln(), sigma_eps2.ln())
    }

    pub fn check(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Data(format!("non-finite hyperparameters {self:?}")))
        }
    }

    pub fn sigma_f2(&self) -> f64 {
        self.log_sigma_f2.exp()
    }

    pub fn sigma_l(&self) -> f64 {
        self.log_sigma_l.exp()
    }

    pub fn sigma_eps2(&self) -> f64 {
        self.log_sigma_eps2.exp()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.log_sigma_f2, self.log_sigma_l, self.log_sigma_eps2]
    }
}

pub fn kernel(a: &[f64], b: &[f64], hp: &GpHyperparams, kind: KernelKind) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("kernel inputs of length {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite kernel input".into()));
    }
    Ok(kind.eval(distance(a, b), hp.sigma_f2(), hp.sigma_l()))
}

#[inline]
fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn row_distance(x: &DMatrix<f64>, i: usize, z: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols())
        .map(|d| {
            let diff = x[(i, d)] - z[(j, d)];
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// Symmetric training covariance with the pairwise distances it was built
/// from. `jitter_used` is zero until the matrix has been factorized.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: DMatrix<f64>,
    pub distances: DMatrix<f64>,
    pub jitter_used: f64,
}

pub fn kernel_matrix(x: &PooledFeatures, hp: &GpHyperparams, kind: KernelKind) -> KernelMatrix {
    let x = x.matrix();
    let n = x.nrows();
    let (sf2, l) = (hp.sigma_f2(), hp.sigma_l());
    let mut distances = DMatrix::zeros(n, n);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2;
        for j in 0..i {
            let r = row_distance(x, i, x, j);
            let v = kind.eval(r, sf2, l);
            distances[(i, j)] = r;
            distances[(j, i)] = r;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    KernelMatrix {
        k,
        distances,
        jitter_used: 0.0,
    }
}

/// Cross-covariance `k(Z, X)`, one row per test point.
pub fn cross_kernel(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    hp: &GpHyperparams,
    kind: KernelKind,
) -> DMatrix<f64> {
    let (sf2, l) = (hp.sigma_f2(), hp.sigma_l());
    DMatrix::from_fn(z.nrows(), x.nrows(), |i, j| {
        kind.eval(row_distance(z, i, x, j), sf2, l)
    })
}

/// Cholesky of `K + (noise + jitter) I`, escalating jitter by 10x from
/// `1e-10 sf2` up to `1e-4 sf2`. Writes the jitter into `km`.
fn factorize(km: &mut KernelMatrix, hp: &GpHyperparams) -> Result<DMatrix<f64>> {
    let sf2 = hp.sigma_f2();
    let noise = hp.sigma_eps2();
    let n = km.k.nrows();
    let mut rel = JITTER_START;
    loop {
        let jitter = rel * sf2;
        let mut ky = km.k.clone();
        for i in 0..n {
            ky[(i, i)] += noise + jitter;
        }
        if let Some(chol) = ky.cholesky() {
            km.jitter_used = jitter;
            for i in 0..n {
                km.k[(i, i)] += jitter;
            }
            return Ok(chol.unpack());
        }
        if rel >= JITTER_MAX {
            return Err(Error::Conditioning { jitter });
        }
        rel *= 10.0;
    }
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
}

fn solve_upper_t(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
}

/// `(L L^T)^{-1} b`
fn cho_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_upper_t(l, &solve_lower(l, b))
}

fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn mll_from_parts(l: &DMatrix<f64>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    -0.5 * y.dot(alpha) - 0.5 * log_det_from_factor(l) - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Per-test-point posterior mean and variance of the latent function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= VARIANCE_FLOOR {
        Ok(0.0)
    } else {
        Err(Error::Data(format!("negative predictive variance {v:e}")))
    }
}

/// A conditioned GP: training features, targets and the Cholesky factor of
/// the noisy training covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    kind: KernelKind,
    hypers: GpHyperparams,
    features: DMatrix<f64>,
    targets: DVector<f64>,
    factor: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    pub fn fit(
        features: &PooledFeatures,
        targets: &[f64],
        hypers: GpHyperparams,
        kind: KernelKind,
    ) -> Result<Self> {
        check_targets(features, targets)?;
        let mut km = kernel_matrix(features, &hypers, kind);
        let factor = factorize(&mut km, &hypers)?;
        Ok(Self::from_factor(
            features.matrix().clone(),
            DVector::from_column_slice(targets),
            hypers,
            kind,
            factor,
            km.jitter_used,
        ))
    }

    /// Rebuilds a posterior from a stored lower Cholesky factor.
    pub fn from_factor(
        features: DMatrix<f64>,
        targets: DVector<f64>,
        hypers: GpHyperparams,
        kind: KernelKind,
        factor: DMatrix<f64>,
        jitter: f64,
    ) -> Self {
        let alpha = cho_solve(&factor, &targets);
        Self {
            kind,
            hypers,
            features,
            targets,
            factor,
            alpha,
            jitter,
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn hypers(&self) -> &GpHyperparams {
        &self.hypers
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        mll_from_parts(&self.factor, &self.targets, &self.alpha)
    }

    fn check_dims(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.ncols() != self.features.ncols() {
            return Err(Error::Shape(format!(
                "test features have {} dims, model expects {}",
                z.ncols(),
                self.features.ncols()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, z: &PooledFeatures) -> Result<PredictiveDistribution> {
        let z = z.matrix();
        self.check_dims(z)?;
        let kzx = cross_kernel(z, &self.features, &self.hypers, self.kind);
        let mean = (&kzx * &self.alpha).iter().copied().collect();
        let sf2 = self.hypers.sigma_f2();
        let variance = (0..z.nrows())
            .map(|i| {
                let v = solve_lower(&self.factor, &kzx.row(i).transpose());
                clamp_variance(sf2 - v.norm_squared())
            })
            .collect::<Result<_>>()?;
        Ok(PredictiveDistribution { mean, variance })
    }

    /// Predictive mean, diagonal variance and the full posterior covariance.
    pub fn predict_full(&self, z: &PooledFeatures) -> Result<(PredictiveDistribution, DMatrix<f64>)> {
        let dist = self.predict(z)?;
        let z = z.matrix();
        let kzx = cross_kernel(z, &self.features, &self.hypers, self.kind);
        let v = self
            .factor
            .solve_lower_triangular(&kzx.transpose())
            .expect("cholesky factor has a positive diagonal");
        let kzz = cross_kernel(z, z, &self.hypers, self.kind);
        let mut cov = kzz - v.transpose() * v;
        for (i, var) in dist.variance.iter().enumerate() {
            cov[(i, i)] = *var;
        }
        Ok((dist, cov))
    }
}

fn check_targets(features: &PooledFeatures, targets: &[f64]) -> Result<()> {
    if features.n_rows() == 0 {
        return Err(Error::Shape("no training points".into()));
    }
    if features.n_rows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} targets",
            features.n_rows(),
            targets.len()
        )));
    }
    Ok(())
}

/// `log p(y | X, hp)` computed through the Cholesky factor.
pub fn log_marginal_likelihood(
    x: &PooledFeatures,
    y: &[f64],
    hp: &GpHyperparams,
    kind: KernelKind,
) -> Result<f64> {
    Ok(GpPosterior::fit(x, y, *hp, kind)?.log_marginal_likelihood())
}

/// Objective value and its gradient with respect to the log hyperparameters
/// and the raw mask parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MllGradients {
    pub value: f64,
    pub d_log_sigma_f2: f64,
    pub d_log_sigma_l: f64,
    pub d_log_sigma_eps2: f64,
    /// Absent for mean pooling.
    pub mask: Option<Vec<f64>>,
    pub jitter_used: f64,
}

impl MllGradients {
    pub fn hypers(&self) -> [f64; 3] {
        [self.d_log_sigma_f2, self.d_log_sigma_l, self.d_log_sigma_eps2]
    }
}

/// Marginal log-likelihood of `y` under the pooled features of `tensor` and
/// its analytic gradient.
///
/// With `W = alpha alpha^T - Ky^{-1}`, each hyperparameter gradient is
/// `0.5 tr(W dKy/dtheta)`. The pooled-feature gradient is chained into
/// [`pooling::pool_jacobian_vec`].
pub fn mll_gradients(
    tensor: &EmbeddingTensor,
    head: &MaskHead,
    y: &[f64],
    hp: &GpHyperparams,
    kind: KernelKind,
) -> Result<MllGradients> {
    let features = pooling::pool(tensor, head)?;
    check_targets(&features, y)?;
    let n = y.len();
    let (sf2, l, noise) = (hp.sigma_f2(), hp.sigma_l(), hp.sigma_eps2());

    let mut km = kernel_matrix(&features, hp, kind);
    let factor = factorize(&mut km, hp)?;
    let y = DVector::from_column_slice(y);
    let alpha = cho_solve(&factor, &y);
    let value = mll_from_parts(&factor, &y, &alpha);

    let identity = DMatrix::identity(n, n);
    let linv = factor
        .solve_lower_triangular(&identity)
        .expect("cholesky factor has a positive diagonal");
    let ky_inv = linv.transpose() * &linv;
    let w = &alpha * alpha.transpose() - ky_inv;

    // km.k carries the jitter on its diagonal; jitter scales with sf2.
    let d_log_sigma_f2 = 0.5 * w.component_mul(&km.k).sum();
    let d_log_sigma_eps2 = 0.5 * noise * w.trace();
    let mut d_log_sigma_l = 0.0;
    for i in 0..n {
        for j in 0..i {
            d_log_sigma_l += w[(i, j)] * kind.d_log_length(km.distances[(i, j)], sf2, l);
        }
    }

    let mask = if head.variant() == MaskVariant::Mean {
        None
    } else {
        // cotangent_i = sum_j W_ij c_ij (x_j - x_i)
        let x = features.matrix();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = w[(i, j)] * kind.feature_coeff(km.distances[(i, j)], sf2, l);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let mut cot = &a * x;
        for i in 0..n {
            let row_sum: f64 = a.row(i).sum();
            for d in 0..x.ncols() {
                cot[(i, d)] -= row_sum * x[(i, d)];
            }
        }
        Some(pooling::pool_jacobian_vec(tensor, head, &cot)?)
    };

    Ok(MllGradients {
        value,
        d_log_sigma_f2,
        d_log_sigma_l,
        d_log_sigma_eps2,
        mask,
        jitter_used: km.jitter_used,
    })
}

/// Median of the pairwise Euclidean distances between feature rows; 1.0
/// when there are fewer than two rows or all rows coincide.
pub fn median_pairwise_distance(x: &PooledFeatures) -> f64 {
    let x = x.matrix();
    let n = x.nrows();
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| row_distance(x, i, x, j))
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}
