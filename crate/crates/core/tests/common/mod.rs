#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spgp::{EmbeddingTensor, GpHyperparams, KernelKind, MaskHead, MaskVariant};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, n: usize, p: usize, m: usize) -> EmbeddingTensor {
    let values = (0..n * p * m).map(|_| gauss(rng)).collect();
    EmbeddingTensor::new(n, p, m, values).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

pub fn random_head(rng: &mut ChaCha8Rng, variant: MaskVariant, p: usize) -> MaskHead {
    match variant {
        MaskVariant::Mean => MaskHead::mean(),
        MaskVariant::Prior => {
            let scale = rng.random_range(0.05..1.0);
            MaskHead::prior(random_vec(rng, p), scale).unwrap()
        }
        v => MaskHead::new(v, random_vec(rng, p), None).unwrap(),
    }
}

/// Written out from the closed forms, independent of the library kernels.
pub fn kernel_oracle(r: f64, hp: &GpHyperparams, kind: KernelKind) -> f64 {
    let (sf2, l) = (hp.sigma_f2(), hp.sigma_l());
    match kind {
        KernelKind::Matern32 => {
            let s = 3f64.sqrt() * r / l;
            sf2 * (1.0 + s) * (-s).exp()
        }
        KernelKind::Matern52 => {
            let s = 5f64.sqrt() * r / l;
            sf2 * (1.0 + s + 5.0 * r * r / (3.0 * l * l)) * (-s).exp()
        }
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// Posterior mean, variance and marginal log-likelihood through an explicit
/// LU inverse and determinant of `K + (noise + jitter) I`.
pub struct DenseOracle {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mll: f64,
}

pub fn dense_oracle(
    x: &[Vec<f64>],
    y: &[f64],
    z: &[Vec<f64>],
    hp: &GpHyperparams,
    kind: KernelKind,
    jitter: f64,
) -> DenseOracle {
    let n = x.len();
    let mut ky = DMatrix::from_fn(n, n, |i, j| kernel_oracle(dist(&x[i], &x[j]), hp, kind));
    for i in 0..n {
        ky[(i, i)] += hp.sigma_eps2() + jitter;
    }
    let det = ky.clone().lu().determinant();
    let inv = ky.try_inverse().expect("invertible");
    let yv = DVector::from_column_slice(y);
    let mll = -0.5 * (yv.transpose() * &inv * &yv)[(0, 0)]
        - 0.5 * det.ln()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut mean = Vec::new();
    let mut variance = Vec::new();
    for zi in z {
        let ks = DVector::from_fn(n, |j, _| kernel_oracle(dist(zi, &x[j]), hp, kind));
        mean.push((ks.transpose() * &inv * &yv)[(0, 0)]);
        variance.push(hp.sigma_f2() - (ks.transpose() * &inv * &ks)[(0, 0)]);
    }
    DenseOracle {
        mean,
        variance,
        mll,
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}
