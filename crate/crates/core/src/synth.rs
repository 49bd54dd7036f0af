//! Planted-mask synthetic datasets.
//!
//! Every sequence is a wild type with a few substituted positions. A
//! substitution at position `p` moves that position's embedding by a
//! position-specific shift plus a smaller per-residue offset, so mutations
//! at the same site land close together in embedding space. Targets depend
//! only on a planted support of `k` positions.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTensor, TargetTable};
use crate::error::{Error, Result};

/// Target level of the wild type, in degrees.
pub const WILD_TYPE_TM: f64 = 65.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum NoiseLevel {
    /// Standard deviation in target units.
    Absolute(f64),
    /// Fraction of the noise-free target standard deviation.
    Relative(f64),
}

impl NoiseLevel {
    fn value(self) -> f64 {
        match self {
            NoiseLevel::Absolute(v) | NoiseLevel::Relative(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetModel {
    /// `y = g(mean of support embeddings)`, `g` a random cosine-feature
    /// expansion.
    #[default]
    CosineFeatures,
    /// `y = wild type + sum of positive per-substitution effects`; support
    /// substitutions carry large effects, the rest small ones.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_sequences: usize,
    pub n_positions: usize,
    pub n_dims: usize,
    pub support_size: usize,
    /// Explicit support; drawn from `function_seed` when absent.
    pub support: Option<Vec<usize>>,
    pub function_seed: u64,
    pub noise: NoiseLevel,
    pub target_model: TargetModel,
    pub max_mutations: u32,
    /// Fraction of non-wild-type sequences with exactly one mutation.
    pub single_fraction: f64,
    pub include_wild_type: bool,
    /// Residue alternatives per position.
    pub n_alternatives: usize,
    /// Scale of the position-specific substitution shift.
    pub site_shift: f64,
    /// Scale of the per-residue offset around the site shift.
    pub residue_spread: f64,
    /// Number of cosine features in `g`.
    pub n_features: usize,
    /// Length-scale of `g` in pooled-support space.
    pub function_length_scale: f64,
    /// Size of the fixed hold-out test set.
    pub test_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_sequences: 120,
            n_positions: 50,
            n_dims: 8,
            support_size: 5,
            support: None,
            function_seed: 0,
            noise: NoiseLevel::Relative(0.1),
            target_model: TargetModel::CosineFeatures,
            max_mutations: 8,
            single_fraction: 0.25,
            include_wild_type: true,
            n_alternatives: 4,
            site_shift: 1.0,
            residue_spread: 0.25,
            n_features: 32,
            function_length_scale: 1.0,
            test_size: 24,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 || self.n_positions == 0 || self.n_dims == 0 {
            return Err(Error::Config("sequence, position and dim counts must be >= 1".into()));
        }
        if self.support_size == 0 {
            return Err(Error::Config("support must contain at least one position".into()));
        }
        if self.support_size > self.n_positions {
            return Err(Error::Config("support exceeds positions".into()));
        }
        if let Some(s) = &self.support {
            if s.len() != self.support_size {
                return Err(Error::Config(format!(
                    "explicit support has {} entries, support_size is {}",
                    s.len(),
                    self.support_size
                )));
            }
            if s.iter().any(|&p| p >= self.n_positions) {
                return Err(Error::Config("support exceeds positions".into()));
            }
            if s.iter().collect::<BTreeSet<_>>().len() != s.len() {
                return Err(Error::Config("explicit support has duplicates".into()));
            }
        }
        if !(self.noise.value() >= 0.0) || !self.noise.value().is_finite() {
            return Err(Error::Config("noise must be a finite value >= 0".into()));
        }
        if self.max_mutations == 0 || self.max_mutations as usize > self.n_positions {
            return Err(Error::Config(format!(
                "max_mutations must be in 1..={}",
                self.n_positions
            )));
        }
        if !(0.0..=1.0).contains(&self.single_fraction) {
            return Err(Error::Config("single_fraction must be in [0, 1]".into()));
        }
        if self.n_alternatives == 0 || self.n_features == 0 {
            return Err(Error::Config("n_alternatives and n_features must be >= 1".into()));
        }
        if !(self.function_length_scale > 0.0) {
            return Err(Error::Config("function length-scale must be > 0".into()));
        }
        if self.test_size >= self.n_sequences {
            return Err(Error::Config("test set must leave sequences for training".into()));
        }
        Ok(())
    }
}

/// Provenance for a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub support: Vec<usize>,
    /// Substituted `(position, residue)` pairs per sequence.
    pub mutations: Vec<Vec<(usize, usize)>>,
    pub test_indices: Vec<usize>,
    pub signal_sd: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub tensor: EmbeddingTensor,
    pub targets: TargetTable,
    pub meta: SyntheticMeta,
}

/// The target function and embedding alphabet, fixed by `function_seed`.
struct Landscape {
    support: Vec<usize>,
    wild_type: Vec<f64>,
    /// `[position][residue]` -> embedding of the substituted position.
    alternatives: Vec<Vec<Vec<f64>>>,
    /// `[position][residue]` -> additive effect.
    effects: Vec<Vec<f64>>,
    omegas: Vec<Vec<f64>>,
    phases: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl Landscape {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.function_seed);
        let (p, m) = (spec.n_positions, spec.n_dims);

        let mut support = match &spec.support {
            Some(s) => s.clone(),
            None => sample(&mut rng, p, spec.support_size).into_vec(),
        };
        support.sort_unstable();

        let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let wild_type: Vec<f64> = (0..p * m).map(|_| gauss(&mut rng)).collect();
        let alternatives = (0..p)
            .map(|pos| {
                let shift: Vec<f64> = (0..m).map(|_| spec.site_shift * gauss(&mut rng)).collect();
                (0..spec.n_alternatives)
                    .map(|_| {
                        (0..m)
                            .map(|d| {
                                wild_type[pos * m + d] + shift[d] + spec.residue_spread * gauss(&mut rng)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let in_support: BTreeSet<usize> = support.iter().copied().collect();
        let effects = (0..p)
            .map(|pos| {
                (0..spec.n_alternatives)
                    .map(|_| {
                        if in_support.contains(&pos) {
                            rng.random_range(0.5..1.5)
                        } else {
                            rng.random_range(0.05..0.3)
                        }
                    })
                    .collect()
            })
            .collect();

        let omega_dist = Normal::new(0.0, 1.0 / spec.function_length_scale).expect("valid normal");
        let f = spec.n_features;
        let omegas = (0..f)
            .map(|_| (0..m).map(|_| omega_dist.sample(&mut rng)).collect())
            .collect();
        let phases = (0..f)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let amp = (2.0 / f as f64).sqrt();
        let amplitudes = (0..f).map(|_| amp * gauss(&mut rng)).collect();

        Self {
            support,
            wild_type,
            alternatives,
            effects,
            omegas,
            phases,
            amplitudes,
        }
    }

    fn cosine_target(&self, tensor: &EmbeddingTensor, seq: usize) -> f64 {
        let m = tensor.n_dims();
        let mut z = vec![0.0; m];
        for &pos in &self.support {
            for (acc, x) in z.iter_mut().zip(tensor.position(seq, pos)) {
                *acc += x;
            }
        }
        let k = self.support.len() as f64;
        z.iter_mut().for_each(|v| *v /= k);
        let g: f64 = self
            .omegas
            .iter()
            .zip(&self.phases)
            .zip(&self.amplitudes)
            .map(|((w, b), a)| a * (w.iter().zip(&z).map(|(w, z)| w * z).sum::<f64>() + b).cos())
            .sum();
        WILD_TYPE_TM + g
    }

    fn additive_target(&self, mutations: &[(usize, usize)]) -> f64 {
        WILD_TYPE_TM + mutations.iter().map(|&(p, a)| self.effects[p][a]).sum::<f64>()
    }
}

/// Builds a tensor from explicit substitution lists.
fn embed(spec: &SyntheticSpec, land: &Landscape, mutations: &[Vec<(usize, usize)>]) -> Result<EmbeddingTensor> {
    let (p, m) = (spec.n_positions, spec.n_dims);
    let mut values = Vec::with_capacity(mutations.len() * p * m);
    for muts in mutations {
        let mut seq = land.wild_type.clone();
        for &(pos, a) in muts {
            seq[pos * m..(pos + 1) * m].copy_from_slice(&land.alternatives[pos][a]);
        }
        values.extend(seq);
    }
    EmbeddingTensor::new(mutations.len(), p, m, values)
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Generates a dataset with the given substitution lists, using the
/// landscape of `spec.function_seed` and noise drawn from `seed`.
pub fn generate_with_mutations(
    spec: &SyntheticSpec,
    mutations: Vec<Vec<(usize, usize)>>,
    seed: u64,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    let land = Landscape::new(spec);
    for muts in &mutations {
        for &(pos, a) in muts {
            if pos >= spec.n_positions || a >= spec.n_alternatives {
                return Err(Error::Config(format!("substitution ({pos}, {a}) out of range")));
            }
        }
    }
    let tensor = embed(spec, &land, &mutations)?;
    let clean: Vec<f64> = match spec.target_model {
        TargetModel::CosineFeatures => (0..mutations.len())
            .map(|i| land.cosine_target(&tensor, i))
            .collect(),
        TargetModel::Additive => mutations.iter().map(|m| land.additive_target(m)).collect(),
    };
    let signal_sd = sd(&clean);
    let noise_sd = match spec.noise {
        NoiseLevel::Absolute(v) => v,
        NoiseLevel::Relative(f) => f * signal_sd,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let values: Vec<f64> = clean
        .iter()
        .map(|v| {
            if noise_sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + noise_sd * z
            } else {
                *v
            }
        })
        .collect();

    let ids = mutations
        .iter()
        .enumerate()
        .map(|(i, m)| if m.is_empty() { format!("wt{i}") } else { format!("seq{i:04}") })
        .collect();
    let counts = mutations.iter().map(|m| m.len() as u32).collect();
    let targets = TargetTable::new(ids, values, counts)?;

    let mut test_rng = ChaCha8Rng::seed_from_u64(seed);
    test_rng.set_stream(2);
    let test_size = spec.test_size.min(mutations.len().saturating_sub(1));
    let mut test_indices = sample(&mut test_rng, mutations.len(), test_size).into_vec();
    test_indices.sort_unstable();

    Ok(SyntheticDataset {
        tensor,
        targets,
        meta: SyntheticMeta {
            spec: spec.clone(),
            seed,
            support: land.support.clone(),
            mutations,
            test_indices,
            signal_sd,
            noise_sd,
        },
    })
}

/// Draws substitution lists for `spec.n_sequences` sequences.
pub fn draw_mutations(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Vec<(usize, usize)>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.n_sequences);
    for i in 0..spec.n_sequences {
        if spec.include_wild_type && i == 0 {
            out.push(Vec::new());
            continue;
        }
        let count = if spec.max_mutations == 1 || rng.random_bool(spec.single_fraction) {
            1
        } else {
            rng.random_range(2..=spec.max_mutations) as usize
        };
        let mut positions = sample(&mut rng, spec.n_positions, count).into_vec();
        positions.sort_unstable();
        out.push(
            positions
                .into_iter()
                .map(|p| (p, rng.random_range(0..spec.n_alternatives)))
                .collect(),
        );
    }
    Ok(out)
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    let mutations = draw_mutations(spec, seed)?;
    generate_with_mutations(spec, mutations, seed)
}

/// Total normalized weight a mask places on the given positions.
pub fn support_weight(weights: &[f64], support: &[usize]) -> f64 {
    support.iter().filter_map(|&p| weights.get(p)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_sequences: 30,
            n_positions: 10,
            n_dims: 3,
            support_size: 3,
            test_size: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn support_only_dependence() {
        let spec = SyntheticSpec {
            noise: NoiseLevel::Absolute(0.0),
            support: Some(vec![1, 4, 7]),
            ..small()
        };
        // identical on the support, different elsewhere
        let muts = vec![vec![(4, 1), (0, 2)], vec![(4, 1), (9, 3), (5, 0)]];
        let d = generate_with_mutations(&spec, muts, 3).unwrap();
        assert_eq!(d.targets.values[0], d.targets.values[1]);
        assert_ne!(d.tensor.sequence(0), d.tensor.sequence(1));
    }

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec {
            noise: NoiseLevel::Absolute(0.0),
            ..small()
        };
        assert_eq!(generate(&spec, 5).unwrap(), generate(&spec, 5).unwrap());
        let noisy = small();
        assert_eq!(generate(&noisy, 5).unwrap(), generate(&noisy, 5).unwrap());
        assert_ne!(generate(&noisy, 5).unwrap(), generate(&noisy, 6).unwrap());
    }

    #[test]
    fn support_larger_than_positions() {
        let spec = SyntheticSpec {
            support_size: 11,
            ..small()
        };
        let err = generate(&spec, 0).unwrap_err();
        assert!(err.to_string().contains("support exceeds positions"));
    }

    #[test]
    fn mutation_structure() {
        let spec = small();
        let d = generate(&spec, 9).unwrap();
        assert_eq!(d.targets.mutation_counts[0], 0);
        assert!(d.targets.mutation_counts[1..]
            .iter()
            .all(|&c| (1..=spec.max_mutations).contains(&c)));
        assert_eq!(d.meta.support.len(), 3);
        assert_eq!(d.meta.test_indices.len(), 5);
        // unmutated positions equal the wild type
        let (pos, _) = d.meta.mutations[1][0];
        let other = (0..10).find(|p| d.meta.mutations[1].iter().all(|(q, _)| q != p)).unwrap();
        assert_eq!(d.tensor.position(1, other), d.tensor.position(0, other));
        assert_ne!(d.tensor.position(1, pos), d.tensor.position(0, pos));
    }

    #[test]
    fn relative_noise() {
        let d = generate(&small(), 2).unwrap();
        assert!((d.meta.noise_sd - 0.1 * d.meta.signal_sd).abs() < 1e-15);
    }

    #[test]
    fn additive_targets() {
        let spec = SyntheticSpec {
            noise: NoiseLevel::Absolute(0.0),
            target_model: TargetModel::Additive,
            ..small()
        };
        let d = generate_with_mutations(&spec, vec![vec![], vec![(2, 0)], vec![(5, 1)], vec![(2, 0), (5, 1)]], 0)
            .unwrap();
        let y = &d.targets.values;
        assert_eq!(y[0], WILD_TYPE_TM);
        assert!(((y[3] - y[0]) - ((y[1] - y[0]) + (y[2] - y[0]))).abs() < 1e-12);
        assert!(y[1] > y[0] && y[2] > y[0]);
    }
}
