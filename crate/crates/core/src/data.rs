//! In-memory dataset types: embedding tensors, target tables and splits.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-residue embeddings for a batch of sequences, stored row-major as
/// `[sequence][position][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    n_sequences: usize,
    n_positions: usize,
    n_dims: usize,
    values: Vec<f64>,
}

impl EmbeddingTensor {
    pub fn new(
        n_sequences: usize,
        n_positions: usize,
        n_dims: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if n_sequences == 0 || n_positions == 0 || n_dims == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be >= 1, got {n_sequences}x{n_positions}x{n_dims}"
            )));
        }
        let expected = n_sequences
            .checked_mul(n_positions)
            .and_then(|v| v.checked_mul(n_dims))
            .ok_or_else(|| Error::Shape("tensor dimensions overflow".into()))?;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} values for {n_sequences}x{n_positions}x{n_dims}, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite tensor value {} at flat index {i}",
                values[i]
            )));
        }
        Ok(Self {
            n_sequences,
            n_positions,
            n_dims,
            values,
        })
    }

    pub fn zeros(n_sequences: usize, n_positions: usize, n_dims: usize) -> Result<Self> {
        Self::new(
            n_sequences,
            n_positions,
            n_dims,
            vec![0.0; n_sequences * n_positions * n_dims],
        )
    }

    pub fn n_sequences(&self) -> usize {
        self.n_sequences
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, seq: usize, pos: usize, dim: usize) -> f64 {
        self.values[(seq * self.n_positions + pos) * self.n_dims + dim]
    }

    /// Embedding vector of one position of one sequence.
    #[inline]
    pub fn position(&self, seq: usize, pos: usize) -> &[f64] {
        let start = (seq * self.n_positions + pos) * self.n_dims;
        &self.values[start..start + self.n_dims]
    }

    /// All `P x M` values of one sequence.
    #[inline]
    pub fn sequence(&self, seq: usize) -> &[f64] {
        let len = self.n_positions * self.n_dims;
        &self.values[seq * len..(seq + 1) * len]
    }

    /// New tensor holding the given sequences, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.n_positions * self.n_dims);
        for &i in indices {
            if i >= self.n_sequences {
                return Err(Error::Shape(format!(
                    "sequence index {i} out of range for {} sequences",
                    self.n_sequences
                )));
            }
            values.extend_from_slice(self.sequence(i));
        }
        Self::new(indices.len(), self.n_positions, self.n_dims, values)
    }
}

/// Observed targets with per-sequence mutation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
    pub mutation_counts: Vec<u32>,
}

impl TargetTable {
    pub fn new(ids: Vec<String>, values: Vec<f64>, mutation_counts: Vec<u32>) -> Result<Self> {
        if ids.len() != values.len() || ids.len() != mutation_counts.len() {
            return Err(Error::Shape(format!(
                "target columns disagree in length: {} ids, {} values, {} counts",
                ids.len(),
                values.len(),
                mutation_counts.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate id {id:?}")));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite target for id {:?}", ids[i])));
        }
        Ok(Self {
            ids,
            values,
            mutation_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check_paired(&self, tensor: &EmbeddingTensor) -> Result<()> {
        if self.len() != tensor.n_sequences() {
            return Err(Error::Shape(format!(
                "{} targets for {} embedded sequences",
                self.len(),
                tensor.n_sequences()
            )));
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut values = Vec::with_capacity(indices.len());
        let mut counts = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!(
                    "target index {i} out of range for {} rows",
                    self.len()
                )));
            }
            ids.push(self.ids[i].clone());
            values.push(self.values[i]);
            counts.push(self.mutation_counts[i]);
        }
        Self::new(ids, values, counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    OneMutShuffle,
    UniformShuffle,
    Holdout,
    Explicit,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::OneMutShuffle => "one-mut-shuffle",
            SplitKind::UniformShuffle => "uniform-shuffle",
            SplitKind::Holdout => "holdout",
            SplitKind::Explicit => "explicit",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-mut-shuffle" | "1mut" => Ok(SplitKind::OneMutShuffle),
            "uniform-shuffle" | "uniform" => Ok(SplitKind::UniformShuffle),
            "holdout" => Ok(SplitKind::Holdout),
            "explicit" => Ok(SplitKind::Explicit),
            other => Err(Error::Config(format!("unknown split kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train / validation / test partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub seed: u64,
    #[serde(rename = "train")]
    pub train_indices: Vec<usize>,
    #[serde(rename = "validation")]
    pub validation_indices: Vec<usize>,
    #[serde(rename = "test")]
    pub test_indices: Vec<usize>,
}

impl SplitSpec {
    /// Checks disjointness, range and a non-empty training set.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train_indices.is_empty() {
            return Err(Error::Data("split has an empty training set".into()));
        }
        let mut seen = HashSet::new();
        for &i in self
            .train_indices
            .iter()
            .chain(&self.validation_indices)
            .chain(&self.test_indices)
        {
            if i >= n {
                return Err(Error::Data(format!("split index {i} out of range for {n} rows")));
            }
            if !seen.insert(i) {
                return Err(Error::Data(format!("split index {i} appears more than once")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(EmbeddingTensor::new(0, 1, 1, vec![]).is_err());
        assert!(EmbeddingTensor::new(2, 3, 4, vec![0.0; 23]).is_err());
        assert!(EmbeddingTensor::new(1, 1, 1, vec![f64::NAN]).is_err());
        let t = EmbeddingTensor::new(2, 3, 4, (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(1, 2, 3), 23.0);
        assert_eq!(t.position(1, 0), &[12.0, 13.0, 14.0, 15.0]);
        let s = t.select(&[1]).unwrap();
        assert_eq!(s.values(), t.sequence(1));
    }

    #[test]
    fn targets_reject_duplicates() {
        let err = TargetTable::new(
            vec!["a".into(), "a".into()],
            vec![1.0, 2.0],
            vec![0, 1],
        );
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn split_validation() {
        let mut s = SplitSpec {
            kind: SplitKind::Explicit,
            seed: 0,
            train_indices: vec![0, 1],
            validation_indices: vec![2],
            test_indices: vec![3],
        };
        s.validate(4).unwrap();
        s.test_indices = vec![1];
        assert!(s.validate(4).is_err());
        s.test_indices = vec![9];
        assert!(s.validate(4).is_err());
        s.test_indices.clear();
        s.train_indices.clear();
        assert!(s.validate(4).is_err());
    }
}
