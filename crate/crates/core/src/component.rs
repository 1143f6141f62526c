//! Sparsity patterns and the sparse components supported on them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::linalg::{leading_eig, SymmetricMatrix};

/// Strictly increasing set of variable indices, stored 0-based.
///
/// Everything user facing (serialization, CLI, reports) is 1-based; use
/// [`SparsityPattern::from_one_based`] and [`SparsityPattern::one_based`] at
/// those boundaries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PatternRepr", into = "PatternRepr")]
pub struct SparsityPattern {
    indices: Vec<usize>,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    indices: Vec<usize>,
    n: usize,
}

impl TryFrom<PatternRepr> for SparsityPattern {
    type Error = SpcaError;

    fn try_from(r: PatternRepr) -> Result<Self> {
        SparsityPattern::from_one_based(&r.indices, r.n)
    }
}

impl From<SparsityPattern> for PatternRepr {
    fn from(p: SparsityPattern) -> Self {
        PatternRepr {
            indices: p.one_based(),
            n: p.n,
        }
    }
}

impl SparsityPattern {
    /// Builds a pattern from 0-based indices in any order; duplicates and
    /// out-of-range indices are rejected.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(SpcaError::InvalidPattern(format!(
                "duplicate index {}",
                w[0] + 1
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(SpcaError::InvalidPattern(format!(
                    "index {} exceeds dimension {n}",
                    last + 1
                )));
            }
        }
        Ok(Self { indices, n })
    }

    pub fn from_one_based(indices: &[usize], n: usize) -> Result<Self> {
        if indices.contains(&0) {
            return Err(SpcaError::InvalidPattern(
                "indices are 1-based; 0 is not a valid index".into(),
            ));
        }
        Self::new(indices.iter().map(|i| i - 1).collect(), n)
    }

    pub fn empty(n: usize) -> Self {
        Self {
            indices: Vec::new(),
            n,
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            n,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Indices not in the pattern.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.n).filter(|i| !self.contains(*i)).collect()
    }

    pub fn is_subset_of(&self, other: &SparsityPattern) -> bool {
        self.indices.iter().all(|i| other.contains(*i))
    }

    /// The pattern with one more index.
    pub fn with(&self, i: usize) -> Result<Self> {
        let mut idx = self.indices.clone();
        idx.push(i);
        Self::new(idx, self.n)
    }
}

/// A loading vector `z` with its support and explained variance `z^T Sigma z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseComponent {
    pub loadings: Vec<f64>,
    pub support: SparsityPattern,
    pub variance: f64,
    /// `variance - rho * |support|` when the component was produced under a penalty.
    pub penalized_objective: Option<f64>,
}

impl SparseComponent {
    pub fn zero(n: usize, rho: Option<f64>) -> Self {
        Self {
            loadings: vec![0.0; n],
            support: SparsityPattern::empty(n),
            variance: 0.0,
            penalized_objective: rho.map(|_| 0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.loadings)
    }

    pub fn cardinality(&self) -> usize {
        self.support.len()
    }

    /// Number of exactly nonzero loadings (can be below `cardinality` when a
    /// pattern entry carries a zero loading).
    pub fn nonzeros(&self) -> usize {
        self.loadings.iter().filter(|v| **v != 0.0).count()
    }

    /// Re-evaluates the penalized objective at a different penalty.
    pub fn objective_at(&self, rho: f64) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.variance - rho * self.cardinality() as f64
        }
    }
}

/// Best unit vector supported on `pattern`: the leading eigenvector of the
/// principal submatrix padded with zeros. The variance is that submatrix's
/// largest eigenvalue. An empty pattern yields the zero component.
pub fn pattern_solution(
    sigma: &SymmetricMatrix,
    pattern: &SparsityPattern,
    rho: f64,
) -> Result<SparseComponent> {
    let n = sigma.n();
    if pattern.n() != n {
        return Err(SpcaError::DimensionMismatch {
            expected: n,
            got: pattern.n(),
        });
    }
    if pattern.is_empty() {
        return Ok(SparseComponent::zero(n, Some(rho)));
    }
    let sub = sigma.principal_submatrix(pattern.indices());
    let (value, vec) = leading_eig(&sub)?;
    let mut loadings = vec![0.0; n];
    for (pos, &i) in pattern.indices().iter().enumerate() {
        loadings[i] = vec[pos];
    }
    Ok(SparseComponent {
        loadings,
        support: pattern.clone(),
        variance: value,
        penalized_objective: Some(value - rho * pattern.len() as f64),
    })
}
