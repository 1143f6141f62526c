//! Ranking baselines and greedy forward-selection paths.
//!
//! All path methods work from a square root `A` of the covariance
//! (`Sigma = A^T A`, columns `a_i`): the variance of a pattern `I` is
//! `lambda_max(sum_{i in I} a_i a_i^T)`, which equals `lambda_max(Sigma_II)`.
//! Variables are first ordered by decreasing diagonal; every tie in the
//! selection rules goes to the variable that comes first in that order
//! (higher variance, then lower original index).

use std::cmp::Ordering;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::component::{SparseComponent, SparsityPattern};
use crate::error::{Result, SpcaError};
use crate::linalg::{leading_eig, square_root_factor, FactorMatrix, SymmetricMatrix};

pub use crate::component::pattern_solution;

/// Relative slack under which two selection scores count as tied.
const TIE_TOL: f64 = 1e-12;

/// Variables ordered by decreasing diagonal entry; stable on ties.
pub fn sort_by_variance(sigma: &SymmetricMatrix) -> Vec<usize> {
    let diag = sigma.diagonal();
    let mut order: Vec<usize> = (0..diag.len()).collect();
    order.sort_by(|&a, &b| diag[b].partial_cmp(&diag[a]).unwrap_or(Ordering::Equal));
    order
}

/// Variables ordered by decreasing `|x_i|` of the leading eigenvector; ties
/// go to the lower index.
pub fn leading_magnitude_order(sigma: &SymmetricMatrix) -> Result<Vec<usize>> {
    let (_, x) = leading_eig(sigma)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().partial_cmp(&x[a].abs()).unwrap_or(Ordering::Equal));
    Ok(order)
}

/// Keeps the `k` largest-magnitude entries of the leading eigenvector and
/// returns the best component on that support.
pub fn threshold_leading(sigma: &SymmetricMatrix, k: usize) -> Result<SparseComponent> {
    let n = sigma.n();
    if k == 0 || k > n {
        return Err(SpcaError::BadCardinality { k, n });
    }
    let order = leading_magnitude_order(sigma)?;
    let pattern = SparsityPattern::new(order[..k].to_vec(), n)?;
    let mut c = pattern_solution(sigma, &pattern, 0.0)?;
    c.penalized_objective = None;
    Ok(c)
}

/// Nested sequence of patterns `I_1 ⊂ I_2 ⊂ ...` with their components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyPath {
    pub patterns: Vec<SparsityPattern>,
    pub components: Vec<SparseComponent>,
    pub variances: Vec<f64>,
    /// Variables in the order they entered the path.
    pub added: Vec<usize>,
}

impl GreedyPath {
    fn empty() -> Self {
        Self {
            patterns: Vec::new(),
            components: Vec::new(),
            variances: Vec::new(),
            added: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Variance of the pattern with cardinality `k` (1-based position on the path).
    pub fn variance_at(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.variances.get(i).copied())
    }

    pub fn component_at(&self, k: usize) -> Option<&SparseComponent> {
        k.checked_sub(1).and_then(|i| self.components.get(i))
    }

    /// Re-indexes a path computed on a sub-problem back to `n` variables.
    fn lifted(self, map: &[usize], n: usize) -> Result<Self> {
        let lift_pattern =
            |p: &SparsityPattern| SparsityPattern::new(p.indices().iter().map(|&i| map[i]).collect(), n);
        let patterns = self
            .patterns
            .iter()
            .map(lift_pattern)
            .collect::<Result<Vec<_>>>()?;
        let components = self
            .components
            .iter()
            .map(|c| {
                let mut loadings = vec![0.0; n];
                for (i, v) in c.loadings.iter().enumerate() {
                    loadings[map[i]] = *v;
                }
                Ok(SparseComponent {
                    loadings,
                    support: lift_pattern(&c.support)?,
                    variance: c.variance,
                    penalized_objective: c.penalized_objective,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            patterns,
            components,
            variances: self.variances,
            added: self.added.iter().map(|&i| map[i]).collect(),
        })
    }
}

/// Where Gram entries `a_i^T a_j` come from: an explicit covariance, or only
/// the factor (the Gram shortcut for `q < n` data).
enum GramSource<'a> {
    Covariance(&'a SymmetricMatrix),
    Factor(&'a FactorMatrix),
}

impl GramSource<'_> {
    fn submatrix(&self, idx: &[usize]) -> SymmetricMatrix {
        match self {
            GramSource::Covariance(s) => s.principal_submatrix(idx),
            GramSource::Factor(a) => {
                let m = a.as_matrix();
                let k = idx.len();
                let mut out = nalgebra::DMatrix::zeros(k, k);
                for r in 0..k {
                    for c in r..k {
                        let v = m.column(idx[r]).dot(&m.column(idx[c]));
                        out[(r, c)] = v;
                        out[(c, r)] = v;
                    }
                }
                SymmetricMatrix::new(out).expect("square submatrix")
            }
        }
    }

    fn diagonal(&self, n: usize) -> Vec<f64> {
        match self {
            GramSource::Covariance(s) => s.diagonal(),
            GramSource::Factor(a) => (0..n).map(|i| a.column_norm_sq(i)).collect(),
        }
    }
}

/// Candidate-selection rule of a greedy path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Selection {
    /// Exact `lambda_max` for every candidate.
    Full,
    /// `(x_k^T a_i)^2` lower bound, with the exact value checked for the top `width`.
    Approx { width: usize },
}

struct PathBuilder<'a> {
    source: GramSource<'a>,
    factor: &'a FactorMatrix,
    n: usize,
    /// Position of each variable in decreasing-diagonal order.
    rank: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PathBuilder<'a> {
    fn new(source: GramSource<'a>, factor: &'a FactorMatrix) -> Self {
        let n = factor.n();
        let diag = source.diagonal(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| diag[b].partial_cmp(&diag[a]).unwrap_or(Ordering::Equal));
        let mut rank = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            rank[i] = pos;
        }
        Self {
            source,
            factor,
            n,
            rank,
            order,
        }
    }

    fn variance_of(&self, idx: &[usize]) -> Result<f64> {
        let sub = self.source.submatrix(idx);
        Ok(leading_eig(&sub)?.0)
    }

    fn component_on(&self, idx: &[usize]) -> Result<SparseComponent> {
        let pattern = SparsityPattern::new(idx.to_vec(), self.n)?;
        let sub = self.source.submatrix(pattern.indices());
        let (value, vec) = leading_eig(&sub)?;
        let mut loadings = vec![0.0; self.n];
        for (pos, &i) in pattern.indices().iter().enumerate() {
            loadings[i] = vec[pos];
        }
        Ok(SparseComponent {
            loadings,
            support: pattern,
            variance: value,
            penalized_objective: None,
        })
    }

    /// Leading eigenvector of `sum_{i in I} a_i a_i^T`, obtained from the
    /// small `|I| x |I|` problem as `A_I z / ||A_I z||`.
    fn leading_direction(&self, component: &SparseComponent) -> DVector<f64> {
        let x = self.factor.as_matrix() * component.vector();
        let norm = x.norm();
        if norm > 0.0 {
            x / norm
        } else {
            x
        }
    }

    /// Index maximizing `score`, ties to the earliest variable in diagonal order.
    fn argmax(&self, cands: &[(usize, f64)]) -> usize {
        let mut best = cands[0];
        for &(i, s) in &cands[1..] {
            let tol = TIE_TOL * best.1.abs().max(1.0);
            if s > best.1 + tol || ((s - best.1).abs() <= tol && self.rank[i] < self.rank[best.0]) {
                best = (i, s);
            }
        }
        best.0
    }

    fn build(&self, k_target: usize, rule: Selection) -> Result<GreedyPath> {
        if k_target == 0 || k_target > self.n {
            return Err(SpcaError::BadCardinality {
                k: k_target,
                n: self.n,
            });
        }
        let mut path = GreedyPath::empty();
        let mut current = vec![self.order[0]];
        let mut in_set = vec![false; self.n];
        in_set[self.order[0]] = true;
        path.added.push(self.order[0]);
        loop {
            let comp = self.component_on(&current)?;
            path.patterns.push(comp.support.clone());
            path.variances.push(comp.variance);
            if current.len() == k_target {
                path.components.push(comp);
                break;
            }
            let remaining: Vec<usize> = (0..self.n).filter(|i| !in_set[*i]).collect();
            let next = match rule {
                Selection::Full => {
                    let scored = remaining
                        .par_iter()
                        .map(|&i| {
                            let mut idx = current.clone();
                            idx.push(i);
                            self.variance_of(&idx).map(|v| (i, v))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    self.argmax(&scored)
                }
                Selection::Approx { width } => {
                    let x = self.leading_direction(&comp);
                    let proj = self.factor.project(&x);
                    let mut scored: Vec<(usize, f64)> =
                        remaining.iter().map(|&i| (i, proj[i] * proj[i])).collect();
                    if width <= 1 {
                        self.argmax(&scored)
                    } else {
                        scored.sort_by(|a, b| {
                            b.1.partial_cmp(&a.1)
                                .unwrap_or(Ordering::Equal)
                                .then(self.rank[a.0].cmp(&self.rank[b.0]))
                        });
                        scored.truncate(width);
                        let exact = scored
                            .par_iter()
                            .map(|&(i, _)| {
                                let mut idx = current.clone();
                                idx.push(i);
                                self.variance_of(&idx).map(|v| (i, v))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        self.argmax(&exact)
                    }
                }
            };
            path.components.push(comp);
            current.push(next);
            in_set[next] = true;
            path.added.push(next);
        }
        Ok(path)
    }
}

/// Full greedy forward selection: each step adds the variable whose inclusion
/// gives the largest `lambda_max`.
pub fn greedy_full(sigma: &SymmetricMatrix, k_target: usize) -> Result<GreedyPath> {
    let factor = square_root_factor(sigma)?;
    PathBuilder::new(GramSource::Covariance(sigma), &factor).build(k_target, Selection::Full)
}

/// Approximate greedy selection: each step adds the variable maximizing
/// `(x_k^T a_i)^2`, a lower bound on its variance contribution. With
/// `candidate_width > 1` the exact variance is evaluated for that many top
/// candidates and the best is kept.
pub fn greedy_approx(
    sigma: &SymmetricMatrix,
    k_target: usize,
    candidate_width: usize,
) -> Result<GreedyPath> {
    if candidate_width == 0 {
        return Err(SpcaError::InvalidConfig("candidate_width must be >= 1".into()));
    }
    let factor = square_root_factor(sigma)?;
    PathBuilder::new(GramSource::Covariance(sigma), &factor).build(
        k_target,
        Selection::Approx {
            width: candidate_width,
        },
    )
}

/// [`greedy_full`] driven directly by a factor `A` (`q x n`), never forming
/// the full `n x n` covariance.
pub fn greedy_full_from_factor(a: &FactorMatrix, k_target: usize) -> Result<GreedyPath> {
    PathBuilder::new(GramSource::Factor(a), a).build(k_target, Selection::Full)
}

/// [`greedy_approx`] driven directly by a factor `A` (`q x n`).
pub fn greedy_approx_from_factor(
    a: &FactorMatrix,
    k_target: usize,
    candidate_width: usize,
) -> Result<GreedyPath> {
    if candidate_width == 0 {
        return Err(SpcaError::InvalidConfig("candidate_width must be >= 1".into()));
    }
    PathBuilder::new(GramSource::Factor(a), a).build(
        k_target,
        Selection::Approx {
            width: candidate_width,
        },
    )
}

/// Path whose patterns are the prefixes of a fixed variable ordering.
pub fn prefix_path(sigma: &SymmetricMatrix, order: &[usize], k_target: usize) -> Result<GreedyPath> {
    let n = sigma.n();
    if k_target == 0 || k_target > n || order.len() < k_target {
        return Err(SpcaError::BadCardinality { k: k_target, n });
    }
    let mut path = GreedyPath::empty();
    for k in 1..=k_target {
        let pattern = SparsityPattern::new(order[..k].to_vec(), n)?;
        let mut c = pattern_solution(sigma, &pattern, 0.0)?;
        c.penalized_objective = None;
        path.patterns.push(pattern);
        path.variances.push(c.variance);
        path.components.push(c);
        path.added.push(order[k - 1]);
    }
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathMethod {
    GreedyFull,
    GreedyApprox { width: usize },
    /// Prefixes of the leading eigenvector's magnitude ordering.
    Threshold,
    /// Prefixes of the decreasing-diagonal ordering.
    VarianceSort,
}

impl PathMethod {
    pub fn path(&self, sigma: &SymmetricMatrix, k_target: usize) -> Result<GreedyPath> {
        match *self {
            PathMethod::GreedyFull => greedy_full(sigma, k_target),
            PathMethod::GreedyApprox { width } => greedy_approx(sigma, k_target, width),
            PathMethod::Threshold => prefix_path(sigma, &leading_magnitude_order(sigma)?, k_target),
            PathMethod::VarianceSort => prefix_path(sigma, &sort_by_variance(sigma), k_target),
        }
    }
}

/// Indices whose variance `Sigma_ii` exceeds `rho`; the others can never be
/// part of a penalized optimum.
pub fn surviving_variables(sigma: &SymmetricMatrix, rho: f64) -> Vec<usize> {
    sigma
        .diagonal()
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > rho)
        .map(|(i, _)| i)
        .collect()
}

/// Best point of a path for the penalized objective `z^T Sigma z - rho Card(z)`.
///
/// Variables with `Sigma_ii <= rho` are pruned first, the path runs over the
/// survivors, and the path point with the largest `variance - rho k` is
/// returned (smallest `k` on ties). If no point is positive, or nothing
/// survives pruning, the zero component is returned.
pub fn penalized_path(
    sigma: &SymmetricMatrix,
    rho: f64,
    method: PathMethod,
) -> Result<(SparseComponent, GreedyPath)> {
    if !(rho >= 0.0) {
        return Err(SpcaError::InvalidConfig("rho must be >= 0".into()));
    }
    let n = sigma.n();
    let survivors = surviving_variables(sigma, rho);
    if survivors.is_empty() {
        return Ok((SparseComponent::zero(n, Some(rho)), GreedyPath::empty()));
    }
    let sub = sigma.principal_submatrix(&survivors);
    let path = method.path(&sub, survivors.len())?.lifted(&survivors, n)?;
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in path.variances.iter().enumerate() {
        let obj = v - rho * (k + 1) as f64;
        if best.is_none_or(|(_, b)| obj > b) {
            best = Some((k, obj));
        }
    }
    let component = match best {
        Some((k, obj)) if obj > 0.0 => {
            let mut c = path.components[k].clone();
            c.penalized_objective = Some(obj);
            c
        }
        _ => SparseComponent::zero(n, Some(rho)),
    };
    Ok((component, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn two_by_two() -> SymmetricMatrix {
        SymmetricMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()
    }

    #[test]
    fn variance_sorting() {
        assert_eq!(sort_by_variance(&SymmetricMatrix::from_diagonal(&[1.0, 3.0, 2.0])), vec![1, 2, 0]);
        assert_eq!(sort_by_variance(&SymmetricMatrix::identity(4)), vec![0, 1, 2, 3]);
    }

    #[test]
    fn thresholding_examples() {
        let sigma = SymmetricMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        let c = threshold_leading(&sigma, 2).unwrap();
        assert_eq!(c.support.indices(), &[0, 1]);
        assert_eq!(c.loadings, vec![1.0, 0.0, 0.0]);
        assert_eq!(c.variance, 3.0);

        let u = DVector::from_vec(vec![2.0, 1.0, 0.0]) / 5f64.sqrt();
        let c = threshold_leading(&SymmetricMatrix::outer(&u), 1).unwrap();
        assert_eq!(c.support.indices(), &[0]);
        assert!((c.variance - 0.8).abs() < 1e-14);

        assert!(matches!(threshold_leading(&sigma, 0), Err(SpcaError::BadCardinality { .. })));
        assert!(matches!(threshold_leading(&sigma, 4), Err(SpcaError::BadCardinality { .. })));
    }

    #[test]
    fn full_greedy_small_examples() {
        let p = greedy_full(&SymmetricMatrix::from_diagonal(&[3.0, 2.0, 1.0]), 3).unwrap();
        let pats: Vec<_> = p.patterns.iter().map(|p| p.one_based()).collect();
        assert_eq!(pats, vec![vec![1], vec![1, 2], vec![1, 2, 3]]);
        assert_eq!(p.variances, vec![3.0, 3.0, 3.0]);

        let p = greedy_full(&two_by_two(), 2).unwrap();
        assert_eq!(p.patterns[1].one_based(), vec![1, 2]);
        assert!((p.variances[0] - 2.0).abs() < 1e-14 && (p.variances[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn approx_greedy_small_examples() {
        let diag = SymmetricMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        assert_eq!(greedy_approx(&diag, 3, 1).unwrap(), greedy_full(&diag, 3).unwrap());
        let p = greedy_approx(&two_by_two(), 2, 1).unwrap();
        assert_eq!(p.patterns[0].one_based(), vec![1]);
        assert_eq!(p.patterns[1].one_based(), vec![1, 2]);
        assert!((p.variances[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn greedy_rejects_indefinite() {
        let s = SymmetricMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(greedy_full(&s, 1), Err(SpcaError::NotPositiveSemidefinite { .. })));
        assert!(matches!(greedy_approx(&s, 1, 1), Err(SpcaError::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn penalized_examples() {
        let sigma = SymmetricMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        for method in [
            PathMethod::GreedyFull,
            PathMethod::GreedyApprox { width: 1 },
            PathMethod::Threshold,
            PathMethod::VarianceSort,
        ] {
            let (c, _) = penalized_path(&sigma, 2.5, method).unwrap();
            assert_eq!(c.loadings, vec![1.0, 0.0, 0.0]);
            assert_eq!(c.penalized_objective, Some(0.5));
            let (c, path) = penalized_path(&sigma, 3.5, method).unwrap();
            assert!(c.is_zero() && path.is_empty());
            assert_eq!(c.penalized_objective, Some(0.0));
        }
    }

    #[test]
    fn factor_shortcut_matches_covariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(4, 9, |_, _| rng.random_range(-1.0..1.0));
        let factor = FactorMatrix::from_columns(a).unwrap();
        let sigma = factor.gram();
        let from_cov = greedy_approx(&sigma, 4, 1).unwrap();
        let from_fac = greedy_approx_from_factor(&factor, 4, 1).unwrap();
        assert_eq!(from_cov.patterns, from_fac.patterns);
        let full_cov = greedy_full(&sigma, 4).unwrap();
        let full_fac = greedy_full_from_factor(&factor, 4).unwrap();
        assert_eq!(full_cov.patterns, full_fac.patterns);
        for (x, y) in from_cov.variances.iter().zip(&from_fac.variances) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
