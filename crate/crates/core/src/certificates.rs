//! Optimality certificates and bounds for the cardinality-penalized problem
//!
//! ```text
//! phi(rho) = max_{||z|| <= 1} z^T Sigma z - rho Card(z)
//!          = max_{||x|| = 1} sum_i ((a_i^T x)^2 - rho)_+
//! ```
//!
//! and for the constrained problem `max { z^T Sigma z : ||z|| = 1, Card(z) <= k }`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::component::SparsityPattern;
use crate::error::{Result, SpcaError};
use crate::linalg::{lambda_max, leading_eig, FactorMatrix, SymmetricMatrix};

/// Absolute slack on the certificate's eigenvalue comparison.
pub const TOL_CERT: f64 = 1e-8;

/// Penalties tried per pattern by [`certified_grid`].
pub const SCAN_POINTS: usize = 32;

/// Default cap on the number of subsets an exhaustive search may visit.
pub const ENUMERATION_CAP: u128 = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub pattern: SparsityPattern,
    pub rho_star: f64,
    /// `lambda_max(sum_i Y_i)`; absent when the interval test already failed.
    pub eig_gap_lhs: Option<f64>,
    /// `sum_{i in I} ((a_i^T x)^2 - rho*)`, which is also
    /// `lambda_max(Sigma_II) - rho* |I|`.
    pub eig_gap_rhs: f64,
    /// `(max_{i not in I} (a_i^T x)^2, min_{i in I} (a_i^T x)^2)`.
    pub interval: (f64, f64),
    pub certified: bool,
}

impl CertificateReport {
    /// `phi(rho*)` when the pattern is certified optimal.
    pub fn certified_value(&self) -> Option<f64> {
        if self.certified {
            Some(self.eig_gap_rhs.max(self.eig_gap_lhs.unwrap_or(f64::NEG_INFINITY)))
        } else {
            None
        }
    }

    /// Upper bound on the relaxation value at `rho*`, certified or not. The
    /// dual matrices are feasible whenever `rho*` lies inside the interval.
    pub fn upper_bound(&self) -> Option<f64> {
        self.eig_gap_lhs.map(|l| l.max(self.eig_gap_rhs))
    }
}

/// Penalty values with matching upper bounds on `phi`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyGrid {
    rho_values: Vec<f64>,
    phi_values: Vec<f64>,
}

impl PenaltyGrid {
    pub fn new(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
        if pts.iter().any(|(r, p)| !r.is_finite() || !p.is_finite() || *r < 0.0) {
            return Err(SpcaError::InvalidConfig(
                "penalty grid entries must be finite with rho >= 0".into(),
            ));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            rho_values: pts.iter().map(|p| p.0).collect(),
            phi_values: pts.iter().map(|p| p.1).collect(),
        })
    }

    pub fn push(&mut self, rho: f64, phi: f64) {
        let pos = self.rho_values.partition_point(|r| *r <= rho);
        self.rho_values.insert(pos, rho);
        self.phi_values.insert(pos, phi);
    }

    pub fn rho_values(&self) -> &[f64] {
        &self.rho_values
    }

    pub fn phi_values(&self) -> &[f64] {
        &self.phi_values
    }

    pub fn len(&self) -> usize {
        self.rho_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_values.is_empty()
    }
}

/// `sum_i ((a_i^T x)^2 - rho)_+`, a lower bound on `phi(rho)` for every unit `x`.
pub fn nonconvex_objective(a: &FactorMatrix, x: &DVector<f64>, rho: f64) -> Result<f64> {
    if x.len() != a.q() {
        return Err(SpcaError::DimensionMismatch {
            expected: a.q(),
            got: x.len(),
        });
    }
    let norm = x.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(SpcaError::NotUnitNorm(norm));
    }
    Ok(a.project(x).iter().map(|p| (p * p - rho).max(0.0)).sum())
}

/// Variables with `||a_i||^2 = Sigma_ii > rho`.
pub fn prune_variables(a: &FactorMatrix, rho: f64) -> SparsityPattern {
    let keep = (0..a.n()).filter(|&i| a.column_norm_sq(i) > rho).collect();
    SparsityPattern::new(keep, a.n()).expect("indices are in range and distinct")
}

/// Leading eigenvector of `sum_{i in I} a_i a_i^T`.
fn pattern_direction(a: &FactorMatrix, pattern: &SparsityPattern) -> Result<DVector<f64>> {
    let (_, x) = leading_eig(&a.partial_outer_sum(pattern.indices()))?;
    Ok(x)
}

/// The dual matrices `Y_i` of the certificate for a given `x` and `rho*`.
///
/// Off-pattern variables get a multiple of the projection of `a_i` onto the
/// orthogonal complement of `x`; on-pattern variables get
/// `B_i x x^T B_i / (x^T B_i x)` with `B_i = a_i a_i^T - rho* I`.
pub fn certificate_duals(
    a: &FactorMatrix,
    pattern: &SparsityPattern,
    x: &DVector<f64>,
    rho_star: f64,
) -> Result<Vec<SymmetricMatrix>> {
    let q = a.q();
    let proj = a.project(x);
    let mut out = Vec::with_capacity(a.n());
    for i in 0..a.n() {
        let ai = a.column(i);
        let c = proj[i] * proj[i];
        if pattern.contains(i) {
            let den = c - rho_star;
            if den <= 1e-12 * c.max(1.0) {
                return Err(SpcaError::DegenerateDenominator {
                    index: i + 1,
                    value: den,
                });
            }
            let bx = &ai * proj[i] - x * rho_star;
            out.push(SymmetricMatrix::outer(&bx).scale(1.0 / den));
        } else {
            let norm_sq = ai.norm_squared();
            let coef = (rho_star * (norm_sq - rho_star) / (rho_star - c)).max(0.0);
            let r = &ai - x * proj[i];
            let r_sq = r.norm_squared();
            if coef > 0.0 && r_sq > 1e-14 * norm_sq.max(1e-300) {
                out.push(SymmetricMatrix::outer(&r).scale(coef / r_sq));
            } else {
                out.push(SymmetricMatrix::zeros(q));
            }
        }
    }
    Ok(out)
}

/// Tests whether `pattern` is globally optimal for the penalized problem at
/// some `rho*` (the midpoint of the admissible interval when not given).
/// A failed test is reported through `certified = false`.
pub fn certify_pattern(
    a: &FactorMatrix,
    pattern: &SparsityPattern,
    rho_star: Option<f64>,
) -> Result<CertificateReport> {
    let geom = PatternGeometry::new(a, pattern)?;
    let rho_star = rho_star.unwrap_or(0.5 * (geom.lo + geom.hi));
    geom.certify_at(a, pattern, rho_star)
}

/// Runs the certificate at `points` evenly spaced penalties strictly inside
/// the admissible interval. Penalties whose dual construction degenerates
/// are skipped; an empty interval yields no reports.
pub fn certify_pattern_scan(
    a: &FactorMatrix,
    pattern: &SparsityPattern,
    points: usize,
) -> Result<Vec<CertificateReport>> {
    let geom = PatternGeometry::new(a, pattern)?;
    if geom.lo >= geom.hi {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(points);
    for j in 1..=points {
        let rho = geom.lo + (geom.hi - geom.lo) * j as f64 / (points + 1) as f64;
        match geom.certify_at(a, pattern, rho) {
            Ok(r) => out.push(r),
            Err(SpcaError::DegenerateDenominator { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

struct PatternGeometry {
    x: DVector<f64>,
    scores: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl PatternGeometry {
    fn new(a: &FactorMatrix, pattern: &SparsityPattern) -> Result<Self> {
        if pattern.is_empty() {
            return Err(SpcaError::EmptyPattern);
        }
        if pattern.n() != a.n() {
            return Err(SpcaError::DimensionMismatch {
                expected: a.n(),
                got: pattern.n(),
            });
        }
        let x = pattern_direction(a, pattern)?;
        let scores: Vec<f64> = a.project(&x).iter().map(|p| p * p).collect();
        let lo = pattern
            .complement()
            .iter()
            .map(|&i| scores[i])
            .fold(0.0_f64, f64::max);
        let hi = pattern
            .indices()
            .iter()
            .map(|&i| scores[i])
            .fold(f64::INFINITY, f64::min);
        Ok(Self { x, scores, lo, hi })
    }

    fn certify_at(&self, a: &FactorMatrix, pattern: &SparsityPattern, rho_star: f64) -> Result<CertificateReport> {
        let rhs: f64 = pattern.indices().iter().map(|&i| self.scores[i] - rho_star).sum();
        let mut report = CertificateReport {
            pattern: pattern.clone(),
            rho_star,
            eig_gap_lhs: None,
            eig_gap_rhs: rhs,
            interval: (self.lo, self.hi),
            certified: false,
        };
        if !(rho_star >= 0.0 && self.lo < rho_star && rho_star < self.hi) {
            return Ok(report);
        }
        let duals = certificate_duals(a, pattern, &self.x, rho_star)?;
        let total = duals
            .iter()
            .skip(1)
            .fold(duals[0].clone(), |acc, y| acc.add(y));
        let lhs = lambda_max(&total)?;
        report.eig_gap_lhs = Some(lhs);
        report.certified = lhs <= rhs + TOL_CERT;
        Ok(report)
    }
}

/// `min_j phi_j + rho_j k`: an upper bound on the best variance achievable
/// with at most `k` nonzeros, given upper bounds `phi_j >= phi(rho_j)`.
pub fn weak_duality_bound(grid: &PenaltyGrid, k: usize) -> Result<f64> {
    if grid.is_empty() {
        return Err(SpcaError::EmptyGrid);
    }
    Ok(grid
        .rho_values
        .iter()
        .zip(&grid.phi_values)
        .map(|(r, p)| p + r * k as f64)
        .fold(f64::INFINITY, f64::min))
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn better(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + 1e-12 * incumbent.abs().max(1.0)
}

/// Lexicographic successor of a strictly increasing combination over `0..n`.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Largest `lambda_max(Sigma_II)` over all `|I| = k` by enumeration.
pub fn exhaustive_sparse_eig(sigma: &SymmetricMatrix, k: usize) -> Result<(f64, SparsityPattern)> {
    exhaustive_sparse_eig_capped(sigma, k, ENUMERATION_CAP)
}

pub fn exhaustive_sparse_eig_capped(
    sigma: &SymmetricMatrix,
    k: usize,
    cap: u128,
) -> Result<(f64, SparsityPattern)> {
    let n = sigma.n();
    if k == 0 || k > n {
        return Err(SpcaError::BadCardinality { k, n });
    }
    let count = binomial(n, k);
    if count > cap {
        return Err(SpcaError::TooLarge { count, cap });
    }
    // One job per leading index; each job walks its combinations in
    // lexicographic order, and jobs are merged in leading-index order.
    let chunks: Vec<Option<(f64, Vec<usize>)>> = (0..=n - k)
        .into_par_iter()
        .map(|first| -> Result<Option<(f64, Vec<usize>)>> {
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut rest: Vec<usize> = (first + 1..first + k).collect();
            let m = n - first - 1;
            // `rest` ranges over (k-1)-combinations of first+1..n.
            let mut local: Vec<usize> = (0..k - 1).collect();
            loop {
                for (slot, &l) in rest.iter_mut().zip(&local) {
                    *slot = first + 1 + l;
                }
                let mut idx = Vec::with_capacity(k);
                idx.push(first);
                idx.extend_from_slice(&rest);
                let v = lambda_max(&sigma.principal_submatrix(&idx))?;
                if best.as_ref().is_none_or(|(b, _)| better(v, *b)) {
                    best = Some((v, idx));
                }
                if k == 1 || !next_combination(&mut local, m) {
                    break;
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (v, idx) in chunks.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _)| better(v, *b)) {
            best = Some((v, idx));
        }
    }
    let (v, idx) = best.expect("at least one subset");
    Ok((v, SparsityPattern::new(idx, n)?))
}

/// `phi(rho)` by enumerating all `2^n - 1` non-empty patterns. Returns the
/// empty pattern with value 0 when no pattern is positive.
pub fn exhaustive_penalized(sigma: &SymmetricMatrix, rho: f64) -> Result<(f64, SparsityPattern)> {
    let n = sigma.n();
    let count = (1u128 << n.min(127)) - 1;
    if n >= 127 || count > ENUMERATION_CAP {
        return Err(SpcaError::TooLarge {
            count,
            cap: ENUMERATION_CAP,
        });
    }
    let results = (1u64..(1u64 << n))
        .into_par_iter()
        .map(|mask| -> Result<(f64, u64)> {
            let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let v = lambda_max(&sigma.principal_submatrix(&idx))? - rho * idx.len() as f64;
            Ok((v, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = (0.0, 0u64);
    for (v, mask) in results {
        if better(v, best.0) {
            best = (v, mask);
        }
    }
    let idx = (0..n).filter(|i| best.1 >> i & 1 == 1).collect();
    Ok((best.0, SparsityPattern::new(idx, n)?))
}

/// Certificate-based upper bounds: for each certified pattern,
/// `phi(rho*)` is known exactly, which bounds every cardinality.
pub fn certified_grid<'a>(
    a: &FactorMatrix,
    patterns: impl IntoIterator<Item = &'a SparsityPattern>,
) -> Result<PenaltyGrid> {
    let mut grid = PenaltyGrid::default();
    for p in patterns {
        if p.is_empty() {
            continue;
        }
        for report in certify_pattern_scan(a, p, SCAN_POINTS)? {
            if let Some(phi) = report.certified_value() {
                grid.push(report.rho_star, phi);
            }
        }
    }
    Ok(grid)
}

/// Penalty grid of `lambda_max(sum_i Y_i)` over every pattern and every
/// scanned penalty. Feeds [`weak_duality_bound`] even when no pattern is
/// certified.
pub fn rank_one_dual_grid<'a>(
    a: &FactorMatrix,
    patterns: impl IntoIterator<Item = &'a SparsityPattern>,
    points: usize,
) -> Result<PenaltyGrid> {
    let patterns: Vec<&SparsityPattern> = patterns.into_iter().filter(|p| !p.is_empty()).collect();
    let reports = patterns
        .par_iter()
        .map(|p| certify_pattern_scan(a, p, points))
        .collect::<Result<Vec<_>>>()?;
    let mut grid = PenaltyGrid::default();
    for r in reports.iter().flatten() {
        if let Some(ub) = r.upper_bound() {
            grid.push(r.rho_star, ub);
        }
    }
    Ok(grid)
}
