//! Dense symmetric linear algebra: eigendecomposition, the shifted matrix
//! exponential used by the smoothed solver, square-root factors and the
//! entrywise box projection.

use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};

/// Relative reconstruction tolerance for eigendecompositions.
pub const TOL_EIG: f64 = 1e-10;
/// Relative reconstruction tolerance for square-root factors.
pub const TOL_FACT: f64 = 1e-10;
/// Relative tolerance on negative eigenvalues before a matrix is rejected as
/// not positive semidefinite.
pub const TOL_PSD: f64 = 1e-8;

/// Dense symmetric `n x n` matrix. Construction symmetrizes the input as
/// `(M + M^T) / 2`, so `get(i, j) == get(j, i)` holds bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymmetricMatrix {
    inner: DMatrix<f64>,
}

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(SpcaError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(SpcaError::EmptyMatrix);
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes a square matrix without further checks.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Self { inner: m }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(SpcaError::EmptyMatrix);
        }
        for r in rows {
            if r.len() != n {
                return Err(SpcaError::NotSquare {
                    rows: n,
                    cols: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        Self {
            inner: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        Self {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        assert!(!d.is_empty(), "dimension must be at least 1");
        Self {
            inner: DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        }
    }

    /// `v v^T` for a single vector.
    pub fn outer(v: &DVector<f64>) -> Self {
        Self::symmetrized(v * v.transpose())
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.inner[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Sum of absolute values of all entries, `1^T |M| 1`.
    pub fn l1_entry_norm(&self) -> f64 {
        self.inner.iter().map(|v| v.abs()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }

    /// `Tr(self * other)`, i.e. the Frobenius inner product for symmetric matrices.
    pub fn inner_product(&self, other: &SymmetricMatrix) -> f64 {
        self.inner.dot(&other.inner)
    }

    pub fn add(&self, other: &SymmetricMatrix) -> SymmetricMatrix {
        Self {
            inner: &self.inner + &other.inner,
        }
    }

    pub fn sub(&self, other: &SymmetricMatrix) -> SymmetricMatrix {
        Self {
            inner: &self.inner - &other.inner,
        }
    }

    pub fn scale(&self, s: f64) -> SymmetricMatrix {
        Self {
            inner: &self.inner * s,
        }
    }

    /// `x^T M x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.inner * x)[(0, 0)]
    }

    /// Principal submatrix on the given (0-based) indices.
    pub fn principal_submatrix(&self, idx: &[usize]) -> SymmetricMatrix {
        Self {
            inner: DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.inner[(idx[a], idx[b])]),
        }
    }

    /// `P^T M P` for the permutation taking new position `p` to old index `perm[p]`.
    pub fn permuted(&self, perm: &[usize]) -> SymmetricMatrix {
        self.principal_submatrix(perm)
    }

    pub(crate) fn check_dim(&self, other: &SymmetricMatrix) -> Result<()> {
        if self.n() != other.n() {
            return Err(SpcaError::DimensionMismatch {
                expected: self.n(),
                got: other.n(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymmetricMatrix {
    type Error = SpcaError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<SymmetricMatrix> for Vec<Vec<f64>> {
    fn from(m: SymmetricMatrix) -> Self {
        (0..m.n())
            .map(|i| (0..m.n()).map(|j| m.get(i, j)).collect())
            .collect()
    }
}

/// Eigenvalues sorted descending with matching orthonormal eigenvector columns.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    pub fn leading_vector(&self) -> DVector<f64> {
        self.vectors.column(0).into_owned()
    }

    /// `Q diag(f(d)) Q^T`.
    pub fn reconstruct_with(&self, weights: &DVector<f64>) -> SymmetricMatrix {
        let mut scaled = self.vectors.clone();
        for (j, w) in weights.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*w);
        }
        SymmetricMatrix::symmetrized(scaled * self.vectors.transpose())
    }

    pub fn reconstruct(&self) -> SymmetricMatrix {
        self.reconstruct_with(&self.values)
    }
}

/// Index of the entry with the largest magnitude; ties go to the lowest index.
fn dominant_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let idx = dominant_index(v.as_slice());
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

pub fn sym_eig(s: &SymmetricMatrix) -> Result<EigenDecomposition> {
    if !s.is_finite() {
        return Err(SpcaError::NonFiniteInput);
    }
    let n = s.n();
    if n == 1 {
        return Ok(EigenDecomposition {
            values: DVector::from_element(1, s.get(0, 0)),
            vectors: DMatrix::identity(1, 1),
        });
    }
    let eig = SymmetricEigen::new(s.as_matrix().clone());
    let mut cols: Vec<(f64, DVector<f64>, usize)> = (0..n)
        .map(|j| {
            let mut v = eig.eigenvectors.column(j).into_owned();
            fix_sign(&mut v);
            let lead = dominant_index(v.as_slice());
            (eig.eigenvalues[j], v, lead)
        })
        .collect();
    // Descending; exact ties ordered by the position of the dominant entry.
    cols.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.2.cmp(&b.2))
    });
    let values = DVector::from_iterator(n, cols.iter().map(|c| c.0));
    let mut vectors = DMatrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        vectors.set_column(j, &c.1);
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Largest eigenvalue and its sign-normalized unit eigenvector.
pub fn leading_eig(s: &SymmetricMatrix) -> Result<(f64, DVector<f64>)> {
    let eig = sym_eig(s)?;
    Ok((eig.max_value(), eig.leading_vector()))
}

/// Largest eigenvalue only.
pub fn lambda_max(s: &SymmetricMatrix) -> Result<f64> {
    if !s.is_finite() {
        return Err(SpcaError::NonFiniteInput);
    }
    if s.n() == 1 {
        return Ok(s.get(0, 0));
    }
    let vals = s.as_matrix().symmetric_eigenvalues();
    Ok(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Softmax of a symmetric matrix at temperature `mu`, from an existing
/// eigendecomposition. Returns `(log Tr exp(S/mu), exp(S/mu) / Tr exp(S/mu))`.
pub fn softmax_from_eig(eig: &EigenDecomposition, mu: f64) -> (f64, SymmetricMatrix) {
    let d_max = eig.max_value();
    let weights = eig.values.map(|d| ((d - d_max) / mu).exp());
    let total: f64 = weights.sum();
    let logtrace = d_max / mu + total.ln();
    (logtrace, eig.reconstruct_with(&(weights / total)))
}

/// `log Tr exp(S/mu)` and the trace-normalized exponential, computed through
/// the eigendecomposition with the largest eigenvalue shifted out.
pub fn sym_expm_scaled(s: &SymmetricMatrix, mu: f64) -> Result<(f64, SymmetricMatrix)> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(SpcaError::NonPositiveMu(mu));
    }
    let eig = sym_eig(s)?;
    Ok(softmax_from_eig(&eig, mu))
}

/// A square root `A` (`q x n`) with `A^T A = Sigma`; column `i` is `a_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMatrix {
    a: DMatrix<f64>,
}

impl FactorMatrix {
    /// Wraps a data-style factor directly (e.g. a `q x n` data matrix whose
    /// Gram matrix is the covariance of interest).
    pub fn from_columns(a: DMatrix<f64>) -> Result<Self> {
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(SpcaError::EmptyMatrix);
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SpcaError::NonFiniteInput);
        }
        Ok(Self { a })
    }

    /// Number of variables (columns).
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Number of rows of the factor.
    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.a.column(i).into_owned()
    }

    pub fn column_norm_sq(&self, i: usize) -> f64 {
        self.a.column(i).norm_squared()
    }

    /// `a_i^T x` for every column.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(x)
    }

    pub fn gram(&self) -> SymmetricMatrix {
        SymmetricMatrix::symmetrized(self.a.tr_mul(&self.a))
    }

    /// `sum_{i in idx} a_i a_i^T`, a `q x q` matrix.
    pub fn partial_outer_sum(&self, idx: &[usize]) -> SymmetricMatrix {
        let mut acc = DMatrix::zeros(self.q(), self.q());
        for &i in idx {
            let col = self.a.column(i);
            acc.ger(1.0, &col, &col, 1.0);
        }
        SymmetricMatrix::symmetrized(acc)
    }

    /// Left-multiplies by `q`, giving another square root of the same Gram matrix
    /// when `q` is orthogonal.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Result<Self> {
        if q.ncols() != self.q() {
            return Err(SpcaError::DimensionMismatch {
                expected: self.q(),
                got: q.ncols(),
            });
        }
        Self::from_columns(q * &self.a)
    }
}

/// Square-root factor of a positive semidefinite matrix. Uses Cholesky when it
/// succeeds and reconstructs within tolerance, otherwise the eigen square root
/// with small negative eigenvalues clipped to zero.
pub fn square_root_factor(s: &SymmetricMatrix) -> Result<FactorMatrix> {
    if !s.is_finite() {
        return Err(SpcaError::NonFiniteInput);
    }
    let scale = s.frobenius_norm().max(1.0);
    if let Some(chol) = Cholesky::new(s.as_matrix().clone()) {
        let a = chol.l().transpose();
        let err = (a.tr_mul(&a) - s.as_matrix()).norm();
        if err <= TOL_FACT * scale && a.iter().all(|v| v.is_finite()) {
            return Ok(FactorMatrix { a });
        }
    }
    eigen_square_root(s)
}

pub(crate) fn eigen_square_root(s: &SymmetricMatrix) -> Result<FactorMatrix> {
    let eig = sym_eig(s)?;
    let max_eig = eig.max_value();
    let min_eig = eig.values[eig.values.len() - 1];
    if min_eig < -TOL_PSD * max_eig.max(0.0) {
        return Err(SpcaError::NotPositiveSemidefinite { min_eig, max_eig });
    }
    let mut a = eig.vectors.transpose();
    for (r, d) in eig.values.iter().enumerate() {
        a.row_mut(r).scale_mut(d.max(0.0).sqrt());
    }
    Ok(FactorMatrix { a })
}

/// Entrywise clamp to `[-rho, rho]`: the Euclidean projection onto the
/// infinity-norm ball of radius `rho`.
pub fn project_box(v: &SymmetricMatrix, rho: f64) -> Result<SymmetricMatrix> {
    if !v.is_finite() || !rho.is_finite() {
        return Err(SpcaError::NonFiniteInput);
    }
    let rho = rho.max(0.0);
    Ok(SymmetricMatrix {
        inner: v.inner.map(|x| x.clamp(-rho, rho)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> SymmetricMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        SymmetricMatrix::new(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    /// Truncated Taylor series of exp(M), independent of the eigen route.
    fn expm_series(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..80 {
            term = &term * m / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn diagonal_eigen() {
        let eig = sym_eig(&SymmetricMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(eig.values.as_slice(), &[3.0, 1.0]);
        assert_eq!(eig.vectors, DMatrix::identity(2, 2));
    }

    #[test]
    fn two_by_two_analytic() {
        let s = SymmetricMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eig(&s).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        let r = 0.5_f64.sqrt();
        let v0 = eig.vectors.column(0);
        assert!((v0[0] - r).abs() < 1e-12 && (v0[1] - r).abs() < 1e-12);
        let v1 = eig.vectors.column(1);
        assert!((v1[0].abs() - r).abs() < 1e-12 && (v1[0] + v1[1]).abs() < 1e-12);

        let (val, vec) = leading_eig(&s).unwrap();
        assert!((val - 3.0).abs() < 1e-14);
        assert!((vec[0] - r).abs() < 1e-12 && (vec[1] - r).abs() < 1e-12);
    }

    #[test]
    fn random_reconstruction() {
        for seed in 0..5 {
            let s = random_symmetric(8, seed);
            let eig = sym_eig(&s).unwrap();
            let scale = s.frobenius_norm().max(1.0);
            assert!(eig.reconstruct().sub(&s).frobenius_norm() <= TOL_EIG * scale);
            let qtq = eig.vectors.tr_mul(&eig.vectors) - DMatrix::identity(8, 8);
            assert!(qtq.norm() <= TOL_EIG);
            for w in eig.values.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn leading_eig_conventions() {
        let (v, x) = leading_eig(&SymmetricMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(x.as_slice(), &[1.0, 0.0]);
        let (v, x) = leading_eig(&SymmetricMatrix::identity(4)).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(x.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let mut neg = DVector::from_vec(vec![0.1, -0.9, 0.3]);
        fix_sign(&mut neg);
        assert!(neg[1] > 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let s = SymmetricMatrix::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&s), Err(SpcaError::NonFiniteInput)));
        assert!(matches!(leading_eig(&s), Err(SpcaError::NonFiniteInput)));
    }

    #[test]
    fn expm_trivial_cases() {
        let (lt, sm) = sym_expm_scaled(&SymmetricMatrix::zeros(2), 1.0).unwrap();
        assert!((lt - 2f64.ln()).abs() < 1e-15);
        assert!(sm.sub(&SymmetricMatrix::identity(2).scale(0.5)).max_abs() < 1e-15);

        let (lt, sm) = sym_expm_scaled(&SymmetricMatrix::identity(2), 1.0).unwrap();
        assert!((lt - (1.0 + 2f64.ln())).abs() < 1e-15);
        assert!(sm.sub(&SymmetricMatrix::identity(2).scale(0.5)).max_abs() < 1e-15);

        assert!(matches!(
            sym_expm_scaled(&SymmetricMatrix::zeros(2), 0.0),
            Err(SpcaError::NonPositiveMu(_))
        ));
    }

    #[test]
    fn expm_matches_series() {
        let s = SymmetricMatrix::from_diagonal(&[2.0, 0.0]);
        let series = expm_series(s.as_matrix());
        let (lt, sm) = sym_expm_scaled(&s, 1.0).unwrap();
        assert!((lt - series.trace().ln()).abs() < 1e-12);
        let expected = &series / series.trace();
        assert!((sm.as_matrix() - expected).norm() < 1e-12);

        // A non-diagonal instance against the same oracle.
        let s = random_symmetric(5, 11);
        let series = expm_series(&(s.as_matrix() / 0.7));
        let (lt, sm) = sym_expm_scaled(&s, 0.7).unwrap();
        assert!((lt - series.trace().ln()).abs() < 1e-11);
        assert!((sm.as_matrix() - &series / series.trace()).norm() < 1e-11);
    }

    #[test]
    fn softmax_is_psd_trace_one() {
        for seed in 0..10 {
            let s = random_symmetric(7, 100 + seed);
            let (_, sm) = sym_expm_scaled(&s.scale(50.0), 0.01).unwrap();
            assert!((sm.trace() - 1.0).abs() < 1e-12);
            let eig = sym_eig(&sm).unwrap();
            assert!(eig.values[6] > -1e-14);
        }
    }

    #[test]
    fn square_root_examples() {
        let f = square_root_factor(&SymmetricMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!(f.gram().sub(&SymmetricMatrix::from_diagonal(&[4.0, 9.0])).max_abs() < 1e-14);
        let f = square_root_factor(&SymmetricMatrix::identity(3)).unwrap();
        assert!(f.gram().sub(&SymmetricMatrix::identity(3)).max_abs() < 1e-14);

        let r = 0.5_f64.sqrt();
        let u = DVector::from_vec(vec![r, r]);
        let s = SymmetricMatrix::outer(&u);
        let f = square_root_factor(&s).unwrap();
        assert!(f.gram().sub(&s).frobenius_norm() <= 1e-10);
        let f = eigen_square_root(&s).unwrap();
        assert!(f.gram().sub(&s).frobenius_norm() <= 1e-10);
    }

    #[test]
    fn square_root_rejects_indefinite() {
        let s = SymmetricMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(
            square_root_factor(&s),
            Err(SpcaError::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn box_projection_examples() {
        let v = SymmetricMatrix::from_rows(&[vec![0.5, -0.2], vec![-0.2, 0.1]]).unwrap();
        assert_eq!(project_box(&v, 1.0).unwrap(), v);
        let v = SymmetricMatrix::from_rows(&[vec![3.0, -3.0], vec![-3.0, 3.0]]).unwrap();
        let p = project_box(&v, 1.0).unwrap();
        assert_eq!(
            p,
            SymmetricMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
        );
        let p = project_box(&random_symmetric(6, 3), 0.0).unwrap();
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn construction_symmetrizes() {
        let s = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 0), 1.0);
        assert!(matches!(
            SymmetricMatrix::new(DMatrix::zeros(0, 0)),
            Err(SpcaError::EmptyMatrix)
        ));
    }
}
