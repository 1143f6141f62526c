use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sparse_pca::certificates::certificate_duals;
use sparse_pca::experiments::{deflate, roc_curve};
use sparse_pca::greedy::{greedy_approx, greedy_full};
use sparse_pca::linalg::square_root_factor;
use sparse_pca_validation as oracle;
use sparse_pca::{pattern_solution, FactorMatrix, SparsityPattern, SymmetricMatrix};

fn factor_strategy(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(-2.0..2.0_f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
    })
}

fn gram(f: &DMatrix<f64>) -> SymmetricMatrix {
    SymmetricMatrix::new(f.tr_mul(f)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificate_duals_are_feasible(f in factor_strategy(7), k in 1usize..4, pos in 0.05..0.95_f64) {
        let n = f.ncols();
        let k = k.min(n - 1);
        let a = FactorMatrix::from_columns(f.clone()).unwrap();
        let path = greedy_full(&gram(&f), k).unwrap();
        let pattern = &path.patterns[k - 1];
        let outer: DMatrix<f64> = pattern.indices().iter().map(|&i| f.column(i) * f.column(i).transpose()).sum();
        let (_, x) = oracle::top_eig(&outer);
        let scores: Vec<f64> = (0..n).map(|i| x.dot(&f.column(i)).powi(2)).collect();
        let lo = (0..n).filter(|&i| !pattern.contains(i)).map(|i| scores[i]).fold(0.0, f64::max);
        let hi = pattern.indices().iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        prop_assume!(hi - lo > 1e-3 * hi);
        let rho = lo + pos * (hi - lo);
        let duals = certificate_duals(&a, pattern, &x, rho).unwrap();
        prop_assert_eq!(duals.len(), n);
        for (i, y) in duals.iter().enumerate() {
            let scale = f.column(i).norm_squared().max(1.0) + rho;
            prop_assert!(oracle::min_eig(y.as_matrix()) >= -1e-9 * scale);
            let ai = f.column(i).into_owned();
            let b = &ai * ai.transpose() - DMatrix::identity(n, n) * rho;
            prop_assert!(oracle::min_eig(&(y.as_matrix() - b)) >= -1e-9 * scale);
            if !pattern.contains(i) {
                prop_assert!((y.as_matrix() * &x).norm() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn greedy_paths_are_nested_and_monotone(f in factor_strategy(8)) {
        let sigma = gram(&f);
        let n = sigma.n();
        for path in [greedy_full(&sigma, n).unwrap(), greedy_approx(&sigma, n, 2).unwrap()] {
            prop_assert_eq!(path.len(), n);
            for k in 1..n {
                prop_assert!(path.patterns[k - 1].is_subset_of(&path.patterns[k]));
                prop_assert!(path.variances[k] >= path.variances[k - 1] - 1e-10);
            }
            for (p, v) in path.patterns.iter().zip(&path.variances) {
                let oracle = oracle::top_eig(&oracle::submatrix(sigma.as_matrix(), p.indices())).0;
                prop_assert!((v - oracle).abs() <= 1e-9 * oracle.max(1.0));
            }
        }
    }

    #[test]
    fn deflation_removes_component(f in factor_strategy(8), pick in proptest::collection::vec(any::<bool>(), 8)) {
        let sigma = gram(&f);
        let n = sigma.n();
        let mut idx: Vec<usize> = (0..n).filter(|&i| pick[i]).collect();
        if idx.is_empty() {
            idx.push(0);
        }
        let pattern = SparsityPattern::new(idx, n).unwrap();
        let z = pattern_solution(&sigma, &pattern, 0.0).unwrap();
        prop_assume!(!z.is_zero());
        let d = deflate(&sigma, &z).unwrap();
        let scale = sigma.frobenius_norm().max(1.0);
        prop_assert!((d.as_matrix() * DVector::from_column_slice(&z.loadings)).norm() <= 1e-10 * scale);
        prop_assert!(oracle::min_eig(d.as_matrix()) >= -1e-10 * scale);
        prop_assert!(d.trace() <= sigma.trace() + 1e-10 * scale);
    }

    #[test]
    fn roc_is_invariant_under_monotone_maps(
        scores in proptest::collection::vec(-5.0..5.0_f64, 4..30),
        seed in any::<u64>(),
    ) {
        let n = scores.len();
        let mut rng = oracle::rng(seed);
        let k = 1 + (seed as usize) % (n - 1);
        let truth: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        let pattern = SparsityPattern::new(truth, n).unwrap();
        let base = roc_curve(&scores, &pattern).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (0.5 * s).exp() * 3.0 + 1.0).collect();
        let other = roc_curve(&mapped, &pattern).unwrap();
        prop_assert_eq!(&base.points, &other.points);
        prop_assert!((base.auroc - other.auroc).abs() < 1e-12);
        let positive: Vec<bool> = (0..n).map(|i| pattern.contains(i)).collect();
        let distinct = {
            let mut s = scores.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1])
        };
        if distinct {
            prop_assert!((base.auroc - oracle::mann_whitney(&scores, &positive)).abs() < 1e-12);
        }
    }

    #[test]
    fn square_root_factor_reproduces_matrix(f in factor_strategy(8)) {
        let sigma = gram(&f);
        let a = square_root_factor(&sigma).unwrap();
        let err = (a.gram().as_matrix() - sigma.as_matrix()).norm();
        prop_assert!(err <= 1e-8 * sigma.frobenius_norm().max(1.0));
    }
}
