//! Synthetic instances and evaluation harness: spiked covariance models,
//! Gaussian Gram and rank-one-plus-noise matrices, projection deflation,
//! support-recovery ROC curves and sparse-eigenvalue bound sweeps.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64`, so every generator
//! is bit-deterministic for a given seed.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{
    exhaustive_sparse_eig, rank_one_dual_grid, weak_duality_bound, PenaltyGrid, SCAN_POINTS,
};
use crate::component::{SparseComponent, SparsityPattern};
use crate::dspca::{dspca_solve, DspcaConfig};
use crate::error::{Result, SpcaError};
use crate::greedy::{greedy_approx, greedy_full, GreedyPath};
use crate::linalg::{lambda_max, leading_eig, square_root_factor, SymmetricMatrix};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values of the spike's nonzero entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeSigns {
    /// `±1/sqrt(k)` with independent fair signs.
    #[default]
    RandomSigns,
    /// `1/sqrt(k)`.
    Ones,
}

/// Normalization of the noise term `V V^T` (`V` is `n x m`, standard normal).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScale {
    /// `V V^T / m`: the sample covariance of `m` white-noise observations.
    #[default]
    SampleMean,
    /// `V V^T / sqrt(m)`.
    SqrtM,
    /// No noise at all (`V = 0`).
    Noiseless,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpikedInstance {
    pub sigma_hat: SymmetricMatrix,
    pub u_true: Vec<f64>,
    pub support_true: SparsityPattern,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    pub noise: NoiseScale,
}

/// `Sigma_hat = u u^T + V V^T / m` with `Card(u) = k`, `||u|| = 1` and a
/// support drawn uniformly without replacement.
pub fn make_spiked(n: usize, m: usize, k: usize, seed: u64, signs: SpikeSigns) -> Result<SpikedInstance> {
    make_spiked_with(n, m, k, seed, signs, NoiseScale::SampleMean)
}

pub fn make_spiked_with(
    n: usize,
    m: usize,
    k: usize,
    seed: u64,
    signs: SpikeSigns,
    noise: NoiseScale,
) -> Result<SpikedInstance> {
    if n == 0 || k == 0 || k > n || m == 0 {
        return Err(SpcaError::BadShape(format!(
            "spiked model needs 1 <= k <= n and m >= 1 (n = {n}, m = {m}, k = {k})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let support: Vec<usize> = sample(&mut rng, n, k).into_vec();
    let mag = 1.0 / (k as f64).sqrt();
    let mut u = DVector::zeros(n);
    for &i in &support {
        u[i] = match signs {
            SpikeSigns::RandomSigns if rng.random_bool(0.5) => -mag,
            _ => mag,
        };
    }
    let mut sigma = &u * u.transpose();
    let divisor = match noise {
        NoiseScale::SampleMean => Some(m as f64),
        NoiseScale::SqrtM => Some((m as f64).sqrt()),
        NoiseScale::Noiseless => None,
    };
    if let Some(d) = divisor {
        let v = DMatrix::<f64>::from_fn(n, m, |_, _| rng.sample(StandardNormal));
        sigma += (&v * v.transpose()) / d;
    }
    Ok(SpikedInstance {
        sigma_hat: SymmetricMatrix::new(sigma)?,
        u_true: u.iter().copied().collect(),
        support_true: SparsityPattern::new(support, n)?,
        n,
        m,
        k,
        seed,
        noise,
    })
}

/// `F^T F` with `F` a `q x n` standard normal matrix.
pub fn make_gaussian_gram(n: usize, q: usize, seed: u64) -> Result<SymmetricMatrix> {
    if n == 0 || q == 0 {
        return Err(SpcaError::BadShape(format!("need n, q >= 1 (n = {n}, q = {q})")));
    }
    let mut rng = rng_from_seed(seed);
    let f = DMatrix::<f64>::from_fn(q, n, |_, _| rng.sample(StandardNormal));
    SymmetricMatrix::new(f.tr_mul(&f))
}

/// `u u^T / ||u||^2 + 2 V^T V` with `u_i = 1/i` and `V` an `n x n` matrix of
/// uniform `[0, 1]` entries.
pub fn make_rank_one_noise(n: usize, seed: u64) -> Result<SymmetricMatrix> {
    if n == 0 {
        return Err(SpcaError::BadShape("need n >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let v = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(0.0..=1.0));
    rank_one_noise_from(&v)
}

/// Same construction with an explicit noise matrix `V` (`r x n`).
pub fn rank_one_noise_from(v: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let n = v.ncols();
    if n == 0 {
        return Err(SpcaError::BadShape("need n >= 1".into()));
    }
    let u = DVector::from_fn(n, |i, _| 1.0 / (i + 1) as f64);
    let uu = (&u * u.transpose()) / u.norm_squared();
    SymmetricMatrix::new(uu + v.tr_mul(v) * 2.0)
}

/// Projection deflation `(I - z z^T) Sigma (I - z z^T)`.
pub fn deflate(sigma: &SymmetricMatrix, z: &SparseComponent) -> Result<SymmetricMatrix> {
    if z.loadings.len() != sigma.n() {
        return Err(SpcaError::DimensionMismatch {
            expected: sigma.n(),
            got: z.loadings.len(),
        });
    }
    let v = z.vector();
    let norm = v.norm();
    if z.is_zero() || norm == 0.0 {
        return Err(SpcaError::ZeroComponent);
    }
    if (norm - 1.0).abs() > 1e-8 {
        return Err(SpcaError::NotUnitNorm(norm));
    }
    let v = v / norm;
    let n = sigma.n();
    let p = DMatrix::identity(n, n) - &v * v.transpose();
    SymmetricMatrix::new(&p * sigma.as_matrix() * &p)
}

/// Extracts up to `count` components, deflating after each one. Stops early
/// when the extractor returns the zero component.
pub fn sequential_components<F>(
    sigma: &SymmetricMatrix,
    count: usize,
    mut extract: F,
) -> Result<Vec<SparseComponent>>
where
    F: FnMut(&SymmetricMatrix) -> Result<SparseComponent>,
{
    let mut current = sigma.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let c = extract(&current)?;
        if c.is_zero() {
            break;
        }
        current = deflate(&current, &c)?;
        out.push(c);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMethod {
    ThresholdPca,
    GreedyApprox,
    GreedyFull,
    Dspca,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 4] = [
        ScoreMethod::ThresholdPca,
        ScoreMethod::GreedyApprox,
        ScoreMethod::GreedyFull,
        ScoreMethod::Dspca,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::ThresholdPca => "threshold-pca",
            ScoreMethod::GreedyApprox => "greedy-approx",
            ScoreMethod::GreedyFull => "greedy-full",
            ScoreMethod::Dspca => "dspca",
        }
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = SpcaError;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SpcaError::UnknownMethod(s.to_string()))
    }
}

/// Work limits for [`support_scores`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBudget {
    /// Greedy path length; variables never reached score 0. `None` runs to `n`.
    pub path_len: Option<usize>,
    pub dspca: DspcaConfig,
}

impl Default for ScoreBudget {
    fn default() -> Self {
        Self {
            path_len: None,
            dspca: DspcaConfig::new(0.1, 1e-3).with_max_iter(500),
        }
    }
}

fn rank_scores(path: &GreedyPath, n: usize) -> Vec<f64> {
    let mut scores = vec![0.0; n];
    for (step, &i) in path.added.iter().enumerate() {
        scores[i] = (n - step) as f64;
    }
    scores
}

/// Per-variable inclusion scores: larger means more likely in the support.
pub fn support_scores(method: ScoreMethod, sigma: &SymmetricMatrix, budget: &ScoreBudget) -> Result<Vec<f64>> {
    let n = sigma.n();
    let len = budget.path_len.unwrap_or(n).clamp(1, n);
    match method {
        ScoreMethod::ThresholdPca => {
            let (_, x) = leading_eig(sigma)?;
            Ok(x.iter().map(|v| v.abs()).collect())
        }
        ScoreMethod::GreedyApprox => Ok(rank_scores(&greedy_approx(sigma, len, 1)?, n)),
        ScoreMethod::GreedyFull => Ok(rank_scores(&greedy_full(sigma, len)?, n)),
        ScoreMethod::Dspca => {
            let res = dspca_solve(sigma, &budget.dspca)?;
            let (_, x) = leading_eig(&res.x_star)?;
            Ok(x.iter().map(|v| v.abs()).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(specificity, sensitivity)` after selecting the top `j` variables, `j = 0..=n`.
    pub points: Vec<(f64, f64)>,
    pub auroc: f64,
}

/// ROC of support recovery, sweeping the prefixes of the score ordering
/// (ties broken by lower index).
pub fn roc_curve(scores: &[f64], truth: &SparsityPattern) -> Result<RocCurve> {
    let n = scores.len();
    if truth.n() != n {
        return Err(SpcaError::DimensionMismatch {
            expected: n,
            got: truth.n(),
        });
    }
    let pos = truth.len();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(SpcaError::DegenerateTruth);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = Vec::with_capacity(n + 1);
    let (mut tp, mut fp) = (0usize, 0usize);
    points.push((1.0, 0.0));
    let mut auroc = 0.0;
    for &i in &order {
        let (prev_fpr, prev_tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        if truth.contains(i) {
            tp += 1;
        } else {
            fp += 1;
        }
        let (fpr, tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auroc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        points.push((1.0 - fpr, tpr));
    }
    Ok(RocCurve { points, auroc })
}

/// Lower and upper bounds on the largest sparse eigenvalue, per cardinality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub cardinalities: Vec<usize>,
    pub exhaustive: Vec<f64>,
    pub greedy_full: Vec<f64>,
    pub greedy_approx: Vec<f64>,
    /// Weak-duality bound from the DSPCA dual values over the penalty grid.
    pub dspca_upper: Vec<f64>,
    /// Weak-duality bound from certified patterns, when any certified.
    pub certificate_upper: Vec<Option<f64>>,
    pub dspca_grid: PenaltyGrid,
    pub certificate_grid: PenaltyGrid,
}

impl BoundSweep {
    pub fn best_upper(&self, idx: usize) -> f64 {
        self.certificate_upper[idx].map_or(self.dspca_upper[idx], |c| c.min(self.dspca_upper[idx]))
    }

    pub fn best_lower(&self, idx: usize) -> f64 {
        self.greedy_full[idx].max(self.greedy_approx[idx])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSweepOptions {
    /// Number of penalty values for the DSPCA grid, spread over `[0, max_i Sigma_ii)`.
    pub grid_points: usize,
    /// DSPCA target gap relative to `lambda_max(Sigma)`.
    pub relative_epsilon: f64,
    pub max_iter: usize,
}

impl Default for BoundSweepOptions {
    fn default() -> Self {
        Self {
            grid_points: 10,
            relative_epsilon: 1e-3,
            max_iter: 20_000,
        }
    }
}

/// Penalty grid of DSPCA dual values `lambda_max(Sigma + U)` at
/// `rho_j = j / points * max_i Sigma_ii`.
pub fn dspca_penalty_grid(sigma: &SymmetricMatrix, opts: &BoundSweepOptions) -> Result<PenaltyGrid> {
    let dmax = sigma.diagonal().into_iter().fold(0.0_f64, f64::max);
    let scale = lambda_max(sigma)?.abs().max(1e-12);
    let points = opts.grid_points.max(1);
    let values = (0..points)
        .into_par_iter()
        .map(|j| {
            let rho = dmax * j as f64 / points as f64;
            let cfg = DspcaConfig::new(rho, opts.relative_epsilon * scale).with_max_iter(opts.max_iter);
            dspca_solve(sigma, &cfg).map(|r| (rho, r.dual_value))
        })
        .collect::<Result<Vec<_>>>()?;
    PenaltyGrid::new(values)
}

pub fn bound_sweep(sigma: &SymmetricMatrix, k_max: usize) -> Result<BoundSweep> {
    bound_sweep_with(sigma, k_max, &BoundSweepOptions::default())
}

pub fn bound_sweep_with(
    sigma: &SymmetricMatrix,
    k_max: usize,
    opts: &BoundSweepOptions,
) -> Result<BoundSweep> {
    let n = sigma.n();
    if k_max == 0 || k_max > n {
        return Err(SpcaError::BadCardinality { k: k_max, n });
    }
    let exhaustive = (1..=k_max)
        .map(|k| exhaustive_sparse_eig(sigma, k))
        .collect::<Result<Vec<_>>>()?;
    let full = greedy_full(sigma, n)?;
    let approx = greedy_approx(sigma, n, 1)?;
    let factor = square_root_factor(sigma)?;
    let candidates = full
        .patterns
        .iter()
        .chain(&approx.patterns)
        .chain(exhaustive.iter().map(|(_, p)| p));
    let certificate_grid = rank_one_dual_grid(&factor, candidates, SCAN_POINTS)?;
    let dspca_grid = dspca_penalty_grid(sigma, opts)?;

    let ks: Vec<usize> = (1..=k_max).collect();
    let dspca_upper = ks
        .iter()
        .map(|&k| weak_duality_bound(&dspca_grid, k))
        .collect::<Result<Vec<_>>>()?;
    let certificate_upper = ks
        .iter()
        .map(|&k| weak_duality_bound(&certificate_grid, k).ok())
        .collect();
    Ok(BoundSweep {
        cardinalities: ks.clone(),
        exhaustive: exhaustive.iter().map(|(v, _)| *v).collect(),
        greedy_full: ks.iter().map(|&k| full.variances[k - 1]).collect(),
        greedy_approx: ks.iter().map(|&k| approx.variances[k - 1]).collect(),
        dspca_upper,
        certificate_upper,
        dspca_grid,
        certificate_grid,
    })
}

/// Parameters of a support-recovery study over sample sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikedStudy {
    pub n: usize,
    pub k: usize,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<ScoreMethod>,
    pub seed: u64,
    pub signs: SpikeSigns,
    pub noise: NoiseScale,
    pub budget: ScoreBudget,
}

impl SpikedStudy {
    pub fn new(n: usize, k: usize, m_values: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self {
            n,
            k,
            m_values,
            trials,
            methods: ScoreMethod::ALL.to_vec(),
            seed,
            signs: SpikeSigns::RandomSigns,
            noise: NoiseScale::SampleMean,
            budget: ScoreBudget {
                path_len: None,
                dspca: DspcaConfig::new(default_spiked_rho(k), SPIKED_EPSILON).with_max_iter(SPIKED_MAX_ITER),
            },
        }
    }
}

/// Penalty used for DSPCA in spiked studies: half the magnitude of the
/// spike's off-diagonal entries `1/k`.
pub fn default_spiked_rho(k: usize) -> f64 {
    0.5 / k as f64
}

/// DSPCA target gap in spiked studies. Scores only need the dominant
/// direction of `X`, so a loose gap with a larger smoothing parameter is used.
pub const SPIKED_EPSILON: f64 = 0.03;

pub const SPIKED_MAX_ITER: usize = 1500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub m: usize,
    pub method: ScoreMethod,
    pub trial: usize,
    pub seed: u64,
    pub auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub m: usize,
    pub method: ScoreMethod,
    pub mean_auroc: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub summary: Vec<StudySummary>,
}

impl StudyTable {
    pub fn mean(&self, m: usize, method: ScoreMethod) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.m == m && s.method == method)
            .map(|s| s.mean_auroc)
    }
}

/// Runs every `(m, trial)` cell independently; trial `t` uses seed `seed ^ t`.
pub fn spiked_study(study: &SpikedStudy) -> Result<StudyTable> {
    let cells: Vec<(usize, usize)> = study
        .m_values
        .iter()
        .flat_map(|&m| (0..study.trials).map(move |t| (m, t)))
        .collect();
    let per_cell = cells
        .par_iter()
        .map(|&(m, trial)| -> Result<Vec<StudyRow>> {
            let seed = study.seed ^ trial as u64;
            let inst = make_spiked_with(study.n, m, study.k, seed, study.signs, study.noise)?;
            study
                .methods
                .iter()
                .map(|&method| {
                    let scores = support_scores(method, &inst.sigma_hat, &study.budget)?;
                    let roc = roc_curve(&scores, &inst.support_true)?;
                    Ok(StudyRow {
                        m,
                        method,
                        trial,
                        seed,
                        auroc: roc.auroc,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<StudyRow> = per_cell.into_iter().flatten().collect();
    let mut acc: BTreeMap<(usize, ScoreMethod), (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = acc.entry((r.m, r.method)).or_insert((0.0, 0));
        e.0 += r.auroc;
        e.1 += 1;
    }
    let summary = acc
        .into_iter()
        .map(|((m, method), (sum, count))| StudySummary {
            m,
            method,
            mean_auroc: sum / count as f64,
            trials: count,
        })
        .collect();
    Ok(StudyTable { rows, summary })
}
