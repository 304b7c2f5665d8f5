//! Quasi-stationary distributions of the interior restriction `Q*`.

use crate::flow::{self, FlowError, VectorField};
use crate::kernel::compensated_sum;
use crate::simplex::SimplexGrid;
use crate::sparse::SubstochasticMatrix;
use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Interior-state limit for the dense oracle.
pub const DENSE_LIMIT: usize = 2000;
/// Contraction factor above which a slow-convergence warning is attached.
pub const SLOW_CONTRACTION: f64 = 0.9999;

/// Iterate differences below this are dominated by roundoff and are not used
/// to estimate the contraction factor.
const DIFF_FLOOR: f64 = 1e-13;
/// Lag (in iterations) over which the contraction factor is averaged.
const GAP_LAG: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsdError {
    #[error("interior matrix is empty")]
    Empty,
    #[error("interior matrix is not irreducible ({components} communicating classes)")]
    NotIrreducible { components: usize },
    #[error("power iteration did not converge in {max_iter} iterations (residual {residual:e})")]
    NoConvergence {
        max_iter: usize,
        last: Vec<f64>,
        residual: f64,
    },
    #[error("matrix with {0} states is too large for the dense oracle")]
    TooLarge(usize),
    #[error("matrix is not strictly substochastic")]
    NotSubstochastic,
    #[error("the distribution is absorbed in one step")]
    TotalAbsorption,
    #[error("1 - rho must be positive, got {value} at N = {n}")]
    NonPositiveGap { n: f64, value: f64 },
    #[error("decay fit needs at least 3 points, got {0}")]
    InsufficientData(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QsdOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QsdOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QsdSolution {
    /// QSD over interior states, indexed by interior position.
    pub mu: Vec<f64>,
    pub rho: f64,
    /// `1 - rho`, accumulated from the exact absorption masses.
    pub one_minus_rho: f64,
    pub theta: f64,
    pub expected_t0: f64,
    pub residual: f64,
    pub iterations: usize,
    pub gap_estimate: f64,
    pub warning: Option<String>,
}

/// Errors unless the sparsity pattern of `Q*` is strongly connected.
pub fn check_irreducible(q: &SubstochasticMatrix) -> Result<(), QsdError> {
    let n = q.dim();
    if n == 0 {
        return Err(QsdError::Empty);
    }
    let mut g = DiGraph::<(), ()>::with_capacity(n, q.matrix().nnz());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (i, &node) in nodes.iter().enumerate() {
        let (cols, vals) = q.matrix().row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v > 0.0 {
                g.add_edge(node, nodes[j], ());
            }
        }
    }
    let components = tarjan_scc(&g).len();
    if components != 1 {
        return Err(QsdError::NotIrreducible { components });
    }
    Ok(())
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
}

/// Left power iteration with L1 normalization from the uniform vector.
pub fn solve_qsd(q: &SubstochasticMatrix, opts: QsdOptions) -> Result<QsdSolution, QsdError> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(QsdError::InvalidArgument("tol must be positive and max_iter at least 1".into()));
    }
    check_irreducible(q)?;
    let n = q.dim();
    let mut v = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    let mut diffs: Vec<f64> = Vec::new();
    let mut gap = f64::NAN;
    let mut prev_om = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        q.left_mul(&v, &mut y);
        let mass = compensated_sum(v.iter().copied());
        let om = q.absorbed_mass(&v) / mass;
        let rho = 1.0 - om;
        residual = compensated_sum(y.iter().zip(&v).map(|(a, b)| (a - rho * b).abs()));
        let total = compensated_sum(y.iter().copied());
        if !(total > 0.0) {
            return Err(QsdError::TotalAbsorption);
        }
        y.iter_mut().for_each(|e| *e /= total);
        let diff = l1_diff(&y, &v);
        if diff > DIFF_FLOOR {
            diffs.push(diff);
            if diffs.len() > GAP_LAG {
                let k = diffs.len();
                gap = (diffs[k - 1] / diffs[k - 1 - GAP_LAG]).powf(1.0 / GAP_LAG as f64);
            } else if diffs.len() >= 2 {
                let k = diffs.len();
                gap = diffs[k - 1] / diffs[k - 2];
            }
        }
        let settle = if gap.is_finite() { (1.0 - gap).clamp(1e-12, 1.0) } else { 1.0 };
        let stable = (om - prev_om).abs() <= 1e-9 * om.abs() * settle;
        prev_om = om;
        if diff < opts.tol && residual < 10.0 * opts.tol && stable {
            let warning = (gap >= SLOW_CONTRACTION).then(|| {
                format!("observed contraction factor {gap:.6} is at least {SLOW_CONTRACTION}; convergence is slow")
            });
            let mu: Vec<f64> = v.iter().map(|e| e / mass).collect();
            return Ok(QsdSolution {
                mu,
                rho,
                one_minus_rho: om,
                theta: -(-om).ln_1p(),
                expected_t0: 1.0 / om,
                residual,
                iterations: it,
                gap_estimate: if gap.is_finite() { gap } else { 0.0 },
                warning,
            });
        }
        std::mem::swap(&mut v, &mut y);
    }
    Err(QsdError::NoConvergence {
        max_iter: opts.max_iter,
        last: v,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSpectrum {
    /// Eigenvalues as `(re, im)`, sorted by decreasing modulus.
    pub eigenvalues: Vec<(f64, f64)>,
    pub moduli: Vec<f64>,
    pub rho: f64,
    /// Positive, L1-normalized left Perron vector.
    pub mu: Vec<f64>,
    /// `|lambda_2| / rho` (0 for a 1x1 matrix).
    pub ratio: f64,
}

/// Full dense eigendecomposition of `Q*`.
pub fn dense_oracle_qsd(q: &SubstochasticMatrix) -> Result<DenseSpectrum, QsdError> {
    let n = q.dim();
    if n == 0 {
        return Err(QsdError::Empty);
    }
    if n > DENSE_LIMIT {
        return Err(QsdError::TooLarge(n));
    }
    let rows = q.matrix().to_dense();
    let sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    if sums.iter().any(|s| *s > 1.0 + 1e-12) || sums.iter().all(|s| *s >= 1.0 - 1e-15) {
        return Err(QsdError::NotSubstochastic);
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let mut eig: Vec<(f64, f64)> = m.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    eig.sort_by(|a, b| b.0.hypot(b.1).total_cmp(&a.0.hypot(a.1)).then(b.0.total_cmp(&a.0)));
    let moduli: Vec<f64> = eig.iter().map(|e| e.0.hypot(e.1)).collect();
    let rho = eig[0].0;
    let a = m.transpose() - DMatrix::identity(n, n) * rho;
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(k, _)| k)
        .expect("non-empty");
    let mut mu: Vec<f64> = v_t.row(k).iter().copied().collect();
    let s: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|e| *e /= s);
    let ratio = if n > 1 { moduli[1] / rho } else { 0.0 };
    Ok(DenseSpectrum {
        eigenvalues: eig,
        moduli,
        rho,
        mu,
        ratio,
    })
}

/// `nu Q* / (nu Q* 1)`: the law after one step conditioned on survival.
pub fn conditional_pushforward(q: &SubstochasticMatrix, nu: &[f64]) -> Result<Vec<f64>, QsdError> {
    if nu.len() != q.dim() {
        return Err(QsdError::InvalidArgument(format!("distribution has {} entries, expected {}", nu.len(), q.dim())));
    }
    let mut y = vec![0.0; nu.len()];
    q.left_mul(nu, &mut y);
    let total = compensated_sum(y.iter().copied());
    if !(total > 0.0) {
        return Err(QsdError::TotalAbsorption);
    }
    y.iter_mut().for_each(|e| *e /= total);
    Ok(y)
}

/// QSD mass carried by the given grid ranks, which must be interior.
pub fn qsd_mass_in(solution: &QsdSolution, grid: &SimplexGrid, region: &[usize]) -> Result<f64, QsdError> {
    let mut parts = Vec::with_capacity(region.len());
    for &r in region {
        let pos = grid
            .interior_position(r)
            .ok_or_else(|| QsdError::InvalidArgument(format!("state {r} is not interior")))?;
        parts.push(solution.mu[pos]);
    }
    Ok(compensated_sum(parts).clamp(0.0, 1.0))
}

/// Mass of `mu` within Euclidean distance `eps` of `center`.
pub fn qsd_mass_near(solution: &QsdSolution, grid: &SimplexGrid, center: &[f64], eps: f64) -> f64 {
    let region: Vec<usize> = grid
        .epsilon_neighborhood(&[center.to_vec()], eps)
        .into_iter()
        .filter(|&r| !grid.is_boundary_rank(r))
        .collect();
    qsd_mass_in(solution, grid, &region).expect("interior region")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub gamma_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(N, log(1 - rho_N) + log N)`.
pub fn decay_fit(pairs: &[(f64, f64)]) -> Result<DecayFit, QsdError> {
    if pairs.len() < 3 {
        return Err(QsdError::InsufficientData(pairs.len()));
    }
    if let Some(&(n, value)) = pairs.iter().find(|p| !(p.1 > 0.0)) {
        return Err(QsdError::NonPositiveGap { n, value });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln() + p.0.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(QsdError::InvalidArgument("decay fit needs distinct N values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(DecayFit {
        gamma_hat: -slope,
        intercept,
        r_squared,
    })
}

/// Total-variation distance, on the cells of `coarse`, between `mu` and its
/// transport by the time-`t` flow map.
pub fn invariance_defect<V: VectorField + ?Sized>(
    solution: &QsdSolution,
    grid: &SimplexGrid,
    field: &V,
    t: f64,
    coarse: &SimplexGrid,
) -> Result<f64, QsdError> {
    let ranks = grid.interior_ranks();
    let moved: Vec<(usize, usize)> = ranks
        .par_iter()
        .map(|&r| -> Result<(usize, usize), QsdError> {
            let x = grid.coords(r);
            let y = flow::flow_map(field, &x, t)?;
            Ok((coarse.nearest(&x), coarse.nearest(&y)))
        })
        .collect::<Result<_, _>>()?;
    let mut before = vec![0.0; coarse.len()];
    let mut after = vec![0.0; coarse.len()];
    for (pos, (a, b)) in moved.into_iter().enumerate() {
        before[a] += solution.mu[pos];
        after[b] += solution.mu[pos];
    }
    Ok(0.5 * l1_diff(&before, &after))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_state() {
        let q = SubstochasticMatrix::from_dense(&[vec![0.5, 0.25], vec![0.25, 0.5]]);
        let s = solve_qsd(&q, QsdOptions::default()).unwrap();
        assert!((s.mu[0] - 0.5).abs() < 1e-12);
        assert!((s.rho - 0.75).abs() < 1e-12);
        assert!((s.expected_t0 - 4.0).abs() < 1e-10);
        let o = dense_oracle_qsd(&q).unwrap();
        assert!((o.moduli[0] - 0.75).abs() < 1e-12 && (o.moduli[1] - 0.25).abs() < 1e-12);
        assert!((o.ratio - 1.0 / 3.0).abs() < 1e-12);
        assert!((o.mu[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_by_one() {
        let q = SubstochasticMatrix::from_dense(&[vec![0.9]]);
        let s = solve_qsd(&q, QsdOptions::default()).unwrap();
        assert_eq!(s.mu, vec![1.0]);
        assert!((s.rho - 0.9).abs() < 1e-15);
        assert!((s.theta + 0.9f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn degenerate_inputs() {
        let id = SubstochasticMatrix::from_dense(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        assert_eq!(dense_oracle_qsd(&id).unwrap_err(), QsdError::NotSubstochastic);
        assert!(matches!(solve_qsd(&id, QsdOptions::default()), Err(QsdError::NotIrreducible { components: 3 })));
        let q = SubstochasticMatrix::from_dense(&[vec![0.5, 0.4], vec![0.1, 0.5]]);
        let r = solve_qsd(&q, QsdOptions { tol: 1e-12, max_iter: 2 });
        assert!(matches!(r, Err(QsdError::NoConvergence { max_iter: 2, .. })));
    }

    #[test]
    fn pushforward_fixed_point() {
        let q = SubstochasticMatrix::from_dense(&[vec![0.6, 0.3, 0.0], vec![0.1, 0.5, 0.3], vec![0.0, 0.4, 0.4]]);
        let s = solve_qsd(&q, QsdOptions::default()).unwrap();
        let p = conditional_pushforward(&q, &s.mu).unwrap();
        assert!(l1_diff(&p, &s.mu) < 1e-10);
        let zero = SubstochasticMatrix::from_dense(&[vec![0.0]]);
        assert_eq!(conditional_pushforward(&zero, &[1.0]).unwrap_err(), QsdError::TotalAbsorption);
    }

    #[test]
    fn exact_exponential_fit() {
        let pairs: Vec<(f64, f64)> = [10.0f64, 20.0, 30.0].iter().map(|&n| (n, (-n / 10.0).exp() / n)).collect();
        let f = decay_fit(&pairs).unwrap();
        assert!((f.gamma_hat - 0.1).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(decay_fit(&pairs[..1]).unwrap_err(), QsdError::InsufficientData(1));
        assert!(matches!(decay_fit(&[(1.0, 0.1), (2.0, 0.0), (3.0, 0.1)]), Err(QsdError::NonPositiveGap { .. })));
    }
}
