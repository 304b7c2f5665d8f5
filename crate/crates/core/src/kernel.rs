//! Transition kernel of the imitation chain on the discrete simplex,
//! path simulation and boundary-absorption diagnostics.

use crate::flow::{self, FlowError};
use crate::protocols::{ProtocolError, RevisionProtocol};
use crate::rng::{self, StreamRng};
use crate::simplex::{euclidean, moves_of, SimplexGrid};
use crate::sparse::{CsrMatrix, SubstochasticMatrix};
use rand::Rng;
use rayon::prelude::*;
use std::collections::VecDeque;
use std::io::{self, Write};
use thiserror::Error;

/// Default censoring cap for absorption sampling.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("protocol violation at state {state:?}: {reason}")]
    ProtocolViolation { state: Vec<u32>, reason: String },
    #[error("every one of the {0} samples hit the step cap")]
    AllCensored(usize),
    #[error("interior state {0:?} has no path to the boundary")]
    NoPathToBoundary(Vec<u32>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone)]
pub struct TransitionKernel {
    grid: SimplexGrid,
    protocol: RevisionProtocol,
    rows: CsrMatrix,
    /// Probability of leaving the current state, per state.
    leave: Vec<f64>,
    interior: SubstochasticMatrix,
}

impl TransitionKernel {
    pub fn assemble(protocol: &RevisionProtocol, grid: &SimplexGrid) -> Result<Self, KernelError> {
        if protocol.d() != grid.d() {
            return Err(KernelError::InvalidArgument(format!(
                "protocol has d = {}, grid has d = {}",
                protocol.d(),
                grid.d()
            )));
        }
        let d = grid.d();
        type Row = (Vec<(usize, f64)>, f64);
        let built: Vec<Row> = (0..grid.len())
            .into_par_iter()
            .map(|r| -> Result<Row, KernelError> {
                let point = grid.point(r);
                let violation = |reason: String| KernelError::ProtocolViolation {
                    state: point.to_vec(),
                    reason,
                };
                let x = grid.coords(r);
                let mut rates = vec![0.0; d * d];
                protocol
                    .rates_into(&x, &mut rates)
                    .map_err(|e: ProtocolError| violation(e.to_string()))?;
                for i in 0..d {
                    for j in 0..d {
                        let v = rates[i * d + j];
                        if i != j && v != 0.0 && point[i] == 0 {
                            return Err(violation(format!(
                                "positive rate p[{}][{}] = {v} from an unused strategy",
                                i + 1,
                                j + 1
                            )));
                        }
                        if v < 0.0 {
                            return Err(violation(format!("negative rate p[{}][{}] = {v}", i + 1, j + 1)));
                        }
                    }
                }
                let mut entries = Vec::with_capacity(d * (d - 1) + 1);
                for (i, j) in moves_of(point) {
                    let v = rates[i * d + j];
                    if v > 0.0 {
                        let target = grid.apply_move(r, i, j);
                        if grid.is_boundary_rank(r) && !grid.is_boundary_rank(target) {
                            return Err(violation(format!(
                                "move {} -> {} leaves the boundary",
                                i + 1,
                                j + 1
                            )));
                        }
                        entries.push((target, v));
                    }
                }
                let leave = compensated_sum(entries.iter().map(|e| e.1));
                if leave > 1.0 + 1e-12 {
                    return Err(violation(format!("row mass {leave} exceeds 1")));
                }
                let stay = (1.0 - leave).max(0.0);
                if stay > 0.0 {
                    entries.push((r, stay));
                }
                Ok((entries, leave.min(1.0)))
            })
            .collect::<Result<_, _>>()?;
        let (rows, leave): (Vec<_>, Vec<_>) = built.into_iter().unzip();
        let rows = CsrMatrix::from_rows(grid.len(), rows);

        let mut qrows = Vec::with_capacity(grid.interior_len());
        let mut leak = Vec::with_capacity(grid.interior_len());
        for &r in grid.interior_ranks() {
            let (cols, vals) = rows.row(r);
            let mut inside = Vec::new();
            let mut out = Vec::new();
            for (&c, &v) in cols.iter().zip(vals) {
                match grid.interior_position(c) {
                    Some(p) => inside.push((p, v)),
                    None => out.push(v),
                }
            }
            qrows.push(inside);
            leak.push(compensated_sum(out));
        }
        let interior = SubstochasticMatrix::new(CsrMatrix::from_rows(grid.interior_len(), qrows), leak);
        Ok(Self {
            grid: grid.clone(),
            protocol: protocol.clone(),
            rows,
            leave,
            interior,
        })
    }

    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn protocol(&self) -> &RevisionProtocol {
        &self.protocol
    }

    /// Full row-stochastic matrix over all grid states.
    pub fn rows(&self) -> &CsrMatrix {
        &self.rows
    }

    /// Interior restriction `Q*` with its exact one-step absorption mass.
    pub fn interior(&self) -> &SubstochasticMatrix {
        &self.interior
    }

    pub fn absorb_mass(&self) -> &[f64] {
        self.interior.leak()
    }

    pub fn leave_probability(&self, state: usize) -> f64 {
        self.leave[state]
    }

    /// Next state given a uniform draw `u` in `[0, 1)`.
    pub fn step(&self, state: usize, u: f64) -> usize {
        let (cols, vals) = self.rows.row(state);
        let mut acc = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            acc += v;
            if u < acc {
                return c;
            }
        }
        *cols.last().unwrap_or(&state)
    }

    /// A jump to a different state, drawn from the off-diagonal part of the row.
    fn jump<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let (cols, vals) = self.rows.row(state);
        let u = rng.random::<f64>() * self.leave[state];
        let mut acc = 0.0;
        let mut last = state;
        for (&c, &v) in cols.iter().zip(vals) {
            if c == state {
                continue;
            }
            acc += v;
            last = c;
            if u < acc {
                return c;
            }
        }
        last
    }

    /// Simulates `horizon` steps from `x0` using stream `(seed, 0)`.
    pub fn simulate(&self, x0: usize, horizon: usize, seed: u64) -> SimPath {
        let mut rng = rng::stream(seed, 0);
        self.simulate_with(x0, horizon, &mut rng)
    }

    pub fn simulate_with(&self, x0: usize, horizon: usize, rng: &mut StreamRng) -> SimPath {
        let mut states = Vec::with_capacity(horizon + 1);
        states.push(x0);
        let mut absorbed_at = self.grid.is_boundary_rank(x0).then_some(0);
        let mut s = x0;
        for k in 1..=horizon {
            s = self.step(s, rng.random::<f64>());
            states.push(s);
            if absorbed_at.is_none() && self.grid.is_boundary_rank(s) {
                absorbed_at = Some(k);
            }
        }
        SimPath { states, absorbed_at }
    }

    /// First boundary-hitting step from an interior start, skipping self-loops
    /// in geometric batches. Returns `(step, censored)`.
    pub fn absorption_time<R: Rng>(&self, start: usize, rng: &mut R, step_cap: u64) -> (u64, bool) {
        self.hitting_time(start, rng, step_cap, |s| !self.grid.is_boundary_rank(s))
    }

    /// First step at which the chain leaves the set described by `inside`
    /// (0 if the start is already outside). Returns `(step, censored)`.
    pub fn hitting_time<R: Rng, F: Fn(usize) -> bool>(&self, start: usize, rng: &mut R, step_cap: u64, inside: F) -> (u64, bool) {
        let mut t: u64 = 0;
        let mut s = start;
        while inside(s) {
            let p = self.leave[s];
            if p <= 0.0 {
                return (step_cap, true);
            }
            t = t.saturating_add(rng::geometric_trials(rng, p));
            if t >= step_cap {
                return (step_cap, true);
            }
            s = self.jump(s, rng);
        }
        (t, false)
    }

    /// I.i.d. samples of `T_0` with the start drawn from `initial`, a
    /// distribution over interior positions. Sample `k` uses stream `(seed, k)`.
    pub fn absorption_time_samples(
        &self,
        initial: &[f64],
        n_samples: usize,
        seed: u64,
        step_cap: u64,
    ) -> Result<AbsorptionSamples, KernelError> {
        if initial.len() != self.grid.interior_len() {
            return Err(KernelError::InvalidArgument(format!(
                "initial distribution has {} entries, expected {}",
                initial.len(),
                self.grid.interior_len()
            )));
        }
        if initial.iter().any(|v| *v < 0.0) || initial.iter().sum::<f64>() <= 0.0 {
            return Err(KernelError::InvalidArgument("initial distribution must be non-negative with positive mass".into()));
        }
        let mut cum = Vec::with_capacity(initial.len());
        let mut acc = 0.0;
        for v in initial {
            acc += v;
            cum.push(acc);
        }
        let ranks = self.grid.interior_ranks();
        let draws: Vec<(u64, bool)> = (0..n_samples)
            .into_par_iter()
            .map(|k| {
                let mut rng = rng::stream(seed, k as u64);
                let start = ranks[rng::pick_cumulative(&mut rng, &cum)];
                self.absorption_time(start, &mut rng, step_cap)
            })
            .collect();
        if !draws.is_empty() && draws.iter().all(|d| d.1) {
            return Err(KernelError::AllCensored(draws.len()));
        }
        let (samples, censored) = draws.into_iter().unzip();
        Ok(AbsorptionSamples { samples, censored })
    }

    /// Product lower bound on absorption into face `i` within `ceil(N b)`
    /// steps, along a descent that removes one `i` player per step.
    /// Returns `(bound, (1/N) log bound)`.
    pub fn boundary_absorption_lower_bound(&self, face: usize, b: f64) -> Result<(f64, f64), KernelError> {
        let d = self.grid.d();
        if face >= d {
            return Err(KernelError::InvalidArgument(format!("face {face} out of range for d = {d}")));
        }
        if !(b > 0.0 && b < 1.0) {
            return Err(KernelError::InvalidArgument(format!("b must lie in (0, 1), got {b}")));
        }
        let n = self.grid.n();
        let m = ((n as f64 * b).ceil() as u32).clamp(1, n);
        let mut point = vec![0u32; d];
        point[face] = m;
        let rest = n - m;
        let others: Vec<usize> = (0..d).filter(|&k| k != face).collect();
        for (k, &o) in others.iter().enumerate() {
            point[o] = rest / others.len() as u32 + u32::from((k as u32) < rest % others.len() as u32);
        }
        let mut x = vec![0.0; d];
        let mut rates = vec![0.0; d * d];
        let mut log_sum = 0.0;
        for _ in 0..m {
            for (xi, &c) in x.iter_mut().zip(&point) {
                *xi = c as f64 / n as f64;
            }
            self.protocol
                .rates_into(&x, &mut rates)
                .map_err(|e| KernelError::ProtocolViolation {
                    state: point.clone(),
                    reason: e.to_string(),
                })?;
            let q: f64 = rates[face * d..(face + 1) * d].iter().sum();
            log_sum += q.ln();
            let target = *others
                .iter()
                .min_by_key(|&&o| (point[o], o))
                .expect("d >= 2");
            point[face] -= 1;
            point[target] += 1;
        }
        Ok((log_sum.exp(), log_sum / n as f64))
    }

    /// Monte Carlo estimate of `sup_{x in K} P_x[|X^(1) - phi_1(x)| >= delta]`.
    pub fn beta_estimate(&self, k_set: &[usize], delta: f64, n_samples: usize, seed: u64) -> Result<BetaEstimate, KernelError> {
        if k_set.is_empty() || n_samples == 0 {
            return Err(KernelError::InvalidArgument("need a non-empty K and at least one sample".into()));
        }
        let horizon = self.grid.n() as usize;
        let per_state: Vec<StateExceedance> = k_set
            .par_iter()
            .enumerate()
            .map(|(k, &state)| -> Result<StateExceedance, KernelError> {
                let target = flow::flow_map(&self.protocol, &self.grid.coords(state), 1.0)?;
                let mut rng = rng::stream(seed, k as u64);
                let mut x = vec![0.0; self.grid.d()];
                let mut hits = 0usize;
                for _ in 0..n_samples {
                    let mut s = state;
                    for _ in 0..horizon {
                        s = self.step(s, rng.random::<f64>());
                    }
                    self.grid.coords_into(s, &mut x);
                    if euclidean(&x, &target) >= delta {
                        hits += 1;
                    }
                }
                let p = hits as f64 / n_samples as f64;
                Ok(StateExceedance {
                    state,
                    frequency: p,
                    half_width: 1.96 * (p * (1.0 - p) / n_samples as f64).sqrt(),
                })
            })
            .collect::<Result<_, _>>()?;
        let worst = per_state
            .iter()
            .max_by(|a, b| a.frequency.total_cmp(&b.frequency).then(b.state.cmp(&a.state)))
            .expect("non-empty");
        Ok(BetaEstimate {
            beta: worst.frequency,
            half_width: worst.half_width,
            per_state,
        })
    }

    /// Interior states with no positive-probability path to the boundary.
    pub fn unabsorbable_states(&self) -> Vec<usize> {
        let t = self.rows.transpose();
        let mut seen = vec![false; self.grid.len()];
        let mut queue: VecDeque<usize> = (0..self.grid.len()).filter(|&r| self.grid.is_boundary_rank(r)).collect();
        for &r in &queue {
            seen[r] = true;
        }
        while let Some(v) = queue.pop_front() {
            let (preds, vals) = t.row(v);
            for (&u, &p) in preds.iter().zip(vals) {
                if p > 0.0 && !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        self.grid.interior_ranks().iter().copied().filter(|&r| !seen[r]).collect()
    }

    /// Errors with the first interior state that cannot reach the boundary.
    pub fn check_absorbing(&self) -> Result<(), KernelError> {
        match self.unabsorbable_states().first() {
            Some(&r) => Err(KernelError::NoPathToBoundary(self.grid.point(r).to_vec())),
            None => Ok(()),
        }
    }

    /// Writes the full kernel as a 1-based sparse coordinate listing.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {} {}", self.grid.d(), self.grid.n(), self.protocol.fingerprint())?;
        writeln!(out, "{} {} {}", self.rows.nrows(), self.rows.ncols(), self.rows.nnz())?;
        for r in 0..self.rows.nrows() {
            let (cols, vals) = self.rows.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub states: Vec<usize>,
    /// First index whose state lies on the boundary.
    pub absorbed_at: Option<usize>,
}

impl SimPath {
    pub fn interpolate(&self, grid: &SimplexGrid) -> InterpolatedPath {
        interpolate(&self.states, grid)
    }
}

/// Piecewise-linear path with knots at `k / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedPath {
    knots: Vec<Vec<f64>>,
    n: f64,
}

pub fn interpolate(states: &[usize], grid: &SimplexGrid) -> InterpolatedPath {
    assert!(!states.is_empty(), "cannot interpolate an empty path");
    InterpolatedPath {
        knots: states.iter().map(|&s| grid.coords(s)).collect(),
        n: grid.n() as f64,
    }
}

impl InterpolatedPath {
    pub fn horizon(&self) -> f64 {
        (self.knots.len() - 1) as f64 / self.n
    }

    pub fn knots(&self) -> &[Vec<f64>] {
        &self.knots
    }

    /// Value at time `t`, clamped to `[0, horizon]`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let s = (t * self.n).clamp(0.0, (self.knots.len() - 1) as f64);
        let k = (s.floor() as usize).min(self.knots.len() - 1);
        let w = s - k as f64;
        if w == 0.0 || k + 1 == self.knots.len() {
            return self.knots[k].clone();
        }
        self.knots[k]
            .iter()
            .zip(&self.knots[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionSamples {
    pub samples: Vec<u64>,
    pub censored: Vec<bool>,
}

impl AbsorptionSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn censored_count(&self) -> usize {
        self.censored.iter().filter(|c| **c).count()
    }

    /// Mean and standard error, with censored samples counted at the cap.
    pub fn mean_and_se(&self) -> (f64, f64) {
        let n = self.samples.len() as f64;
        let mut sorted: Vec<f64> = self.samples.iter().map(|&s| s as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let mean = compensated_sum(sorted.iter().copied()) / n;
        let var = compensated_sum(sorted.iter().map(|s| (s - mean) * (s - mean))) / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    /// Empirical `P[T_0 > n]`.
    pub fn survival(&self, n: u64) -> f64 {
        self.samples.iter().filter(|&&s| s > n).count() as f64 / self.samples.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_unstable();
        let k = s.len();
        if k == 0 {
            f64::NAN
        } else if k % 2 == 1 {
            s[k / 2] as f64
        } else {
            0.5 * (s[k / 2 - 1] as f64 + s[k / 2] as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateExceedance {
    pub state: usize,
    pub frequency: f64,
    /// 95% Wald half-width.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaEstimate {
    pub beta: f64,
    pub half_width: f64,
    pub per_state: Vec<StateExceedance>,
}
