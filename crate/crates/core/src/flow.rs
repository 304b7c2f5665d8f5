//! Mean-field flow `x' = F(x)` on the simplex: integration, flow maps,
//! attractor detection and the deviation statistic of the interpolated chain.

use crate::kernel::TransitionKernel;
use crate::protocols::{ProtocolError, RevisionProtocol};
use crate::rng;
use crate::simplex::{euclidean, SimplexGrid};
use rand::Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::RwLock;
use thiserror::Error;

/// Local error target for one integration step.
pub const LOCAL_TOL: f64 = 1e-9;
/// Smallest admissible substep.
pub const MIN_STEP: f64 = 1e-12;

pub const DEFAULT_TRANSIENT_T: f64 = 200.0;
pub const DEFAULT_WINDOW_T: f64 = 50.0;
pub const CHECKPOINT_SPACING: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step size fell below {MIN_STEP} at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid flow argument: {0}")]
    InvalidArgument(String),
    #[error("no tested neighborhood converges to the candidate attractor")]
    NoConvergence,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// A vector field tangent to the simplex.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FlowError>;
}

impl VectorField for RevisionProtocol {
    fn dim(&self) -> usize {
        self.d()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FlowError> {
        let f = self.mean_field(x)?;
        out.copy_from_slice(&f);
        Ok(())
    }
}

/// Field given by a closure; handy for analytic fields.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FlowError> {
        (self.f)(x, out);
        Ok(())
    }
}

/// Clip negative coordinates and renormalize onto the simplex.
pub fn project(x: &mut [f64]) {
    let mut s = 0.0;
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
        s += *v;
    }
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, Vec::len);
        let mut s = String::from("t");
        for i in 1..=d {
            s.push_str(&format!(",x_{i}"));
        }
        s.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            s.push_str(&format!("{t}"));
            for v in x {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

struct Stepper<'a, V: VectorField + ?Sized> {
    field: &'a V,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a, V: VectorField + ?Sized> Stepper<'a, V> {
    fn new(field: &'a V) -> Self {
        let d = field.dim();
        Self {
            field,
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            tmp: vec![0.0; d],
        }
    }

    fn stage(&mut self, x: &[f64], from: Option<usize>, c: f64, into: usize) -> Result<(), FlowError> {
        for i in 0..x.len() {
            self.tmp[i] = x[i] + from.map_or(0.0, |k| c * self.k[k][i]);
        }
        project(&mut self.tmp);
        let (tmp, k) = (&self.tmp, &mut self.k[into]);
        self.field.eval(tmp, k)
    }

    /// One classical fourth-order step of size `h`, written to `out`.
    fn rk4(&mut self, x: &[f64], h: f64, out: &mut [f64]) -> Result<(), FlowError> {
        self.stage(x, None, 0.0, 0)?;
        self.stage(x, Some(0), h / 2.0, 1)?;
        self.stage(x, Some(1), h / 2.0, 2)?;
        self.stage(x, Some(2), h, 3)?;
        for i in 0..x.len() {
            out[i] = x[i] + h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        project(out);
        Ok(())
    }

    /// Advances `x` by `span` with step-doubling error control.
    fn advance(&mut self, x: &mut Vec<f64>, t0: f64, span: f64, hint: &mut f64) -> Result<(), FlowError> {
        let d = x.len();
        let mut full = vec![0.0; d];
        let mut half = vec![0.0; d];
        let mut two = vec![0.0; d];
        let mut done = 0.0;
        while done < span {
            let mut h = hint.min(span - done);
            loop {
                if h < MIN_STEP {
                    return Err(FlowError::StepUnderflow { t: t0 + done });
                }
                self.rk4(x, h, &mut full)?;
                self.rk4(x, h / 2.0, &mut half)?;
                self.rk4(&half, h / 2.0, &mut two)?;
                let err = two
                    .iter()
                    .zip(&full)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / 15.0;
                if err <= LOCAL_TOL {
                    x.copy_from_slice(&two);
                    done += h;
                    if span - done < 1e-14 * span.max(1.0) {
                        done = span;
                    }
                    *hint = if err < LOCAL_TOL / 32.0 { h * 2.0 } else { h };
                    break;
                }
                h /= 2.0;
            }
        }
        Ok(())
    }
}

fn check_point(field: &(impl VectorField + ?Sized), x0: &[f64]) -> Result<(), FlowError> {
    if x0.len() != field.dim() {
        return Err(FlowError::InvalidArgument(format!(
            "point has {} coordinates, field has {}",
            x0.len(),
            field.dim()
        )));
    }
    let s: f64 = x0.iter().sum();
    if x0.iter().any(|v| *v < -1e-12 || !v.is_finite()) || (s - 1.0).abs() > 1e-10 {
        return Err(FlowError::InvalidArgument(format!("{x0:?} is not on the simplex")));
    }
    Ok(())
}

/// Integrates from `x0` over `[0, t_end]`, recording states every `h`.
pub fn integrate<V: VectorField + ?Sized>(field: &V, x0: &[f64], t_end: f64, h: f64) -> Result<Trajectory, FlowError> {
    check_point(field, x0)?;
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(FlowError::InvalidArgument(format!("need h > 0 and T >= 0, got h={h}, T={t_end}")));
    }
    if h < MIN_STEP {
        return Err(FlowError::StepUnderflow { t: 0.0 });
    }
    let mut stepper = Stepper::new(field);
    let mut x = x0.to_vec();
    project(&mut x);
    let steps = (t_end / h - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x.clone());
    let mut hint = h;
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * h;
        let t_next = if k == steps { t_end } else { k as f64 * h };
        stepper.advance(&mut x, t_prev, t_next - t_prev, &mut hint)?;
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// `phi_t(x)`.
pub fn flow_map<V: VectorField + ?Sized>(field: &V, x: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    check_point(field, x)?;
    let mut y = x.to_vec();
    if t == 0.0 {
        return Ok(y);
    }
    project(&mut y);
    let mut hint = t.min(1.0);
    Stepper::new(field).advance(&mut y, 0.0, t, &mut hint)?;
    Ok(y)
}

/// Flow-map evaluations keyed by `(cell rank, t)`. Values are deterministic,
/// so concurrent writers can only store identical entries.
pub struct FlowCache<'a, V: VectorField + ?Sized> {
    field: &'a V,
    cache: RwLock<HashMap<(usize, u64), Vec<f64>>>,
}

impl<'a, V: VectorField + ?Sized> FlowCache<'a, V> {
    pub fn new(field: &'a V) -> Self {
        Self {
            field,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn field(&self) -> &V {
        self.field
    }

    pub fn map(&self, cell: usize, x: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        let key = (cell, t.to_bits());
        if let Some(v) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let y = flow_map(self.field, x, t)?;
        self.cache.write().expect("cache lock").insert(key, y.clone());
        Ok(y)
    }

    pub fn insert(&self, cell: usize, t: f64, y: Vec<f64>) {
        self.cache.write().expect("cache lock").insert((cell, t.to_bits()), y);
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorReport {
    /// Ranks of `resolution` grid cells visited after the transient.
    pub attractor_cells: Vec<usize>,
    pub fundamental_neighborhood: Vec<usize>,
    /// `(t, max over U of d(phi_t(x), A))` at the checkpoints.
    pub uniform_convergence_profile: Vec<(f64, f64)>,
    pub interior_flag: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct AttractorOptions {
    pub transient_t: f64,
    pub window_t: f64,
    pub sample_dt: f64,
}

impl Default for AttractorOptions {
    fn default() -> Self {
        Self {
            transient_t: DEFAULT_TRANSIENT_T,
            window_t: DEFAULT_WINDOW_T,
            sample_dt: 0.1,
        }
    }
}

fn distance_to_set(x: &[f64], set: &[Vec<f64>]) -> f64 {
    set.iter().map(|c| euclidean(x, c)).fold(f64::INFINITY, f64::min)
}

/// Locates an attracting set (at the resolution of `grid`) from the given
/// seeds and grows a fundamental neighborhood around it.
pub fn find_attractor<V: VectorField + ?Sized>(
    field: &V,
    seeds: &[Vec<f64>],
    grid: &SimplexGrid,
    opts: AttractorOptions,
) -> Result<AttractorReport, FlowError> {
    if seeds.is_empty() {
        return Err(FlowError::InvalidArgument("seed set is empty".into()));
    }
    let total_t = opts.transient_t + opts.window_t;
    let visited: Vec<Vec<usize>> = seeds
        .par_iter()
        .map(|s| -> Result<Vec<usize>, FlowError> {
            let start = flow_map(field, s, opts.transient_t)?;
            let tr = integrate(field, &start, opts.window_t, opts.sample_dt)?;
            Ok(tr.states.iter().map(|x| grid.nearest(x)).collect())
        })
        .collect::<Result<_, _>>()?;
    let mut cells: Vec<usize> = visited.into_iter().flatten().collect();
    cells.sort_unstable();
    cells.dedup();
    let centers: Vec<Vec<f64>> = cells.iter().map(|&c| grid.coords(c)).collect();
    let width = grid.cell_width();

    let checkpoints: Vec<f64> = {
        let n = (total_t / CHECKPOINT_SPACING).floor() as usize;
        (0..=n).map(|k| k as f64 * CHECKPOINT_SPACING).collect()
    };
    // per-cell distance profile, computed once per cell
    let mut profiles: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut best: Option<(Vec<usize>, Vec<(f64, f64)>)> = None;
    let mut radius = 0usize;
    loop {
        let hood = grid.epsilon_neighborhood(&centers, radius as f64 * width + 1e-9 * width);
        let missing: Vec<usize> = hood.iter().copied().filter(|c| !profiles.contains_key(c)).collect();
        let fresh: Vec<(usize, Vec<f64>)> = missing
            .par_iter()
            .map(|&c| -> Result<(usize, Vec<f64>), FlowError> {
                let mut x = grid.coords(c);
                let mut prof = Vec::with_capacity(checkpoints.len());
                let mut t = 0.0;
                for &tc in &checkpoints {
                    if tc > t {
                        x = flow_map(field, &x, tc - t)?;
                        t = tc;
                    }
                    prof.push(distance_to_set(&x, &centers));
                }
                Ok((c, prof))
            })
            .collect::<Result<_, _>>()?;
        profiles.extend(fresh);
        let profile: Vec<(f64, f64)> = checkpoints
            .iter()
            .enumerate()
            .map(|(k, &t)| (t, hood.iter().map(|c| profiles[c][k]).fold(0.0, f64::max)))
            .collect();
        let settled = profile
            .iter()
            .filter(|(t, _)| *t >= opts.transient_t)
            .all(|(_, v)| *v <= width);
        if !settled {
            break;
        }
        let covers_all = hood.len() == grid.len();
        best = Some((hood, profile));
        if covers_all {
            break;
        }
        radius += 1;
    }
    let (fundamental_neighborhood, uniform_convergence_profile) = best.ok_or(FlowError::NoConvergence)?;
    let interior_flag = cells.iter().all(|&c| grid.point(c).iter().all(|&n| n >= 2));
    Ok(AttractorReport {
        attractor_cells: cells,
        fundamental_neighborhood,
        uniform_convergence_profile,
        interior_flag,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    /// One sample of `max_k |X_k - phi_{k/N}(x0)|` per path.
    pub samples: Vec<f64>,
    pub horizon_steps: usize,
}

impl DeviationReport {
    /// Empirical `P[D >= eps]`.
    pub fn exceedance(&self, eps: f64) -> f64 {
        self.samples.iter().filter(|&&d| d >= eps).count() as f64 / self.samples.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    }
}

/// Samples `D^N(T) = max_{t <= T} |X^N(t) - phi_t(x0)|` over interpolation knots.
pub fn deviation_statistic(
    kernel: &TransitionKernel,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<DeviationReport, FlowError> {
    if !(horizon > 0.0) {
        return Err(FlowError::InvalidArgument("horizon must be positive".into()));
    }
    let grid = kernel.grid();
    let n = grid.n() as f64;
    let steps = (horizon * n).round() as usize;
    let reference = integrate(kernel.protocol(), &grid.coords(x0), steps as f64 / n, 1.0 / n)?;
    let d = grid.d();
    let samples = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, p as u64);
            let mut state = x0;
            let mut x = vec![0.0; d];
            let mut worst: f64 = 0.0;
            for k in 0..=steps {
                if k > 0 {
                    state = kernel.step(state, rng.random::<f64>());
                }
                grid.coords_into(state, &mut x);
                worst = worst.max(euclidean(&x, &reference.states[k]));
            }
            worst
        })
        .collect();
    Ok(DeviationReport {
        samples,
        horizon_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::PayoffGame;

    fn hawk_dove_replicator() -> FnField<impl Fn(&[f64], &mut [f64]) + Sync> {
        FnField {
            dim: 2,
            f: |x: &[f64], out: &mut [f64]| {
                let v = x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[0]);
                out[0] = v;
                out[1] = -v;
            },
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let zero = FnField {
            dim: 3,
            f: |_: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0),
        };
        let tr = integrate(&zero, &[0.2, 0.3, 0.5], 5.0, 0.5).unwrap();
        assert_eq!(tr.times.len(), 11);
        assert!(tr.states.iter().all(|s| s == &vec![0.2, 0.3, 0.5]));
    }

    #[test]
    fn hawk_dove_converges_to_half() {
        let f = hawk_dove_replicator();
        let tr = integrate(&f, &[0.25, 0.75], 50.0, 0.1).unwrap();
        assert!((tr.terminal()[0] - 0.5).abs() < 1e-6);
        let y = flow_map(&f, &[0.25, 0.75], 50.0).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-6);
        assert_eq!(flow_map(&f, &[0.25, 0.75], 0.0).unwrap(), vec![0.25, 0.75]);
        // the same through the protocol's own mean field
        let p = RevisionProtocol::pairwise_proportional(PayoffGame::hawk_dove(2.0, 4.0), 1.0).unwrap();
        let z = flow_map(&p, &[0.25, 0.75], 50.0).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn vertices_are_fixed() {
        let p = RevisionProtocol::aspiration_uniform(PayoffGame::rock_paper_scissors(3.0, 1.0), 0.5).unwrap();
        for v in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            assert_eq!(flow_map(&p, &v, 10.0).unwrap(), v.to_vec());
        }
        let b = [1.0 / 3.0; 3];
        let y = flow_map(&p, &b, 10.0).unwrap();
        assert!(euclidean(&y, &b) < 1e-8);
    }

    #[test]
    fn semigroup_property() {
        let p = RevisionProtocol::aspiration_uniform(PayoffGame::rock_paper_scissors(3.0, 1.0), 1.0).unwrap();
        let mut r = rng::stream(5, 0);
        for _ in 0..20 {
            let mut x: Vec<f64> = (0..3).map(|_| r.random::<f64>() + 0.05).collect();
            project(&mut x);
            let s = r.random::<f64>() * 5.0;
            let t = r.random::<f64>() * 5.0;
            let a = flow_map(&p, &x, s + t).unwrap();
            let b = flow_map(&p, &flow_map(&p, &x, s).unwrap(), t).unwrap();
            assert!(euclidean(&a, &b) < 1e-7);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = hawk_dove_replicator();
        assert!(matches!(integrate(&f, &[0.5, 0.6], 1.0, 0.1), Err(FlowError::InvalidArgument(_))));
        assert!(matches!(integrate(&f, &[0.5, 0.5], 1.0, 1e-13), Err(FlowError::StepUnderflow { .. })));
    }

    #[test]
    fn attractor_of_hawk_dove() {
        let f = hawk_dove_replicator();
        let grid = SimplexGrid::new(2, 20).unwrap();
        let seeds: Vec<Vec<f64>> = vec![vec![0.2, 0.8], vec![0.7, 0.3]];
        let rep = find_attractor(&f, &seeds, &grid, AttractorOptions::default()).unwrap();
        assert_eq!(rep.attractor_cells, vec![grid.rank(&[10, 10]).unwrap()]);
        assert!(rep.interior_flag);
        assert!(rep.attractor_cells.iter().all(|c| rep.fundamental_neighborhood.contains(c)));
        let tail: Vec<f64> = rep
            .uniform_convergence_profile
            .iter()
            .filter(|(t, _)| *t >= 200.0)
            .map(|p| p.1)
            .collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn coordination_attracts_to_vertices() {
        let p = RevisionProtocol::pairwise_proportional(PayoffGame::coordination(1.0, 1.0), 1.0).unwrap();
        let grid = SimplexGrid::new(2, 20).unwrap();
        let seeds = vec![vec![0.3, 0.7], vec![0.7, 0.3]];
        let rep = find_attractor(&p, &seeds, &grid, AttractorOptions::default()).unwrap();
        assert!(!rep.interior_flag);
        for c in &rep.attractor_cells {
            assert!(grid.is_boundary_rank(*c));
        }
    }
}
