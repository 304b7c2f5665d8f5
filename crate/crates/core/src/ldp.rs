//! Large-deviation costs of the jump chain: log-moment generating function,
//! its Legendre transform, path actions, the discretized quasipotential and
//! the classes it induces.

use crate::flow::VectorField;
use crate::protocols::{ProtocolError, RevisionProtocol};
use crate::recurrence::{AtlasFlavor, AtlasParams, RecurrenceAtlas};
use crate::simplex::{euclidean, moves_of, SimplexGrid};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

/// Sentinel for an infinite cost.
pub const INF_COST: f64 = 1e9;
/// Objective values above this are treated as divergence of the supremum.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
pub const GRADIENT_TOL: f64 = 1e-10;
pub const DEFAULT_TAU_BOUNDS: (f64, f64) = (0.05, 50.0);
/// Relative width at which the travel-time search stops.
pub const TAU_REL_TOL: f64 = 1e-4;

const MAX_NEWTON: usize = 500;

/// `H`, its gradient and Hessian at one `(x, alpha)`.
struct Tilt {
    h: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RateFunctional {
    protocol: RevisionProtocol,
}

impl RateFunctional {
    pub fn new(protocol: &RevisionProtocol) -> Self {
        Self {
            protocol: protocol.clone(),
        }
    }

    pub fn protocol(&self) -> &RevisionProtocol {
        &self.protocol
    }

    pub fn d(&self) -> usize {
        self.protocol.d()
    }

    fn rates(&self, x: &[f64]) -> Result<(Vec<f64>, f64), ProtocolError> {
        let d = self.d();
        let mut rates = vec![0.0; d * d];
        self.protocol.rates_into(x, &mut rates)?;
        let stay = (1.0 - rates.iter().sum::<f64>()).max(0.0);
        Ok((rates, stay))
    }

    /// Tilted law of the jump `y` under weights `exp<alpha, y>`; `alpha` has
    /// `d` entries and only its differences matter.
    fn tilt(&self, rates: &[f64], stay: f64, alpha: &[f64], want_cov: bool) -> Tilt {
        let d = self.d();
        let mut shift: f64 = if stay > 0.0 { 0.0 } else { f64::NEG_INFINITY };
        for i in 0..d {
            for j in 0..d {
                if i != j && rates[i * d + j] > 0.0 {
                    shift = shift.max(alpha[j] - alpha[i]);
                }
            }
        }
        if !shift.is_finite() {
            // no mass at all: treat as a point mass at the origin
            shift = 0.0;
        }
        let mut z = stay * (-shift).exp();
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; if want_cov { d * d } else { 0 }];
        for i in 0..d {
            for j in 0..d {
                let p = rates[i * d + j];
                if i == j || p <= 0.0 {
                    continue;
                }
                let w = p * (alpha[j] - alpha[i] - shift).exp();
                z += w;
                mean[j] += w;
                mean[i] -= w;
                if want_cov {
                    // y = e_j - e_i: y y^T has +1 at (i,i),(j,j) and -1 at (i,j),(j,i)
                    second[i * d + i] += w;
                    second[j * d + j] += w;
                    second[i * d + j] -= w;
                    second[j * d + i] -= w;
                }
            }
        }
        if z <= 0.0 {
            return Tilt {
                h: 0.0,
                mean: vec![0.0; d],
                cov: vec![0.0; if want_cov { d * d } else { 0 }],
            };
        }
        mean.iter_mut().for_each(|m| *m /= z);
        let mut cov = second;
        if want_cov {
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] = cov[a * d + b] / z - mean[a] * mean[b];
                }
            }
        }
        // relative to the untilted law, so that H(x, 0) is exactly zero
        let h = if shift <= 30.0 {
            let mut excess = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let p = rates[i * d + j];
                    if i != j && p > 0.0 {
                        excess += p * (alpha[j] - alpha[i]).exp_m1();
                    }
                }
            }
            if excess > -1.0 {
                excess.ln_1p()
            } else {
                shift + z.ln()
            }
        } else {
            shift + z.ln()
        };
        Tilt { h, mean, cov }
    }

    /// `H(x, alpha) = log E exp<alpha, Y>`.
    pub fn log_mgf(&self, x: &[f64], alpha: &[f64]) -> Result<f64, ProtocolError> {
        let (rates, stay) = self.rates(x)?;
        Ok(self.tilt(&rates, stay, &project_alpha(alpha), false).h)
    }

    /// `grad_alpha H(x, alpha)`, the mean jump under the tilted law.
    pub fn grad_log_mgf(&self, x: &[f64], alpha: &[f64]) -> Result<Vec<f64>, ProtocolError> {
        let (rates, stay) = self.rates(x)?;
        Ok(self.tilt(&rates, stay, &project_alpha(alpha), false).mean)
    }

    /// `L(x, beta) = sup_alpha <alpha, beta> - H(x, alpha)`, or [`INF_COST`].
    pub fn local_rate(&self, x: &[f64], beta: &[f64]) -> Result<f64, ProtocolError> {
        let d = self.d();
        if beta.len() != d {
            return Err(ProtocolError::DimensionMismatch {
                expected: d,
                got: beta.len(),
            });
        }
        let scale = beta.iter().map(|b| b.abs()).fold(1.0, f64::max);
        if beta.iter().sum::<f64>().abs() > 1e-12 * scale {
            return Ok(INF_COST);
        }
        let (rates, stay) = self.rates(x)?;
        let k = d - 1;
        // alpha_d is pinned at zero
        let mut alpha = vec![0.0; d];
        let objective = |t: &Tilt, a: &[f64]| -> f64 { (0..k).map(|i| a[i] * beta[i]).sum::<f64>() - t.h };
        let mut tilt = self.tilt(&rates, stay, &alpha, true);
        let mut value = objective(&tilt, &alpha);
        let mut lambda = 1e-12;
        for _ in 0..MAX_NEWTON {
            let grad = DVector::from_fn(k, |i, _| beta[i] - tilt.mean[i]);
            if grad.norm() <= GRADIENT_TOL {
                break;
            }
            let cov = DMatrix::from_fn(k, k, |a, b| tilt.cov[a * d + b]);
            let mut accepted = false;
            for _ in 0..60 {
                let sys = &cov + DMatrix::identity(k, k) * lambda;
                let Some(step) = sys.lu().solve(&grad) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut trial = alpha.clone();
                for i in 0..k {
                    trial[i] += step[i];
                }
                let t = self.tilt(&rates, stay, &trial, true);
                let v = objective(&t, &trial);
                if v.is_finite() && v >= value {
                    alpha = trial;
                    tilt = t;
                    value = v;
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
            }
            if value > DIVERGENCE_THRESHOLD {
                return Ok(INF_COST);
            }
            if !accepted {
                break;
            }
        }
        if value > DIVERGENCE_THRESHOLD {
            return Ok(INF_COST);
        }
        Ok(value.max(0.0))
    }

    /// Action of a piecewise-linear path, three Gauss nodes per segment.
    pub fn path_cost(&self, times: &[f64], points: &[Vec<f64>]) -> Result<f64, ProtocolError> {
        assert_eq!(times.len(), points.len(), "one time per knot");
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let mut total = 0.0;
        for w in 0..times.len().saturating_sub(1) {
            let dt = times[w + 1] - times[w];
            assert!(dt > 0.0, "knot times must increase");
            let (a, b) = (&points[w], &points[w + 1]);
            let v: Vec<f64> = a.iter().zip(b).map(|(p, q)| (q - p) / dt).collect();
            for (node, weight) in NODES.iter().zip(WEIGHTS) {
                let s = 0.5 * (1.0 + node);
                let x: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect();
                let l = self.local_rate(&x, &v)?;
                if l >= INF_COST {
                    return Ok(INF_COST);
                }
                total += 0.5 * dt * weight * l;
            }
        }
        Ok(total.min(INF_COST))
    }

    /// Cheapest straight-line transit from `u` to `v` over travel times in
    /// `tau_bounds`. Returns `(cost, tau)`, with cost [`INF_COST`] if the
    /// direction is outside the jump support.
    pub fn edge_cost(&self, u: &[f64], v: &[f64], tau_bounds: (f64, f64)) -> Result<(f64, f64), ProtocolError> {
        let mid: Vec<f64> = u.iter().zip(v).map(|(a, b)| 0.5 * (a + b)).collect();
        let dx: Vec<f64> = u.iter().zip(v).map(|(a, b)| b - a).collect();
        let f = |log_tau: f64| -> Result<f64, ProtocolError> {
            let tau = log_tau.exp();
            let beta: Vec<f64> = dx.iter().map(|c| c / tau).collect();
            let l = self.local_rate(&mid, &beta)?;
            Ok(if l >= INF_COST { INF_COST } else { tau * l })
        };
        let (lo, hi) = (tau_bounds.0.ln(), tau_bounds.1.ln());
        // the support is star-shaped about 0, so the slowest transit is the
        // last one to stay feasible
        if f(hi)? >= INF_COST {
            return Ok((INF_COST, tau_bounds.1));
        }
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = f(c)?;
        let mut fd = f(d)?;
        while (b - a) > TAU_REL_TOL.ln_1p() {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d)?;
            }
        }
        let mut best = if fc <= fd { (fc, c) } else { (fd, d) };
        for end in [lo, hi] {
            let fe = f(end)?;
            if fe < best.0 {
                best = (fe, end);
            }
        }
        Ok((best.0, best.1.exp()))
    }
}

/// Subtracts the mean so that `alpha` lies in the sum-zero subspace.
pub fn project_alpha(alpha: &[f64]) -> Vec<f64> {
    let m = alpha.iter().sum::<f64>() / alpha.len() as f64;
    alpha.iter().map(|a| a - m).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostEdge {
    pub src: usize,
    pub dst: usize,
    pub cost: f64,
    pub tau: f64,
}

/// Directed neighbor graph on the cells of `Delta_M` that lie in `V_alpha`.
#[derive(Debug, Clone)]
pub struct CostGraph {
    grid: SimplexGrid,
    nodes: Vec<usize>,
    index: HashMap<usize, usize>,
    edges: Vec<CostEdge>,
    adjacency: Vec<Vec<(usize, f64)>>,
    /// Cost of resting at the node for the longest admissible time.
    hold: Vec<f64>,
    /// Along-flow edge costs, used for the default class threshold.
    along_flow: Vec<f64>,
    pub tau_bounds: (f64, f64),
    pub alpha_margin: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CostGraphOptions {
    pub tau_bounds: (f64, f64),
    /// Minimum coordinate of a node; `None` means `1 / (2M)`.
    pub alpha_margin: Option<f64>,
}

impl Default for CostGraphOptions {
    fn default() -> Self {
        Self {
            tau_bounds: DEFAULT_TAU_BOUNDS,
            alpha_margin: None,
        }
    }
}

pub fn default_m(d: usize) -> u32 {
    if d == 2 {
        60
    } else {
        40
    }
}

pub fn build_cost_graph(rf: &RateFunctional, m: u32, opts: CostGraphOptions) -> Result<CostGraph, ProtocolError> {
    let (t0, t1) = opts.tau_bounds;
    if !(t0 > 0.0 && t0 < t1) {
        return Err(ProtocolError::InvalidParameter(format!("tau bounds need 0 < min < max, got [{t0}, {t1}]")));
    }
    let grid = SimplexGrid::new(rf.d(), m).map_err(|e| ProtocolError::InvalidParameter(e.to_string()))?;
    let margin = opts.alpha_margin.unwrap_or(1.0 / (2.0 * m as f64));
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&r| grid.point(r).iter().all(|&c| c as f64 / m as f64 >= margin - 1e-12) && !grid.is_boundary_rank(r))
        .collect();
    let index: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let pairs: Vec<(usize, usize)> = nodes
        .iter()
        .flat_map(|&r| {
            moves_of(grid.point(r))
                .into_iter()
                .map(move |(i, j)| (r, i, j))
        })
        .filter_map(|(r, i, j)| {
            let t = grid.apply_move(r, i, j);
            index.contains_key(&t).then_some((r, t))
        })
        .collect();
    let costs: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(u, v)| rf.edge_cost(&grid.coords(u), &grid.coords(v), opts.tau_bounds))
        .collect::<Result<_, _>>()?;
    let hold: Vec<f64> = nodes
        .par_iter()
        .map(|&r| -> Result<f64, ProtocolError> {
            let x = grid.coords(r);
            let l = rf.local_rate(&x, &vec![0.0; x.len()])?;
            Ok(if l >= INF_COST { INF_COST } else { (t1 * l).min(INF_COST) })
        })
        .collect::<Result<_, _>>()?;
    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (&(u, v), &(cost, tau)) in pairs.iter().zip(&costs) {
        if cost >= DIVERGENCE_THRESHOLD {
            continue;
        }
        adjacency[index[&u]].push((index[&v], cost));
        edges.push(CostEdge { src: u, dst: v, cost, tau });
    }
    // along-flow edges: the out-edge best aligned with F at its source
    let mut along_flow = Vec::new();
    for (k, &r) in nodes.iter().enumerate() {
        let x = grid.coords(r);
        let f = rf.protocol().mean_field(&x)?;
        let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if fnorm < 1e-12 {
            continue;
        }
        let mut best: Option<(f64, f64)> = None;
        for &(t, cost) in &adjacency[k] {
            let y = grid.coords(nodes[t]);
            let dx: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let cos = dx.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / (fnorm * euclidean(&y, &x));
            if cos > 0.0 && best.is_none_or(|b| cos > b.0) {
                best = Some((cos, cost));
            }
        }
        if let Some((_, c)) = best {
            along_flow.push(c);
        }
    }
    Ok(CostGraph {
        grid,
        nodes,
        index,
        edges,
        adjacency,
        hold,
        along_flow,
        tau_bounds: opts.tau_bounds,
        alpha_margin: margin,
    })
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    cost: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on node index
        other.cost.total_cmp(&self.cost).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl CostGraph {
    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    /// Grid ranks of the nodes, increasing.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[CostEdge] {
        &self.edges
    }

    pub fn hold_costs(&self) -> &[f64] {
        &self.hold
    }

    pub fn node_index(&self, rank: usize) -> Option<usize> {
        self.index.get(&rank).copied()
    }

    /// Twice the 95th percentile (nearest rank) of the along-flow edge costs.
    pub fn default_eps_class(&self) -> f64 {
        let mut c = self.along_flow.clone();
        if c.is_empty() {
            return 1e-9;
        }
        c.sort_by(f64::total_cmp);
        let k = ((0.95 * c.len() as f64).ceil() as usize).clamp(1, c.len()) - 1;
        (2.0 * c[k]).max(1e-9)
    }

    /// Shortest-path costs from a set of node indices to every node.
    pub fn distances_from(&self, sources: &[usize]) -> Vec<f64> {
        let mut dist = vec![INF_COST; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(HeapItem { cost: 0.0, node: s });
        }
        while let Some(HeapItem { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, w) in &self.adjacency[node] {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(HeapItem { cost: c, node: next });
                }
            }
        }
        dist
    }

    /// `B` from any source cell to the nearest target cell, by grid rank.
    pub fn quasipotential(&self, sources: &[usize], targets: &[usize]) -> f64 {
        let src: Vec<usize> = sources.iter().filter_map(|r| self.node_index(*r)).collect();
        if src.is_empty() {
            return INF_COST;
        }
        let dist = self.distances_from(&src);
        targets
            .iter()
            .filter_map(|r| self.node_index(*r))
            .map(|t| dist[t])
            .fold(INF_COST, f64::min)
    }

    /// All-pairs shortest-path matrix over node indices.
    pub fn all_pairs(&self) -> Vec<Vec<f64>> {
        (0..self.nodes.len()).into_par_iter().map(|s| self.distances_from(&[s])).collect()
    }

    /// Edge list as CSV `src_rank,dst_rank,cost,tau_opt`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("src_rank,dst_rank,cost,tau_opt\n");
        for e in &self.edges {
            s.push_str(&format!("{},{},{:e},{:e}\n", e.src, e.dst, e.cost, e.tau));
        }
        s
    }
}

/// Classes of the relation `B(u, v) <= eps_class` among recurrent cells.
pub fn l_classes(graph: &CostGraph, eps_class: f64) -> RecurrenceAtlas {
    let n = graph.nodes.len();
    let b = graph.all_pairs();
    let recurrent: Vec<bool> = (0..n)
        .map(|u| {
            graph.hold[u] <= eps_class
                || graph.adjacency[u]
                    .iter()
                    .any(|&(w, c)| w != u && c + b[w][u] <= eps_class)
        })
        .collect();
    let relation: Vec<Vec<usize>> = (0..n)
        .map(|u| (0..n).filter(|&v| v != u && b[u][v] <= eps_class).collect())
        .collect();
    RecurrenceAtlas::from_relation(
        AtlasFlavor::L,
        &graph.grid,
        &graph.nodes,
        &relation,
        &recurrent,
        AtlasParams::L { eps_class },
    )
}

/// `F` restricted to what the rate functional sees; used by tests.
pub fn drift<V: VectorField + ?Sized>(field: &V, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    field.eval(x, &mut out).expect("field evaluation");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::PayoffGame;

    fn hd() -> RateFunctional {
        RateFunctional::new(&RevisionProtocol::aspiration_uniform(PayoffGame::hawk_dove(2.0, 4.0), 0.5).unwrap())
    }

    #[test]
    fn mgf_basics() {
        let rf = hd();
        assert_eq!(rf.log_mgf(&[0.3, 0.7], &[0.0, 0.0]).unwrap(), 0.0);
        let z = RateFunctional::new(&RevisionProtocol::zero(3));
        assert_eq!(z.log_mgf(&[0.2, 0.3, 0.5], &[1.0, -2.0, 0.5]).unwrap(), 0.0);
        assert_eq!(z.local_rate(&[0.2, 0.3, 0.5], &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(z.local_rate(&[0.2, 0.3, 0.5], &[0.1, -0.1, 0.0]).unwrap(), INF_COST);
    }

    #[test]
    fn rate_vanishes_on_flow() {
        let rf = hd();
        for x1 in [0.1, 0.3, 0.5, 0.8] {
            let x = [x1, 1.0 - x1];
            let f = rf.protocol().mean_field(&x).unwrap();
            assert!(rf.local_rate(&x, &f).unwrap() <= 1e-8);
            let against = [-f[0] - 0.01, f[0] + 0.01];
            assert!(rf.local_rate(&x, &against).unwrap() > 0.0);
        }
        assert_eq!(rf.local_rate(&[0.5, 0.5], &[0.1, 0.0]).unwrap(), INF_COST);
    }

    #[test]
    fn legendre_duality() {
        let rf = hd();
        let x = [0.35, 0.65];
        for a in [-1.0, -0.2, 0.4, 2.0] {
            let alpha = [a, 0.0];
            let g = rf.grad_log_mgf(&x, &alpha).unwrap();
            let h = rf.log_mgf(&x, &alpha).unwrap();
            let inner: f64 = project_alpha(&alpha).iter().zip(&g).map(|(p, q)| p * q).sum();
            assert!((rf.local_rate(&x, &g).unwrap() + h - inner).abs() < 1e-9);
        }
    }

    #[test]
    fn hawk_dove_cost_graph() {
        let rf = hd();
        let g = build_cost_graph(&rf, 60, CostGraphOptions::default()).unwrap();
        assert_eq!(g.nodes().len(), 59);
        assert!(g.edges().len() <= 2 * 59);
        assert!(g.edges().iter().all(|e| e.cost >= 0.0));
        let star = g.grid().rank(&[30, 30]).unwrap();
        assert_eq!(g.quasipotential(&[star], &[star]), 0.0);
        let atlas = l_classes(&g, g.default_eps_class());
        let interior: Vec<_> = atlas.classes.iter().enumerate().filter(|(_, c)| c.contains(&star)).collect();
        assert_eq!(interior.len(), 1);
        assert!(atlas.quasi_attractor[interior[0].0]);
        assert_eq!(atlas.classes.len(), 1);
        let giant = l_classes(&g, 1e8);
        assert_eq!(giant.classes.len(), 1);
        assert_eq!(giant.classes[0].len(), 59);
    }
}
