//! Absorption-preserving pseudo-orbit recurrence on a coarse grid, class
//! atlases shared with the cost-based notion, atlas comparison and exit times.

use crate::flow::{self, FlowCache, FlowError, VectorField};
use crate::kernel::{KernelError, TransitionKernel};
use crate::rng;
use crate::simplex::{euclidean, SimplexGrid};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;

/// Pseudo-orbit jump size in cell widths.
pub const DEFAULT_DELTA_CELLS: f64 = 2.0;
pub const DEFAULT_T: f64 = 50.0;
pub const DEFAULT_T_MAX: f64 = 200.0;
pub const DEFAULT_PILOT: usize = 100;
/// Hausdorff tolerance, in cell widths, for calling two classes a match.
pub const MATCH_TOLERANCE_CELLS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AtlasFlavor {
    L,
    AP,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AtlasParams {
    L { eps_class: f64 },
    AP { delta: f64, t: f64, t_max: f64 },
}

/// Basic classes of a recurrence notion on `Delta_M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceAtlas {
    pub flavor: AtlasFlavor,
    pub d: usize,
    pub m: u32,
    /// Cell ranks per class; classes sorted by their smallest rank.
    pub classes: Vec<Vec<usize>>,
    /// `(a, b)`: class `a` reaches class `b`.
    pub order: Vec<(usize, usize)>,
    pub quasi_attractor: Vec<bool>,
    pub params: AtlasParams,
}

impl RecurrenceAtlas {
    /// Builds the atlas of a relation given as adjacency over `nodes` (grid
    /// ranks). Classes are the strongly connected components made of
    /// recurrent nodes.
    pub fn from_relation(
        flavor: AtlasFlavor,
        grid: &SimplexGrid,
        nodes: &[usize],
        relation: &[Vec<usize>],
        recurrent: &[bool],
        params: AtlasParams,
    ) -> Self {
        let n = nodes.len();
        let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
        let idx: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
        for (u, outs) in relation.iter().enumerate() {
            if !recurrent[u] {
                continue;
            }
            for &v in outs {
                if recurrent[v] && u != v {
                    g.add_edge(idx[u], idx[v], ());
                }
            }
        }
        let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|comp| comp.into_iter().map(|k| k.index()).collect::<Vec<_>>())
            .filter(|comp: &Vec<usize>| comp.iter().all(|&u| recurrent[u]))
            .map(|mut comp| {
                comp.sort_unstable();
                comp
            })
            .collect();
        classes.sort_by_key(|c| nodes[c[0]]);

        // reachability over the full relation, recurrent or not
        let mut class_of = vec![usize::MAX; n];
        for (c, members) in classes.iter().enumerate() {
            for &u in members {
                class_of[u] = c;
            }
        }
        let mut order = Vec::new();
        for (c, members) in classes.iter().enumerate() {
            let mut seen = vec![false; n];
            let mut stack: Vec<usize> = members.clone();
            for &u in members {
                seen[u] = true;
            }
            let mut reached = BTreeSet::new();
            while let Some(u) = stack.pop() {
                for &v in &relation[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                        if class_of[v] != usize::MAX && class_of[v] != c {
                            reached.insert(class_of[v]);
                        }
                    }
                }
            }
            order.extend(reached.into_iter().map(|r| (c, r)));
        }
        let quasi_attractor = (0..classes.len()).map(|c| !order.iter().any(|&(a, _)| a == c)).collect();
        let classes = classes
            .into_iter()
            .map(|c| c.into_iter().map(|k| nodes[k]).collect())
            .collect();
        Self {
            flavor,
            d: grid.d(),
            m: grid.n(),
            classes,
            order,
            quasi_attractor,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("atlas serializes")
    }
}

/// Pseudo-orbit graph on all cells of `Delta_M`.
#[derive(Debug, Clone)]
pub struct ApGraph {
    pub grid: SimplexGrid,
    pub delta: f64,
    pub t: f64,
    pub t_max: f64,
    pub sample_step: f64,
    /// Sorted successor ranks per cell.
    pub successors: Vec<Vec<usize>>,
}

/// Grid cells whose centers lie strictly within `radius` of `y`.
fn cells_near(grid: &SimplexGrid, y: &[f64], radius: f64, out: &mut BTreeSet<usize>) {
    let d = grid.d();
    let m = grid.n() as i64;
    let reach = (radius * m as f64).ceil() as i64 + 1;
    let base: Vec<i64> = y.iter().map(|v| (v * m as f64).round() as i64).collect();
    let mut offs = vec![-reach; d - 1];
    let mut point = vec![0u32; d];
    let mut x = vec![0.0; d];
    loop {
        let mut ok = true;
        let mut used: i64 = 0;
        for k in 0..d - 1 {
            let c = base[k] + offs[k];
            if c < 0 || c > m {
                ok = false;
                break;
            }
            point[k] = c as u32;
            used += c;
        }
        if ok && used <= m {
            point[d - 1] = (m - used) as u32;
            for (xi, &c) in x.iter_mut().zip(&point) {
                *xi = c as f64 / m as f64;
            }
            if euclidean(&x, y) < radius {
                out.insert(grid.rank(&point).expect("on grid"));
            }
        }
        // odometer over the first d-1 offsets
        let mut k = 0;
        loop {
            if k == d - 1 {
                return;
            }
            offs[k] += 1;
            if offs[k] <= reach {
                break;
            }
            offs[k] = -reach;
            k += 1;
        }
    }
}

/// Edge `u -> v` iff `|phi_t(u) - v| < delta` for a sampled `t` in
/// `[T, T_max]`, and `u` is interior or `v` lies on the boundary.
pub fn ap_graph<V: VectorField + ?Sized>(field: &V, m: u32, delta: f64, t: f64, t_max: f64) -> Result<ApGraph, FlowError> {
    if !(t > 0.0 && t < t_max) {
        return Err(FlowError::InvalidArgument(format!("need 0 < T < T_max, got T={t}, T_max={t_max}")));
    }
    let grid = SimplexGrid::new(field.dim(), m).map_err(|e| FlowError::InvalidArgument(e.to_string()))?;
    if delta < grid.cell_width() * (1.0 - 1e-9) {
        return Err(FlowError::InvalidArgument(format!(
            "delta {delta} is below one cell width {}",
            grid.cell_width()
        )));
    }
    let cache = FlowCache::new(field);
    let mut fmax: f64 = 0.0;
    let mut buf = vec![0.0; field.dim()];
    for r in 0..grid.len() {
        field.eval(&grid.coords(r), &mut buf)?;
        fmax = fmax.max(buf.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let h = if fmax > 0.0 { (delta / (2.0 * fmax)).min(0.1) } else { 0.1 };
    // knots k h >= T, anchored at 0
    let first = (t / h - 1e-9).ceil() as usize;
    let start_t = first as f64 * h;
    // strict inequality with exact lattice distances: shave roundoff
    let radius = delta * (1.0 - 1e-9);
    let successors: Vec<Vec<usize>> = (0..grid.len())
        .into_par_iter()
        .map(|u| -> Result<Vec<usize>, FlowError> {
            let x = grid.coords(u);
            let start = cache.map(u, &x, start_t)?;
            let tr = flow::integrate(field, &start, t_max - start_t, h)?;
            let mut near = BTreeSet::new();
            let mut last: Option<Vec<f64>> = None;
            for y in &tr.states {
                if last.as_ref().is_some_and(|l| euclidean(l, y) < 1e-12) {
                    continue;
                }
                cells_near(&grid, y, radius, &mut near);
                last = Some(y.clone());
            }
            let interior = !grid.is_boundary_rank(u);
            Ok(near.into_iter().filter(|&v| interior || grid.is_boundary_rank(v)).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(ApGraph {
        grid,
        delta,
        t,
        t_max,
        sample_step: h,
        successors,
    })
}

/// ap-basic classes: strongly connected components with a cycle.
pub fn ap_classes(graph: &ApGraph) -> RecurrenceAtlas {
    let n = graph.grid.len();
    let nodes: Vec<usize> = (0..n).collect();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let idx: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
    for (u, outs) in graph.successors.iter().enumerate() {
        for &v in outs {
            g.add_edge(idx[u], idx[v], ());
        }
    }
    let mut recurrent = vec![false; n];
    for comp in tarjan_scc(&g) {
        if comp.len() > 1 {
            comp.iter().for_each(|k| recurrent[k.index()] = true);
        } else {
            let u = comp[0].index();
            recurrent[u] = graph.successors[u].binary_search(&u).is_ok();
        }
    }
    RecurrenceAtlas::from_relation(
        AtlasFlavor::AP,
        &graph.grid,
        &nodes,
        &graph.successors,
        &recurrent,
        AtlasParams::AP {
            delta: graph.delta,
            t: graph.t,
            t_max: graph.t_max,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMatch {
    pub l_class: usize,
    pub ap_class: usize,
    pub hausdorff_cells: f64,
    pub flags_agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub alpha_margin: f64,
    pub matches: Vec<ClassMatch>,
    pub unmatched_l: Vec<usize>,
    pub unmatched_ap: Vec<usize>,
    /// Every restricted class matched within tolerance with equal flags.
    pub agree: bool,
}

fn hausdorff(grid: &SimplexGrid, a: &[usize], b: &[usize]) -> f64 {
    let directed = |p: &[usize], q: &[usize]| {
        p.iter()
            .map(|&u| {
                let x = grid.coords(u);
                q.iter().map(|&v| euclidean(&x, &grid.coords(v))).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Compares two atlases on the cells with every coordinate at least `alpha_margin`.
pub fn compare_atlases(l: &RecurrenceAtlas, ap: &RecurrenceAtlas, alpha_margin: f64) -> Result<MatchReport, FlowError> {
    if l.m != ap.m || l.d != ap.d {
        return Err(FlowError::InvalidArgument(format!(
            "atlases live on different grids (d={}, M={} vs d={}, M={})",
            l.d, l.m, ap.d, ap.m
        )));
    }
    let grid = SimplexGrid::new(l.d, l.m).map_err(|e| FlowError::InvalidArgument(e.to_string()))?;
    let keep = |c: &Vec<usize>| -> Vec<usize> {
        c.iter()
            .copied()
            .filter(|&r| grid.point(r).iter().all(|&n| n as f64 / l.m as f64 >= alpha_margin - 1e-12))
            .collect()
    };
    let lr: Vec<(usize, Vec<usize>)> = l.classes.iter().map(keep).enumerate().filter(|c| !c.1.is_empty()).collect();
    let ar: Vec<(usize, Vec<usize>)> = ap.classes.iter().map(keep).enumerate().filter(|c| !c.1.is_empty()).collect();
    let width = grid.cell_width();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in &lr {
        for (j, b) in &ar {
            candidates.push((hausdorff(&grid, a, b) / width, *i, *j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_l = BTreeSet::new();
    let mut used_ap = BTreeSet::new();
    let mut matches = Vec::new();
    for (dist, i, j) in candidates {
        if dist > MATCH_TOLERANCE_CELLS + 1e-9 || used_l.contains(&i) || used_ap.contains(&j) {
            continue;
        }
        used_l.insert(i);
        used_ap.insert(j);
        matches.push(ClassMatch {
            l_class: i,
            ap_class: j,
            hausdorff_cells: dist,
            flags_agree: l.quasi_attractor[i] == ap.quasi_attractor[j],
        });
    }
    matches.sort_by_key(|m| m.l_class);
    let unmatched_l: Vec<usize> = lr.iter().map(|c| c.0).filter(|i| !used_l.contains(i)).collect();
    let unmatched_ap: Vec<usize> = ar.iter().map(|c| c.0).filter(|j| !used_ap.contains(j)).collect();
    let agree = unmatched_l.is_empty() && unmatched_ap.is_empty() && matches.iter().all(|m| m.flags_agree);
    Ok(MatchReport {
        alpha_margin,
        matches,
        unmatched_l,
        unmatched_ap,
        agree,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSamples {
    /// Kernel-grid rank of the chosen worst-case start.
    pub start: usize,
    pub samples: Vec<u64>,
    pub censored: Vec<bool>,
}

impl ExitSamples {
    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_unstable();
        let k = s.len();
        if k % 2 == 1 {
            s[k / 2] as f64
        } else {
            0.5 * (s[k / 2 - 1] as f64 + s[k / 2] as f64)
        }
    }

    /// Empirical `P[tau > threshold]`.
    pub fn exceedance(&self, threshold: u64) -> f64 {
        self.samples.iter().filter(|&&s| s > threshold).count() as f64 / self.samples.len() as f64
    }
}

/// Exit-time samples from the `eta`-neighborhood of a class, started at the
/// neighborhood state with the largest pilot mean.
pub fn exit_time_samples(
    kernel: &TransitionKernel,
    class_points: &[Vec<f64>],
    eta: f64,
    n_samples: usize,
    seed: u64,
    step_cap: u64,
) -> Result<ExitSamples, KernelError> {
    if !(eta > 0.0) || class_points.is_empty() || n_samples == 0 {
        return Err(KernelError::InvalidArgument("need eta > 0, a non-empty class and samples".into()));
    }
    let grid = kernel.grid();
    let hood: Vec<usize> = grid
        .epsilon_neighborhood(class_points, eta)
        .into_iter()
        .filter(|&r| !grid.is_boundary_rank(r))
        .collect();
    if hood.is_empty() {
        return Err(KernelError::InvalidArgument("the eta-neighborhood has no interior states".into()));
    }
    let mut member = vec![false; grid.len()];
    hood.iter().for_each(|&r| member[r] = true);
    let inside = |s: usize| member[s];
    let pilot: Vec<f64> = hood
        .par_iter()
        .enumerate()
        .map(|(k, &start)| {
            let mut r = rng::stream(seed, k as u64);
            let total: f64 = (0..DEFAULT_PILOT)
                .map(|_| kernel.hitting_time(start, &mut r, step_cap, inside).0 as f64)
                .sum();
            total / DEFAULT_PILOT as f64
        })
        .collect();
    let best = pilot
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| hood[k])
        .expect("non-empty");
    let offset = hood.len() as u64;
    let draws: Vec<(u64, bool)> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, offset + k as u64);
            kernel.hitting_time(best, &mut r, step_cap, inside)
        })
        .collect();
    if draws.iter().all(|d| d.1) {
        return Err(KernelError::AllCensored(draws.len()));
    }
    let (samples, censored) = draws.into_iter().unzip();
    Ok(ExitSamples {
        start: best,
        samples,
        censored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FnField;
    use crate::protocols::{PayoffGame, RevisionProtocol};

    fn zero_field(d: usize) -> FnField<impl Fn(&[f64], &mut [f64]) + Sync> {
        FnField {
            dim: d,
            f: |_: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    #[test]
    fn zero_field_edges_are_neighbors() {
        let g = ap_graph(&zero_field(2), 10, 0.2, 1.0, 2.0).unwrap();
        for (u, outs) in g.successors.iter().enumerate() {
            let x = g.grid.coords(u);
            let expected: Vec<usize> = (0..g.grid.len())
                .filter(|&v| euclidean(&x, &g.grid.coords(v)) < 0.2 * (1.0 - 1e-9))
                .filter(|&v| !g.grid.is_boundary_rank(u) || g.grid.is_boundary_rank(v))
                .collect();
            assert_eq!(outs, &expected);
        }
    }

    #[test]
    fn huge_delta_gives_one_interior_class() {
        let g = ap_graph(&zero_field(3), 6, 2.0, 1.0, 2.0).unwrap();
        let atlas = ap_classes(&g);
        // boundary cells cannot re-enter, so they form their own classes
        let interior: Vec<_> = atlas.classes.iter().filter(|c| c.iter().any(|&r| !g.grid.is_boundary_rank(r))).collect();
        assert_eq!(interior.len(), 1);
        assert_eq!(interior[0].len(), g.grid.len() - (g.grid.len() - g.grid.interior_len()));
    }

    #[test]
    fn hawk_dove_ap_atlas() {
        let p = RevisionProtocol::aspiration_uniform(PayoffGame::hawk_dove(2.0, 4.0), 0.5).unwrap();
        let g = ap_graph(&p, 60, 2.0 * std::f64::consts::SQRT_2 / 60.0, DEFAULT_T, DEFAULT_T_MAX).unwrap();
        let star = g.grid.rank(&[30, 30]).unwrap();
        for &u in g.grid.interior_ranks() {
            assert!(g.successors[u].contains(&star) || g.successors[u].iter().any(|&v| v.abs_diff(star) == 1));
        }
        assert!(g.successors[star].contains(&star));
        let atlas = ap_classes(&g);
        let k = atlas.classes.iter().position(|c| c.contains(&star)).unwrap();
        assert!(atlas.quasi_attractor[k]);
        for (u, outs) in g.successors.iter().enumerate() {
            if g.grid.is_boundary_rank(u) {
                assert!(outs.iter().all(|&v| g.grid.is_boundary_rank(v)));
            }
        }
        let same = compare_atlases(&atlas, &atlas, 0.0).unwrap();
        assert!(same.agree);
        assert!(same.matches.iter().all(|m| m.hausdorff_cells == 0.0));
    }
}
