//! The discrete simplex `{x : x_i = n_i / N, n_i >= 0, sum n_i = N}`.
//!
//! Points are stored as integer count vectors so that membership, boundary
//! tests and ranking are exact. Real coordinates are derived on demand.
//! The ordering is lexicographic on the count vectors, which puts the vertex
//! carrying all mass on the last strategy at rank 0.

use thiserror::Error;

/// Default cap on the number of lattice points a grid may hold.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("invalid dimension: need d >= 2 and N >= 2, got d={d}, N={n}")]
    InvalidDimension { d: usize, n: u32 },
    #[error("grid would hold {states} states, above the cap of {cap}")]
    CapExceeded { states: u128, cap: usize },
    #[error("point {0:?} is not on the grid")]
    NotOnGrid(Vec<u32>),
    #[error("index {0} is out of range")]
    IndexOutOfRange(usize),
}

/// Binomial coefficient in u128, saturating on overflow.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of lattice points of the simplex with `d` strategies and population `n`.
pub fn state_count(d: usize, n: u32) -> u128 {
    binomial(n as u64 + d as u64 - 1, d as u64 - 1)
}

/// Number of points with every coordinate positive.
pub fn interior_count(d: usize, n: u32) -> u128 {
    if (n as usize) < d {
        0
    } else {
        binomial(n as u64 - 1, d as u64 - 1)
    }
}

#[derive(Debug, Clone)]
pub struct SimplexGrid {
    d: usize,
    n: u32,
    counts: Vec<u32>,
    interior: Vec<usize>,
    interior_pos: Vec<usize>,
}

/// Marker stored in `interior_pos` for boundary states.
const NOT_INTERIOR: usize = usize::MAX;

impl SimplexGrid {
    /// Enumerates the grid using the default state cap.
    pub fn new(d: usize, n: u32) -> Result<Self, SimplexError> {
        Self::with_cap(d, n, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(d: usize, n: u32, cap: usize) -> Result<Self, SimplexError> {
        if d < 2 || n < 2 {
            return Err(SimplexError::InvalidDimension { d, n });
        }
        let states = state_count(d, n);
        if states > cap as u128 {
            return Err(SimplexError::CapExceeded { states, cap });
        }
        let states = states as usize;
        let mut counts = Vec::with_capacity(states * d);
        let mut current = vec![0u32; d];
        current[d - 1] = n;
        loop {
            counts.extend_from_slice(&current);
            if !next_composition(&mut current, n) {
                break;
            }
        }
        debug_assert_eq!(counts.len(), states * d);

        let mut interior = Vec::new();
        let mut interior_pos = vec![NOT_INTERIOR; states];
        for idx in 0..states {
            let p = &counts[idx * d..(idx + 1) * d];
            if p.iter().all(|&c| c > 0) {
                interior_pos[idx] = interior.len();
                interior.push(idx);
            }
        }
        Ok(Self {
            d,
            n,
            counts,
            interior,
            interior_pos,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.counts.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn interior_len(&self) -> usize {
        self.interior.len()
    }

    /// Global ranks of the interior states, in increasing order.
    pub fn interior_ranks(&self) -> &[usize] {
        &self.interior
    }

    /// Position of `rank` within the interior list, if it is interior.
    pub fn interior_position(&self, rank: usize) -> Option<usize> {
        match self.interior_pos.get(rank) {
            Some(&p) if p != NOT_INTERIOR => Some(p),
            _ => None,
        }
    }

    /// Count vector of the point with the given rank.
    pub fn point(&self, rank: usize) -> &[u32] {
        &self.counts[rank * self.d..(rank + 1) * self.d]
    }

    pub fn unrank(&self, rank: usize) -> Result<&[u32], SimplexError> {
        if rank >= self.len() {
            return Err(SimplexError::IndexOutOfRange(rank));
        }
        Ok(self.point(rank))
    }

    /// Real coordinates `n_i / N`.
    pub fn coords(&self, rank: usize) -> Vec<f64> {
        let n = self.n as f64;
        self.point(rank).iter().map(|&c| c as f64 / n).collect()
    }

    pub fn coords_into(&self, rank: usize, out: &mut [f64]) {
        let n = self.n as f64;
        for (o, &c) in out.iter_mut().zip(self.point(rank)) {
            *o = c as f64 / n;
        }
    }

    fn check(&self, point: &[u32]) -> Result<(), SimplexError> {
        if point.len() != self.d || point.iter().map(|&c| c as u64).sum::<u64>() != self.n as u64 {
            return Err(SimplexError::NotOnGrid(point.to_vec()));
        }
        Ok(())
    }

    /// Position of `point` in the lexicographic order, computed with the
    /// combinatorial number system (no lookup table).
    pub fn rank(&self, point: &[u32]) -> Result<usize, SimplexError> {
        self.check(point)?;
        let mut remaining = self.n as u64;
        let mut rank: u128 = 0;
        for (k, &c) in point.iter().enumerate().take(self.d - 1) {
            // parts still to fill after position k
            let m = (self.d - k - 1) as u64;
            let c = c as u64;
            // compositions of (remaining - v) into m parts, summed over v < c
            rank += binomial(remaining + m, m) - binomial(remaining - c + m, m);
            remaining -= c;
        }
        Ok(rank as usize)
    }

    pub fn is_boundary(&self, point: &[u32]) -> Result<bool, SimplexError> {
        self.check(point)?;
        Ok(point.contains(&0))
    }

    pub fn is_boundary_rank(&self, rank: usize) -> bool {
        self.interior_pos[rank] == NOT_INTERIOR
    }

    /// Ordered pairs `(i, j)`, `i != j`, such that one `i` player may switch to `j`.
    pub fn neighbor_moves(&self, point: &[u32]) -> Result<Vec<(usize, usize)>, SimplexError> {
        self.check(point)?;
        Ok(moves_of(point))
    }

    /// Rank of `point + e_j - e_i`; the caller guarantees `point[i] >= 1`.
    pub fn apply_move(&self, rank: usize, i: usize, j: usize) -> usize {
        let mut p = self.point(rank).to_vec();
        p[i] -= 1;
        p[j] += 1;
        self.rank(&p).expect("move stays on the grid")
    }

    /// Grid points within Euclidean distance `eps` of any target point.
    pub fn epsilon_neighborhood(&self, targets: &[Vec<f64>], eps: f64) -> Vec<usize> {
        let mut x = vec![0.0; self.d];
        (0..self.len())
            .filter(|&r| {
                self.coords_into(r, &mut x);
                targets.iter().any(|t| euclidean(&x, t) < eps)
            })
            .collect()
    }

    /// Rank of the grid point closest to `x` (ties broken by lower rank).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        let mut y = vec![0.0; self.d];
        for r in 0..self.len() {
            self.coords_into(r, &mut y);
            let dist = euclidean(&y, x);
            if dist < best.0 {
                best = (dist, r);
            }
        }
        best.1
    }

    /// Distance between adjacent lattice points, `sqrt(2) / N`.
    pub fn cell_width(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n as f64
    }
}

pub(crate) fn moves_of(point: &[u32]) -> Vec<(usize, usize)> {
    let d = point.len();
    let mut out = Vec::with_capacity(d * (d - 1));
    for (i, &ci) in point.iter().enumerate() {
        if ci == 0 {
            continue;
        }
        for j in 0..d {
            if j != i {
                out.push((i, j));
            }
        }
    }
    out
}

/// Advances `c` to the lexicographically next composition of `n`.
fn next_composition(c: &mut [u32], n: u32) -> bool {
    let d = c.len();
    // rightmost position k < d-1 that can grow: needs remaining mass to its right
    let mut tail: u32 = c[d - 1];
    let mut k = d - 1;
    while k > 0 {
        k -= 1;
        if tail > 0 {
            c[k] += 1;
            let new_tail = tail - 1;
            for v in c.iter_mut().skip(k + 1) {
                *v = 0;
            }
            c[d - 1] = new_tail;
            debug_assert_eq!(c.iter().sum::<u32>(), n);
            return true;
        }
        tail += c[k];
    }
    false
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_examples() {
        let g = SimplexGrid::new(3, 4).unwrap();
        assert_eq!((g.len(), g.interior_len()), (15, 3));
        let g = SimplexGrid::new(2, 10).unwrap();
        assert_eq!((g.len(), g.interior_len()), (11, 9));
        let g = SimplexGrid::new(4, 2).unwrap();
        assert_eq!((g.len(), g.interior_len()), (10, 0));
    }

    #[test]
    fn counts_match_binomials_exhaustively() {
        for d in 2..=5 {
            for n in 2..=30u32 {
                let g = SimplexGrid::new(d, n).unwrap();
                assert_eq!(g.len() as u128, state_count(d, n));
                assert_eq!(g.interior_len() as u128, interior_count(d, n));
                for r in 0..g.len() {
                    assert_eq!(g.rank(g.point(r)).unwrap(), r);
                }
            }
        }
    }

    #[test]
    fn lexicographic_order() {
        let g = SimplexGrid::new(2, 3).unwrap();
        let pts: Vec<_> = (0..g.len()).map(|r| g.point(r).to_vec()).collect();
        assert_eq!(pts, vec![vec![0, 3], vec![1, 2], vec![2, 1], vec![3, 0]]);
        assert_eq!(g.rank(&[1, 2]).unwrap(), 1);
        let g = SimplexGrid::new(3, 4).unwrap();
        assert_eq!(g.rank(&[0, 0, 4]).unwrap(), 0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            SimplexGrid::new(1, 5).unwrap_err(),
            SimplexError::InvalidDimension { d: 1, n: 5 }
        );
        assert!(matches!(
            SimplexGrid::new(2, 1),
            Err(SimplexError::InvalidDimension { .. })
        ));
        assert!(matches!(
            SimplexGrid::with_cap(5, 100, 1000),
            Err(SimplexError::CapExceeded { .. })
        ));
        let g = SimplexGrid::new(3, 4).unwrap();
        assert!(matches!(g.rank(&[1, 1, 1]), Err(SimplexError::NotOnGrid(_))));
        assert!(matches!(g.unrank(15), Err(SimplexError::IndexOutOfRange(15))));
    }

    #[test]
    fn boundary_and_moves() {
        let g = SimplexGrid::new(3, 4).unwrap();
        assert!(g.is_boundary(&[0, 2, 2]).unwrap());
        assert_eq!(g.neighbor_moves(&[1, 1, 2]).unwrap().len(), 6);
        let g = SimplexGrid::new(2, 4).unwrap();
        assert_eq!(g.neighbor_moves(&[4, 0]).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn moves_stay_on_grid_and_flag_boundary() {
        for (d, n) in [(2, 7), (3, 6), (4, 5)] {
            let g = SimplexGrid::new(d, n).unwrap();
            for r in 0..g.len() {
                let p = g.point(r).to_vec();
                let moves = g.neighbor_moves(&p).unwrap();
                for &(i, j) in &moves {
                    let mut q = p.clone();
                    q[i] -= 1;
                    q[j] += 1;
                    assert!(g.rank(&q).is_ok());
                }
                let full = moves.len() == d * (d - 1);
                assert_eq!(g.is_boundary(&p).unwrap(), !full);
            }
        }
    }

    #[test]
    fn neighborhoods() {
        let g = SimplexGrid::new(2, 10).unwrap();
        assert_eq!(g.epsilon_neighborhood(&[vec![0.5, 0.5]], 10.0).len(), 11);
        let near = g.epsilon_neighborhood(&[vec![0.5, 0.5]], 0.01);
        assert_eq!(near, vec![g.rank(&[5, 5]).unwrap()]);
        let g = SimplexGrid::new(2, 20).unwrap();
        let nb = g.epsilon_neighborhood(&[vec![0.5, 0.5]], 0.15);
        // brute-force oracle on the hawk share alone
        let oracle = (0..=20)
            .filter(|k| ((*k as f64 / 20.0) - 0.5).abs() * 2f64.sqrt() < 0.15)
            .count();
        assert_eq!(oracle, 5);
        assert_eq!(nb.len(), oracle);
    }
}
