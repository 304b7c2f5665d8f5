//! Compressed-row sparse matrices and the substochastic interior operator.

use rayon::prelude::*;

/// Row-count threshold above which matrix-vector products run in parallel.
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; each row is sorted by column.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                assert!(c < ncols, "column {c} out of range");
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let rows = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect();
        Self::from_rows(ncols, rows)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                rows[j].push((i, x));
            }
        }
        Self::from_rows(self.nrows, rows)
    }

    /// `out = A v`, with a fixed per-row summation order.
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        let body = |(i, o): (usize, &mut f64)| {
            let (c, x) = self.row(i);
            *o = c.iter().zip(x).map(|(&j, &a)| a * v[j]).sum();
        };
        if self.nrows >= PAR_THRESHOLD {
            out.par_iter_mut().enumerate().for_each(body);
        } else {
            out.iter_mut().enumerate().for_each(body);
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                row[j] = x;
            }
        }
        out
    }
}

/// Substochastic matrix `Q` together with its per-row leak `1 - sum_j Q_ij`.
///
/// The leak is carried separately so that callers holding the exact
/// absorption probabilities (the kernel does) avoid the cancellation in
/// `1 - row sum`, which matters once `1 - rho` drops toward `1e-16`.
#[derive(Debug, Clone)]
pub struct SubstochasticMatrix {
    q: CsrMatrix,
    qt: CsrMatrix,
    leak: Vec<f64>,
}

impl SubstochasticMatrix {
    pub fn new(q: CsrMatrix, leak: Vec<f64>) -> Self {
        assert_eq!(q.nrows(), q.ncols(), "square matrix required");
        assert_eq!(leak.len(), q.nrows());
        let qt = q.transpose();
        Self { q, qt, leak }
    }

    /// Leak computed as `1 - row sum` (clamped at zero).
    pub fn from_csr(q: CsrMatrix) -> Self {
        let leak = q.row_sums().iter().map(|s| (1.0 - s).max(0.0)).collect();
        Self::new(q, leak)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        Self::from_csr(CsrMatrix::from_dense(rows))
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.q
    }

    pub fn leak(&self) -> &[f64] {
        &self.leak
    }

    /// Left action `out = v Q`.
    pub fn left_mul(&self, v: &[f64], out: &mut [f64]) {
        self.qt.mul_vec(v, out);
    }

    /// Mass absorbed in one step from `v`: `sum_i v_i leak_i`.
    pub fn absorbed_mass(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.leak).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_and_products() {
        let a = CsrMatrix::from_dense(&[vec![0.5, 0.25, 0.0], vec![0.0, 0.1, 0.9], vec![0.3, 0.0, 0.0]]);
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.transpose().transpose(), a);
        let mut out = vec![0.0; 3];
        a.mul_vec(&[1.0, 2.0, 3.0], &mut out);
        assert!(out.iter().zip([1.0, 2.9, 0.3]).all(|(a, b)| (a - b).abs() < 1e-15));
        let s = SubstochasticMatrix::from_csr(a);
        s.left_mul(&[1.0, 0.0, 0.0], &mut out);
        assert_eq!(out, vec![0.5, 0.25, 0.0]);
        assert!((s.leak()[0] - 0.25).abs() < 1e-15);
        assert!((s.leak()[2] - 0.7).abs() < 1e-15);
    }
}
