//! Sparse symmetric positive-definite factorization for GMRF precision matrices:
//! minimum-degree ordering, elimination tree, up-looking numeric Cholesky,
//! triangular solves and selected diagonal of the inverse.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use crate::error::{Error, Result};

/// Minimum-degree ordering on an undirected graph given as adjacency lists.
/// Returns `perm` with `perm[new] = old`. Ties break on the lower index.
pub fn minimum_degree(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut sets: Vec<HashSet<u32>> = adj
        .iter()
        .enumerate()
        .map(|(i, a)| a.iter().filter(|&&j| j != i).map(|&j| j as u32).collect())
        .collect();
    let mut done = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((sets[i].len(), i))).collect();
    let mut perm = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != sets[v].len() {
            continue;
        }
        done[v] = true;
        perm.push(v);
        let nbrs: Vec<u32> = {
            let mut x: Vec<u32> = sets[v].iter().copied().collect();
            x.sort_unstable();
            x
        };
        sets[v].clear();
        for &a in &nbrs {
            sets[a as usize].remove(&(v as u32));
        }
        for (ia, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[ia + 1..] {
                if sets[a as usize].insert(b) {
                    sets[b as usize].insert(a);
                }
            }
        }
        for &a in &nbrs {
            heap.push(Reverse((sets[a as usize].len(), a as usize)));
        }
    }
    perm
}

/// Symbolic structure shared by every numeric factorization of matrices
/// with the same pattern.
#[derive(Debug, Clone)]
pub struct Symbolic {
    pub n: usize,
    /// perm[new] = old
    pub perm: Vec<usize>,
    /// pinv[old] = new
    pub pinv: Vec<usize>,
    /// Upper-triangular CSC pattern of the permuted matrix (row <= col, sorted).
    pub cp: Vec<usize>,
    pub ci: Vec<usize>,
    pub parent: Vec<usize>,
    /// L in CSC with the diagonal first in every column, rows ascending.
    pub lp: Vec<usize>,
    pub li: Vec<usize>,
    /// For each row k: (column i, slot of L[k,i]) with i ascending.
    rowpat_ptr: Vec<usize>,
    rowpat: Vec<(usize, usize)>,
}

pub const NONE: usize = usize::MAX;

impl Symbolic {
    /// `pairs` lists (i, j) positions (either triangle) of a symmetric pattern
    /// in original numbering; the diagonal is always included.
    pub fn analyze(n: usize, pairs: &[(usize, usize)], perm: Option<Vec<usize>>) -> Symbolic {
        let perm = perm.unwrap_or_else(|| {
            let mut adj = vec![Vec::new(); n];
            for &(i, j) in pairs {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
            minimum_degree(&adj)
        });
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        let mut cols: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
        for &(i, j) in pairs {
            let (a, b) = (pinv[i], pinv[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            cols[c].push(r);
        }
        let mut cp = vec![0];
        let mut ci = Vec::new();
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
            ci.extend_from_slice(c);
            cp.push(ci.len());
        }
        // elimination tree with path compression
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &i0 in &ci[cp[k]..cp[k + 1]] {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                        break;
                    }
                    i = next;
                }
            }
        }
        // row patterns via elimination-tree reach
        let mut mark = vec![NONE; n];
        let mut rowpat_cols: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut counts = vec![1usize; n];
        for k in 0..n {
            mark[k] = k;
            let mut pat = Vec::new();
            for &i0 in &ci[cp[k]..cp[k + 1]] {
                let mut i = i0;
                while i < k && mark[i] != k {
                    mark[i] = k;
                    pat.push(i);
                    i = parent[i];
                }
            }
            pat.sort_unstable();
            for &i in &pat {
                counts[i] += 1;
            }
            rowpat_cols.push(pat);
        }
        let mut lp = vec![0; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + counts[k];
        }
        let mut li = vec![0; lp[n]];
        let mut next: Vec<usize> = (0..n).map(|k| lp[k] + 1).collect();
        for k in 0..n {
            li[lp[k]] = k;
        }
        let mut rowpat_ptr = vec![0];
        let mut rowpat = Vec::new();
        for (k, pat) in rowpat_cols.iter().enumerate() {
            for &i in pat {
                let slot = next[i];
                next[i] += 1;
                li[slot] = k;
                rowpat.push((i, slot));
            }
            rowpat_ptr.push(rowpat.len());
        }
        Symbolic {
            n,
            perm,
            pinv,
            cp,
            ci,
            parent,
            lp,
            li,
            rowpat_ptr,
            rowpat,
        }
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    pub fn nnz_upper(&self) -> usize {
        self.ci.len()
    }

    /// Slot in the permuted upper CSC value array for original (i, j).
    pub fn slot(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.pinv[i], self.pinv[j]);
        let (r, c) = if a <= b { (a, b) } else { (b, a) };
        let col = &self.ci[self.cp[c]..self.cp[c + 1]];
        self.cp[c] + col.binary_search(&r).expect("entry present in the symbolic pattern")
    }

    /// Up-looking numeric factorization of the matrix whose permuted upper
    /// values are `cx` (aligned with `ci`).
    pub fn factor(&self, cx: &[f64]) -> Result<Factor> {
        let n = self.n;
        let mut lx = vec![0.0; self.nnz_l()];
        let mut x = vec![0.0; n];
        for k in 0..n {
            for p in self.cp[k]..self.cp[k + 1] {
                x[self.ci[p]] = cx[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &(i, slot) in &self.rowpat[self.rowpat_ptr[k]..self.rowpat_ptr[k + 1]] {
                let lki = x[i] / lx[self.lp[i]];
                x[i] = 0.0;
                for p in (self.lp[i] + 1)..slot {
                    x[self.li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                lx[slot] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: self.perm[k] });
            }
            lx[self.lp[k]] = d.sqrt();
        }
        Ok(Factor { lx })
    }
}

/// Numeric Cholesky values for a [`Symbolic`] pattern.
#[derive(Debug, Clone)]
pub struct Factor {
    pub lx: Vec<f64>,
}

impl Factor {
    pub fn log_det(&self, sym: &Symbolic) -> f64 {
        2.0 * (0..sym.n).map(|k| self.lx[sym.lp[k]].ln()).sum::<f64>()
    }

    /// In place: y <- L^{-1} y (permuted numbering).
    pub fn forward(&self, sym: &Symbolic, y: &mut [f64]) {
        for j in 0..sym.n {
            let yj = y[j] / self.lx[sym.lp[j]];
            y[j] = yj;
            if yj != 0.0 {
                for p in (sym.lp[j] + 1)..sym.lp[j + 1] {
                    y[sym.li[p]] -= self.lx[p] * yj;
                }
            }
        }
    }

    /// In place: y <- L^{-T} y (permuted numbering).
    pub fn backward(&self, sym: &Symbolic, y: &mut [f64]) {
        for j in (0..sym.n).rev() {
            let mut s = y[j];
            for p in (sym.lp[j] + 1)..sym.lp[j + 1] {
                s -= self.lx[p] * y[sym.li[p]];
            }
            y[j] = s / self.lx[sym.lp[j]];
        }
    }

    /// Solves Q x = b in original numbering.
    pub fn solve(&self, sym: &Symbolic, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = sym.perm.iter().map(|&o| b[o]).collect();
        self.forward(sym, &mut y);
        self.backward(sym, &mut y);
        let mut x = vec![0.0; sym.n];
        for (new, &old) in sym.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// x = P' L^{-T} z in original numbering; with z standard normal, x has
    /// covariance Q^{-1}.
    pub fn sample_from(&self, sym: &Symbolic, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.backward(sym, &mut y);
        let mut x = vec![0.0; sym.n];
        for (new, &old) in sym.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Diagonal of Q^{-1} (original numbering) by sparse forward solves along
    /// elimination-tree paths: var_i = |L^{-1} e_{pinv(i)}|^2.
    pub fn inverse_diagonal(&self, sym: &Symbolic) -> Vec<f64> {
        let n = sym.n;
        let mut work = vec![0.0; n];
        let mut path = Vec::new();
        let mut out = vec![0.0; n];
        for new in 0..n {
            path.clear();
            let mut j = new;
            while j != NONE {
                path.push(j);
                j = sym.parent[j];
            }
            work[new] = 1.0;
            let mut s = 0.0;
            for &j in &path {
                let yj = work[j] / self.lx[sym.lp[j]];
                work[j] = 0.0;
                s += yj * yj;
                if yj != 0.0 {
                    for p in (sym.lp[j] + 1)..sym.lp[j + 1] {
                        work[sym.li[p]] -= self.lx[p] * yj;
                    }
                }
            }
            out[sym.perm[new]] = s;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn arrow(n: usize) -> (Vec<(usize, usize)>, DMatrix<f64>) {
        let mut a = DMatrix::zeros(n, n);
        let mut pairs = Vec::new();
        for i in 0..n {
            a[(i, i)] = 4.0 + i as f64 * 0.1;
            pairs.push((i, i));
            if i > 0 {
                a[(0, i)] = 0.3;
                a[(i, 0)] = 0.3;
                pairs.push((0, i));
            }
            if i + 1 < n {
                a[(i, i + 1)] = -0.5;
                a[(i + 1, i)] = -0.5;
                pairs.push((i + 1, i));
            }
        }
        (pairs, a)
    }

    fn values(sym: &Symbolic, a: &DMatrix<f64>) -> Vec<f64> {
        let mut cx = vec![0.0; sym.nnz_upper()];
        for i in 0..a.nrows() {
            for j in 0..=i {
                if a[(i, j)] != 0.0 {
                    cx[sym.slot(i, j)] = a[(i, j)];
                }
            }
        }
        cx
    }

    #[test]
    fn matches_dense_cholesky() {
        let (pairs, a) = arrow(12);
        let sym = Symbolic::analyze(12, &pairs, None);
        let f = sym.factor(&values(&sym, &a)).unwrap();
        let dense = a.clone().cholesky().unwrap();
        let ld: f64 = 2.0 * dense.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((f.log_det(&sym) - ld).abs() < 1e-12);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&sym, &b);
        let r = &a * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.amax() < 1e-12);
        let inv = a.try_inverse().unwrap();
        for (i, v) in f.inverse_diagonal(&sym).iter().enumerate() {
            assert!((v - inv[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn hub_is_eliminated_late() {
        let (pairs, _) = arrow(20);
        let sym = Symbolic::analyze(20, &pairs, None);
        assert!(sym.perm[17..].contains(&0));
        assert!(sym.nnz_l() < 3 * 20 + 1);
    }

    #[test]
    fn indefinite_reported() {
        let pairs = vec![(0, 0), (1, 1), (1, 0)];
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let sym = Symbolic::analyze(2, &pairs, None);
        assert!(matches!(sym.factor(&values(&sym, &a)), Err(Error::NotPositiveDefinite { .. })));
    }
}
