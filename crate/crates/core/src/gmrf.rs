//! Sparse symmetric precision matrices and their Cholesky factorization.
//!
//! Precisions are stored as the lower triangle in compressed-column form,
//! with the diagonal entry first in every column. The factorization is an
//! up-looking sparse Cholesky on a fill-reducing permutation; the symbolic
//! part ([`SymbolicCholesky`]) depends only on the sparsity pattern and can
//! be reused across many numeric factorizations with the same structure.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sparse symmetric matrix, lower triangle in compressed-column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Assembles a matrix from `(row, col, value)` triplets.
    ///
    /// Triplets may address either triangle; `(i, j)` and `(j, i)` refer to
    /// the same stored entry and duplicates are summed. Off-diagonal entries
    /// that sum to exactly zero are dropped. Missing diagonal entries are
    /// stored as zero.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, dim: n });
            }
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, dim: n });
            }
            let (row, col) = if i >= j { (i, j) } else { (j, i) };
            entries.push((col, row, v));
        }
        for k in 0..n {
            entries.push((k, k, 0.0));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut iter = entries.into_iter().peekable();
        while let Some((col, row, mut v)) = iter.next() {
            while let Some(&(c2, r2, v2)) = iter.peek() {
                if c2 == col && r2 == row {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if row != col && v == 0.0 {
                continue;
            }
            row_idx.push(row);
            values.push(v);
            col_ptr[col + 1] += 1;
        }
        for k in 0..n {
            col_ptr[k + 1] += col_ptr[k];
        }
        Ok(SparseSymmetric {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        SparseSymmetric {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored (lower-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (row, col) = if i >= j { (i, j) } else { (j, i) };
        let (start, end) = (self.col_ptr[col], self.col_ptr[col + 1]);
        match self.row_idx[start..end].binary_search(&row) {
            Ok(p) => self.values[start + p],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.values[self.col_ptr[k]]).collect()
    }

    /// Iterates over stored lower-triangle entries as `(row, col, value)`.
    pub fn iter_lower(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |col| {
            (self.col_ptr[col]..self.col_ptr[col + 1])
                .map(move |p| (self.row_idx[p], col, self.values[p]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "vector length must match matrix dimension");
        let mut y = vec![0.0; self.n];
        for (i, j, v) in self.iter_lower() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, j, v) in self.iter_lower() {
            if i == j {
                s += v * x[i] * x[i];
            } else {
                s += 2.0 * v * x[i] * x[j];
            }
        }
        s
    }

    /// Adds `d` to the diagonal in place. The pattern is unchanged.
    pub fn add_to_diagonal(&mut self, d: &[f64]) {
        assert_eq!(d.len(), self.n);
        for (k, dk) in d.iter().enumerate() {
            self.values[self.col_ptr[k]] += dk;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.iter_lower().map(|(i, j, _)| i - j).max().unwrap_or(0)
    }

    pub fn same_pattern(&self, other: &SparseSymmetric) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    /// The matrix with row and column `index` deleted.
    pub fn without_index(&self, index: usize) -> Self {
        let shift = |k: usize| if k > index { k - 1 } else { k };
        let triplets = self
            .iter_lower()
            .filter(|&(i, j, _)| i != index && j != index)
            .map(|(i, j, v)| (shift(i), shift(j), v));
        Self::from_triplets(self.n - 1, triplets).expect("indices stay in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter_lower() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Writes `i j value` lines (1-based, lower triangle) preceded by a
    /// `n n nnz` size line.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for (i, j, v) in self.iter_lower() {
            writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// `exp(log_tau) * I_n`.
pub fn build_iid_precision(n: usize, log_tau: f64) -> Result<SparseSymmetric> {
    if n == 0 {
        return Err(Error::EmptyModel);
    }
    Ok(SparseSymmetric::diagonal(&vec![log_tau.exp(); n]))
}

/// `tau * DᵀD` with `D` the `(t-2) x t` second-difference operator.
pub fn build_rw2_precision(t: usize, log_tau: f64) -> Result<SparseSymmetric> {
    if t < 3 {
        return Err(Error::InsufficientLength(t));
    }
    let tau = log_tau.exp();
    let stencil = [1.0, -2.0, 1.0];
    let mut triplets = Vec::with_capacity(6 * (t - 2));
    for r in 0..t - 2 {
        for a in 0..3 {
            for b in 0..=a {
                triplets.push((r + a, r + b, tau * stencil[a] * stencil[b]));
            }
        }
    }
    SparseSymmetric::from_triplets(t, triplets)
}

/// `log |tau * DᵀD + kappa * I|` for the rw2 structure.
///
/// Factorizing the `t x t` matrix directly loses digits once `tau / kappa`
/// is large. The determinant identity `|κI + τDᵀD| = κ² |κI + τDDᵀ|`
/// moves the work to a banded `(t-2) x (t-2)` matrix whose conditioning
/// does not depend on `kappa`.
pub fn rw2_log_det(t: usize, log_tau: f64, kappa: f64) -> Result<f64> {
    if t < 3 {
        return Err(Error::InsufficientLength(t));
    }
    let tau = log_tau.exp();
    let m = t - 2;
    let mut triplets = Vec::with_capacity(3 * m);
    for r in 0..m {
        triplets.push((r, r, 6.0 * tau + kappa));
        if r + 1 < m {
            triplets.push((r + 1, r, -4.0 * tau));
        }
        if r + 2 < m {
            triplets.push((r + 2, r, tau));
        }
    }
    let inner = SparseSymmetric::from_triplets(m, triplets)?;
    Ok(2.0 * kappa.ln() + cholesky(&inner, false)?.log_det())
}

/// Fill-reducing ordering by greedy minimum degree on the elimination graph.
/// Ties go to the smallest index, so the ordering is deterministic.
pub fn minimum_degree_ordering(q: &SparseSymmetric) -> Vec<usize> {
    let n = q.dim();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, j, _) in q.iter_lower() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut done = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&k| !done[k])
            .min_by_key(|&k| (adj[k].len(), k))
            .expect("a node remains");
        done[v] = true;
        perm.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (x, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[x + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    perm
}

const BAND_FALLBACK: usize = 5;
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Pattern-only part of a Cholesky factorization.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    parent: Vec<usize>,
    // permuted upper triangle: column pointers, rows, and the source
    // position of every entry in the original lower-triangle storage
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
    a_src: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    pattern: SparseSymmetric,
}

const NO_PARENT: usize = usize::MAX;

impl SymbolicCholesky {
    /// Chooses an ordering and computes the pattern of the factor. With
    /// `permute = false`, or when the matrix is already banded with
    /// bandwidth at most 5, the natural ordering is kept.
    pub fn analyze(q: &SparseSymmetric, permute: bool) -> Self {
        let n = q.dim();
        let perm = if permute && q.bandwidth() > BAND_FALLBACK {
            minimum_degree_ordering(q)
        } else {
            (0..n).collect()
        };
        let mut inv_perm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv_perm[p] = k;
        }

        // permuted upper triangle, columns sorted by row
        let mut cols: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for col in 0..n {
            for p in q.col_ptr[col]..q.col_ptr[col + 1] {
                let row = q.row_idx[p];
                let (a, b) = (inv_perm[row], inv_perm[col]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                cols[c].push((r, p));
            }
        }
        let mut a_col_ptr = vec![0; n + 1];
        let mut a_row_idx = Vec::with_capacity(q.nnz());
        let mut a_src = Vec::with_capacity(q.nnz());
        for (c, mut entries) in cols.into_iter().enumerate() {
            entries.sort_unstable();
            for (r, p) in entries {
                a_row_idx.push(r);
                a_src.push(p);
            }
            a_col_ptr[c + 1] = a_row_idx.len();
        }

        // elimination tree
        let mut parent = vec![NO_PARENT; n];
        let mut ancestor = vec![NO_PARENT; n];
        for k in 0..n {
            for p in a_col_ptr[k]..a_col_ptr[k + 1] {
                let mut i = a_row_idx[p];
                while i != NO_PARENT && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NO_PARENT {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        let mut sym = SymbolicCholesky {
            n,
            perm,
            parent,
            a_col_ptr,
            a_row_idx,
            a_src,
            l_col_ptr: Vec::new(),
            l_row_idx: Vec::new(),
            pattern: q.clone(),
        };

        // row patterns of L give the column counts and row indices
        let mut counts = vec![1usize; n];
        let mut stack = vec![0; n];
        let mut mark = vec![NO_PARENT; n];
        let mut row_patterns: Vec<Vec<usize>> = Vec::with_capacity(n);
        for k in 0..n {
            let top = sym.ereach(k, &mut stack, &mut mark);
            let pattern: Vec<usize> = stack[top..].to_vec();
            for &i in &pattern {
                counts[i] += 1;
            }
            row_patterns.push(pattern);
        }
        let mut l_col_ptr = vec![0; n + 1];
        for k in 0..n {
            l_col_ptr[k + 1] = l_col_ptr[k] + counts[k];
        }
        let mut l_row_idx = vec![0; l_col_ptr[n]];
        let mut next: Vec<usize> = l_col_ptr[..n].to_vec();
        for (k, pattern) in row_patterns.iter().enumerate() {
            for &i in pattern {
                l_row_idx[next[i]] = k;
                next[i] += 1;
            }
            l_row_idx[next[k]] = k;
            next[k] += 1;
        }
        sym.l_col_ptr = l_col_ptr;
        sym.l_row_idx = l_row_idx;
        sym
    }

    /// Nonzero pattern of row `k` of L (excluding the diagonal), written to
    /// `stack[top..]` in topological order.
    fn ereach(&self, k: usize, stack: &mut [usize], mark: &mut [usize]) -> usize {
        let mut top = self.n;
        mark[k] = k;
        for p in self.a_col_ptr[k]..self.a_col_ptr[k + 1] {
            let mut i = self.a_row_idx[p];
            let mut len = 0;
            while mark[i] != k {
                stack[len] = i;
                len += 1;
                mark[i] = k;
                i = self.parent[i];
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                stack[top] = stack[len];
            }
        }
        top
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Number of nonzeros in the factor, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        self.l_row_idx.len()
    }

    /// Numeric factorization of a matrix with the analysed pattern.
    pub fn factor(self: &Arc<Self>, q: &SparseSymmetric) -> Result<CholeskyFactor> {
        if !q.same_pattern(&self.pattern) {
            return Err(Error::PatternMismatch);
        }
        let n = self.n;

        let mut l_values = vec![0.0; self.l_row_idx.len()];
        let mut x = vec![0.0; n];
        let mut stack = vec![0; n];
        let mut mark = vec![NO_PARENT; n];
        let mut fill: Vec<usize> = self.l_col_ptr[..n].to_vec();
        for k in 0..n {
            let top = self.ereach(k, &mut stack, &mut mark);
            for p in self.a_col_ptr[k]..self.a_col_ptr[k + 1] {
                x[self.a_row_idx[p]] = q.values[self.a_src[p]];
            }
            let mut d = x[k];
            // relative to the column's own diagonal; badly scaled covariates
            // make any global reference useless
            let threshold = PIVOT_TOLERANCE * d.abs();
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / l_values[self.l_col_ptr[i]];
                x[i] = 0.0;
                for p in self.l_col_ptr[i] + 1..fill[i] {
                    x[self.l_row_idx[p]] -= l_values[p] * lki;
                }
                d -= lki * lki;
                l_values[fill[i]] = lki;
                fill[i] += 1;
            }
            if !(d > threshold) {
                return Err(Error::NotPositiveDefinite {
                    index: self.perm[k],
                    pivot: d,
                });
            }
            l_values[fill[k]] = d.sqrt();
            fill[k] += 1;
        }
        Ok(CholeskyFactor {
            symbolic: Arc::clone(self),
            l_values,
        })
    }
}

/// Numeric Cholesky factor: `P Q Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_values: Vec<f64>,
}

/// Factorizes `q`, optionally with a fill-reducing permutation.
pub fn cholesky(q: &SparseSymmetric, permute: bool) -> Result<CholeskyFactor> {
    Arc::new(SymbolicCholesky::analyze(q, permute)).factor(q)
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    fn l_diag(&self, k: usize) -> f64 {
        self.l_values[self.symbolic.l_col_ptr[k]]
    }

    /// `log |Q| = 2 Σ log L_kk`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|k| self.l_diag(k).ln()).sum::<f64>()
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let s = &self.symbolic;
        let mut y: Vec<f64> = s.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let start = s.l_col_ptr[j];
            y[j] /= self.l_values[start];
            let yj = y[j];
            for p in start + 1..s.l_col_ptr[j + 1] {
                y[s.l_row_idx[p]] -= self.l_values[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let start = s.l_col_ptr[j];
            let mut acc = y[j];
            for p in start + 1..s.l_col_ptr[j + 1] {
                acc -= self.l_values[p] * y[s.l_row_idx[p]];
            }
            y[j] = acc / self.l_values[start];
        }
        let mut x = vec![0.0; n];
        for (k, &p) in s.perm.iter().enumerate() {
            x[p] = y[k];
        }
        Ok(x)
    }

    /// Diagonal of `Q⁻¹` via the Takahashi recursions on the factor pattern.
    pub fn marginal_variances(&self) -> Vec<f64> {
        match self.takahashi_diagonal() {
            Some(d) => d,
            None => self.diagonal_by_solves(),
        }
    }

    fn takahashi_diagonal(&self) -> Option<Vec<f64>> {
        let s = &self.symbolic;
        let n = s.n;
        let mut sigma = vec![0.0; self.l_values.len()];
        let lookup = |sigma: &[f64], row: usize, col: usize| -> Option<f64> {
            let (start, end) = (s.l_col_ptr[col], s.l_col_ptr[col + 1]);
            s.l_row_idx[start..end]
                .binary_search(&row)
                .ok()
                .map(|p| sigma[start + p])
        };
        for j in (0..n).rev() {
            let start = s.l_col_ptr[j];
            let end = s.l_col_ptr[j + 1];
            let ljj = self.l_values[start];
            for q in (start + 1..end).rev() {
                let i = s.l_row_idx[q];
                let mut acc = 0.0;
                for p in start + 1..end {
                    let k = s.l_row_idx[p];
                    let (r, c) = if k >= i { (k, i) } else { (i, k) };
                    acc += self.l_values[p] * lookup(&sigma, r, c)?;
                }
                sigma[q] = -acc / ljj;
            }
            let mut acc = 0.0;
            for p in start + 1..end {
                acc += self.l_values[p] * sigma[p];
            }
            sigma[start] = 1.0 / (ljj * ljj) - acc / ljj;
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[s.perm[k]] = sigma[s.l_col_ptr[k]];
        }
        if out.iter().all(|v| v.is_finite()) {
            Some(out)
        } else {
            None
        }
    }

    fn diagonal_by_solves(&self) -> Vec<f64> {
        let n = self.dim();
        let mut e = vec![0.0; n];
        (0..n)
            .map(|k| {
                e[k] = 1.0;
                let col = self.solve(&e).expect("dimension matches");
                e[k] = 0.0;
                col[k]
            })
            .collect()
    }

    /// Dense lower factor in the permuted ordering.
    pub fn lower_dense(&self) -> DMatrix<f64> {
        let s = &self.symbolic;
        let mut l = DMatrix::zeros(s.n, s.n);
        for j in 0..s.n {
            for p in s.l_col_ptr[j]..s.l_col_ptr[j + 1] {
                l[(s.l_row_idx[p], j)] = self.l_values[p];
            }
        }
        l
    }

    /// `Pᵀ L Lᵀ P` as a dense matrix, i.e. the factorized matrix.
    pub fn reconstruct_dense(&self) -> DMatrix<f64> {
        let l = self.lower_dense();
        let llt = &l * l.transpose();
        let perm = &self.symbolic.perm;
        let n = perm.len();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                q[(perm[i], perm[j])] = llt[(i, j)];
            }
        }
        q
    }
}
