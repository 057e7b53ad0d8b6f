//! Sparse symmetric LDLᵀ factorization without pivoting.
//!
//! The pattern is analysed once ([`SymbolicLdl::analyse`]): a minimum-degree
//! ordering is computed on the adjacency graph, the permuted upper triangle
//! is laid out in CSC form and the elimination tree fixes the structure of
//! `L`. Numeric factorizations then reuse that layout. Because no pivoting
//! is performed, the signs of `D` give the inertia of the matrix, which the
//! interior-point solver uses to detect non-convex curvature.

const NONE: usize = usize::MAX;

/// Counts of positive, negative and (numerically) zero pivots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone)]
pub struct SymbolicLdl {
    n: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// For every input entry, the slot in the permuted CSC value array.
    entry_slot: Vec<usize>,
    etree: Vec<usize>,
    l_ptr: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
    pub inertia: Inertia,
}

impl SymbolicLdl {
    /// Analyse the pattern given as `(row, col)` pairs of a symmetric
    /// matrix. Either triangle (or both) may be supplied; duplicates are
    /// summed during numeric assembly. The diagonal is always included.
    pub fn analyse(n: usize, entries: &[(usize, usize)]) -> Self {
        let perm = minimum_degree(n, entries);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // Permuted upper-triangle coordinates, sorted by (col, row).
        let mut coords: Vec<(usize, usize)> = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (iperm[i], iperm[j]);
                if a <= b {
                    (b, a)
                } else {
                    (a, b)
                }
            })
            .chain((0..n).map(|k| (k, k)))
            .collect();
        coords.sort_unstable();
        coords.dedup();

        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(coords.len());
        for &(c, r) in &coords {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
        }
        for k in 0..n {
            col_ptr[k + 1] += col_ptr[k];
        }

        let entry_slot = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (iperm[i], iperm[j]);
                let (c, r) = if a <= b { (b, a) } else { (a, b) };
                let rows = &row_idx[col_ptr[c]..col_ptr[c + 1]];
                col_ptr[c] + rows.binary_search(&r).expect("entry present in pattern")
            })
            .collect();

        // Elimination tree and column counts of L.
        let mut etree = vec![NONE; n];
        let mut counts = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            for &r in &row_idx[col_ptr[j]..col_ptr[j + 1]] {
                let mut i = r;
                while i != j && flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    counts[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_ptr = vec![0; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + counts[k];
        }

        Self {
            n,
            perm,
            col_ptr,
            row_idx,
            entry_slot,
            etree,
            l_ptr,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }

    /// Numeric factorization. `values[k]` belongs to the k-th entry passed
    /// to [`SymbolicLdl::analyse`]; `diag_shift[i]` is added to the diagonal
    /// of original row `i`. Pivots with magnitude below `pivot_tol` are
    /// reported as zero and the factorization is rejected.
    pub fn factor(&self, values: &[f64], diag_shift: &[f64], pivot_tol: f64) -> Option<LdlFactor> {
        debug_assert_eq!(values.len(), self.entry_slot.len());
        let n = self.n;
        let mut ax = vec![0.0; self.row_idx.len()];
        for (&slot, &v) in self.entry_slot.iter().zip(values) {
            ax[slot] += v;
        }
        for k in 0..n {
            let last = self.col_ptr[k + 1] - 1;
            debug_assert_eq!(self.row_idx[last], k);
            ax[last] += diag_shift[self.perm[k]];
        }

        let nnz_l = self.l_ptr[n];
        let mut l_idx = vec![0usize; nnz_l];
        let mut l_val = vec![0.0; nnz_l];
        let mut d = vec![0.0; n];
        let mut d_inv = vec![0.0; n];
        let mut next = self.l_ptr[..n].to_vec();
        let mut y = vec![0.0; n];
        let mut used = vec![false; n];
        let mut pattern = Vec::with_capacity(n);
        let mut stack = Vec::with_capacity(n);
        let mut inertia = Inertia::default();

        for k in 0..n {
            pattern.clear();
            for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                let r = self.row_idx[p];
                if r == k {
                    d[k] = ax[p];
                    continue;
                }
                y[r] = ax[p];
                if used[r] {
                    continue;
                }
                let mut i = r;
                stack.clear();
                while i != NONE && i < k && !used[i] {
                    used[i] = true;
                    stack.push(i);
                    i = self.etree[i];
                }
                while let Some(s) = stack.pop() {
                    pattern.push(s);
                }
            }
            for &c in pattern.iter().rev() {
                let yc = y[c];
                for q in self.l_ptr[c]..next[c] {
                    y[l_idx[q]] -= l_val[q] * yc;
                }
                let slot = next[c];
                l_idx[slot] = k;
                let lv = yc * d_inv[c];
                l_val[slot] = lv;
                d[k] -= yc * lv;
                next[c] += 1;
                y[c] = 0.0;
                used[c] = false;
            }
            if !d[k].is_finite() || d[k].abs() <= pivot_tol {
                return None;
            }
            if d[k] > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            d_inv[k] = 1.0 / d[k];
        }

        Some(LdlFactor {
            l_idx,
            l_val,
            d,
            d_inv,
            inertia,
        })
    }

    /// Solve `A x = b` in place using a factorization of this pattern.
    pub fn solve(&self, factor: &LdlFactor, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            for q in self.l_ptr[i]..self.l_ptr[i + 1] {
                x[factor.l_idx[q]] -= factor.l_val[q] * xi;
            }
        }
        for i in 0..n {
            x[i] *= factor.d_inv[i];
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for q in self.l_ptr[i]..self.l_ptr[i + 1] {
                xi -= factor.l_val[q] * x[factor.l_idx[q]];
            }
            x[i] = xi;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}

impl LdlFactor {
    pub fn pivots(&self) -> &[f64] {
        &self.d
    }
}

/// Minimum-degree ordering on an explicit elimination graph stored as bit
/// rows. Ties are broken by the lowest index so the ordering is
/// deterministic.
fn minimum_degree(n: usize, entries: &[(usize, usize)]) -> Vec<usize> {
    let words = n.div_ceil(64).max(1);
    let mut adj = vec![0u64; n * words];
    let set = |adj: &mut [u64], i: usize, j: usize| adj[i * words + j / 64] |= 1 << (j % 64);
    for &(i, j) in entries {
        if i != j {
            set(&mut adj, i, j);
            set(&mut adj, j, i);
        }
    }
    let mut alive = vec![!0u64; words];
    if !n.is_multiple_of(64) {
        alive[words - 1] = (1u64 << (n % 64)) - 1;
    }
    let mut degree: Vec<usize> = (0..n)
        .map(|i| adj[i * words..(i + 1) * words].iter().map(|w| w.count_ones() as usize).sum())
        .collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    let mut row = vec![0u64; words];

    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| !eliminated[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("node left to eliminate");
        eliminated[v] = true;
        alive[v / 64] &= !(1 << (v % 64));
        order.push(v);

        nbrs.clear();
        for (w, &bits) in adj[v * words..(v + 1) * words].iter().enumerate() {
            let mut b = bits & alive[w];
            while b != 0 {
                let t = b.trailing_zeros() as usize;
                nbrs.push(w * 64 + t);
                b &= b - 1;
            }
        }
        row.copy_from_slice(&adj[v * words..(v + 1) * words]);
        for (r, a) in row.iter_mut().zip(&alive) {
            *r &= a;
        }
        for &u in &nbrs {
            let urow = &mut adj[u * words..(u + 1) * words];
            let mut deg = 0;
            for w in 0..words {
                urow[w] = (urow[w] | row[w]) & alive[w];
                deg += urow[w].count_ones() as usize;
            }
            // u is in its own neighbour set through `row`
            urow[u / 64] &= !(1 << (u % 64));
            degree[u] = deg - 1;
        }
    }
    order
}
