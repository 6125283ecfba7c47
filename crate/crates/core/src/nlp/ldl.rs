//! Sparse LDL^T factorization of symmetric indefinite matrices in
//! upper-triangular CSC form, up-looking with an elimination tree, no
//! pivoting. Saddle-point systems factor reliably under the small diagonal
//! regularization the interior-point loop applies; the sign pattern of D
//! doubles as the inertia check that drives that regularization.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LdlError {
    #[error("zero pivot in column {0}")]
    ZeroPivot(usize),
}

/// Symmetric matrix stored as its upper triangle in CSC order, diagonal
/// entries always structurally present.
#[derive(Debug, Clone)]
pub struct SymCsc {
    n: usize,
    colptr: Vec<usize>,
    rowind: Vec<usize>,
    values: Vec<f64>,
}

impl SymCsc {
    /// Builds from (i, j, v) triplets addressing either triangle; duplicate
    /// positions sum. Missing diagonal entries are inserted as zeros.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> SymCsc {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .iter()
            .map(|&(i, j, v)| if i <= j { (j, i, v) } else { (i, j, v) })
            .collect();
        for d in 0..n {
            entries.push((d, d, 0.0));
        }
        entries.sort_unstable_by_key(|&(col, row, _)| (col, row));
        let mut colptr = vec![0usize; n + 1];
        let mut rowind = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut last = None;
        for (col, row, v) in entries {
            if last == Some((col, row)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowind.push(row);
                values.push(v);
                colptr[col + 1] += 1;
                last = Some((col, row));
            }
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        SymCsc {
            n,
            colptr,
            rowind,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rowind.len()
    }

    /// Symmetric matrix-vector product y = A x.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for col in 0..self.n {
            for p in self.colptr[col]..self.colptr[col + 1] {
                let row = self.rowind[p];
                let v = self.values[p];
                y[row] += v * x[col];
                if row != col {
                    y[col] += v * x[row];
                }
            }
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Pattern-frozen assembly: the structure is built once from position
/// triplets and values are scattered per iteration through a slot map, so
/// repeated factorizations skip the sort.
#[derive(Debug, Clone)]
pub struct TripletMap {
    matrix: SymCsc,
    slots: Vec<usize>,
}

impl TripletMap {
    pub fn new(n: usize, positions: &[(usize, usize)]) -> TripletMap {
        let triplets: Vec<(usize, usize, f64)> =
            positions.iter().map(|&(i, j)| (i, j, 0.0)).collect();
        let matrix = SymCsc::from_triplets(n, &triplets);
        let slots = positions
            .iter()
            .map(|&(i, j)| {
                let (col, row) = if i <= j { (j, i) } else { (i, j) };
                matrix.colptr[col]
                    + matrix.rowind[matrix.colptr[col]..matrix.colptr[col + 1]]
                        .binary_search(&row)
                        .expect("position missing from built pattern")
            })
            .collect();
        TripletMap { matrix, slots }
    }

    /// Overwrites the matrix with the given per-position values (summing
    /// duplicates), leaving untouched positions at zero.
    pub fn fill(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.slots.len());
        self.matrix.values.fill(0.0);
        for (slot, v) in self.slots.iter().zip(values) {
            self.matrix.values[*slot] += v;
        }
    }

    pub fn add_at(&mut self, position: usize, v: f64) {
        let slot = self.slots[position];
        self.matrix.values[slot] += v;
    }

    pub fn matrix(&self) -> &SymCsc {
        &self.matrix
    }
}

#[derive(Debug)]
pub struct LdlFactor {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl LdlFactor {
    /// (positive, negative) counts of the D signs; a KKT system with n
    /// variables and m constraints wants exactly (n, m).
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.n - pos)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for c in 0..self.n {
            let bc = b[c];
            if bc != 0.0 {
                for p in self.lp[c]..self.lp[c + 1] {
                    b[self.li[p]] -= self.lx[p] * bc;
                }
            }
        }
        for i in 0..self.n {
            b[i] *= self.dinv[i];
        }
        for c in (0..self.n).rev() {
            let mut acc = b[c];
            for p in self.lp[c]..self.lp[c + 1] {
                acc -= self.lx[p] * b[self.li[p]];
            }
            b[c] = acc;
        }
    }
}

/// Up-looking numeric factorization A = L D L^T.
pub fn factor(a: &SymCsc) -> Result<LdlFactor, LdlError> {
    let n = a.n;
    // Elimination tree and column counts.
    let mut parent = vec![usize::MAX; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    for j in 0..n {
        flag[j] = j;
        for p in a.colptr[j]..a.colptr[j + 1] {
            let mut i = a.rowind[p];
            while i < j && flag[i] != j {
                if parent[i] == usize::MAX {
                    parent[i] = j;
                }
                lnz[i] += 1;
                flag[i] = j;
                i = parent[i];
            }
        }
    }
    let mut lp = vec![0usize; n + 1];
    for i in 0..n {
        lp[i + 1] = lp[i] + lnz[i];
    }
    let total = lp[n];
    let mut li = vec![0usize; total];
    let mut lx = vec![0.0f64; total];
    let mut d = vec![0.0f64; n];
    let mut dinv = vec![0.0f64; n];
    let mut lnext = lp[..n].to_vec();
    let mut y = vec![0.0f64; n];
    let mut marked = vec![usize::MAX; n];
    let mut stack = vec![0usize; n];
    let mut path = vec![0usize; n];
    for k in 0..n {
        let mut top = 0usize;
        d[k] = 0.0;
        marked[k] = k;
        for p in a.colptr[k]..a.colptr[k + 1] {
            let row = a.rowind[p];
            if row == k {
                d[k] = a.values[p];
                continue;
            }
            y[row] += a.values[p];
            let mut node = row;
            let mut len = 0usize;
            while marked[node] != k {
                marked[node] = k;
                path[len] = node;
                len += 1;
                node = parent[node];
                if node == usize::MAX || node >= k {
                    break;
                }
            }
            // Push root-first so popping processes descendants first.
            while len > 0 {
                len -= 1;
                stack[top] = path[len];
                top += 1;
            }
        }
        while top > 0 {
            top -= 1;
            let c = stack[top];
            let yc = y[c];
            y[c] = 0.0;
            for p in lp[c]..lnext[c] {
                y[li[p]] -= lx[p] * yc;
            }
            let l_kc = yc * dinv[c];
            li[lnext[c]] = k;
            lx[lnext[c]] = l_kc;
            lnext[c] += 1;
            d[k] -= yc * l_kc;
        }
        if d[k] == 0.0 || !d[k].is_finite() {
            return Err(LdlError::ZeroPivot(k));
        }
        dinv[k] = 1.0 / d[k];
    }
    Ok(LdlFactor {
        n,
        lp,
        li,
        lx,
        d,
        dinv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kkt(rng: &mut ChaCha8Rng, nv: usize, nc: usize) -> Vec<(usize, usize, f64)> {
        // H = B B^T + I (positive definite, sparse-ish), J random sparse,
        // constraint block -1e-8 I.
        let n = nv + nc;
        let mut t = Vec::new();
        let mut h = DMatrix::<f64>::zeros(nv, nv);
        for _ in 0..(3 * nv) {
            let i = rng.gen_range(0..nv);
            let j = rng.gen_range(0..nv);
            let v = rng.gen_range(-1.0..1.0);
            h[(i, j)] += v;
        }
        let hh = &h * h.transpose() + DMatrix::<f64>::identity(nv, nv);
        for i in 0..nv {
            for j in i..nv {
                if hh[(i, j)] != 0.0 {
                    t.push((i, j, hh[(i, j)]));
                }
            }
        }
        for r in 0..nc {
            for _ in 0..3 {
                let c = rng.gen_range(0..nv);
                t.push((c, nv + r, rng.gen_range(-2.0..2.0)));
            }
            t.push((nv + r, nv + r, -1e-8));
        }
        let _ = n;
        t
    }

    fn dense_of(n: usize, t: &[(usize, usize, f64)]) -> DMatrix<f64> {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for &(i, j, v) in t {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    #[test]
    fn factor_solve_matches_dense_lu_on_random_saddle_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..20 {
            let nv = rng.gen_range(3..25);
            let nc = rng.gen_range(1..nv);
            let n = nv + nc;
            let t = random_kkt(&mut rng, nv, nc);
            let a = SymCsc::from_triplets(n, &t);
            let dense = dense_of(n, &t);
            let f = factor(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            // One refinement round, then demand a near-zero residual; the
            // tiny constraint regularization makes the system ill enough
            // that comparing raw solutions would only test conditioning.
            let mut resid = vec![0.0; n];
            a.mul_vec(&x, &mut resid);
            let mut corr: Vec<f64> = (0..n).map(|i| b[i] - resid[i]).collect();
            f.solve_in_place(&mut corr);
            for i in 0..n {
                x[i] += corr[i];
            }
            a.mul_vec(&x, &mut resid);
            let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                assert!(
                    (resid[i] - b[i]).abs() < 1e-9 * (1.0 + xmax),
                    "case {case} residual {i}"
                );
            }
            let xe = dense
                .clone()
                .lu()
                .solve(&nalgebra::DVector::from_vec(b.clone()))
                .unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - xe[i]).abs() < 1e-5 * (1.0 + xe[i].abs()),
                    "case {case} entry {i}: {} vs {}",
                    x[i],
                    xe[i]
                );
            }
            // Inertia against the eigenvalue signs.
            let eig = dense.symmetric_eigen();
            let pos = eig.eigenvalues.iter().filter(|&&v| v > 0.0).count();
            assert_eq!(f.inertia(), (pos, n - pos), "case {case}");
        }
    }

    #[test]
    fn duplicate_triplets_sum_and_missing_diagonals_appear() {
        let t = vec![(0, 1, 2.0), (1, 0, 3.0), (0, 0, 1.0), (0, 0, 1.5)];
        let a = SymCsc::from_triplets(2, &t);
        let mut y = vec![0.0; 2];
        a.mul_vec(&[1.0, 1.0], &mut y);
        // Row 0: 2.5 * 1 + 5 * 1; row 1: 5 * 1 + 0 * 1.
        assert!((y[0] - 7.5).abs() < 1e-14);
        assert!((y[1] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn triplet_map_refill_matches_fresh_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 12;
        let positions: Vec<(usize, usize)> = (0..40)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        let mut map = TripletMap::new(n, &positions);
        for _ in 0..3 {
            let values: Vec<f64> = (0..positions.len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            map.fill(&values);
            let triplets: Vec<(usize, usize, f64)> = positions
                .iter()
                .zip(&values)
                .map(|(&(i, j), &v)| (i, j, v))
                .collect();
            let fresh = SymCsc::from_triplets(n, &triplets);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y1 = vec![0.0; n];
            let mut y2 = vec![0.0; n];
            map.matrix().mul_vec(&x, &mut y1);
            fresh.mul_vec(&x, &mut y2);
            for i in 0..n {
                assert!((y1[i] - y2[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn indefinite_diagonal_keeps_correct_inertia() {
        let t = vec![(0, 0, 2.0), (1, 1, -3.0), (2, 2, 4.0), (0, 2, 1.0)];
        let a = SymCsc::from_triplets(3, &t);
        let f = factor(&a).unwrap();
        assert_eq!(f.inertia(), (2, 1));
    }

    #[test]
    fn structurally_zero_pivot_is_reported() {
        // Second row/column entirely zero.
        let t = vec![(0, 0, 1.0), (2, 2, 1.0), (0, 2, 0.5)];
        let a = SymCsc::from_triplets(3, &t);
        match factor(&a) {
            Err(LdlError::ZeroPivot(k)) => assert_eq!(k, 1),
            other => panic!("expected zero pivot, got {other:?}"),
        }
    }
}
