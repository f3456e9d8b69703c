//! Zero-fill incomplete Cholesky factorization and split-preconditioned
//! operators. The factor `L` keeps exactly the lower-triangular sparsity
//! pattern of its input; the preconditioned operator applies `L^{-1} A L^{-T}`
//! so it stays symmetric and can be handed to the solver unchanged.

use thiserror::Error;

use crate::linops::{CsrSymmetricMatrix, LinAlgError, SymmetricOperator};

#[derive(Debug, Error)]
pub enum PrecondError {
    #[error("nonpositive pivot {pivot} at row {row}: input is not positive definite on its pattern")]
    PivotBreakdown { row: usize, pivot: f64 },
    #[error("zero diagonal at row {row} of the triangular factor")]
    ZeroDiagonal { row: usize },
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
}

/// Sparse lower-triangular Cholesky-like factor in CSR. Rows are sorted by
/// column and always end at the diagonal entry.
#[derive(Debug, Clone)]
pub struct Ic0Factor {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl Ic0Factor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    fn diag(&self, i: usize) -> f64 {
        // The diagonal is the last entry of its row by construction.
        self.values[self.row_offsets[i + 1] - 1]
    }
}

/// Sparse dot of two column-sorted rows, restricted to columns < `limit`.
fn prefix_dot(
    (ca, va): (&[usize], &[f64]),
    (cb, vb): (&[usize], &[f64]),
    limit: usize,
) -> f64 {
    let mut s = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < ca.len() && j < cb.len() && ca[i] < limit && cb[j] < limit {
        match ca[i].cmp(&cb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += va[i] * vb[j];
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Incomplete Cholesky with zero fill: `L L^T ~ M` exactly on the lower
/// pattern of `M`. Fails with `PivotBreakdown` when a pivot is nonpositive,
/// which covers indefinite inputs and missing diagonal entries.
pub fn ic0_factorize(m: &CsrSymmetricMatrix) -> Result<Ic0Factor, PrecondError> {
    let n = m.n();
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0usize);
    let mut col_indices: Vec<usize> = Vec::new();
    let mut values: Vec<f64> = Vec::new();

    for i in 0..n {
        let (m_cols, m_vals) = m.row(i);
        let row_start = col_indices.len();
        let mut diag_sum = 0.0;
        let mut m_ii = 0.0;
        for (&j, &v) in m_cols.iter().zip(m_vals) {
            if j > i {
                break;
            }
            if j == i {
                m_ii = v;
                continue;
            }
            let lj_lo = row_offsets[j];
            let lj_hi = row_offsets[j + 1];
            let s = prefix_dot(
                (&col_indices[row_start..], &values[row_start..]),
                (&col_indices[lj_lo..lj_hi], &values[lj_lo..lj_hi]),
                j,
            );
            // Row j ends at its diagonal, which is positive by construction.
            let l_jj = values[lj_hi - 1];
            let l_ij = (v - s) / l_jj;
            col_indices.push(j);
            values.push(l_ij);
            diag_sum += l_ij * l_ij;
        }
        let pivot = m_ii - diag_sum;
        if pivot <= 0.0 {
            return Err(PrecondError::PivotBreakdown { row: i, pivot });
        }
        col_indices.push(i);
        values.push(pivot.sqrt());
        row_offsets.push(col_indices.len());
    }

    Ok(Ic0Factor { n, row_offsets, col_indices, values })
}

/// `x <- L^{-1} x` by forward substitution.
fn forward_in_place(l: &Ic0Factor, x: &mut [f64]) {
    for i in 0..l.n {
        let (cols, vals) = l.row(i);
        let mut acc = x[i];
        for (&j, &v) in cols.iter().zip(vals).take(cols.len() - 1) {
            acc -= v * x[j];
        }
        x[i] = acc / vals[cols.len() - 1];
    }
}

/// `x <- L^{-T} x` by a column sweep over the rows of `L`, back to front.
fn backward_in_place(l: &Ic0Factor, x: &mut [f64]) {
    for i in (0..l.n).rev() {
        let (cols, vals) = l.row(i);
        let xi = x[i] / vals[cols.len() - 1];
        x[i] = xi;
        for (&j, &v) in cols.iter().zip(vals).take(cols.len() - 1) {
            x[j] -= v * xi;
        }
    }
}

/// Solves `L y = b` (or `L^T y = b` with `transposed`).
pub fn tri_solve(l: &Ic0Factor, b: &[f64], transposed: bool) -> Result<Vec<f64>, PrecondError> {
    if b.len() != l.n {
        return Err(LinAlgError::Dimension { expected: l.n, got: b.len() }.into());
    }
    for i in 0..l.n {
        if l.diag(i) == 0.0 {
            return Err(PrecondError::ZeroDiagonal { row: i });
        }
    }
    let mut x = b.to_vec();
    if transposed {
        backward_in_place(l, &mut x);
    } else {
        forward_in_place(l, &mut x);
    }
    Ok(x)
}

/// The symmetric operator `x -> L^{-1} A L^{-T} x`. Solving this transformed
/// system against `L^{-1} b` and mapping the result through `L^{-T}` yields
/// the solution of `A x = b`.
pub struct SplitPreconditionedOperator<'a> {
    a: &'a dyn SymmetricOperator,
    l: &'a Ic0Factor,
}

impl<'a> SplitPreconditionedOperator<'a> {
    pub fn new(a: &'a dyn SymmetricOperator, l: &'a Ic0Factor) -> Result<Self, PrecondError> {
        if a.dim() != l.n() {
            return Err(LinAlgError::Dimension { expected: a.dim(), got: l.n() }.into());
        }
        for i in 0..l.n() {
            if l.diag(i) == 0.0 {
                return Err(PrecondError::ZeroDiagonal { row: i });
            }
        }
        Ok(Self { a, l })
    }

    /// `L^{-1} b`: the right-hand side the transformed system is solved with.
    pub fn transform_rhs(&self, b: &[f64]) -> Result<Vec<f64>, PrecondError> {
        tri_solve(self.l, b, false)
    }

    /// `L^{-T} y`: maps a transformed-system solution back to the original.
    pub fn recover_solution(&self, y: &[f64]) -> Result<Vec<f64>, PrecondError> {
        tri_solve(self.l, y, true)
    }
}

impl SymmetricOperator for SplitPreconditionedOperator<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply_one(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        y.copy_from_slice(x);
        backward_in_place(self.l, y);
        let mut t = vec![0.0; self.dim()];
        self.a.apply_one(y, &mut t);
        forward_in_place(self.l, &mut t);
        y.copy_from_slice(&t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{axpy, nrm2, symmetry_defect};
    use crate::minres::{minres_single, SolverConfig};
    use crate::problems::{negated_laplacian, shifted_operator_matrix, Laplacian2dSpec};

    fn tridiag_spd(n: usize) -> CsrSymmetricMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrSymmetricMatrix::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn identity_factors_to_identity() {
        let m = CsrSymmetricMatrix::identity(7);
        let l = ic0_factorize(&m).unwrap();
        assert_eq!(l.nnz(), 7);
        for i in 0..7 {
            assert_eq!(l.get(i, i), 1.0);
        }
    }

    #[test]
    fn tridiagonal_factor_is_exact_cholesky() {
        // A tridiagonal matrix has no fill, so the incomplete factor is the
        // exact one: L L^T == M everywhere.
        let m = tridiag_spd(12);
        let l = ic0_factorize(&m).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let mut s = 0.0;
                for k in 0..=j.min(i) {
                    s += l.get(i, k) * l.get(j, k);
                }
                assert!((s - m.get(i, j)).abs() <= 1e-12 * m.get(i, i).abs());
            }
        }
    }

    #[test]
    fn laplacian_factor_matches_on_its_pattern() {
        let spec = Laplacian2dSpec::new(20, 0.0).unwrap();
        let m = negated_laplacian(&spec);
        let l = ic0_factorize(&m).unwrap();
        let scale = m.get(0, 0);
        // L L^T reproduces M exactly wherever M stores a lower entry.
        for i in 0..m.n() {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j > i {
                    continue;
                }
                let mut s = 0.0;
                for k in 0..=j {
                    s += l.get(i, k) * l.get(j, k);
                }
                assert!((s - v).abs() <= 1e-12 * scale, "({i},{j}): {s} vs {v}");
            }
        }
    }

    #[test]
    fn refactorizing_product_pattern_is_idempotent() {
        // Factoring M and then factoring the pattern-restricted product
        // L L^T gives the same factor back.
        let spec = Laplacian2dSpec::new(8, 0.0).unwrap();
        let m = negated_laplacian(&spec);
        let l = ic0_factorize(&m).unwrap();
        let mut triplets = Vec::new();
        for i in 0..m.n() {
            let (cols, _) = m.row(i);
            for &j in cols {
                let mut s = 0.0;
                for k in 0..=j.min(i) {
                    s += l.get(i, k) * l.get(j, k);
                }
                triplets.push((i, j, s));
            }
        }
        let product = CsrSymmetricMatrix::from_triplets(m.n(), &triplets).unwrap();
        let l2 = ic0_factorize(&product).unwrap();
        for i in 0..m.n() {
            for j in 0..=i {
                assert!((l.get(i, j) - l2.get(i, j)).abs() <= 1e-12 * l.get(i, i));
            }
        }
    }

    #[test]
    fn indefinite_input_reports_pivot_breakdown() {
        let m = CsrSymmetricMatrix::from_triplets(
            2,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)],
        )
        .unwrap();
        match ic0_factorize(&m) {
            Err(PrecondError::PivotBreakdown { row, pivot }) => {
                assert_eq!(row, 1);
                assert!(pivot <= 0.0);
            }
            other => panic!("expected pivot breakdown, got {other:?}"),
        }
    }

    #[test]
    fn tri_solve_round_trips() {
        let m = tridiag_spd(9);
        let l = ic0_factorize(&m).unwrap();
        let b: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin() + 1.5).collect();
        for transposed in [false, true] {
            let x = tri_solve(&l, &b, transposed).unwrap();
            // Multiply back: y = L x or L^T x.
            let mut y = vec![0.0; 9];
            for i in 0..9 {
                for j in 0..9 {
                    let lij = if transposed { l.get(j, i) } else { l.get(i, j) };
                    y[i] += lij * x[j];
                }
            }
            axpy(-1.0, &b, &mut y);
            assert!(nrm2(&y) <= 1e-12 * nrm2(&b));
        }
        assert!(matches!(
            tri_solve(&l, &vec![1.0; 4], false),
            Err(PrecondError::LinAlg(LinAlgError::Dimension { .. }))
        ));
    }

    #[test]
    fn recover_inverts_transform_through_the_factor() {
        let spec = Laplacian2dSpec::new(10, 0.0).unwrap();
        let m = negated_laplacian(&spec);
        let l = ic0_factorize(&m).unwrap();
        let a = shifted_operator_matrix(&Laplacian2dSpec::new(10, 40.0).unwrap());
        let op = SplitPreconditionedOperator::new(&a, &l).unwrap();
        let x: Vec<f64> = (0..m.n()).map(|i| (i as f64).cos()).collect();
        // y = L^T x, then recover_solution(y) must reproduce x.
        let mut y = vec![0.0; m.n()];
        for i in 0..m.n() {
            let (cols, vals) = l.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * x[i];
            }
        }
        let back = op.recover_solution(&y).unwrap();
        let mut d = back.clone();
        axpy(-1.0, &x, &mut d);
        assert!(nrm2(&d) <= 1e-12 * nrm2(&x));
    }

    #[test]
    fn identity_factor_composes_to_the_bare_operator() {
        let a = tridiag_spd(8);
        let eye = ic0_factorize(&CsrSymmetricMatrix::identity(8)).unwrap();
        let op = SplitPreconditionedOperator::new(&a, &eye).unwrap();
        let x: Vec<f64> = (0..8).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let mut got = vec![0.0; 8];
        op.apply_one(&x, &mut got);
        let want = a.matvec(&x).unwrap();
        let got_bits: Vec<u64> = got.iter().map(|v| v.to_bits()).collect();
        let want_bits: Vec<u64> = want.iter().map(|v| v.to_bits()).collect();
        assert_eq!(got_bits, want_bits);
    }

    #[test]
    fn preconditioned_operator_stays_symmetric() {
        let spec = Laplacian2dSpec::new(12, 0.0).unwrap();
        let l = ic0_factorize(&negated_laplacian(&spec)).unwrap();
        let a = shifted_operator_matrix(&Laplacian2dSpec::new(12, 100.0).unwrap());
        let op = SplitPreconditionedOperator::new(&a, &l).unwrap();
        assert!(symmetry_defect(&op, 100, 3) <= 1e-10);
    }

    #[test]
    fn preconditioning_cuts_iterations_on_the_model_problem() {
        // The shift must stay small against h^{-2} for the definite-part
        // factor to pay off, as it does on fine meshes.
        let spec = Laplacian2dSpec::new(60, 200.0).unwrap();
        let a = shifted_operator_matrix(&spec);
        let b: Vec<f64> = vec![1.0; spec.n()];
        let config = SolverConfig { tol: 1e-8, ..Default::default() };

        let (_, plain) = minres_single(&a, &b, None, &config).unwrap();

        let l = ic0_factorize(&negated_laplacian(&spec)).unwrap();
        let op = SplitPreconditionedOperator::new(&a, &l).unwrap();
        let b_hat = op.transform_rhs(&b).unwrap();
        let (y, pre) = minres_single(&op, &b_hat, None, &config).unwrap();

        assert!(
            pre.iterations < plain.iterations,
            "preconditioned {} vs plain {}",
            pre.iterations,
            plain.iterations
        );

        // The recovered solution solves the original system.
        let x = op.recover_solution(&y).unwrap();
        let mut r = a.matvec(&x).unwrap();
        axpy(-1.0, &b, &mut r);
        assert!(nrm2(&r) <= 1e-6 * nrm2(&b));
    }
}
