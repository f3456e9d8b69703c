//! Dense/sparse kernels the solver is built from: CSR symmetric matrices,
//! column-major block vectors, slice BLAS helpers, thin QR of a starting
//! block, and Householder reflectors.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinAlgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid matrix structure: {0}")]
    InvalidStructure(String),
    #[error("starting block is rank deficient at column {column} (norm ratio {ratio:.3e})")]
    RankDeficientStart { column: usize, ratio: f64 },
}

/// Relative threshold below which a starting-block column is declared
/// dependent on its predecessors.
pub const GAMMA_START: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Slice helpers.
// ---------------------------------------------------------------------------

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn nrm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scal(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

// ---------------------------------------------------------------------------
// CSR symmetric matrix.
// ---------------------------------------------------------------------------

/// Sparse symmetric matrix in CSR form. Both triangles are stored, so a
/// matvec is a plain row sweep. Column indices are strictly increasing within
/// each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrSymmetricMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrSymmetricMatrix {
    pub fn new(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinAlgError> {
        if row_offsets.len() != n + 1 {
            return Err(LinAlgError::InvalidStructure(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != col_indices.len() {
            return Err(LinAlgError::InvalidStructure(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(LinAlgError::InvalidStructure(
                "col_indices and values differ in length".into(),
            ));
        }
        for i in 0..n {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(LinAlgError::InvalidStructure(format!(
                    "row_offsets not monotone at row {i}"
                )));
            }
            let mut prev: Option<usize> = None;
            for &c in &col_indices[lo..hi] {
                if c >= n {
                    return Err(LinAlgError::InvalidStructure(format!(
                        "column index {c} out of bounds in row {i}"
                    )));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(LinAlgError::InvalidStructure(format!(
                            "column indices not strictly increasing in row {i}"
                        )));
                    }
                }
                prev = Some(c);
            }
        }
        Ok(Self { n, row_offsets, col_indices, values })
    }

    /// Builds from (row, col, value) triplets. Duplicate coordinates are an
    /// error; order is arbitrary.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, LinAlgError> {
        let mut sorted: Vec<&(usize, usize, f64)> = triplets.iter().collect();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &&(i, j, v) in &sorted {
            if i >= n || j >= n {
                return Err(LinAlgError::InvalidStructure(format!(
                    "entry ({i}, {j}) out of bounds for n = {n}"
                )));
            }
            if prev == Some((i, j)) {
                return Err(LinAlgError::InvalidStructure(format!(
                    "duplicate entry at ({i}, {j})"
                )));
            }
            prev = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self::new(n, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::identity(diag.len());
        m.values.copy_from_slice(diag);
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Exact structural and numerical symmetry: every stored (i, j, v) has a
    /// stored mirror (j, i, v).
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if self.get(j, i) != v {
                    return false;
                }
            }
        }
        true
    }

    pub fn frobenius_norm(&self) -> f64 {
        nrm2(&self.values)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        if x.len() != self.n {
            return Err(LinAlgError::Dimension { expected: self.n, got: x.len() });
        }
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// Column-by-column matvec; bitwise identical to `matvec` on each column.
    pub fn block_matvec(&self, x: &BlockVector) -> Result<BlockVector, LinAlgError> {
        if x.n() != self.n {
            return Err(LinAlgError::Dimension { expected: self.n, got: x.n() });
        }
        let mut y = BlockVector::zeros(self.n, x.p());
        for c in 0..x.p() {
            self.matvec_into(x.col(c), y.col_mut(c));
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------
// Block vector.
// ---------------------------------------------------------------------------

/// `n x p` block of vectors, stored column-major so each column is a
/// contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self { n, p, data: vec![0.0; n * p] }
    }

    pub fn from_flat(n: usize, p: usize, data: Vec<f64>) -> Result<Self, LinAlgError> {
        if data.len() != n * p {
            return Err(LinAlgError::Dimension { expected: n * p, got: data.len() });
        }
        Ok(Self { n, p, data })
    }

    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self, LinAlgError> {
        let p = cols.len();
        let n = cols.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * p);
        for c in cols {
            if c.len() != n {
                return Err(LinAlgError::Dimension { expected: n, got: c.len() });
            }
            data.extend_from_slice(c);
        }
        Ok(Self { n, p, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.n..(c + 1) * self.n]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.n..(c + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.p).map(|c| nrm2(self.col(c))).collect()
    }
}

// ---------------------------------------------------------------------------
// Symmetric operator.
// ---------------------------------------------------------------------------

/// A symmetric linear map. `apply_block` must act column by column so its
/// result is bitwise identical to repeated `apply_one` calls; the default
/// implementation guarantees that.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    fn apply_one(&self, x: &[f64], y: &mut [f64]);

    fn apply_block(&self, x: &BlockVector, y: &mut BlockVector) {
        assert_eq!(x.n(), self.dim());
        assert_eq!(y.n(), self.dim());
        assert_eq!(x.p(), y.p());
        for c in 0..x.p() {
            self.apply_one(x.col(c), y.col_mut(c));
        }
    }
}

impl SymmetricOperator for CsrSymmetricMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_one(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
}

/// Largest relative defect `|u'(Av) - v'(Au)|` over seeded random pairs.
/// A genuinely symmetric operator stays near machine precision.
pub fn symmetry_defect(a: &dyn SymmetricOperator, pairs: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let n = a.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut au = vec![0.0; n];
    let mut av = vec![0.0; n];
    for _ in 0..pairs {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        a.apply_one(&u, &mut au);
        a.apply_one(&v, &mut av);
        let left = dot(&u, &av);
        let right = dot(&v, &au);
        let scale = left.abs().max(right.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((left - right).abs() / scale);
    }
    worst
}

// ---------------------------------------------------------------------------
// Thin QR of the starting block.
// ---------------------------------------------------------------------------

/// Thin QR `F = Q S` by modified Gram-Schmidt with one reorthogonalization
/// pass. `S` is p x p upper triangular (column-major) with nonnegative
/// diagonal. A diagonal entry below `GAMMA_START` times the original column
/// norm reports the offending column.
pub fn thin_qr(f: &BlockVector) -> Result<(BlockVector, Vec<f64>), LinAlgError> {
    let (n, p) = (f.n(), f.p());
    if p > n {
        return Err(LinAlgError::Dimension { expected: n, got: p });
    }
    let mut q = f.clone();
    let mut s = vec![0.0; p * p];
    for k in 0..p {
        let col_norm = nrm2(f.col(k));
        // Two MGS passes; coefficients from both passes accumulate into S.
        for _pass in 0..2 {
            for i in 0..k {
                let (head, tail) = q.data.split_at_mut(k * n);
                let qi = &head[i * n..(i + 1) * n];
                let qk = &mut tail[..n];
                let r = dot(qi, qk);
                axpy(-r, qi, qk);
                s[k * p + i] += r;
            }
        }
        let d = nrm2(q.col(k));
        if d <= GAMMA_START * col_norm {
            return Err(LinAlgError::RankDeficientStart {
                column: k,
                ratio: if col_norm > 0.0 { d / col_norm } else { 0.0 },
            });
        }
        s[k * p + k] = d;
        scal(1.0 / d, q.col_mut(k));
    }
    Ok((q, s))
}

// ---------------------------------------------------------------------------
// Householder reflectors.
// ---------------------------------------------------------------------------

/// Elementary reflector `H = I - beta v v'` with `v[0] = 1`. `beta = 0`
/// encodes the identity (nothing to annihilate). `offset` records the first
/// row the reflector acts on in whatever indexing the caller uses.
#[derive(Debug, Clone)]
pub struct HouseholderReflector {
    pub v: Vec<f64>,
    pub beta: f64,
    pub offset: usize,
}

impl HouseholderReflector {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Reflector sending `seg` to `(±||seg||, 0, .., 0)`. A segment with nothing
/// below the pivot (or all zero) yields the identity reflector.
pub fn householder_generate(seg: &[f64], offset: usize) -> HouseholderReflector {
    let m = seg.len();
    assert!(m >= 1);
    let tail_norm = nrm2(&seg[1..]);
    if tail_norm == 0.0 {
        let mut v = vec![0.0; m];
        v[0] = 1.0;
        return HouseholderReflector { v, beta: 0.0, offset };
    }
    let alpha = seg[0];
    let norm = (alpha * alpha + tail_norm * tail_norm).sqrt();
    // Sign keeps v[0] = alpha + sign(alpha)*norm away from cancellation.
    let target = if alpha > 0.0 { -norm } else { norm };
    let v0 = alpha - target;
    let mut v: Vec<f64> = seg.to_vec();
    v[0] = v0;
    scal(1.0 / v0, &mut v);
    let beta = 2.0 / dot(&v, &v);
    HouseholderReflector { v, beta, offset }
}

/// Applies the reflector in place: `seg -= beta * v * (v' seg)`.
pub fn householder_apply(h: &HouseholderReflector, seg: &mut [f64]) {
    assert_eq!(seg.len(), h.v.len());
    if h.beta == 0.0 {
        return;
    }
    let c = h.beta * dot(&h.v, seg);
    axpy(-c, &h.v, seg);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tridiag(n: usize, lower: f64, diag: f64, upper: f64) -> CsrSymmetricMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            if i > 0 {
                t.push((i, i - 1, lower));
            }
            t.push((i, i, diag));
            if i + 1 < n {
                t.push((i, i + 1, upper));
            }
        }
        CsrSymmetricMatrix::from_triplets(n, &t).unwrap()
    }

    fn random_block(n: usize, p: usize, seed: u64) -> BlockVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        BlockVector::from_flat(n, p, data).unwrap()
    }

    #[test]
    fn matvec_identity_fixed_point() {
        let a = CsrSymmetricMatrix::identity(7);
        let x: Vec<f64> = (0..7).map(|i| i as f64 - 3.0).collect();
        assert_eq!(a.matvec(&x).unwrap(), x);
    }

    #[test]
    fn matvec_tridiagonal_hand_expanded() {
        // T = tridiag(-1, 2, -1), x = (1, 2, 3): Tx = (0, 0, 4).
        let t = tridiag(3, -1.0, 2.0, -1.0);
        let y = t.matvec(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0, 4.0]);
    }

    #[test]
    fn matvec_zero_vector() {
        let t = tridiag(5, -1.0, 2.0, -1.0);
        assert_eq!(t.matvec(&[0.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let t = tridiag(4, -1.0, 2.0, -1.0);
        assert!(matches!(t.matvec(&[1.0; 3]), Err(LinAlgError::Dimension { .. })));
    }

    #[test]
    fn block_matvec_matches_columnwise_bitwise() {
        let t = tridiag(6, 1.0, -2.0, 1.0);
        let x = random_block(6, 3, 42);
        let y = t.block_matvec(&x).unwrap();
        for c in 0..3 {
            assert_eq!(y.col(c), t.matvec(x.col(c)).unwrap().as_slice());
        }
    }

    #[test]
    fn from_triplets_rejects_duplicates_and_bounds() {
        assert!(CsrSymmetricMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(CsrSymmetricMatrix::from_triplets(2, &[(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn symmetry_check_detects_asymmetry() {
        let sym = tridiag(4, -1.0, 2.0, -1.0);
        assert!(sym.is_symmetric());
        let asym = tridiag(4, -1.0, 2.0, -0.5);
        assert!(!asym.is_symmetric());
    }

    #[test]
    fn symmetry_probe_on_csr() {
        let t = tridiag(20, 1.0, -3.0, 1.0);
        assert!(symmetry_defect(&t, 20, 7) <= 1e-12);
    }

    #[test]
    fn thin_qr_reconstructs_and_orthonormalizes() {
        for (n, p, seed) in [(8, 1, 1u64), (10, 3, 2), (12, 5, 3), (16, 8, 4)] {
            let f = random_block(n, p, seed);
            let (q, s) = thin_qr(&f).unwrap();
            // Orthonormality.
            let bound = 1e-12 * ((n * p) as f64).sqrt();
            for i in 0..p {
                for j in 0..p {
                    let g = dot(q.col(i), q.col(j)) - if i == j { 1.0 } else { 0.0 };
                    assert!(g.abs() <= bound, "gram defect {g:.3e} at ({i},{j})");
                }
            }
            // S upper triangular, nonnegative diagonal.
            for i in 0..p {
                assert!(s[i * p + i] >= 0.0);
                for j in 0..i {
                    assert_eq!(s[j * p + i], 0.0);
                }
            }
            // Q S = F.
            let fnorm = nrm2(f.data());
            for k in 0..p {
                let mut rec = vec![0.0; n];
                for i in 0..=k {
                    axpy(s[k * p + i], q.col(i), &mut rec);
                }
                axpy(-1.0, f.col(k), &mut rec);
                assert!(nrm2(&rec) <= 1e-12 * fnorm);
            }
        }
    }

    #[test]
    fn thin_qr_rank_deficient_start() {
        let mut e1 = vec![0.0; 6];
        e1[0] = 1.0;
        let f = BlockVector::from_columns(&[e1.clone(), e1]).unwrap();
        match thin_qr(&f) {
            Err(LinAlgError::RankDeficientStart { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected rank-deficient error, got {other:?}"),
        }
    }

    #[test]
    fn householder_identity_on_e1_like_segment() {
        let h = householder_generate(&[1.0, 0.0, 0.0], 0);
        let mut seg = [1.0, 0.0, 0.0];
        householder_apply(&h, &mut seg);
        assert_eq!(seg[0].abs(), 1.0);
        assert_eq!(&seg[1..], &[0.0, 0.0]);
    }

    #[test]
    fn householder_rotates_345() {
        let h = householder_generate(&[3.0, 4.0], 0);
        let mut seg = [3.0, 4.0];
        householder_apply(&h, &mut seg);
        assert!((seg[0].abs() - 5.0).abs() <= 1e-14);
        assert!(seg[1].abs() <= 1e-14);
    }

    #[test]
    fn householder_zero_pivot_segment() {
        let h = householder_generate(&[0.0, 0.0, 5.0], 0);
        let mut seg = [0.0, 0.0, 5.0];
        householder_apply(&h, &mut seg);
        assert!((seg[0] - 5.0).abs() <= 1e-14);
        assert!(seg[1].abs() <= 1e-15 && seg[2].abs() <= 1e-15);
    }

    #[test]
    fn householder_zero_segment_is_identity() {
        let h = householder_generate(&[0.0, 0.0], 0);
        assert_eq!(h.beta, 0.0);
        let mut seg = [0.0, 0.0];
        householder_apply(&h, &mut seg);
        assert_eq!(seg, [0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn householder_involution_and_norm(seg in proptest::collection::vec(-1.0f64..1.0, 1..7)) {
            let h = householder_generate(&seg, 0);
            let mut once = seg.clone();
            householder_apply(&h, &mut once);
            // Norm preservation.
            prop_assert!((nrm2(&once) - nrm2(&seg)).abs() <= 1e-14 * (1.0 + nrm2(&seg)));
            // Annihilation below the pivot.
            for x in &once[1..] {
                prop_assert!(x.abs() <= 1e-14 * (1.0 + nrm2(&seg)));
            }
            // Involution: applying twice restores the segment.
            let mut twice = once;
            householder_apply(&h, &mut twice);
            for (a, b) in twice.iter().zip(&seg) {
                prop_assert!((a - b).abs() <= 1e-14 * (1.0 + nrm2(&seg)));
            }
        }

        #[test]
        fn thin_qr_property(seed in 0u64..200, p in 1usize..8) {
            let n = 24;
            let f = random_block(n, p, seed);
            // Random full-height blocks are full rank almost surely.
            let (q, s) = thin_qr(&f).unwrap();
            let bound = 1e-12 * ((n * p) as f64).sqrt();
            for i in 0..p {
                for j in 0..=i {
                    let g = dot(q.col(i), q.col(j)) - if i == j { 1.0 } else { 0.0 };
                    prop_assert!(g.abs() <= bound);
                }
            }
            let fnorm = nrm2(f.data());
            for k in 0..p {
                let mut rec = vec![0.0; n];
                for i in 0..=k {
                    axpy(s[k * p + i], q.col(i), &mut rec);
                }
                axpy(-1.0, f.col(k), &mut rec);
                prop_assert!(nrm2(&rec) <= 1e-12 * fnorm);
            }
        }
    }
}
