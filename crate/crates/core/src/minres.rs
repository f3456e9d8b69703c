//! Progressive block MINRES driver on top of the banded Lanczos process:
//! a sliding-window Householder QR of the banded projected matrix, a
//! search-direction recurrence, and rank-one solution updates, all in O(p)
//! memory per iteration.

use std::collections::VecDeque;
use std::time::Instant;

use thiserror::Error;

use crate::banded_lanczos::{
    BreakdownEvent, BreakdownPolicy, HessenbergColumn, LanczosError, LanczosOptions, LanczosState,
};
use crate::linops::{
    axpy, dot, householder_apply, householder_generate, scal, BlockVector, LinAlgError,
    SymmetricOperator,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lanczos(#[from] LanczosError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("numerically singular R diagonal at compact column {column} (|r| = {value:e}); \
             the projected least-squares problem lost rank")]
    SingularR { column: usize, value: f64 },
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Every column's computed relative residual reached the tolerance.
    Converged,
    /// Iteration cap hit; the best approximation so far is returned.
    MaxIter,
    /// The basis closed before every column reached the tolerance.
    SubspaceExhausted,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Per-column relative residual target. 0 disables the convergence test
    /// (the solver then runs to `max_iter` or subspace exhaustion).
    pub tol: f64,
    pub max_iter: usize,
    /// Dependence tolerance, relative to the operator norm estimate.
    pub gamma: f64,
    pub policy: BreakdownPolicy,
    pub seed: u64,
    pub reorthogonalize: bool,
    /// Audit interval for explicitly evaluated residuals (0 = never).
    pub true_residual_check_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            gamma: 1e-8,
            policy: BreakdownPolicy::RandomReplacement,
            seed: 0,
            reorthogonalize: true,
            true_residual_check_every: 0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if !self.tol.is_finite() || self.tol < 0.0 {
            return Err(SolverError::InvalidConfig(format!(
                "tol must be finite and >= 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(SolverError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(SolverError::InvalidConfig(format!(
                "gamma must be finite and > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// One column of the triangular factor, compact row indexing, sorted
/// ascending; the last entry is the diagonal. Exact zeros inside the band
/// (left behind by breakdown handling) are kept: they are structural.
#[derive(Debug, Clone)]
pub struct RColumn {
    pub compact: usize,
    pub entries: Vec<(usize, f64)>,
}

impl RColumn {
    pub fn diag(&self) -> f64 {
        self.entries.last().expect("R column has a diagonal").1
    }

    pub fn superdiag_len(&self) -> usize {
        self.entries.len() - 1
    }
}

/// Sliding QR of the banded projected matrix plus the live tail of the
/// transformed right-hand side. Row `c` of the transformed RHS is consumed
/// when column `c` is finalized; the remaining tail holds exactly the
/// residual norms.
pub struct BandedQrState {
    p: usize,
    reflectors: VecDeque<crate::linops::HouseholderReflector>,
    r_columns: VecDeque<RColumn>,
    /// Live rows `consumed..` of the transformed RHS, each of width p.
    zbar: VecDeque<Vec<f64>>,
    consumed: usize,
    consumed_energy: f64,
    s_energy: f64,
}

impl BandedQrState {
    /// Starts from the p x p column-major triangular factor of the initial
    /// block: the transformed RHS begins as that factor stacked on zeros.
    pub fn new(p: usize, s: &[f64]) -> Self {
        assert_eq!(s.len(), p * p);
        let mut zbar = VecDeque::with_capacity(p + 1);
        for t in 0..p {
            zbar.push_back((0..p).map(|k| s[t + k * p]).collect());
        }
        let s_energy = dot(s, s);
        Self {
            p,
            reflectors: VecDeque::new(),
            r_columns: VecDeque::new(),
            zbar,
            consumed: 0,
            consumed_energy: 0.0,
            s_energy,
        }
    }

    /// Columns finalized so far (= the iteration count).
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn r_columns(&self) -> impl Iterator<Item = &RColumn> {
        self.r_columns.iter()
    }

    /// Relative defect of the energy identity: consumed rows plus the live
    /// tail must reproduce the initial block's energy exactly (orthogonal
    /// invariance).
    pub fn energy_defect(&self) -> f64 {
        let tail: f64 = self.zbar.iter().map(|row| dot(row, row)).sum();
        ((self.consumed_energy + tail) - self.s_energy).abs() / self.s_energy.max(f64::MIN_POSITIVE)
    }

    /// Per-column norms of the live tail: the computed residual norms of the
    /// current approximation.
    pub fn computed_residuals(&self) -> Vec<f64> {
        (0..self.p)
            .map(|k| self.zbar.iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt())
            .collect()
    }

    /// Reduces one Hessenberg column: applies the windowed previous
    /// reflectors (skipping those whose span cannot touch a nonzero),
    /// generates the reflector annihilating the subdiagonal entries, applies
    /// it to the live RHS tail, and consumes the finalized row.
    ///
    /// Returns the new R column and the consumed row.
    pub fn update(&mut self, col: &HessenbergColumn) -> Result<(RColumn, Vec<f64>), SolverError> {
        let p = self.p;
        let c = col.compact;
        assert_eq!(c, self.consumed, "columns must arrive in order");
        let lo = c.saturating_sub(2 * p);
        let hi = c + p;
        let mut work = vec![0.0; hi - lo + 1];
        let mut cur_lo = c;
        let mut cur_hi = c;
        for &(r, v) in &col.entries {
            work[r - lo] = v;
            cur_lo = cur_lo.min(r);
            cur_hi = cur_hi.max(r);
        }
        let col_norm = crate::linops::nrm2(&work);

        for refl in &self.reflectors {
            let s_lo = refl.offset;
            let s_hi = refl.offset + refl.len() - 1;
            // A reflector acting entirely on zero rows is an exact no-op.
            if s_hi < cur_lo || s_lo > cur_hi {
                continue;
            }
            householder_apply(refl, &mut work[s_lo - lo..=s_hi - lo]);
            cur_lo = cur_lo.min(s_lo);
            cur_hi = cur_hi.max(s_hi);
        }

        let span_hi = cur_hi.max(c);
        let refl = householder_generate(&work[c - lo..=span_hi - lo], c);
        householder_apply(&refl, &mut work[c - lo..=span_hi - lo]);
        // The reflector zeroes everything below the diagonal by construction.
        for r in work.iter_mut().take(span_hi - lo + 1).skip(c - lo + 1) {
            *r = 0.0;
        }
        let r_cc = work[c - lo];
        if col_norm == 0.0 || r_cc.abs() < 1e-14 * col_norm {
            return Err(SolverError::SingularR { column: c, value: r_cc });
        }

        // Materialize the tail rows the reflector reaches, then rotate them.
        while self.consumed + self.zbar.len() <= span_hi {
            self.zbar.push_back(vec![0.0; p]);
        }
        if refl.beta != 0.0 {
            let rows = span_hi - c + 1;
            let mut seg = vec![0.0; rows];
            for k in 0..p {
                for (t, s) in seg.iter_mut().enumerate() {
                    *s = self.zbar[t][k];
                }
                householder_apply(&refl, &mut seg);
                for (t, s) in seg.iter().enumerate() {
                    self.zbar[t][k] = *s;
                }
            }
        }
        let z_row = self.zbar.pop_front().expect("tail is nonempty");
        self.consumed += 1;
        self.consumed_energy += dot(&z_row, &z_row);
        while self.zbar.len() < p {
            self.zbar.push_back(vec![0.0; p]);
        }

        let entries: Vec<(usize, f64)> = (cur_lo..=c).map(|r| (r, work[r - lo])).collect();
        let rcol = RColumn { compact: c, entries };
        self.reflectors.push_back(refl);
        if self.reflectors.len() > 2 * p {
            self.reflectors.pop_front();
        }
        self.r_columns.push_back(rcol.clone());
        if self.r_columns.len() > 2 * p {
            self.r_columns.pop_front();
        }
        Ok((rcol, z_row))
    }
}

/// FIFO of the 2p most recent search directions, keyed by compact index.
pub struct SearchDirectionWindow {
    capacity: usize,
    dirs: VecDeque<(usize, Vec<f64>)>,
}

impl SearchDirectionWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, dirs: VecDeque::new() }
    }

    /// m_c = (u_c - sum r_{i,c} m_i) / r_{c,c}; structural zeros in the R
    /// column skip their predecessor entirely.
    pub fn push_from(&mut self, u: &[f64], rcol: &RColumn) {
        let c = rcol.compact;
        let mut m = u.to_vec();
        for &(row, v) in &rcol.entries {
            if row == c || v == 0.0 {
                continue;
            }
            let dir = self
                .dirs
                .iter()
                .find(|(i, _)| *i == row)
                .map(|(_, d)| d)
                .expect("window retains every direction the band references");
            axpy(-v, dir, &mut m);
        }
        scal(1.0 / rcol.diag(), &mut m);
        self.dirs.push_back((c, m));
        if self.dirs.len() > self.capacity {
            self.dirs.pop_front();
        }
    }

    pub fn newest(&self) -> &[f64] {
        &self.dirs.back().expect("at least one direction pushed").1
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// Everything recorded over a solve.
#[derive(Debug, Clone)]
pub struct ConvergenceHistory {
    /// Norms of the right-hand-side columns (the reference for relative
    /// residuals; a zero norm falls back to an absolute test).
    pub rhs_norms: Vec<f64>,
    /// Relative residuals at iteration 0.
    pub initial: Vec<f64>,
    /// `computed[j-1][i]`: relative computed residual of column i after
    /// iteration j.
    pub computed: Vec<Vec<f64>>,
    /// Explicitly evaluated relative residuals at audited iterations.
    pub true_checks: Vec<(usize, Vec<f64>)>,
    pub events: Vec<BreakdownEvent>,
    pub iterations: usize,
    pub converged: Vec<bool>,
    pub stop_reason: StopReason,
    pub wall_seconds: f64,
    /// Block operator applications issued by the basis prefetcher.
    pub block_applies: usize,
}

impl ConvergenceHistory {
    /// Denominators used for relative residuals (1 where `||b_i|| = 0`).
    pub fn denominators(&self) -> Vec<f64> {
        self.rhs_norms.iter().map(|&x| if x == 0.0 { 1.0 } else { x }).collect()
    }

    /// Relative residuals of column i across iterations 0..=iterations.
    pub fn column_series(&self, i: usize) -> Vec<f64> {
        let mut s = vec![self.initial[i]];
        s.extend(self.computed.iter().map(|row| row[i]));
        s
    }
}

fn relative(abs: &[f64], denoms: &[f64]) -> Vec<f64> {
    abs.iter().zip(denoms).map(|(a, d)| a / d).collect()
}

fn true_relative(
    a: &dyn SymmetricOperator,
    b: &BlockVector,
    x: &BlockVector,
    denoms: &[f64],
) -> Vec<f64> {
    let mut ax = BlockVector::zeros(x.n(), x.p());
    a.apply_block(x, &mut ax);
    (0..b.p())
        .map(|i| {
            let mut r = b.col(i).to_vec();
            axpy(-1.0, ax.col(i), &mut r);
            crate::linops::nrm2(&r) / denoms[i]
        })
        .collect()
}

/// Block MINRES: minimizes each column's residual over the expanding block
/// Krylov space, one new basis vector per iteration. Hitting `max_iter` is
/// not an error: the best approximation, per-column convergence flags, and
/// the full history are always returned.
pub fn solve(
    a: &dyn SymmetricOperator,
    b: &BlockVector,
    x0: Option<&BlockVector>,
    config: &SolverConfig,
) -> Result<(BlockVector, ConvergenceHistory), SolverError> {
    config.validate()?;
    let t0 = Instant::now();
    let n = a.dim();
    if b.n() != n {
        return Err(LinAlgError::Dimension { expected: n, got: b.n() }.into());
    }
    let p = b.p();
    if p == 0 {
        return Err(SolverError::InvalidConfig("at least one right-hand side required".into()));
    }
    let mut x = match x0 {
        Some(x0) => {
            if x0.n() != n || x0.p() != p {
                return Err(LinAlgError::Dimension { expected: n * p, got: x0.n() * x0.p() }.into());
            }
            x0.clone()
        }
        None => BlockVector::zeros(n, p),
    };
    let f0 = match x0 {
        Some(_) => {
            let mut ax = BlockVector::zeros(n, p);
            a.apply_block(&x, &mut ax);
            let data: Vec<f64> =
                b.data().iter().zip(ax.data()).map(|(bi, ai)| bi - ai).collect();
            BlockVector::from_flat(n, p, data).expect("dimensions already checked")
        }
        None => b.clone(),
    };

    let rhs_norms = b.column_norms();
    let denoms: Vec<f64> = rhs_norms.iter().map(|&x| if x == 0.0 { 1.0 } else { x }).collect();
    let initial = relative(&f0.column_norms(), &denoms);
    let mut converged: Vec<bool> = initial.iter().map(|&r| r <= config.tol).collect();

    let mut history = ConvergenceHistory {
        rhs_norms,
        initial,
        computed: Vec::new(),
        true_checks: Vec::new(),
        events: Vec::new(),
        iterations: 0,
        converged: converged.clone(),
        stop_reason: StopReason::Converged,
        wall_seconds: 0.0,
        block_applies: 0,
    };
    if converged.iter().all(|&c| c) {
        history.wall_seconds = t0.elapsed().as_secs_f64();
        return Ok((x, history));
    }

    let opts = LanczosOptions {
        gamma: config.gamma,
        policy: config.policy,
        seed: config.seed,
        pool_size: 1,
        reorthogonalize: config.reorthogonalize,
    };
    let mut lz = LanczosState::init(a, &f0, &opts)?;
    let mut qr = BandedQrState::new(p, lz.s_factor());
    let mut dirs = SearchDirectionWindow::new(2 * p);

    let exhaust_reason = |converged: &[bool]| {
        if converged.iter().all(|&c| c) {
            StopReason::Converged
        } else {
            StopReason::SubspaceExhausted
        }
    };

    let mut stop = None;
    while qr.consumed() < config.max_iter {
        if lz.is_exhausted() {
            stop = Some(exhaust_reason(&converged));
            break;
        }
        let step = lz.step(a)?;
        let u = lz.vector(step.column.global).expect("consumed vector still windowed").to_vec();
        let (rcol, z_row) = qr.update(&step.column)?;
        dirs.push_from(&u, &rcol);
        let m = dirs.newest();
        for (i, &z) in z_row.iter().enumerate() {
            if z != 0.0 {
                axpy(z, m, x.col_mut(i));
            }
        }
        if let Some(e) = step.event {
            history.events.push(e);
        }
        let rel = relative(&qr.computed_residuals(), &denoms);
        for (flag, &r) in converged.iter_mut().zip(&rel) {
            *flag = r <= config.tol;
        }
        history.computed.push(rel);
        let j = qr.consumed();
        if config.true_residual_check_every > 0 && j % config.true_residual_check_every == 0 {
            history.true_checks.push((j, true_relative(a, b, &x, &denoms)));
        }
        if converged.iter().all(|&c| c) {
            stop = Some(StopReason::Converged);
            break;
        }
        if step.exhausted {
            stop = Some(exhaust_reason(&converged));
            break;
        }
    }

    history.iterations = qr.consumed();
    history.converged = converged;
    history.stop_reason = stop.unwrap_or(StopReason::MaxIter);
    history.block_applies = lz.block_applies();
    history.wall_seconds = t0.elapsed().as_secs_f64();
    Ok((x, history))
}

/// Single right-hand-side MINRES: exactly `solve` with p = 1.
pub fn minres_single(
    a: &dyn SymmetricOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<(Vec<f64>, ConvergenceHistory), SolverError> {
    let bb = BlockVector::from_columns(&[b.to_vec()])
        .map_err(|_| SolverError::InvalidConfig("right-hand side must be nonempty".into()))?;
    let xb = match x0 {
        Some(x0) => Some(
            BlockVector::from_columns(&[x0.to_vec()])
                .map_err(|_| SolverError::InvalidConfig("x0 must be nonempty".into()))?,
        ),
        None => None,
    };
    let (x, history) = solve(a, &bb, xb.as_ref(), config)?;
    Ok((x.col(0).to_vec(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{nrm2, CsrSymmetricMatrix};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, seed: u64) -> CsrSymmetricMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                t.push((i, j, v));
                if i != j {
                    t.push((j, i, v));
                }
            }
        }
        CsrSymmetricMatrix::from_triplets(n, &t).unwrap()
    }

    /// Indefinite but well-conditioned: eigenvalues pushed away from zero.
    fn conditioned_sym(n: usize, seed: u64) -> CsrSymmetricMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..i {
                let v = 0.05 * rng.gen_range(-1.0..1.0);
                t.push((i, j, v));
                t.push((j, i, v));
            }
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            t.push((i, i, sign * (1.5 + i as f64 / n as f64)));
        }
        CsrSymmetricMatrix::from_triplets(n, &t).unwrap()
    }

    fn random_block(n: usize, p: usize, seed: u64) -> BlockVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BlockVector::from_flat(n, p, (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Drives the Lanczos process `steps` times, feeding every column
    /// through a fresh QR state; collects basis, columns, R columns, and
    /// search directions.
    struct Driven {
        basis: Vec<Vec<f64>>,
        cols: Vec<HessenbergColumn>,
        rcols: Vec<RColumn>,
        dirs: Vec<Vec<f64>>,
        qr: BandedQrState,
    }

    fn drive(a: &CsrSymmetricMatrix, f0: &BlockVector, steps: usize) -> Driven {
        let opts = LanczosOptions::default();
        let mut lz = LanczosState::init(a, f0, &opts).unwrap();
        let mut qr = BandedQrState::new(f0.p(), lz.s_factor());
        let mut win = SearchDirectionWindow::new(2 * f0.p());
        let mut basis: Vec<Vec<f64>> =
            (0..f0.p()).map(|g| lz.vector(g).unwrap().to_vec()).collect();
        let mut cols = Vec::new();
        let mut rcols = Vec::new();
        let mut dirs = Vec::new();
        for _ in 0..steps {
            let out = lz.step(a).unwrap();
            let u = lz.vector(out.column.global).unwrap().to_vec();
            if let Some(g) = out.created {
                basis.push(lz.vector(g).unwrap().to_vec());
            }
            let (rcol, _) = qr.update(&out.column).unwrap();
            win.push_from(&u, &rcol);
            dirs.push(win.newest().to_vec());
            rcols.push(rcol);
            cols.push(out.column);
            assert!(qr.energy_defect() <= 1e-10, "energy identity violated");
        }
        Driven { basis, cols, rcols, dirs, qr }
    }

    #[test]
    fn windowed_r_matches_dense_qr() {
        let n = 10;
        let p = 2;
        let a = random_sym(n, 3);
        let f0 = random_block(n, p, 4);
        let steps = 6;
        let d = drive(&a, &f0, steps);
        // Dense extended Hessenberg from the recorded columns.
        let rows = d.basis.len();
        let mut h = DMatrix::<f64>::zeros(rows, steps);
        for (c, col) in d.cols.iter().enumerate() {
            for &(r, v) in &col.entries {
                h[(r, c)] = v;
            }
        }
        let dense_r = h.qr().r();
        for (c, rcol) in d.rcols.iter().enumerate() {
            // Sign-normalize both factors row-wise so diagonals are positive.
            for &(r, v) in &rcol.entries {
                let row_sign = d.rcols[r].diag().signum();
                let dense_sign = dense_r[(r, r)].signum();
                let want = dense_r[(r, c)] * dense_sign;
                let got = v * row_sign;
                assert!(
                    (got - want).abs() <= 1e-10,
                    "R mismatch at ({r},{c}): {got} vs {want}"
                );
            }
            // Entries outside the recorded band must vanish in the dense QR.
            let lo = rcol.entries.first().unwrap().0;
            for r in 0..lo {
                assert!(dense_r[(r, c)].abs() <= 1e-10);
            }
            assert!(rcol.superdiag_len() <= 2 * p);
        }
    }

    #[test]
    fn directions_satisfy_m_r_equals_u() {
        let n = 16;
        let p = 3;
        let a = random_sym(n, 7);
        let f0 = random_block(n, p, 8);
        let steps = 8;
        let d = drive(&a, &f0, steps);
        for (c, rcol) in d.rcols.iter().enumerate() {
            let mut acc = vec![0.0; n];
            for &(r, v) in &rcol.entries {
                axpy(v, &d.dirs[r], &mut acc);
            }
            axpy(-1.0, &d.basis[c], &mut acc);
            assert!(nrm2(&acc) <= 1e-10, "M R != U at column {c}");
        }
        let _ = d.qr;
    }

    #[test]
    fn computed_residuals_match_true_residuals() {
        let n = 40;
        let p = 3;
        let a = random_sym(n, 11);
        let b = random_block(n, p, 12);
        let config = SolverConfig {
            tol: 0.0,
            max_iter: 15,
            true_residual_check_every: 1,
            ..Default::default()
        };
        let (_, h) = solve(&a, &b, None, &config).unwrap();
        assert_eq!(h.iterations, 15);
        assert_eq!(h.stop_reason, StopReason::MaxIter);
        for (j, true_rel) in &h.true_checks {
            let comp = &h.computed[j - 1];
            for i in 0..p {
                let diff = (comp[i] - true_rel[i]).abs();
                assert!(
                    diff <= 1e-8 * comp[i].max(true_rel[i]) + 1e-12,
                    "residual audit failed at iteration {j}, column {i}"
                );
            }
        }
    }

    #[test]
    fn computed_residuals_are_monotone() {
        let n = 50;
        let p = 4;
        let a = random_sym(n, 21);
        let b = random_block(n, p, 22);
        let config = SolverConfig { tol: 0.0, max_iter: 20, ..Default::default() };
        let (_, h) = solve(&a, &b, None, &config).unwrap();
        for i in 0..p {
            let series = h.column_series(i);
            for w in series.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "column {i} not monotone");
            }
        }
    }

    #[test]
    fn p1_solve_is_bitwise_minres_single() {
        let n = 30;
        let a = conditioned_sym(n, 31);
        let b = random_block(n, 1, 32);
        let config = SolverConfig { tol: 1e-10, max_iter: 60, ..Default::default() };
        let (xb, hb) = solve(&a, &b, None, &config).unwrap();
        let (xs, hs) = minres_single(&a, b.col(0), None, &config).unwrap();
        assert_eq!(
            xb.col(0).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            xs.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let flat = |h: &ConvergenceHistory| {
            h.computed.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(flat(&hb), flat(&hs));
        assert_eq!(hb.iterations, hs.iterations);
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let n = 9;
        let a = CsrSymmetricMatrix::identity(n);
        let b: Vec<f64> = (0..n).map(|i| (i as f64) - 3.5).collect();
        let (x, h) = minres_single(&a, &b, None, &SolverConfig::default()).unwrap();
        assert_eq!(h.iterations, 1);
        assert_eq!(h.stop_reason, StopReason::Converged);
        let mut diff = x.clone();
        axpy(-1.0, &b, &mut diff);
        assert!(nrm2(&diff) <= 1e-12 * nrm2(&b));
    }

    #[test]
    fn dependent_second_column_converges_at_iteration_one() {
        let n = 60;
        let a = conditioned_sym(n, 41);
        let b1: Vec<f64> = random_block(n, 1, 42).col(0).to_vec();
        let b2 = a.matvec(&b1).unwrap();
        let b = BlockVector::from_columns(&[b1, b2]).unwrap();
        let config = SolverConfig { tol: 1e-8, max_iter: 200, ..Default::default() };
        let (x, h) = solve(&a, &b, None, &config).unwrap();
        assert_eq!(h.events.len(), 1);
        assert_eq!(h.events[0].iteration, 1);
        assert!(h.computed[0][1] <= 1e-10, "dependent column residual: {}", h.computed[0][1]);
        assert_eq!(h.stop_reason, StopReason::Converged);
        // Final true residuals honor the tolerance.
        let denoms = h.denominators();
        let true_rel = true_relative(&a, &b, &x, &denoms);
        for (i, r) in true_rel.iter().enumerate() {
            assert!(*r <= 2.0 * config.tol, "column {i} true residual {r}");
        }
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let a = random_sym(12, 51);
        let b = BlockVector::zeros(12, 2);
        let (x, h) = solve(&a, &b, None, &SolverConfig::default()).unwrap();
        assert_eq!(h.iterations, 0);
        assert_eq!(h.stop_reason, StopReason::Converged);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exhaustion_with_shrink_converges_at_block_grade() {
        // Two distinct eigenvalues: block grade 4 for p = 2, and the exact
        // solution lies in the closed subspace.
        let diag: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 2.0 } else { 5.0 }).collect();
        let a = CsrSymmetricMatrix::from_diagonal(&diag);
        let b = random_block(12, 2, 61);
        let config = SolverConfig {
            tol: 1e-10,
            max_iter: 50,
            policy: BreakdownPolicy::BlockShrink,
            ..Default::default()
        };
        let (x, h) = solve(&a, &b, None, &config).unwrap();
        assert_eq!(h.stop_reason, StopReason::Converged);
        assert!(h.iterations <= 4);
        for i in 0..2 {
            for (k, &d) in diag.iter().enumerate() {
                let want = b.col(i)[k] / d;
                assert!((x.col(i)[k] - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn max_iter_returns_partial_progress() {
        let n = 40;
        let a = random_sym(n, 71);
        let b = random_block(n, 2, 72);
        let config = SolverConfig { tol: 1e-12, max_iter: 5, ..Default::default() };
        let (_, h) = solve(&a, &b, None, &config).unwrap();
        assert_eq!(h.stop_reason, StopReason::MaxIter);
        assert_eq!(h.iterations, 5);
        assert_eq!(h.computed.len(), 5);
        assert!(h.converged.iter().any(|c| !c));
    }

    #[test]
    fn block_residual_bounded_by_sequential_depth() {
        // After j = kp + m block iterations, column i has seen a Krylov
        // space at least as deep as a single-vector run of J iterations,
        // J = k+1 for the first m columns and k otherwise.
        let n = 30;
        let p = 3;
        let a = conditioned_sym(n, 81);
        let b = random_block(n, p, 82);
        let config = SolverConfig { tol: 0.0, max_iter: 12, ..Default::default() };
        let (_, hb) = solve(&a, &b, None, &config).unwrap();
        let single_cfg = SolverConfig { tol: 0.0, max_iter: 6, ..Default::default() };
        let singles: Vec<ConvergenceHistory> = (0..p)
            .map(|i| minres_single(&a, b.col(i), None, &single_cfg).unwrap().1)
            .collect();
        for j in 1..=hb.iterations {
            let k = (j - 1) / p;
            let m = j - k * p;
            for i in 0..p {
                let deep = if i + 1 <= m { k + 1 } else { k };
                let series = singles[i].column_series(0);
                if deep >= series.len() {
                    continue;
                }
                let block_rel = hb.computed[j - 1][i];
                let single_rel = series[deep];
                assert!(
                    block_rel <= single_rel * (1.0 + 1e-8) + 1e-12,
                    "depth bound failed at j={j}, i={i}: {block_rel} vs {single_rel}"
                );
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let a = CsrSymmetricMatrix::identity(4);
        let b = random_block(4, 1, 91);
        for config in [
            SolverConfig { tol: -1.0, ..Default::default() },
            SolverConfig { tol: f64::NAN, ..Default::default() },
            SolverConfig { max_iter: 0, ..Default::default() },
            SolverConfig { gamma: 0.0, ..Default::default() },
        ] {
            assert!(matches!(
                solve(&a, &b, None, &config),
                Err(SolverError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn nonzero_initial_guess_is_honored() {
        let n = 25;
        let a = conditioned_sym(n, 101);
        let b = random_block(n, 2, 102);
        let x0 = random_block(n, 2, 103);
        let config = SolverConfig { tol: 1e-10, max_iter: 100, ..Default::default() };
        let (x, h) = solve(&a, &b, Some(&x0), &config).unwrap();
        assert_eq!(h.stop_reason, StopReason::Converged);
        let denoms = h.denominators();
        let true_rel = true_relative(&a, &b, &x, &denoms);
        assert!(true_rel.iter().all(|&r| r <= 1e-8));
        // Initial residuals reflect the guess, not the raw RHS.
        let mut ax0 = BlockVector::zeros(n, 2);
        a.apply_block(&x0, &mut ax0);
        for i in 0..2 {
            let mut r = b.col(i).to_vec();
            axpy(-1.0, ax0.col(i), &mut r);
            let want = nrm2(&r) / denoms[i];
            assert!((h.initial[i] - want).abs() <= 1e-12 * want.max(1.0));
        }
    }
}
