//! Banded Lanczos process: `p` starting vectors, one new basis vector per
//! iteration. The projected operator is symmetric with `p` sub- and
//! superdiagonals, so the recurrence needs only a sliding window of `2p`
//! basis vectors, and the superdiagonal coefficients of the current column
//! are copies of previously computed subdiagonal entries (no extra inner
//! products).
//!
//! When a candidate vector is (numerically) dependent on the basis, the
//! process either injects a random replacement direction and pins the
//! corresponding coefficients to exact zero, or retires the candidate's
//! index and continues with a narrower band.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linops::{
    axpy, dot, nrm2, scal, thin_qr, BlockVector, LinAlgError, SymmetricOperator,
};

#[derive(Debug, Error)]
pub enum LanczosError {
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("no independent replacement direction found at iteration {iteration}")]
    ReplacementExhausted { iteration: usize },
    #[error("subspace exhausted; no further basis vectors exist")]
    Exhausted,
}

/// What to do when a candidate basis vector is dependent on the current
/// basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownPolicy {
    /// Replace the candidate with a random direction orthogonal to
    /// everything kept, and continue with the full band.
    RandomReplacement,
    /// Retire the candidate's index and continue with a narrower band.
    BlockShrink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependenceKind {
    /// Candidate norm at machine-zero level: a true invariant subspace.
    Exact,
    /// Candidate norm below the dependence tolerance but clearly above
    /// machine zero; the discarded direction still carries signal and is
    /// retained for orthogonalization until it would leave the window.
    Near,
}

#[derive(Debug, Clone)]
pub struct BreakdownEvent {
    /// 1-based Lanczos step at which the dependence was found.
    pub iteration: usize,
    /// Global index of the column being processed.
    pub global: usize,
    pub kind: DependenceKind,
    /// Candidate norm that fell below the tolerance.
    pub h_value: f64,
    pub policy: BreakdownPolicy,
}

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Dependence tolerance, relative to the operator norm estimate.
    pub gamma: f64,
    pub policy: BreakdownPolicy,
    pub seed: u64,
    /// Number of pre-generated replacement vectors kept orthogonal to the
    /// basis as it grows.
    pub pool_size: usize,
    /// Run a second orthogonalization pass over the window on every step.
    pub reorthogonalize: bool,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            gamma: 1e-8,
            policy: BreakdownPolicy::RandomReplacement,
            seed: 0,
            pool_size: 1,
            reorthogonalize: true,
        }
    }
}

/// One column of the banded Hessenberg matrix, in compact (creation-order)
/// row indexing. Row `compact` is the diagonal; retired indices never get an
/// entry.
#[derive(Debug, Clone)]
pub struct HessenbergColumn {
    /// 1-based Lanczos step that produced this column.
    pub iteration: usize,
    /// Global index of the basis vector the operator was applied to.
    pub global: usize,
    /// Position of this column among executed columns; also the compact row
    /// of its diagonal entry.
    pub compact: usize,
    /// (compact row, value), sorted by row. Includes exact zeros that are
    /// structurally present (a replaced candidate pins its coefficient to 0).
    pub entries: Vec<(usize, f64)>,
    /// Norm of the orthogonalized candidate; 0 when the column ended in a
    /// breakdown.
    pub subdiag_norm: f64,
}

impl HessenbergColumn {
    pub fn bandwidth(&self) -> usize {
        self.entries.len()
    }

    pub fn subdiag_len(&self) -> usize {
        self.entries.iter().filter(|(r, _)| *r > self.compact).count()
    }

    pub fn superdiag_len(&self) -> usize {
        self.entries.iter().filter(|(r, _)| *r < self.compact).count()
    }
}

#[derive(Debug)]
struct RetainedVector {
    #[allow(dead_code)]
    global: usize,
    vector: Vec<f64>,
    /// Iteration at which the vector is dropped (drop once current >= this).
    expiry: usize,
}

/// Sliding storage for the basis: a FIFO of at most `2p` (global index,
/// vector) slots, plus near-dependence leftovers and the replacement pool.
/// Everything in slots plus retained stays pairwise orthonormal.
#[derive(Debug)]
pub struct LanczosWindow {
    capacity: usize,
    slots: VecDeque<(usize, Vec<f64>)>,
    retained: Vec<RetainedVector>,
    pool: Vec<Vec<f64>>,
}

impl LanczosWindow {
    fn new(capacity: usize) -> Self {
        Self { capacity, slots: VecDeque::new(), retained: Vec::new(), pool: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, global: usize) -> Option<&[f64]> {
        self.slots.iter().find(|(g, _)| *g == global).map(|(_, v)| v.as_slice())
    }

    /// Slot vectors with `lo <= global < hi`, in increasing global order.
    pub fn range(&self, lo: usize, hi: usize) -> impl Iterator<Item = (usize, &[f64])> {
        self.slots
            .iter()
            .filter(move |(g, _)| *g >= lo && *g < hi)
            .map(|(g, v)| (*g, v.as_slice()))
    }

    pub fn slot_globals(&self) -> Vec<usize> {
        self.slots.iter().map(|(g, _)| *g).collect()
    }

    pub fn retained_count(&self) -> usize {
        self.retained.len()
    }

    pub fn retained_vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.retained.iter().map(|r| r.vector.as_slice())
    }

    /// Pushes a new basis vector, evicting the oldest slot beyond capacity,
    /// and keeps the replacement pool orthogonal to it.
    fn push(&mut self, global: usize, v: Vec<f64>) {
        for r in &mut self.pool {
            let c = dot(&v, r);
            axpy(-c, &v, r);
        }
        self.slots.push_back((global, v));
        if self.slots.len() > self.capacity {
            self.slots.pop_front();
        }
    }

    fn retain(&mut self, global: usize, vector: Vec<f64>, expiry: usize) {
        self.retained.push(RetainedVector { global, vector, expiry });
    }

    fn expire_retained(&mut self, iteration: usize) {
        self.retained.retain(|r| iteration < r.expiry);
    }

    fn orthogonalize_vs_retained(&self, w: &mut [f64]) {
        for r in &self.retained {
            let c = dot(&r.vector, w);
            axpy(-c, &r.vector, w);
        }
    }

    fn orthogonalize_vs_all(&self, w: &mut [f64], passes: usize) {
        for _ in 0..passes {
            for (_, u) in &self.slots {
                let c = dot(u, w);
                axpy(-c, u, w);
            }
            self.orthogonalize_vs_retained(w);
        }
    }
}

/// FIFO of the subdiagonal entries of the last `p` executed columns, stored
/// by offset: slot `k-1` of a column holds the coefficient `k` rows below
/// its diagonal (0 where the row is retired). By symmetry these are exactly
/// the superdiagonal coefficients later columns need, and for the column
/// currently being processed they sit on the antidiagonal of [`Self::matrix`].
#[derive(Debug)]
pub struct SubdiagonalCache {
    p: usize,
    cols: VecDeque<(usize, Vec<f64>)>,
}

impl SubdiagonalCache {
    fn new(p: usize) -> Self {
        Self { p, cols: VecDeque::new() }
    }

    fn push(&mut self, col: usize, entries: Vec<f64>) {
        debug_assert_eq!(entries.len(), self.p);
        self.cols.push_back((col, entries));
        if self.cols.len() > self.p {
            self.cols.pop_front();
        }
    }

    /// Coefficient at (`row`, `col`) with `col < row <= col + p`, if the
    /// column is still cached.
    pub fn lookup(&self, col: usize, row: usize) -> Option<f64> {
        let offset = row.checked_sub(col)?;
        if offset == 0 || offset > self.p {
            return None;
        }
        self.cols.iter().find(|(c, _)| *c == col).map(|(_, e)| e[offset - 1])
    }

    /// p x p snapshot, column-major, newest column last, zero-padded on the
    /// left when fewer than p columns have been executed.
    pub fn matrix(&self) -> Vec<f64> {
        let p = self.p;
        let mut m = vec![0.0; p * p];
        let pad = p - self.cols.len();
        for (k, (_, entries)) in self.cols.iter().enumerate() {
            m[(pad + k) * p..(pad + k + 1) * p].copy_from_slice(entries);
        }
        m
    }
}

/// Result of one Lanczos step.
#[derive(Debug)]
pub struct LanczosStep {
    pub column: HessenbergColumn,
    pub event: Option<BreakdownEvent>,
    /// Global index of the basis vector created this step, if any.
    pub created: Option<usize>,
    /// True when the subspace closed (no vectors left to consume).
    pub exhausted: bool,
}

/// Driver state for the banded Lanczos process.
pub struct LanczosState {
    n: usize,
    p: usize,
    gamma_abs: f64,
    exact_abs: f64,
    gamma_rel: f64,
    policy: BreakdownPolicy,
    reorthogonalize: bool,
    window: LanczosWindow,
    cache: SubdiagonalCache,
    s_factor: Vec<f64>,
    /// Global indices in creation order; compact index = position here.
    created: Vec<usize>,
    retired: Vec<usize>,
    step: usize,
    rng: ChaCha8Rng,
    prefetch: VecDeque<Vec<f64>>,
    block_applies: usize,
    a_norm_est: f64,
    pool_size: usize,
    exhausted: bool,
}

impl LanczosState {
    /// Orthonormalizes the starting block, seeds the window, estimates the
    /// operator norm (10 power iterations) to scale the dependence
    /// tolerance, and pre-generates the replacement pool.
    pub fn init(
        a: &dyn SymmetricOperator,
        f0: &BlockVector,
        opts: &LanczosOptions,
    ) -> Result<Self, LanczosError> {
        let n = a.dim();
        if f0.n() != n {
            return Err(LinAlgError::Dimension { expected: n, got: f0.n() }.into());
        }
        let p = f0.p();
        let (q, s) = thin_qr(f0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let a_norm_est = estimate_operator_norm(a, &mut rng);
        let gamma_abs = (opts.gamma * a_norm_est).max(f64::MIN_POSITIVE);
        let exact_abs = (1e-14 * a_norm_est).max(f64::MIN_POSITIVE);

        let mut window = LanczosWindow::new(2 * p);
        for k in 0..p {
            window.push(k, q.col(k).to_vec());
        }
        for _ in 0..opts.pool_size {
            let mut r = random_unit(n, &mut rng);
            window.orthogonalize_vs_all(&mut r, 2);
            window.pool.push(r);
        }

        Ok(Self {
            n,
            p,
            gamma_abs,
            exact_abs,
            gamma_rel: opts.gamma,
            policy: opts.policy,
            reorthogonalize: opts.reorthogonalize,
            window,
            cache: SubdiagonalCache::new(p),
            s_factor: s,
            created: (0..p).collect(),
            retired: Vec::new(),
            step: 0,
            rng,
            prefetch: VecDeque::new(),
            block_applies: 0,
            a_norm_est,
            pool_size: opts.pool_size,
            exhausted: false,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.step
    }

    /// Upper triangular p x p factor of the starting block (column-major).
    pub fn s_factor(&self) -> &[f64] {
        &self.s_factor
    }

    pub fn a_norm_estimate(&self) -> f64 {
        self.a_norm_est
    }

    pub fn gamma_abs(&self) -> f64 {
        self.gamma_abs
    }

    pub fn window(&self) -> &LanczosWindow {
        &self.window
    }

    pub fn cache(&self) -> &SubdiagonalCache {
        &self.cache
    }

    /// Global indices created so far, in creation (= compact) order.
    pub fn created(&self) -> &[usize] {
        &self.created
    }

    pub fn retired(&self) -> &[usize] {
        &self.retired
    }

    /// Created but not yet consumed vectors: the effective band width.
    pub fn in_flight(&self) -> usize {
        self.created.len() - self.step
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    /// Total `apply_block` calls issued by the prefetcher.
    pub fn block_applies(&self) -> usize {
        self.block_applies
    }

    pub fn vector(&self, global: usize) -> Option<&[f64]> {
        self.window.get(global)
    }

    /// Applies the operator to every created-but-unconsumed vector in one
    /// block call and queues the results in consumption order.
    fn prefetch_batch(&mut self, a: &dyn SymmetricOperator) {
        let count = self.in_flight();
        debug_assert!(count > 0);
        let mut x = BlockVector::zeros(self.n, count);
        for (k, t) in (self.step..self.created.len()).enumerate() {
            let g = self.created[t];
            x.col_mut(k).copy_from_slice(self.window.get(g).expect("in-flight vector in window"));
        }
        let mut y = BlockVector::zeros(self.n, count);
        a.apply_block(&x, &mut y);
        self.block_applies += 1;
        for k in 0..count {
            self.prefetch.push_back(y.col(k).to_vec());
        }
    }

    /// Runs one step: consumes the next basis vector, orthogonalizes its
    /// image against the window (cached coefficients for rows above the
    /// diagonal, inner products at and below), and either extends the basis
    /// or handles a dependence per the configured policy.
    pub fn step(&mut self, a: &dyn SymmetricOperator) -> Result<LanczosStep, LanczosError> {
        if self.exhausted || self.in_flight() == 0 {
            return Err(LanczosError::Exhausted);
        }
        let iteration = self.step + 1;
        self.window.expire_retained(iteration);
        if self.prefetch.is_empty() {
            self.prefetch_batch(a);
        }
        let g = self.created[self.step];
        let compact = self.step;
        let mut w = self.prefetch.pop_front().expect("prefetch queue filled above");

        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * self.p + 1);
        let mut cache_col = vec![0.0; self.p];

        // Rows above the diagonal: symmetric copies of cached subdiagonal
        // entries. No inner products here.
        let lo = g.saturating_sub(self.p);
        let created = &self.created;
        for (gi, u) in self.window.range(lo, g) {
            let h = self.cache.lookup(gi, g).expect("band column still cached");
            if h != 0.0 {
                axpy(-h, u, &mut w);
            }
            entries.push((created.binary_search(&gi).unwrap(), h));
        }
        // Diagonal and subdiagonal rows: explicit orthogonalization.
        for (gi, u) in self.window.range(g, g + self.p) {
            let h = dot(u, &w);
            axpy(-h, u, &mut w);
            entries.push((created.binary_search(&gi).unwrap(), h));
            if gi > g {
                cache_col[gi - g - 1] = h;
            }
        }
        self.window.orthogonalize_vs_retained(&mut w);
        if self.reorthogonalize {
            // Second pass stabilizes the vector; corrections are small and
            // deliberately not folded into the column.
            for (_, u) in self.window.range(lo, g + self.p) {
                let c = dot(u, &w);
                axpy(-c, u, &mut w);
            }
            self.window.orthogonalize_vs_retained(&mut w);
        }

        let beta = nrm2(&w);
        self.step += 1;

        let mut event = None;
        let mut created_global = None;
        let mut subdiag_norm = 0.0;

        if beta < self.gamma_abs {
            let kind =
                if beta <= self.exact_abs { DependenceKind::Exact } else { DependenceKind::Near };
            event = Some(BreakdownEvent {
                iteration,
                global: g,
                kind,
                h_value: beta,
                policy: self.policy,
            });
            if self.in_flight() == 0 {
                // Nothing left in flight: the subspace is invariant.
                self.exhausted = true;
            } else {
                match self.policy {
                    BreakdownPolicy::RandomReplacement => {
                        if kind == DependenceKind::Near {
                            scal(1.0 / beta, &mut w);
                            self.window.retain(g + self.p, w, iteration + 2 * self.p);
                        }
                        let r = self.draw_replacement(iteration)?;
                        self.created.push(g + self.p);
                        self.window.push(g + self.p, r);
                        // The dependence pins both symmetric coefficients to
                        // exact zero; the cache slot mirrors this.
                        entries.push((self.created.len() - 1, 0.0));
                        created_global = Some(g + self.p);
                    }
                    BreakdownPolicy::BlockShrink => {
                        self.retired.push(g + self.p);
                        if self.in_flight() == 0 {
                            self.exhausted = true;
                        }
                    }
                }
            }
        } else {
            scal(1.0 / beta, &mut w);
            self.created.push(g + self.p);
            self.window.push(g + self.p, w);
            entries.push((self.created.len() - 1, beta));
            cache_col[self.p - 1] = beta;
            subdiag_norm = beta;
            created_global = Some(g + self.p);
        }

        self.cache.push(g, cache_col);
        let exhausted = self.exhausted;
        Ok(LanczosStep {
            column: HessenbergColumn { iteration, global: g, compact, entries, subdiag_norm },
            event,
            created: created_global,
            exhausted,
        })
    }

    /// Produces a unit vector orthogonal to the window and retained set,
    /// preferring the pre-generated pool (which has been kept orthogonal to
    /// the whole basis since init).
    fn draw_replacement(&mut self, iteration: usize) -> Result<Vec<f64>, LanczosError> {
        let mut from_pool = true;
        for _attempt in 0..5 {
            let mut r = if let Some(r) = self.window.pool.pop() {
                r
            } else {
                from_pool = false;
                random_unit(self.n, &mut self.rng)
            };
            self.window.orthogonalize_vs_all(&mut r, 2);
            let norm = nrm2(&r);
            if norm >= self.gamma_rel.max(1e-12) {
                scal(1.0 / norm, &mut r);
                if from_pool && self.window.pool.len() < self.pool_size {
                    let mut fresh = random_unit(self.n, &mut self.rng);
                    self.window.orthogonalize_vs_all(&mut fresh, 2);
                    self.window.pool.push(fresh);
                }
                return Ok(r);
            }
        }
        Err(LanczosError::ReplacementExhausted { iteration })
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = nrm2(&v);
    if norm > 0.0 {
        scal(1.0 / norm, &mut v);
    } else {
        v[0] = 1.0;
    }
    v
}

/// One-sided power iteration, 10 steps, seeded start.
fn estimate_operator_norm(a: &dyn SymmetricOperator, rng: &mut ChaCha8Rng) -> f64 {
    let n = a.dim();
    let mut x = random_unit(n, rng);
    let mut y = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..10 {
        a.apply_one(&x, &mut y);
        est = nrm2(&y);
        if est == 0.0 {
            return 0.0;
        }
        x.copy_from_slice(&y);
        scal(1.0 / est, &mut x);
    }
    est
}
