//! Python extension module `bminres`: a thin veneer over the block MINRES
//! solver. Matrices are symmetric CSR; right-hand sides and solutions are
//! lists of columns.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use block_minres::banded_lanczos::BreakdownPolicy;
use block_minres::linops::{BlockVector, CsrSymmetricMatrix};
use block_minres::minres::{solve as core_solve, SolverConfig, StopReason};
use block_minres::precond::{ic0_factorize, SplitPreconditionedOperator};
use block_minres::problems::{negated_laplacian, shifted_operator_matrix, Laplacian2dSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Symmetric sparse matrix in CSR form.
#[pyclass(frozen, name = "SparseMatrix")]
struct PySparseMatrix {
    inner: CsrSymmetricMatrix,
}

#[pymethods]
impl PySparseMatrix {
    /// Builds from coordinate triplets (0-based indices). Both triangles
    /// must be present and symmetric.
    #[staticmethod]
    fn from_triplets(
        n: usize,
        rows: Vec<usize>,
        cols: Vec<usize>,
        values: Vec<f64>,
    ) -> PyResult<Self> {
        if rows.len() != cols.len() || rows.len() != values.len() {
            return Err(value_err("rows, cols and values must have equal length"));
        }
        let triplets: Vec<(usize, usize, f64)> = rows
            .into_iter()
            .zip(cols)
            .zip(values)
            .map(|((i, j), v)| (i, j, v))
            .collect();
        let inner = CsrSymmetricMatrix::from_triplets(n, &triplets).map_err(value_err)?;
        if !inner.is_symmetric() {
            return Err(value_err("matrix is not symmetric"));
        }
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    fn matvec(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.matvec(&x).map_err(value_err)
    }
}

/// The shifted model operator `-L - sigma*I` for the 2D Laplacian `L` on a
/// `grid x grid` mesh.
#[pyfunction]
fn laplacian(grid: usize, sigma: f64) -> PyResult<PySparseMatrix> {
    let spec = Laplacian2dSpec::new(grid, sigma).map_err(value_err)?;
    Ok(PySparseMatrix { inner: shifted_operator_matrix(&spec) })
}

/// `-L`: the positive definite matrix conventionally handed to the
/// incomplete Cholesky preconditioner.
#[pyfunction]
fn neg_laplacian(grid: usize) -> PyResult<PySparseMatrix> {
    let spec = Laplacian2dSpec::new(grid, 0.0).map_err(value_err)?;
    Ok(PySparseMatrix { inner: negated_laplacian(&spec) })
}

/// Outcome of a solve.
#[pyclass(frozen, name = "SolveResult")]
struct PySolveResult {
    /// Solution columns, in the original (unpreconditioned) variables.
    #[pyo3(get)]
    x: Vec<Vec<f64>>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: Vec<bool>,
    /// Final relative residuals of the system the solver iterated on (the
    /// preconditioned one when a preconditioner was given).
    #[pyo3(get)]
    residuals: Vec<f64>,
    #[pyo3(get)]
    stop_reason: String,
    /// Number of dependent-candidate events the basis process handled.
    #[pyo3(get)]
    breakdowns: usize,
}

fn parse_policy(policy: &str) -> PyResult<BreakdownPolicy> {
    match policy {
        "replace" => Ok(BreakdownPolicy::RandomReplacement),
        "shrink" => Ok(BreakdownPolicy::BlockShrink),
        other => Err(value_err(format!("policy must be 'replace' or 'shrink', got '{other}'"))),
    }
}

/// Solves `A x = b_i` for all columns at once. `precond_with` takes a
/// positive definite matrix whose zero-fill incomplete Cholesky factor
/// preconditions the system from both sides; solutions are mapped back to
/// the original variables.
#[pyfunction]
#[pyo3(signature = (matrix, b, tol=1e-8, maxit=5000, seed=0, policy="replace", precond_with=None))]
fn solve(
    matrix: &PySparseMatrix,
    b: Vec<Vec<f64>>,
    tol: f64,
    maxit: usize,
    seed: u64,
    policy: &str,
    precond_with: Option<&PySparseMatrix>,
) -> PyResult<PySolveResult> {
    if b.is_empty() {
        return Err(value_err("need at least one right-hand side"));
    }
    let config = SolverConfig {
        tol,
        max_iter: maxit,
        seed,
        policy: parse_policy(policy)?,
        ..Default::default()
    };

    let factor = match precond_with {
        Some(m) => Some(ic0_factorize(&m.inner).map_err(value_err)?),
        None => None,
    };
    let (x, history) = match &factor {
        Some(l) => {
            let op = SplitPreconditionedOperator::new(&matrix.inner, l).map_err(value_err)?;
            let mut cols_hat = Vec::with_capacity(b.len());
            for c in &b {
                cols_hat.push(op.transform_rhs(c).map_err(value_err)?);
            }
            let bv = BlockVector::from_columns(&cols_hat).map_err(value_err)?;
            let (y, h) = core_solve(&op, &bv, None, &config).map_err(value_err)?;
            let mut x = Vec::with_capacity(b.len());
            for i in 0..bv.p() {
                x.push(op.recover_solution(y.col(i)).map_err(value_err)?);
            }
            (x, h)
        }
        None => {
            let bv = BlockVector::from_columns(&b).map_err(value_err)?;
            let (y, h) = core_solve(&matrix.inner, &bv, None, &config).map_err(value_err)?;
            let x = (0..bv.p()).map(|i| y.col(i).to_vec()).collect();
            (x, h)
        }
    };

    let residuals = match history.computed.last() {
        Some(last) => last.clone(),
        None => history.initial.clone(),
    };
    Ok(PySolveResult {
        x,
        iterations: history.iterations,
        converged: history.converged.clone(),
        residuals,
        stop_reason: match history.stop_reason {
            StopReason::Converged => "converged",
            StopReason::MaxIter => "max_iter",
            StopReason::SubspaceExhausted => "subspace_exhausted",
        }
        .to_string(),
        breakdowns: history.events.len(),
    })
}

#[pymodule]
fn bminres(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySparseMatrix>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(laplacian, m)?)?;
    m.add_function(wrap_pyfunction!(neg_laplacian, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}
