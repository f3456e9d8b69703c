//! Block MINRES for symmetric indefinite systems with multiple right-hand
//! sides.
//!
//! The solver drives a banded Lanczos process: `p` starting vectors are
//! extended one basis vector per iteration, so the projected operator is a
//! symmetric banded Hessenberg matrix with `p` sub- and superdiagonals. A
//! progressive Householder QR of that matrix yields per-column minimum
//! residual updates with O(p) storage: the basis, the search directions and
//! the reflectors all live in fixed-size FIFO windows.
//!
//! Modules:
//! - [`linops`]: CSR symmetric matrices, block vectors, Householder
//!   reflectors, thin QR.
//! - [`banded_lanczos`]: the windowed Lanczos recurrence, including rank
//!   detection and the two dependence-handling policies.
//! - [`minres`]: the progressive QR, search-direction recurrence and the
//!   `solve` / `minres_single` drivers.
//! - [`precond`]: zero-fill incomplete Cholesky and split preconditioning.
//! - [`problems`]: shifted 2D Laplacian builders, analytic eigenpairs,
//!   eigenvector-mix right-hand sides, Matrix Market I/O.
//! - [`cli`]: the `block-minres` command line (solve plus the fig1..fig6
//!   experiment drivers).

pub mod banded_lanczos;
pub mod cli;
pub mod linops;
pub mod minres;
pub mod precond;
pub mod problems;
