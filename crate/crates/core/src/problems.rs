//! Problem generators and file I/O: the shifted 2D Laplacian model problem,
//! analytic eigenpair machinery, eigenvector-mix right-hand-side families,
//! and Matrix Market coordinate files.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linops::{axpy, CsrSymmetricMatrix, LinAlgError};

/// Finite-difference 2D Laplacian on a `grid x grid` mesh with mesh width
/// `h = 1/(grid-1)`, shifted: the solver-facing operator is `-L - shift*I`,
/// which is indefinite for the shifts of interest.
#[derive(Debug, Clone, Copy)]
pub struct Laplacian2dSpec {
    pub grid: usize,
    pub shift: f64,
}

impl Laplacian2dSpec {
    pub fn new(grid: usize, shift: f64) -> Result<Self, LinAlgError> {
        if grid < 2 {
            return Err(LinAlgError::InvalidStructure(format!(
                "grid side must be at least 2, got {grid}"
            )));
        }
        if !shift.is_finite() {
            return Err(LinAlgError::InvalidStructure(format!("shift must be finite, got {shift}")));
        }
        Ok(Self { grid, shift })
    }

    pub fn n(&self) -> usize {
        self.grid * self.grid
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.grid as f64 - 1.0)
    }

    /// `h^{-2}` computed exactly as `(grid-1)^2`.
    fn h_inv_sq(&self) -> f64 {
        let g1 = (self.grid - 1) as f64;
        g1 * g1
    }
}

/// Five-point stencil assembly with the given diagonal and off-diagonal
/// values; nodes are row-major (`k = row*grid + col`).
fn assemble_stencil(grid: usize, diag: f64, off: f64) -> CsrSymmetricMatrix {
    let n = grid * grid;
    let mut triplets = Vec::with_capacity(5 * n);
    for r in 0..grid {
        for c in 0..grid {
            let k = r * grid + c;
            if r > 0 {
                triplets.push((k, k - grid, off));
            }
            if c > 0 {
                triplets.push((k, k - 1, off));
            }
            triplets.push((k, k, diag));
            if c + 1 < grid {
                triplets.push((k, k + 1, off));
            }
            if r + 1 < grid {
                triplets.push((k, k + grid, off));
            }
        }
    }
    CsrSymmetricMatrix::from_triplets(n, &triplets).expect("stencil triplets are valid")
}

/// The (negative-definite) Laplacian `L = h^{-2}(I (x) T + T (x) I)` with
/// `T = tridiag(1,-2,1)`.
pub fn laplacian_matrix(spec: &Laplacian2dSpec) -> CsrSymmetricMatrix {
    let s = spec.h_inv_sq();
    assemble_stencil(spec.grid, -4.0 * s, s)
}

/// `-L`: symmetric positive definite, the conventional input for the
/// incomplete Cholesky preconditioner.
pub fn negated_laplacian(spec: &Laplacian2dSpec) -> CsrSymmetricMatrix {
    let s = spec.h_inv_sq();
    assemble_stencil(spec.grid, 4.0 * s, -s)
}

/// The solver-facing shifted operator `A = -L - shift*I`.
pub fn shifted_operator_matrix(spec: &Laplacian2dSpec) -> CsrSymmetricMatrix {
    let s = spec.h_inv_sq();
    assemble_stencil(spec.grid, 4.0 * s - spec.shift, -s)
}

/// An eigenpair of the shifted operator `A = -L - shift*I`.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSelection {
    SmallestMagnitude,
    LargestMagnitude,
}

/// Analytic eigenvalue of `A` for mode (i, j), 1-based mode indices.
fn shifted_eigenvalue(spec: &Laplacian2dSpec, i: usize, j: usize) -> f64 {
    let gp1 = (spec.grid + 1) as f64;
    let s = spec.h_inv_sq();
    // 2 - 2cos(t) = 4 sin^2(t/2), stable for small angles.
    let half = |k: usize| {
        let t = (k as f64) * std::f64::consts::PI / (2.0 * gp1);
        let sn = t.sin();
        4.0 * sn * sn
    };
    s * (half(i) + half(j)) - spec.shift
}

/// `count` analytic eigenpairs of the shifted operator, picked from the
/// requested end of the magnitude ordering. Results are always sorted by
/// ascending magnitude, so with `LargestMagnitude` the k-th returned pair is
/// the (n - count + 1 + k)-th of the global ordering. Eigenvectors are the
/// products of Dirichlet sine modes and are exactly orthonormal.
pub fn laplacian_eigenpairs(
    spec: &Laplacian2dSpec,
    count: usize,
    which: EigenSelection,
) -> Vec<Eigenpair> {
    let g = spec.grid;
    let n = spec.n();
    assert!(count <= n, "requested {count} eigenpairs from a dimension-{n} problem");
    let mut modes: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for i in 1..=g {
        for j in 1..=g {
            modes.push((shifted_eigenvalue(spec, i, j), i, j));
        }
    }
    // Deterministic total order; magnitude ties broken by mode indices.
    modes.sort_by(|a, b| {
        (a.0.abs(), a.1, a.2).partial_cmp(&(b.0.abs(), b.1, b.2)).expect("finite eigenvalues")
    });
    let picked = match which {
        EigenSelection::SmallestMagnitude => &modes[..count],
        EigenSelection::LargestMagnitude => &modes[n - count..],
    };
    let gp1 = (g + 1) as f64;
    let scale = 2.0 / gp1;
    picked
        .iter()
        .map(|&(value, i, j)| {
            let mut vector = Vec::with_capacity(n);
            for r in 1..=g {
                let sr = (r as f64 * i as f64 * std::f64::consts::PI / gp1).sin();
                for c in 1..=g {
                    let sc = (c as f64 * j as f64 * std::f64::consts::PI / gp1).sin();
                    vector.push(scale * sr * sc);
                }
            }
            Eigenpair { value, vector }
        })
        .collect()
}

/// Which eigenvector populations the two right-hand sides draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigmixKind {
    /// Both RHS from the 200 smallest-magnitude eigenvectors, overlapping in
    /// the middle 2m of them.
    SmallSmall,
    /// First RHS from the small end (plus m large modes), second from the
    /// large end (plus m small modes).
    SmallLarge,
}

#[derive(Debug, Clone, Copy)]
pub struct EigmixSpec {
    pub kind: EigmixKind,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

impl EigmixSpec {
    pub fn validate(&self) -> Result<(), LinAlgError> {
        let cap = match self.kind {
            EigmixKind::SmallSmall => 100,
            EigmixKind::SmallLarge => 200,
        };
        if self.m > cap {
            return Err(LinAlgError::InvalidStructure(format!(
                "overlap m = {} exceeds {cap} for this mix",
                self.m
            )));
        }
        if self.trials == 0 {
            return Err(LinAlgError::InvalidStructure("at least one trial required".into()));
        }
        Ok(())
    }
}

/// Builds the (b1, b2) pair for one trial. `small` must hold at least the
/// 200 smallest-magnitude eigenpairs in ascending magnitude; `large` (used
/// by SmallLarge only) the 200 largest, also ascending. Coefficients are
/// uniform(0,1), drawn per trial from `seed + trial`: first all of b1's in
/// ascending eigenvector index, then b2's.
pub fn build_eigmix_rhs(
    spec: &EigmixSpec,
    trial: usize,
    small: &[Eigenpair],
    large: &[Eigenpair],
) -> (Vec<f64>, Vec<f64>) {
    spec.validate().expect("spec validated by caller");
    assert!(small.len() >= 200, "need the 200 smallest-magnitude eigenpairs");
    if spec.kind == EigmixKind::SmallLarge {
        assert!(large.len() >= 200, "need the 200 largest-magnitude eigenpairs");
    }
    let n = small[0].vector.len();
    let m = spec.m;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(trial as u64));
    let mut b1 = vec![0.0; n];
    let mut b2 = vec![0.0; n];
    let add = |acc: &mut Vec<f64>, q: &Eigenpair, rng: &mut ChaCha8Rng| {
        let coeff: f64 = rng.gen();
        axpy(coeff, &q.vector, acc);
    };
    match spec.kind {
        EigmixKind::SmallSmall => {
            for q in &small[..100 + m] {
                add(&mut b1, q, &mut rng);
            }
            for q in &small[100 - m..200] {
                add(&mut b2, q, &mut rng);
            }
        }
        EigmixKind::SmallLarge => {
            for q in &small[..200] {
                add(&mut b1, q, &mut rng);
            }
            for q in &large[..m] {
                add(&mut b1, q, &mut rng);
            }
            for q in &small[200 - m..200] {
                add(&mut b2, q, &mut rng);
            }
            for q in &large[..200] {
                add(&mut b2, q, &mut rng);
            }
        }
    }
    (b1, b2)
}

// ---------------------------------------------------------------------------
// Matrix Market coordinate files.
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum MmError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
}

/// Reads a coordinate-format `real symmetric` or `real general` file. A
/// symmetric file may store either triangle (mixed entries are fine as long
/// as no coefficient is given twice); a general file must contain an exactly
/// symmetric square matrix.
pub fn mm_read(path: &Path) -> Result<CsrSymmetricMatrix, MmError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (line_no, header) = lines
        .next()
        .ok_or(MmError::Parse { line: 1, msg: "empty file".into() })
        .and_then(|(i, r)| Ok((i + 1, r?)))?;
    let fields: Vec<String> = header.split_whitespace().map(|t| t.to_lowercase()).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" {
        return Err(MmError::Parse {
            line: line_no,
            msg: "expected header '%%MatrixMarket matrix coordinate real <symmetry>'".into(),
        });
    }
    if fields[1] != "matrix" || fields[2] != "coordinate" || fields[3] != "real" {
        return Err(MmError::Parse {
            line: line_no,
            msg: format!(
                "unsupported type '{} {} {}': only 'matrix coordinate real' is handled",
                fields[1], fields[2], fields[3]
            ),
        });
    }
    let symmetric = match fields[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => {
            return Err(MmError::Parse {
                line: line_no,
                msg: format!("unsupported symmetry '{other}': expected symmetric or general"),
            })
        }
    };

    // Size line: first non-comment, non-blank line.
    let (size_line_no, size_line) = loop {
        match lines.next() {
            Some((i, r)) => {
                let l = r?;
                let t = l.trim();
                if t.is_empty() || t.starts_with('%') {
                    continue;
                }
                break (i + 1, l);
            }
            None => {
                return Err(MmError::Parse { line: line_no, msg: "missing size line".into() })
            }
        }
    };
    let dims: Vec<&str> = size_line.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(MmError::Parse {
            line: size_line_no,
            msg: "size line must be 'rows cols nnz'".into(),
        });
    }
    let parse_usize = |s: &str, line: usize| {
        s.parse::<usize>().map_err(|_| MmError::Parse { line, msg: format!("bad integer '{s}'") })
    };
    let rows = parse_usize(dims[0], size_line_no)?;
    let cols = parse_usize(dims[1], size_line_no)?;
    let nnz = parse_usize(dims[2], size_line_no)?;
    if rows != cols {
        return Err(MmError::NotSymmetric(format!("matrix is {rows}x{cols}")));
    }
    let n = rows;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * nnz);
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(nnz);
    let mut read = 0usize;
    while read < nnz {
        let (i, r) = lines.next().ok_or(MmError::Parse {
            line: size_line_no,
            msg: format!("expected {nnz} entries, found {read}"),
        })?;
        let line_no = i + 1;
        let l = r?;
        let t = l.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(MmError::Parse {
                line: line_no,
                msg: "entry line must be 'row col value'".into(),
            });
        }
        let r1 = parse_usize(toks[0], line_no)?;
        let c1 = parse_usize(toks[1], line_no)?;
        if r1 == 0 || c1 == 0 || r1 > n || c1 > n {
            return Err(MmError::Parse {
                line: line_no,
                msg: format!("index ({r1}, {c1}) out of bounds for dimension {n}"),
            });
        }
        let v: f64 = toks[2].parse().map_err(|_| MmError::Parse {
            line: line_no,
            msg: format!("bad value '{}'", toks[2]),
        })?;
        let (ri, ci) = (r1 - 1, c1 - 1);
        // Canonicalize symmetric coefficients so a mirrored repeat is caught.
        let key = if symmetric && ci > ri { (ci, ri) } else { (ri, ci) };
        if !seen.insert(key) {
            return Err(MmError::Parse {
                line: line_no,
                msg: format!("duplicate coefficient for ({r1}, {c1})"),
            });
        }
        triplets.push((ri, ci, v));
        if symmetric && ri != ci {
            triplets.push((ci, ri, v));
        }
        read += 1;
    }
    for (i, r) in lines {
        let l = r?;
        let t = l.trim();
        if !t.is_empty() && !t.starts_with('%') {
            return Err(MmError::Parse { line: i + 1, msg: "unexpected data after entries".into() });
        }
    }

    let m = CsrSymmetricMatrix::from_triplets(n, &triplets)?;
    if !symmetric && !m.is_symmetric() {
        return Err(MmError::NotSymmetric(
            "general file does not contain symmetric coefficients".into(),
        ));
    }
    Ok(m)
}

/// Writes the lower triangle in coordinate format. Values use the shortest
/// decimal form that round-trips, so `mm_read(mm_write(m)) == m` exactly.
pub fn mm_write(path: &Path, m: &CsrSymmetricMatrix) -> Result<(), MmError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    let n = m.n();
    let mut lower = 0usize;
    for i in 0..n {
        let (cols, _) = m.row(i);
        lower += cols.iter().filter(|&&j| j <= i).count();
    }
    writeln!(w, "{n} {n} {lower}")?;
    for i in 0..n {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
            }
        }
    }
    Ok(())
}
