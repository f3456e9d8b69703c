#!/usr/bin/env python3
"""Smoke test for the bminres extension module.

Builds nothing itself: expects `cargo build -p block-minres-py` (or
`--release`) to have produced the cdylib already. Copies the library next to
a temp directory under the importable name and runs a small end-to-end solve.
"""

import math
import pathlib
import shutil
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def find_cdylib() -> pathlib.Path:
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libbminres.so", "libbminres.dylib", "bminres.dll")
    ]
    for c in candidates:
        if c.exists():
            return c
    sys.exit("cdylib not found; run `cargo build -p block-minres-py` first")


def import_bminres():
    lib = find_cdylib()
    tmp = tempfile.mkdtemp(prefix="bminres-")
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy2(lib, pathlib.Path(tmp) / f"bminres{suffix}")
    sys.path.insert(0, tmp)
    import bminres  # noqa: E402

    return bminres


def main() -> None:
    bm = import_bminres()

    grid, sigma = 20, 200.0
    a = bm.laplacian(grid, sigma)
    n = a.n
    assert n == grid * grid

    b1 = [1.0] * n
    b2 = [0.0] * n
    b2[0] = 1.0

    result = bm.solve(a, [b1, b2], tol=1e-8, maxit=2000, precond_with=bm.neg_laplacian(grid))
    assert result.stop_reason == "converged", result.stop_reason
    assert all(result.converged), result.converged
    assert len(result.x) == 2

    # Verify against the original system: ||A x - b|| <= 1e-6 ||b||.
    for x, b in zip(result.x, (b1, b2)):
        ax = a.matvec(x)
        err = math.sqrt(sum((ai - bi) ** 2 for ai, bi in zip(ax, b)))
        bnorm = math.sqrt(sum(bi**2 for bi in b))
        assert err <= 1e-6 * bnorm, f"true residual {err / bnorm:e}"

    # Unpreconditioned single solve through the same entry point.
    plain = bm.solve(a, [b1], tol=1e-8, maxit=4000)
    assert all(plain.converged)

    # Round trip through from_triplets.
    tiny = bm.SparseMatrix.from_triplets(
        2, [0, 0, 1, 1], [0, 1, 0, 1], [2.0, 1.0, 1.0, 3.0]
    )
    r = bm.solve(tiny, [[1.0, 0.0]], tol=1e-12)
    x = r.x[0]
    assert abs(2 * x[0] + x[1] - 1.0) <= 1e-10
    assert abs(x[0] + 3 * x[1]) <= 1e-10

    print(
        f"ok: block solve converged in {result.iterations} iterations "
        f"({result.breakdowns} dependence events), "
        f"plain solve in {plain.iterations}"
    )


if __name__ == "__main__":
    main()
