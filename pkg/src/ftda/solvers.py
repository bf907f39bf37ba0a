"""Damped inverse-curvature-vector products.

Both solvers see curvature only through a matrix-free ``apply`` closure
(true Hessian or Gauss-Newton product) and solve (H + damping I) x = b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DAMPING = 0.01
ALTERNATE_DAMPING = 0.001
LISSA_DEPTH = 5000
LISSA_SCALE_LADDER = (10.0, 20.0, 50.0, 100.0, 200.0, 500.0)
LISSA_BLOWUP = 1e6


@dataclass
class CurvatureOp:
    apply: callable  # v -> H v, linear, symmetric
    dim: int
    damping: float = DEFAULT_DAMPING

    def damped(self, v: np.ndarray) -> np.ndarray:
        return self.apply(v) + self.damping * v


def zero_curvature(dim: int, damping: float) -> CurvatureOp:
    """H = 0 stub; the damped solve then reduces to division by damping."""
    return CurvatureOp(apply=lambda v: np.zeros_like(v), dim=dim,
                       damping=damping)


@dataclass
class SolverReport:
    x: np.ndarray
    iterations: int
    residual_norm: float
    diverged: bool = False
    method: str = ""
    detail: dict = field(default_factory=dict)


class SolverDivergedError(RuntimeError):
    def __init__(self, report: SolverReport):
        super().__init__(f"{report.method} solve diverged "
                         f"(residual {report.residual_norm:.3e})")
        self.report = report


def cg_solve(op: CurvatureOp, b: np.ndarray, tol: float = 1e-10,
             max_iter: int | None = None) -> SolverReport:
    """Conjugate gradients on the damped system, started at zero.

    Stops when the recomputed residual norm falls below tol * ||b||; on a
    positive definite system this takes at most dim steps in exact
    arithmetic. Non-finite intermediates flag divergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=np.float64)
    if max_iter is None:
        max_iter = 10 * op.dim
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return SolverReport(x=x, iterations=0, residual_norm=0.0, method="cg")
    r = b.copy()
    d = r.copy()
    rs = float(r @ r)
    it = 0
    for it in range(1, max_iter + 1):
        ad = op.damped(d)
        dad = float(d @ ad)
        if not np.isfinite(dad) or dad <= 0:
            return SolverReport(x=x, iterations=it, residual_norm=np.inf,
                                diverged=True, method="cg")
        alpha = rs / dad
        x = x + alpha * d
        r = r - alpha * ad
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            return SolverReport(x=x, iterations=it, residual_norm=np.inf,
                                diverged=True, method="cg")
        if np.sqrt(rs_new) <= tol * bnorm:
            rs = rs_new
            break
        d = r + (rs_new / rs) * d
        rs = rs_new
    res = float(np.linalg.norm(op.damped(x) - b))
    diverged = not np.isfinite(res) or res > 2.0 * tol * bnorm
    return SolverReport(x=x, iterations=it, residual_norm=res,
                        diverged=diverged, method="cg")


def lissa_solve(op: CurvatureOp, b: np.ndarray, depth: int = LISSA_DEPTH,
                scale: float = 10.0, repeat: int = 1) -> SolverReport:
    """Truncated Neumann recursion for the damped inverse.

    Iterates x <- b + x - (H + damping I) x / scale and returns x / scale;
    this converges when the damped spectrum lies in (0, 2 * scale).
    Divergence is declared when the iterate norm exceeds 1e6 * ||b||.
    ``repeat`` averages independent recursions; with a deterministic
    full-batch operator the repeats are identical, so the default is 1.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if depth < 0 or repeat < 1:
        raise ValueError("invalid depth/repeat")
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    limit = LISSA_BLOWUP * max(bnorm, 1e-300)
    total = np.zeros_like(b)
    iters = 0
    for _ in range(repeat):
        x = b.copy()
        for _ in range(depth):
            x = b + x - op.damped(x) / scale
            iters += 1
            norm = float(np.linalg.norm(x))
            if not np.isfinite(norm) or norm > limit:
                return SolverReport(x=x / scale, iterations=iters,
                                    residual_norm=np.inf, diverged=True,
                                    method="lissa", detail={"scale": scale})
        total += x / scale
    x = total / repeat
    res = float(np.linalg.norm(op.damped(x) - b))
    return SolverReport(x=x, iterations=iters, residual_norm=res,
                        method="lissa", detail={"scale": scale})


def lissa_solve_auto(op: CurvatureOp, b: np.ndarray, depth: int = LISSA_DEPTH,
                     repeat: int = 1,
                     ladder=LISSA_SCALE_LADDER) -> SolverReport:
    """Try the scale ladder in order and keep the first non-diverging run."""
    report = None
    for scale in ladder:
        report = lissa_solve(op, b, depth=depth, scale=scale, repeat=repeat)
        if not report.diverged:
            return report
    return report
