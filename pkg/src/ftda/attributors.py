"""Gradient-based approximations to the further-training sensitivity scores.

Every attributor maps (final model, evaluated training subset, one test
instance) to a score vector over the subset. Conventions shared by all of
them:

- the evaluation function is the test-instance loss, so the test-side
  gradient is a plain loss gradient;
- the empirical risk is the sum (not mean) of per-instance losses, so the
  curvature operators are sums of per-instance Hessians;
- positive score means the test loss is expected to rise when the training
  instance is left out, matching the gold-standard sign.

First-order scores come from the damped linearization of the risk, whose
leave-one-out minimizer difference is the per-instance loss gradient
divided by the damping. Second-order scores solve one damped curvature
system against the test gradient and take inner products with per-instance
right-hand sides, which by operator symmetry equals solving per instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import (GaussNewtonContext, ModelState, build_gauss_newton_context,
                    gnvp, grad, hvp, per_example_grads, scalar_output_grads,
                    _scalar_output_batch)
from .prng import TAG_PROJECTION, stream
from .solvers import (CurvatureOp, SolverDivergedError, SolverReport, cg_solve,
                      lissa_solve, lissa_solve_auto)

TRUE_HESSIAN = "true-hessian"
GAUSS_NEWTON = "gauss-newton"

EXACT_HESSIAN_TERM = "exact-hessian-term"
NEAR_STATIONARY = "near-stationary"


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class AttributionVector:
    scores: np.ndarray       # (l,), aligned with loo_ids
    loo_ids: np.ndarray
    method: str
    test_id: int
    hyperparams: dict = field(default_factory=dict)
    report: SolverReport | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise AttributionError(f"{self.method}: non-finite scores")


@dataclass(frozen=True)
class TrakConfig:
    projection_dim: int
    projection_seed: int = 0
    identity_projection: bool = False  # test hook: P = I (requires dim == p)
    allow_pseudo_inverse: bool = True


def _test_gradient(m: ModelState, x, y) -> np.ndarray:
    return grad(m, np.asarray(x, dtype=np.float64)[None, :], np.atleast_1d(y))


def _subset_arrays(ds: Dataset, positions) -> tuple:
    pos = np.asarray(positions, dtype=np.int64)
    return ds.features[pos], ds.targets[pos], ds.ids[pos]


# ---------------------------------------------------------------------------
# First-order methods

def grad_dot(m: ModelState, train_ds: Dataset, loo_positions, test_x, test_y,
             damping: float = 1.0, train_grads=None,
             test_id: int = -1) -> AttributionVector:
    """Inner products of training-loss and test gradients, scaled by the
    inverse damping."""
    if damping <= 0:
        raise AttributionError("damping must be positive")
    X, Y, ids = _subset_arrays(train_ds, loo_positions)
    if train_grads is None:
        train_grads = per_example_grads(m, X, Y)
    scores = (train_grads @ _test_gradient(m, test_x, test_y)) / damping
    return AttributionVector(scores=scores, loo_ids=ids, method="grad_dot",
                             test_id=test_id,
                             hyperparams={"damping": damping})


def grad_cos(m: ModelState, train_ds: Dataset, loo_positions, test_x, test_y,
             train_grads=None, test_id: int = -1) -> AttributionVector:
    """Cosine of the angle between each training gradient and the test
    gradient; zero training gradients score 0."""
    X, Y, ids = _subset_arrays(train_ds, loo_positions)
    if train_grads is None:
        train_grads = per_example_grads(m, X, Y)
    tg = _test_gradient(m, test_x, test_y)
    tn = np.linalg.norm(tg)
    if tn == 0.0:
        raise AttributionError("zero test gradient: direction undefined")
    norms = np.linalg.norm(train_grads, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    scores = (train_grads @ tg) / (safe * tn)
    scores[norms == 0] = 0.0
    return AttributionVector(scores=scores, loo_ids=ids, method="grad_cos",
                             test_id=test_id)


# ---------------------------------------------------------------------------
# Influence functions

def _curvature_operator(m: ModelState, train_ds: Dataset, curvature,
                        damping: float, context=None) -> tuple:
    """Returns (CurvatureOp over the full training risk, GN context or None)."""
    if isinstance(curvature, CurvatureOp):
        return curvature, context
    if curvature == TRUE_HESSIAN:
        X, Y = train_ds.features, train_ds.targets
        op = CurvatureOp(apply=lambda v: hvp(m, X, Y, v), dim=m.p,
                         damping=damping)
        return op, context
    if curvature == GAUSS_NEWTON:
        ctx = context or build_gauss_newton_context(m, train_ds)
        op = CurvatureOp(apply=lambda v: gnvp(ctx, v), dim=m.p,
                         damping=damping)
        return op, ctx
    raise AttributionError(f"unknown curvature {curvature!r}")


def _solve(op: CurvatureOp, b: np.ndarray, solver: str,
           solver_kwargs: dict | None) -> SolverReport:
    kwargs = dict(solver_kwargs or {})
    if solver == "cg":
        report = cg_solve(op, b, **kwargs)
    elif solver == "lissa":
        if "scale" in kwargs:
            report = lissa_solve(op, b, **kwargs)
        else:
            report = lissa_solve_auto(op, b, **kwargs)
    else:
        raise AttributionError(f"unknown solver {solver!r}")
    if report.diverged:
        raise SolverDivergedError(report)
    return report


def _context_rows(ctx: GaussNewtonContext, train_ds: Dataset,
                  loo_positions) -> np.ndarray:
    """Rows of the GN context matching the evaluated subset."""
    pos = np.asarray(loo_positions, dtype=np.int64)
    if len(ctx.instance_ids) == train_ds.n and np.array_equal(
            ctx.instance_ids, train_ds.ids):
        return pos
    wanted = train_ds.ids[pos]
    lookup = {int(v): k for k, v in enumerate(ctx.instance_ids)}
    try:
        return np.asarray([lookup[int(v)] for v in wanted], dtype=np.int64)
    except KeyError as err:
        raise AttributionError(f"instance {err} missing from the "
                               f"Gauss-Newton context") from None


def influence_attr(m: ModelState, train_ds: Dataset, loo_positions, test_x,
                   test_y, curvature=GAUSS_NEWTON, solver: str = "cg",
                   damping: float = 0.01, epsilon: float = 1.0,
                   context: GaussNewtonContext | None = None,
                   train_grads=None, solver_kwargs: dict | None = None,
                   test_id: int = -1) -> AttributionVector:
    """Damped inverse-curvature influence scores.

    One solve of (H + damping I) x = (test gradient); the score for
    instance i is then epsilon * x . (per-instance right-hand side), with
    the right-hand side the loss gradient for the true Hessian or
    -r_i g_i under the Gauss-Newton composition.
    """
    op, ctx = _curvature_operator(m, train_ds, curvature, damping, context)
    tg = _test_gradient(m, test_x, test_y)
    report = _solve(op, tg, solver, solver_kwargs)
    x = report.x
    X, Y, ids = _subset_arrays(train_ds, loo_positions)
    if ctx is not None and curvature == GAUSS_NEWTON:
        rows = _context_rows(ctx, train_ds, loo_positions)
        scores = epsilon * (-ctx.r[rows]) * (ctx.G[rows] @ x)
    else:
        if train_grads is None:
            train_grads = per_example_grads(m, X, Y)
        scores = epsilon * (train_grads @ x)
    name = f"influence_{'gn' if curvature == GAUSS_NEWTON else 'h'}_{solver}" \
        if not isinstance(curvature, CurvatureOp) else f"influence_{solver}"
    return AttributionVector(
        scores=scores, loo_ids=ids, method=name, test_id=test_id,
        hyperparams={"damping": damping, "solver": solver,
                     "epsilon": epsilon}, report=report)


def generalized_influence_attr(m: ModelState, train_ds: Dataset,
                               loo_positions, test_x, test_y,
                               damping: float = 0.01,
                               variant: str = EXACT_HESSIAN_TERM,
                               curvature=TRUE_HESSIAN, solver: str = "cg",
                               epsilon: float = 1.0,
                               solver_kwargs: dict | None = None,
                               test_id: int = -1) -> AttributionVector:
    """Influence scores keeping the full-dataset parameter-change term.

    The risk gradient at the final model is generally non-zero; its damped
    Newton step enters each per-instance right-hand side, either through an
    explicit per-instance Hessian product (exact-hessian-term) or by
    re-evaluating the instance gradient at the shifted parameters
    (near-stationary). Both reduce to influence_attr at a stationary point.
    """
    if variant not in (EXACT_HESSIAN_TERM, NEAR_STATIONARY):
        raise AttributionError(f"unknown variant {variant!r}")
    op, ctx = _curvature_operator(m, train_ds, curvature, damping, None)
    risk_grad = grad(m, train_ds.features, train_ds.targets)
    dtheta_full = -_solve(op, risk_grad, solver, solver_kwargs).x
    tg = _test_gradient(m, test_x, test_y)
    report = _solve(op, tg, solver, solver_kwargs)
    x = report.x

    X, Y, ids = _subset_arrays(train_ds, loo_positions)
    if variant == NEAR_STATIONARY:
        shifted = m.with_theta(m.theta + dtheta_full)
        rhs = per_example_grads(shifted, X, Y)
        scores = epsilon * (rhs @ x)
    elif ctx is not None:
        rows = _context_rows(ctx, train_ds, loo_positions)
        eta = ctx.V[rows] * (ctx.G[rows] @ dtheta_full) - ctx.r[rows]
        scores = epsilon * eta * (ctx.G[rows] @ x)
    else:
        base = per_example_grads(m, X, Y)
        correction = np.stack([
            hvp(m, X[k:k + 1], Y[k:k + 1], dtheta_full)
            for k in range(len(X))])
        scores = epsilon * ((base + correction) @ x)
    return AttributionVector(
        scores=scores, loo_ids=ids, method=f"gen_influence_{variant}",
        test_id=test_id,
        hyperparams={"damping": damping, "variant": variant,
                     "solver": solver, "epsilon": epsilon}, report=report)


# ---------------------------------------------------------------------------
# Random-projection special case (single-model TRAK)

class RankDeficiencyError(np.linalg.LinAlgError):
    pass


def trak_m1(m: ModelState, train_ds: Dataset, loo_positions, test_x, test_y,
            cfg: TrakConfig, test_id: int = -1) -> AttributionVector:
    """Gauss-Newton influence with a Gaussian random projection, no
    damping, and identity curvature weights.

    Scalar-output gradients over the evaluated subset are projected to k
    dimensions; scores are -r_i times the projected-kernel inner product
    with the projected test gradient.
    """
    if not 1 <= cfg.projection_dim <= m.p:
        raise AttributionError("projection_dim must lie in [1, p]")
    X, Y, ids = _subset_arrays(train_ds, loo_positions)
    G = scalar_output_grads(m, X, Y)
    r = -_scalar_output_batch(m, X, Y)[1]
    if cfg.identity_projection:
        if cfg.projection_dim != m.p:
            raise AttributionError("identity projection requires dim == p")
        phi, phi_test = G, _test_gradient(m, test_x, test_y)
    else:
        P = stream(TAG_PROJECTION, cfg.projection_seed).normal(
            size=(m.p, cfg.projection_dim))
        phi = G @ P
        phi_test = P.T @ _test_gradient(m, test_x, test_y)
    A = phi.T @ phi
    try:
        w = np.linalg.solve(A, phi_test)
        # Reject meaningless solutions from numerically singular systems.
        if not np.all(np.isfinite(w)) or np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        if not cfg.allow_pseudo_inverse:
            raise RankDeficiencyError(
                "projected kernel is singular and the pseudo-inverse "
                "fallback is disabled") from None
        w = np.linalg.pinv(A, rcond=1e-12) @ phi_test
    scores = -r * (phi @ w)
    return AttributionVector(
        scores=scores, loo_ids=ids, method="trak_m1", test_id=test_id,
        hyperparams={"projection_dim": cfg.projection_dim,
                     "projection_seed": cfg.projection_seed,
                     "identity_projection": cfg.identity_projection})


# ---------------------------------------------------------------------------
# Layerwise swapped-inverse approximation (DataInf closed form)

def layer_slices(arch) -> list[slice]:
    """Flat-parameter slice per layer block (weights plus bias)."""
    slices = []
    off = 0
    for l in range(len(arch) - 1):
        size = (arch[l] + 1) * arch[l + 1]
        slices.append(slice(off, off + size))
        off += size
    return slices


def default_layer_damping(layer_grads: np.ndarray) -> float:
    """Repository-convention damping: one tenth of the mean squared
    gradient entry over instances. Falls back to 1.0 when the layer has no
    gradient signal (its contribution is then zero anyway)."""
    lam = float(np.mean(layer_grads ** 2)) / 10.0
    return lam if lam > 0 else 1.0


def datainf(m: ModelState, train_ds: Dataset, loo_positions, test_x, test_y,
            damping_rule=default_layer_damping, full_grads=None,
            test_id: int = -1) -> AttributionVector:
    """Closed-form layerwise scores obtained by swapping the order of
    averaging and matrix inversion in the Gauss-Newton influence.

    Per layer, the damped inverse of the averaged gradient outer product is
    replaced by the average of per-instance rank-one damped inverses, which
    collapses to inner products between loss gradients. The instance
    average runs over the whole training set (pass ``full_grads`` to reuse
    the (n, p) gradient matrix); scores are reported for the evaluated
    subset.
    """
    pos = np.asarray(loo_positions, dtype=np.int64)
    ids = train_ds.ids[pos]
    if full_grads is None:
        full_grads = per_example_grads(m, train_ds.features, train_ds.targets)
    tg = _test_gradient(m, test_x, test_y)
    n = train_ds.n
    scores = np.zeros(len(pos))
    lambdas = []
    for sl in layer_slices(m.arch):
        Gl = full_grads[:, sl]
        tl = tg[sl]
        lam = float(damping_rule(Gl))
        if lam <= 0:
            raise AttributionError("layer damping rule returned a "
                                   "non-positive value")
        lambdas.append(lam)
        L_i = Gl @ tl                      # test . train, all instances
        L_ii = np.einsum("ij,ij->i", Gl, Gl)
        L_k = L_i[pos]
        L_ik = Gl @ Gl[pos].T              # (n, l) train . train
        correction = (L_i / (lam + L_ii)) @ L_ik / n
        scores += (L_k - correction) / lam
    return AttributionVector(
        scores=scores, loo_ids=ids, method="datainf", test_id=test_id,
        hyperparams={"layer_dampings": lambdas})


# ---------------------------------------------------------------------------
# Taylor expansion of the further-training objective

@dataclass(frozen=True)
class TaylorExpansion:
    gradient: np.ndarray
    damping: float
    order: int
    minimizer: np.ndarray | None = None       # closed form, order 1
    curvature_op: CurvatureOp | None = None   # order 2, for solver use


def taylor_expand_objective(m: ModelState, X, Y, damping: float,
                            order: int, weights=None) -> TaylorExpansion:
    """Materialize the damped expansion of the training objective.

    Order 1 has the closed-form minimizer -gradient / damping; order 2
    returns the curvature operator and gradient for a solver.
    """
    if order not in (1, 2):
        raise AttributionError("order must be 1 or 2")
    X = np.asarray(X, dtype=np.float64)
    g = grad(m, X, Y, weights)
    if order == 1:
        if damping <= 0:
            raise AttributionError("order 1 requires positive damping")
        return TaylorExpansion(gradient=g, damping=damping, order=1,
                               minimizer=-g / damping)
    op = CurvatureOp(apply=lambda v: hvp(m, X, Y, v, weights), dim=m.p,
                     damping=damping)
    return TaylorExpansion(gradient=g, damping=damping, order=2,
                           curvature_op=op)
