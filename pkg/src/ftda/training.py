"""Deterministic seeded mini-batch training.

A TrainPlan fully determines a trajectory from a given initialization and
dataset: per-epoch instance order comes from the shuffle stream, batches
are consecutive chunks (last partial batch kept), and the batch objective
is the mean loss over the batch. Leave-one-out runs keep the left-out
instance inside its regular mini-batches and instead subtract its loss
scaled by 1/n from every batch objective, which cancels its total weight
over an epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .model import ModelState, grad
from .prng import TAG_SHUFFLE, stream

EPOCH = "epoch"
STEP = "step"


class DivergedError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"training diverged at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainPlan:
    optimizer: str  # sgd | adam | adamw
    lr: float
    epochs: int
    batch_size: int
    shuffle_seed: int
    weight_decay: float = 0.0
    checkpoint_every: int = 1
    checkpoint_unit: str = EPOCH

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.weight_decay < 0:
            raise ValueError("invalid plan")
        if self.checkpoint_every < 1 or self.checkpoint_unit not in (EPOCH, STEP):
            raise ValueError("invalid checkpoint settings")

    def further(self, lr_divisor: float = 10.0, **overrides) -> "TrainPlan":
        """Continuation plan: same settings with the step size reduced by
        one order of magnitude by default."""
        return replace(self, lr=self.lr / lr_divisor, **overrides)


@dataclass
class Trajectory:
    checkpoints: list  # [(global step, payload)], steps strictly increasing
    final: ModelState


# Adam moment defaults.
BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass
class OptState:
    m1: np.ndarray = None
    m2: np.ndarray = None
    t: int = 0


def apply_update(theta: np.ndarray, g: np.ndarray, state: OptState,
                 plan: TrainPlan) -> np.ndarray:
    """One optimizer update. SGD folds weight decay into the gradient;
    AdamW decouples it."""
    wd = plan.weight_decay
    if plan.optimizer == "sgd":
        if wd:
            g = g + wd * theta
        return theta - plan.lr * g
    if plan.optimizer == "adam" and wd:
        g = g + wd * theta
    if state.m1 is None:
        state.m1 = np.zeros_like(theta)
        state.m2 = np.zeros_like(theta)
    state.t += 1
    state.m1 = BETA1 * state.m1 + (1 - BETA1) * g
    state.m2 = BETA2 * state.m2 + (1 - BETA2) * g * g
    mhat = state.m1 / (1 - BETA1 ** state.t)
    vhat = state.m2 / (1 - BETA2 ** state.t)
    new = theta - plan.lr * mhat / (np.sqrt(vhat) + EPS)
    if plan.optimizer == "adamw" and wd:
        new = new - plan.lr * wd * theta
    return new


def shuffle_order(n: int, epoch: int, seed: int) -> np.ndarray:
    """Instance order for one epoch; a pure function of (n, epoch, seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return stream(TAG_SHUFFLE, seed, epoch).permutation(n)


def batch_gradient(m: ModelState, ds: Dataset, batch_idx: np.ndarray,
                   loo: int | None) -> np.ndarray:
    """Gradient of the batch objective: mean loss over the batch, minus
    L(z_loo)/n when a leave-out index is set."""
    X = ds.features[batch_idx]
    Y = ds.targets[batch_idx]
    g = grad(m, X, Y) / len(batch_idx)
    if loo is not None:
        g -= grad(m, ds.features[loo][None, :], ds.targets[loo:loo + 1]) / ds.n
    return g


def step(m: ModelState, ds: Dataset, batch_idx: np.ndarray, state: OptState,
         plan: TrainPlan, loo: int | None = None) -> ModelState:
    """One mini-batch training step."""
    g = batch_gradient(m, ds, batch_idx, loo)
    theta = apply_update(m.theta, g, state, plan)
    if not np.all(np.isfinite(theta)):
        raise DivergedError(state.t)
    return m.with_theta(theta)


def checkpoint_steps(plan: TrainPlan, n: int) -> list[int]:
    """Global step indices at which a trajectory records checkpoints.

    Multiples of checkpoint_every (in steps or whole epochs), plus always
    the final step; step 0 only when the plan trains for zero steps.
    """
    n_batches = -(-n // plan.batch_size)
    total = plan.epochs * n_batches
    if total == 0:
        return [0]
    if plan.checkpoint_unit == EPOCH:
        every = plan.checkpoint_every * n_batches
    else:
        every = plan.checkpoint_every
    steps = list(range(every, total + 1, every))
    if not steps or steps[-1] != total:
        steps.append(total)
    return steps


def train(init: ModelState, ds: Dataset, plan: TrainPlan,
          loo: int | None = None, checkpoint_fn=None) -> Trajectory:
    """Run the plan from the given parameters.

    ``checkpoint_fn(step, model)`` computes the stored payload; when it is
    None the full ModelState is stored. Deterministic given all inputs;
    raises DivergedError if parameters go non-finite.
    """
    if loo is not None and not 0 <= loo < ds.n:
        raise ValueError(f"loo index {loo} out of range")
    record = checkpoint_fn or (lambda _, m: m)
    marks = set(checkpoint_steps(plan, ds.n))
    theta = init.theta.copy()
    m = init.with_theta(theta)
    state = OptState()
    checkpoints = []
    gstep = 0
    if gstep in marks:
        checkpoints.append((gstep, record(gstep, m)))
    for epoch in range(plan.epochs):
        order = shuffle_order(ds.n, epoch, plan.shuffle_seed)
        for lo in range(0, ds.n, plan.batch_size):
            g = batch_gradient(m, ds, order[lo:lo + plan.batch_size], loo)
            theta = apply_update(m.theta, g, state, plan)
            gstep += 1
            if not np.all(np.isfinite(theta)):
                raise DivergedError(gstep)
            m = m.with_theta(theta)
            if gstep in marks:
                checkpoints.append((gstep, record(gstep, m)))
    return Trajectory(checkpoints=checkpoints, final=m)
