"""The further-training gold standard.

A sweep runs (l + 1) * r further trainings from the given final model: for
each seed one run on the full training set and one per evaluated left-out
instance. Each run records the evaluation function (test loss by default)
for every evaluated test instance at every checkpoint; full parameter
vectors are never stored. Scores are then adjusted for the effect of
further training alone, either by subtracting the per-seed mean over the
left-out runs or by subtracting the per-seed full-dataset run, and
averaged over seeds.

Seed pairing: sweep seed s maps to one shuffle seed shared by the full run
and every leave-out run, so per-seed subtractions compare runs that saw
identical instance orderings.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, EvalSubsets
from .model import ModelState, losses
from .prng import derive_seed
from .training import DivergedError, TrainPlan, checkpoint_steps, train

FULL_ID = -1  # loo_id value marking full-dataset runs in persisted records

MEAN_SUBTRACT = "mean-subtract"
FULL_SUBTRACT = "full-subtract"


class GoldRunError(RuntimeError):
    def __init__(self, loo_id, seed: int, step: int):
        which = "full run" if loo_id == FULL_ID else f"loo_id {loo_id}"
        super().__init__(f"further training diverged ({which}, seed {seed}, "
                         f"step {step})")
        self.loo_id = loo_id
        self.seed = seed


@dataclass(frozen=True)
class GoldRunRecord:
    """Complete (left-out x seed x checkpoint x test instance) grid."""

    loo_ids: np.ndarray          # (l,) train-dataset ids of the evaluated subset
    test_ids: np.ndarray         # (m,)
    seeds: np.ndarray            # (r,)
    steps: np.ndarray            # (T,) checkpoint step indices
    loo_values: np.ndarray       # (l, r, T, m) g values from leave-out runs
    full_values: np.ndarray      # (r, T, m) g values from full-dataset runs
    plan: TrainPlan

    @property
    def l(self) -> int:
        return len(self.loo_ids)

    @property
    def r(self) -> int:
        return len(self.seeds)

    def seed_slice(self, seed_positions) -> "GoldRunRecord":
        """Sub-record over a subset of seeds (used for group averaging)."""
        pos = np.asarray(seed_positions, dtype=np.int64)
        return replace(self, seeds=self.seeds[pos],
                       loo_values=self.loo_values[:, pos],
                       full_values=self.full_values[pos])


@dataclass(frozen=True)
class GoldScores:
    """Adjusted, seed-averaged sensitivity scores.

    scores[t, j] is the length-l vector over the evaluated subset for
    checkpoint t and test instance j.
    """

    scores: np.ndarray           # (T, m, l)
    loo_ids: np.ndarray
    test_ids: np.ndarray
    steps: np.ndarray
    adjustment: str

    def at_step(self, step: int) -> np.ndarray:
        t = int(np.nonzero(self.steps == step)[0][0])
        return self.scores[t]


def _eval_losses(m: ModelState, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return losses(m, X, Y)


def _run_cell(theta_f: ModelState, train_ds: Dataset, plan: TrainPlan,
              loo: int | None, X_test, Y_test, eval_fn) -> np.ndarray:
    traj = train(theta_f, train_ds, plan, loo=loo,
                 checkpoint_fn=lambda _, m: eval_fn(m, X_test, Y_test))
    return np.stack([payload for _, payload in traj.checkpoints])


def _sweep_task(args):
    theta_f, train_ds, plan, loo, X_test, Y_test, key = args
    try:
        return key, _run_cell(theta_f, train_ds, plan, loo, X_test, Y_test,
                              _eval_losses)
    except DivergedError as err:
        return key, ("diverged", err.step)


def run_gold_sweep(theta_f: ModelState, train_ds: Dataset, test_ds: Dataset,
                   subsets: EvalSubsets, plan: TrainPlan, r: int,
                   workers: int = 1, eval_fn=None) -> GoldRunRecord:
    """Execute the full (l + 1) * r further-training grid.

    Deterministic given inputs; any diverged run aborts the sweep with the
    offending (loo_id, seed). ``workers`` > 1 runs the independent
    trainings in a process pool; results are identical to the serial path.
    """
    if r < 1:
        raise ValueError("need at least one seed")
    eval_fn = eval_fn or _eval_losses
    loo_pos = subsets.train_subset_indices
    X_test = test_ds.features[subsets.test_indices]
    Y_test = test_ds.targets[subsets.test_indices]
    steps = np.asarray(checkpoint_steps(plan, train_ds.n), dtype=np.int64)
    l, m, T = subsets.l, subsets.m, len(steps)

    loo_values = np.empty((l, r, T, m))
    full_values = np.empty((r, T, m))

    tasks = []
    for s in range(r):
        plan_s = replace(plan, shuffle_seed=derive_seed(plan.shuffle_seed, s))
        tasks.append((theta_f, train_ds, plan_s, None, X_test, Y_test,
                      (FULL_ID, s)))
        for k, pos in enumerate(loo_pos):
            tasks.append((theta_f, train_ds, plan_s, int(pos), X_test, Y_test,
                          (k, s)))

    def store(key, values):
        k, s = key
        if isinstance(values, tuple) and values[0] == "diverged":
            loo_id = FULL_ID if k == FULL_ID else int(train_ds.ids[loo_pos[k]])
            raise GoldRunError(loo_id, s, values[1])
        if k == FULL_ID:
            full_values[s] = values
        else:
            loo_values[k, s] = values

    if workers > 1 and eval_fn is _eval_losses:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, values in pool.map(_sweep_task, tasks, chunksize=1):
                store(key, values)
    else:
        for theta0, ds, plan_s, loo, X, Y, key in tasks:
            try:
                store(key, _run_cell(theta0, ds, plan_s, loo, X, Y, eval_fn))
            except DivergedError as err:
                store(key, ("diverged", err.step))

    return GoldRunRecord(
        loo_ids=train_ds.ids[loo_pos].copy(),
        test_ids=test_ds.ids[subsets.test_indices].copy(),
        seeds=np.arange(r, dtype=np.int64),
        steps=steps,
        loo_values=loo_values,
        full_values=full_values,
        plan=plan,
    )


def retrain_gold(theta0: ModelState, train_ds: Dataset, test_ds: Dataset,
                 subsets: EvalSubsets, plan: TrainPlan, r: int,
                 workers: int = 1) -> GoldRunRecord:
    """Same grid but re-training from scratch parameters with the original
    plan, for comparing against further training."""
    return run_gold_sweep(theta0, train_ds, test_ds, subsets, plan, r,
                          workers=workers)


def adjust_mean_subtract(rec: GoldRunRecord) -> GoldScores:
    """Per seed, subtract the mean over left-out runs, then average seeds.

    Full-dataset runs are unused. Scores sum to zero over the evaluated
    subset by construction.
    """
    centered = rec.loo_values - rec.loo_values.mean(axis=0, keepdims=True)
    scores = centered.mean(axis=1)  # (l, T, m)
    return GoldScores(scores=np.transpose(scores, (1, 2, 0)),
                      loo_ids=rec.loo_ids, test_ids=rec.test_ids,
                      steps=rec.steps, adjustment=MEAN_SUBTRACT)


def adjust_full_subtract(rec: GoldRunRecord) -> GoldScores:
    """Per seed, subtract the paired full-dataset run, then average seeds."""
    diff = rec.loo_values - rec.full_values[None, :]
    scores = diff.mean(axis=1)
    return GoldScores(scores=np.transpose(scores, (1, 2, 0)),
                      loo_ids=rec.loo_ids, test_ids=rec.test_ids,
                      steps=rec.steps, adjustment=FULL_SUBTRACT)


ADJUSTMENTS = {MEAN_SUBTRACT: adjust_mean_subtract,
               FULL_SUBTRACT: adjust_full_subtract}


# ---------------------------------------------------------------------------
# Persistence: one CSV for the grid plus a JSON sidecar for metadata.

def save_record(rec: GoldRunRecord, csv_path, meta_path) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loo_id", "seed", "checkpoint", "test_id", "g_value"])

        def write_run(loo_id, s, values):  # values (T, m)
            for t, step_idx in enumerate(rec.steps):
                for j, tid in enumerate(rec.test_ids):
                    writer.writerow([loo_id, s, int(step_idx), int(tid),
                                     repr(float(values[t, j]))])

        for s in range(rec.r):
            write_run(FULL_ID, s, rec.full_values[s])
            for k in range(rec.l):
                write_run(int(rec.loo_ids[k]), s, rec.loo_values[k, s])
    meta = {
        "loo_ids": [int(v) for v in rec.loo_ids],
        "test_ids": [int(v) for v in rec.test_ids],
        "seeds": [int(v) for v in rec.seeds],
        "steps": [int(v) for v in rec.steps],
        "plan": _plan_to_dict(rec.plan),
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_record(csv_path, meta_path) -> GoldRunRecord:
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    loo_ids = np.asarray(meta["loo_ids"], dtype=np.int64)
    test_ids = np.asarray(meta["test_ids"], dtype=np.int64)
    seeds = np.asarray(meta["seeds"], dtype=np.int64)
    steps = np.asarray(meta["steps"], dtype=np.int64)
    loo_pos = {int(v): k for k, v in enumerate(loo_ids)}
    test_pos = {int(v): j for j, v in enumerate(test_ids)}
    step_pos = {int(v): t for t, v in enumerate(steps)}
    l, r, T, m = len(loo_ids), len(seeds), len(steps), len(test_ids)
    loo_values = np.full((l, r, T, m), np.nan)
    full_values = np.full((r, T, m), np.nan)
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            loo_id, s, step_idx, tid, val = (int(row[0]), int(row[1]),
                                             int(row[2]), int(row[3]),
                                             float(row[4]))
            t, j = step_pos[step_idx], test_pos[tid]
            if loo_id == FULL_ID:
                full_values[s, t, j] = val
            else:
                loo_values[loo_pos[loo_id], s, t, j] = val
    if np.isnan(loo_values).any() or np.isnan(full_values).any():
        raise ValueError(f"{csv_path}: incomplete gold record grid")
    return GoldRunRecord(loo_ids=loo_ids, test_ids=test_ids, seeds=seeds,
                         steps=steps, loo_values=loo_values,
                         full_values=full_values,
                         plan=_plan_from_dict(meta["plan"]))


def save_scores(scores: GoldScores, directory) -> None:
    """One CSV per checkpoint: (test_id, loo_id, score)."""
    from pathlib import Path
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, step_idx in enumerate(scores.steps):
        with open(directory / f"checkpoint_{int(step_idx):06d}.csv", "w",
                  encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["test_id", "loo_id", "score"])
            for j, tid in enumerate(scores.test_ids):
                for k, lid in enumerate(scores.loo_ids):
                    writer.writerow([int(tid), int(lid),
                                     repr(float(scores.scores[t, j, k]))])


def _plan_to_dict(plan: TrainPlan) -> dict:
    return {
        "optimizer": plan.optimizer, "lr": plan.lr, "epochs": plan.epochs,
        "batch_size": plan.batch_size, "shuffle_seed": plan.shuffle_seed,
        "weight_decay": plan.weight_decay,
        "checkpoint_every": plan.checkpoint_every,
        "checkpoint_unit": plan.checkpoint_unit,
    }


def _plan_from_dict(d: dict) -> TrainPlan:
    return TrainPlan(**d)
