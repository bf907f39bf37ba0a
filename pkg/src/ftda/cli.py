"""Config-driven pipeline: train, gold, attribute, report, all.

One JSON config file describes the whole experiment; every command
reconstructs the (deterministic) data preparation from it, so commands can
run independently or as a pipeline. Exit codes: 0 success, 1 validation
failure, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attributors as attr
from . import data as D
from . import evaluation as E
from . import goldstd as G
from .model import ModelState, init_mlp, load_model, losses, save_model
from .solvers import SolverDivergedError
from .svgplot import line_plot_svg
from .training import DivergedError, TrainPlan, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict
    output_dir: Path
    split: D.SplitSpec
    train_plan: TrainPlan
    further_plan: TrainPlan
    subset_l: int
    subset_m: int
    subset_seed: int
    seed_count: int
    hidden: list
    activation: str
    init_seed: int
    attributor_specs: list
    metric: str
    group_sizes: list
    top_k: int
    workers: int = 1
    flip: dict | None = None


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def parse_config(path, overrides=None) -> RunConfig:
    """Load and validate a config file; raises ConfigError before any
    compute on violations."""
    path = Path(path)
    _require(path.exists(), f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    overrides = overrides or {}

    ds_cfg = raw.get("dataset") or {}
    source = ds_cfg.get("source")
    _require(source in ("synthetic", "csv"), "dataset.source must be "
             "'synthetic' or 'csv'")
    if source == "csv":
        _require("path" in ds_cfg, "dataset.path required for csv source")
        _require(Path(ds_cfg["path"]).exists(),
                 f"dataset file not found: {ds_cfg['path']}")
        _require("target" in ds_cfg, "dataset.target column required")
        _require(ds_cfg.get("task") in (D.REGRESSION, D.CLASSIFICATION),
                 "dataset.task must be regression or classification")
    else:
        _require(ds_cfg.get("kind") in (D.LINEAR_REGRESSION, D.TWO_GAUSSIANS),
                 "dataset.kind must be a known synthetic kind")
        _require(int(ds_cfg.get("n", 0)) >= 4 and int(ds_cfg.get("d", 0)) >= 1,
                 "synthetic dataset requires n >= 4 and d >= 1")

    def plan_from(cfg, defaults=None) -> TrainPlan:
        base = dict(defaults or {})
        base.update(cfg)
        try:
            return TrainPlan(
                optimizer=base.get("optimizer", "sgd"),
                lr=float(base["lr"]),
                epochs=int(base["epochs"]),
                batch_size=int(base["batch_size"]),
                shuffle_seed=int(base.get("shuffle_seed", 0)),
                weight_decay=float(base.get("weight_decay", 0.0)),
                checkpoint_every=int(base.get("checkpoint_every", 1)),
                checkpoint_unit=base.get("checkpoint_unit", "epoch"),
            )
        except (KeyError, ValueError, TypeError) as err:
            raise ConfigError(f"invalid train plan: {err}") from None

    train_cfg = raw.get("train") or {}
    _require("lr" in train_cfg and "epochs" in train_cfg
             and "batch_size" in train_cfg,
             "train requires lr, epochs, batch_size")
    train_plan = plan_from(train_cfg)

    ft_cfg = dict(raw.get("further_train") or {})
    # Continuation default: one order of magnitude below the training rate.
    ft_defaults = {
        "optimizer": train_plan.optimizer,
        "lr": train_plan.lr / 10.0,
        "epochs": train_plan.epochs,
        "batch_size": train_plan.batch_size,
        "shuffle_seed": train_plan.shuffle_seed,
        "weight_decay": train_plan.weight_decay,
    }
    further_plan = plan_from(ft_cfg, ft_defaults)

    try:
        split = D.SplitSpec(
            test_fraction=float((raw.get("split") or {}).get("test_fraction",
                                                             0.1)),
            split_seed=int((raw.get("split") or {}).get("seed", 0)))
    except (D.DataError, ValueError) as err:
        raise ConfigError(str(err)) from None

    sub = raw.get("subsets") or {}
    _require("l" in sub and "m" in sub, "subsets requires l and m")
    l, m = int(sub["l"]), int(sub["m"])
    _require(l >= 2, "subsets.l must be >= 2")
    _require(m >= 1, "subsets.m must be >= 1")

    gold_cfg = raw.get("gold") or {}
    r = int(overrides.get("seed_count") or gold_cfg.get("seeds", 1))
    _require(r >= 1, "gold.seeds must be >= 1")

    model_cfg = raw.get("model") or {}
    hidden = list(model_cfg.get("hidden", [128, 128]))
    _require(all(int(h) >= 1 for h in hidden), "hidden widths must be >= 1")

    specs = raw.get("attributors") or []
    _require(isinstance(specs, list) and specs,
             "attributors must be a non-empty list")
    for spec in specs:
        _require(spec.get("method") in ATTRIBUTOR_BUILDERS,
                 f"unknown attributor method {spec.get('method')!r}")

    report_cfg = raw.get("report") or {}
    metric = report_cfg.get("metric", E.COSINE)
    _require(metric in E.METRICS, f"unknown metric {metric!r}")
    group_sizes = [int(g) for g in report_cfg.get("group_sizes", [1, r])]
    _require(all(1 <= g <= r for g in group_sizes),
             "group sizes must lie in [1, gold.seeds]")

    flip = raw.get("flip_labels")
    if flip is not None:
        _require(0.0 <= float(flip.get("fraction", -1)) <= 1.0,
                 "flip_labels.fraction must lie in [0, 1]")

    out_dir = Path(overrides.get("output") or raw.get("output_dir", "runs/out"))
    return RunConfig(
        raw=raw, output_dir=out_dir, split=split, train_plan=train_plan,
        further_plan=further_plan, subset_l=l, subset_m=m,
        subset_seed=int(sub.get("seed", 0)), seed_count=r, hidden=hidden,
        activation=model_cfg.get("activation", "tanh"),
        init_seed=int(model_cfg.get("init_seed", 0)),
        attributor_specs=specs, metric=metric, group_sizes=group_sizes,
        top_k=int(report_cfg.get("top_k", 3)),
        workers=int(overrides.get("workers") or 1), flip=flip)


# ---------------------------------------------------------------------------
# Deterministic experiment preparation shared by all commands.

@dataclass
class Experiment:
    train_ds: D.Dataset
    test_ds: D.Dataset
    subsets: D.EvalSubsets
    flip_mask: np.ndarray | None  # over the train split


def prepare(cfg: RunConfig) -> Experiment:
    ds_cfg = cfg.raw["dataset"]
    if ds_cfg["source"] == "synthetic":
        ds, _ = D.make_synthetic(ds_cfg["kind"], int(ds_cfg["n"]),
                                 int(ds_cfg["d"]),
                                 float(ds_cfg.get("noise", 0.0)),
                                 int(ds_cfg.get("seed", 0)))
    else:
        schema = D.CsvSchema(target=ds_cfg["target"], task=ds_cfg["task"],
                             categorical=tuple(ds_cfg.get("categorical", ())))
        ds = D.load_csv(ds_cfg["path"], schema)
    train_ds, test_ds = D.split(ds, cfg.split)
    if cfg.raw.get("standardize", True):
        joined = D.Dataset(np.vstack([train_ds.features, test_ds.features]),
                           np.concatenate([train_ds.targets, test_ds.targets]),
                           ds.task,
                           np.concatenate([train_ds.ids, test_ds.ids]))
        joined, _ = D.standardize(joined, np.arange(train_ds.n))
        train_ds = joined.take(np.arange(train_ds.n))
        test_ds = joined.take(np.arange(train_ds.n, joined.n))
    subsets = D.select_subsets(train_ds, test_ds, cfg.subset_l, cfg.subset_m,
                               cfg.subset_seed)
    flip_mask = None
    if cfg.flip is not None:
        candidates = (subsets.train_subset_indices
                      if cfg.flip.get("scope", "subset") == "subset" else None)
        train_ds, flip_mask = D.flip_labels(train_ds,
                                            float(cfg.flip["fraction"]),
                                            int(cfg.flip.get("seed", 0)),
                                            candidates=candidates)
    return Experiment(train_ds=train_ds, test_ds=test_ds, subsets=subsets,
                      flip_mask=flip_mask)


def _model_path(cfg: RunConfig) -> Path:
    return cfg.output_dir / "models" / "final_model.bin"


# ---------------------------------------------------------------------------
# Commands

def cmd_train(cfg: RunConfig) -> Path:
    exp = prepare(cfg)
    out = cfg.output_dir
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "data").mkdir(parents=True, exist_ok=True)
    D.write_dataset_csv(exp.train_ds, out / "data" / "train.csv")
    D.write_dataset_csv(exp.test_ds, out / "data" / "test.csv")
    if exp.flip_mask is not None:
        with open(out / "data" / "flip_mask.csv", "w", encoding="utf-8",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "flipped"])
            for i in range(exp.train_ds.n):
                writer.writerow([int(exp.train_ds.ids[i]),
                                 int(exp.flip_mask[i])])
    init = init_mlp(exp.train_ds.d, cfg.hidden, exp.train_ds.task,
                    cfg.init_seed, cfg.activation)
    log_rows = []

    def log_epoch(step, m):
        mean_loss = float(losses(m, exp.train_ds.features,
                                 exp.train_ds.targets).mean())
        log_rows.append((step, mean_loss))
        return mean_loss

    traj = train(init, exp.train_ds, cfg.train_plan, checkpoint_fn=log_epoch)
    path = _model_path(cfg)
    save_model(traj.final, path)
    with open(out / "models" / "training_log.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_train_loss"])
        for step, value in log_rows:
            writer.writerow([step, repr(value)])
    print(f"trained model written to {path} "
          f"(final mean train loss {log_rows[-1][1] if log_rows else 'n/a'})")
    return path


def _load_final_model(cfg: RunConfig, exp: Experiment) -> ModelState:
    path = _model_path(cfg)
    if not path.exists():
        raise ConfigError(f"model file not found: {path} (run train first)")
    m = load_model(path)
    expected = (exp.train_ds.d, *[int(h) for h in cfg.hidden],
                exp.train_ds.task.num_classes
                if exp.train_ds.task.kind == D.CLASSIFICATION else 1)
    if m.arch != expected:
        raise ConfigError(f"model architecture {m.arch} does not match "
                          f"config {expected}")
    return m


def cmd_gold(cfg: RunConfig) -> None:
    exp = prepare(cfg)
    model = _load_final_model(cfg, exp)
    rec = G.run_gold_sweep(model, exp.train_ds, exp.test_ds, exp.subsets,
                           cfg.further_plan, cfg.seed_count,
                           workers=cfg.workers)
    out = cfg.output_dir / "gold"
    out.mkdir(parents=True, exist_ok=True)
    G.save_record(rec, out / "record.csv", out / "record_meta.json")
    for name, adjust in G.ADJUSTMENTS.items():
        G.save_scores(adjust(rec), out / f"scores_{name.replace('-', '_')}")
    runs = (exp.subsets.l + 1) * cfg.seed_count
    print(f"gold sweep complete: {runs} further-training runs, "
          f"{len(rec.steps)} checkpoints")


ATTRIBUTOR_BUILDERS = {}


def _register(name):
    def deco(fn):
        ATTRIBUTOR_BUILDERS[name] = fn
        return fn
    return deco


@_register("grad_dot")
def _build_grad_dot(spec, model, exp, cache):
    return lambda x, y, tid: attr.grad_dot(
        model, exp.train_ds, exp.subsets.train_subset_indices, x, y,
        damping=float(spec.get("damping", 1.0)),
        train_grads=cache["train_grads"], test_id=tid)


@_register("grad_cos")
def _build_grad_cos(spec, model, exp, cache):
    return lambda x, y, tid: attr.grad_cos(
        model, exp.train_ds, exp.subsets.train_subset_indices, x, y,
        train_grads=cache["train_grads"], test_id=tid)


@_register("influence")
def _build_influence(spec, model, exp, cache):
    curvature = spec.get("curvature", attr.GAUSS_NEWTON)
    context = (cache["gn_context"](model, exp)
               if curvature == attr.GAUSS_NEWTON else None)
    return lambda x, y, tid: attr.influence_attr(
        model, exp.train_ds, exp.subsets.train_subset_indices, x, y,
        curvature=curvature, solver=spec.get("solver", "cg"),
        damping=float(spec.get("damping", 0.01)), context=context,
        train_grads=cache["train_grads"],
        solver_kwargs=spec.get("solver_kwargs"), test_id=tid)


@_register("gen_influence")
def _build_gen_influence(spec, model, exp, cache):
    return lambda x, y, tid: attr.generalized_influence_attr(
        model, exp.train_ds, exp.subsets.train_subset_indices, x, y,
        damping=float(spec.get("damping", 0.01)),
        variant=spec.get("variant", attr.EXACT_HESSIAN_TERM),
        curvature=spec.get("curvature", attr.TRUE_HESSIAN),
        solver=spec.get("solver", "cg"),
        solver_kwargs=spec.get("solver_kwargs"), test_id=tid)


@_register("trak")
def _build_trak(spec, model, exp, cache):
    cfg = attr.TrakConfig(
        projection_dim=int(spec.get("projection_dim", min(model.p, 512))),
        projection_seed=int(spec.get("projection_seed", 0)))
    return lambda x, y, tid: attr.trak_m1(
        model, exp.train_ds, exp.subsets.train_subset_indices, x, y, cfg,
        test_id=tid)


@_register("datainf")
def _build_datainf(spec, model, exp, cache):
    return lambda x, y, tid: attr.datainf(
        model, exp.train_ds, exp.subsets.train_subset_indices, x, y,
        full_grads=cache["full_grads"](model, exp), test_id=tid)


def method_label(spec: dict) -> str:
    if "name" in spec:
        return str(spec["name"])
    parts = [spec["method"]]
    if spec["method"] == "influence":
        parts = [f"influence_{'gn' if spec.get('curvature', attr.GAUSS_NEWTON) == attr.GAUSS_NEWTON else 'h'}"
                 f"_{spec.get('solver', 'cg')}"]
    elif spec["method"] == "gen_influence":
        parts.append(spec.get("variant", attr.EXACT_HESSIAN_TERM))
    return "_".join(parts).replace("-", "_")


def cmd_attribute(cfg: RunConfig) -> int:
    exp = prepare(cfg)
    model = _load_final_model(cfg, exp)
    sub = exp.subsets
    X = exp.train_ds.features[sub.train_subset_indices]
    Y = exp.train_ds.targets[sub.train_subset_indices]
    from .model import build_gauss_newton_context, per_example_grads
    cache = {
        "train_grads": per_example_grads(model, X, Y),
        "_gn": None,
        "_full": None,
    }

    def gn_context(model, exp):
        if cache["_gn"] is None:
            cache["_gn"] = build_gauss_newton_context(model, exp.train_ds)
        return cache["_gn"]

    def full_grads(model, exp):
        if cache["_full"] is None:
            cache["_full"] = per_example_grads(model, exp.train_ds.features,
                                               exp.train_ds.targets)
        return cache["_full"]

    cache["gn_context"] = gn_context
    cache["full_grads"] = full_grads

    out = cfg.output_dir / "attributions"
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    for spec in cfg.attributor_specs:
        label = method_label(spec)
        build = ATTRIBUTOR_BUILDERS[spec["method"]]
        run = build(spec, model, exp, cache)

        def one(j):
            return run(exp.test_ds.features[j], exp.test_ds.targets[j],
                       int(exp.test_ds.ids[j]))

        try:
            if cfg.workers > 1:
                # Attributors are pure and share read-only caches, so the
                # per-test-instance work parallelizes across threads.
                from concurrent.futures import ThreadPoolExecutor
                with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                    vectors = list(pool.map(one, sub.test_indices))
            else:
                vectors = [one(j) for j in sub.test_indices]
        except (attr.AttributionError, attr.RankDeficiencyError,
                SolverDivergedError) as err:
            failures.append((label, str(err)))
            print(f"attributor {label} failed: {err}", file=sys.stderr)
            continue
        _write_attributions(out, label, spec, vectors)
        print(f"{label}: wrote {len(vectors)} x {sub.l} scores")
    if failures:
        with open(out / "failures.json", "w", encoding="utf-8") as fh:
            json.dump({label: msg for label, msg in failures}, fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
    return EXIT_NUMERICAL if failures else EXIT_OK


def _write_attributions(out: Path, label: str, spec: dict,
                        vectors: list) -> None:
    with open(out / f"{label}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "test_id", "loo_id", "score"])
        for vec in vectors:
            for k, lid in enumerate(vec.loo_ids):
                writer.writerow([label, vec.test_id, int(lid),
                                 repr(float(vec.scores[k]))])
    sidecar = {"spec": spec,
               "hyperparams": _jsonable(vectors[0].hyperparams)}
    with open(out / f"{label}_params.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def _read_attributions(path: Path, loo_ids: np.ndarray) -> dict:
    """method label -> list of AttributionVector (one per test id)."""
    by_method = {}
    for csv_path in sorted(path.glob("*.csv")):
        rows = {}
        label = csv_path.stem
        with open(csv_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for method, tid, lid, score in reader:
                rows.setdefault(int(tid), {})[int(lid)] = float(score)
        vectors = []
        for tid, scores in sorted(rows.items()):
            if set(scores) != set(int(v) for v in loo_ids):
                raise E.AlignmentError(
                    f"{csv_path}: subset ids do not match the gold record")
            vec = np.asarray([scores[int(v)] for v in loo_ids])
            vectors.append(attr.AttributionVector(
                scores=vec, loo_ids=loo_ids, method=label, test_id=tid))
        by_method[label] = vectors
    return by_method


def cmd_report(cfg: RunConfig) -> None:
    gold_dir = cfg.output_dir / "gold"
    rec = G.load_record(gold_dir / "record.csv",
                        gold_dir / "record_meta.json")
    attributions = _read_attributions(cfg.output_dir / "attributions",
                                      rec.loo_ids)
    if not attributions:
        raise ConfigError("no attribution CSVs found (run attribute first)")
    gold = G.adjust_mean_subtract(rec)
    reports = cfg.output_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)

    curves = {label: E.similarity_curves(gold, vectors, cfg.metric,
                                         method=label)
              for label, vectors in sorted(attributions.items())}
    with open(reports / f"similarity_{cfg.metric}.csv", "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "checkpoint", "mean", "se"])
        for label, curve in curves.items():
            for t, step in enumerate(curve.steps):
                writer.writerow([label, int(step), repr(float(curve.mean[t])),
                                 repr(float(curve.se[t]))])
    svg = line_plot_svg(
        [{"label": label, "x": c.steps, "y": c.mean,
          "band": (c.mean - c.se, c.mean + c.se)}
         for label, c in curves.items()],
        title=f"{cfg.metric} similarity to gold scores",
        xlabel="further-training step", ylabel=cfg.metric)
    (reports / f"similarity_{cfg.metric}.svg").write_text(svg,
                                                          encoding="utf-8")

    group_curves = {label: E.seed_group_curves(rec, vectors, cfg.metric,
                                               cfg.group_sizes, method=label)
                    for label, vectors in sorted(attributions.items())}
    with open(reports / f"seed_groups_{cfg.metric}.csv", "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "group_size", "mean", "se",
                         "argmax_checkpoint"])
        for label, curve in group_curves.items():
            for i, size in enumerate(curve.group_sizes):
                writer.writerow([label, int(size), repr(float(curve.mean[i])),
                                 repr(float(curve.se[i])),
                                 int(curve.argmax_step[i])])
    svg = line_plot_svg(
        [{"label": label, "x": c.group_sizes, "y": c.mean,
          "band": (c.mean - c.se, c.mean + c.se)}
         for label, c in group_curves.items()],
        title=f"max {cfg.metric} similarity vs seeds averaged",
        xlabel="seeds per group", ylabel=f"max {cfg.metric}")
    (reports / f"seed_groups_{cfg.metric}.svg").write_text(svg,
                                                           encoding="utf-8")

    mask_path = cfg.output_dir / "data" / "flip_mask.csv"
    if mask_path.exists():
        by_id = {}
        with open(mask_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for rid, flag in reader:
                by_id[int(rid)] = bool(int(flag))
        mask = np.asarray([by_id[int(v)] for v in gold.loo_ids], dtype=bool)
        if mask.any() and not mask.all():
            with open(reports / "mislabel_auc.csv", "w", encoding="utf-8",
                      newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["checkpoint", "auc"])
                for step in gold.steps:
                    auc = E.mislabel_auc_from_gold(gold, mask, int(step))
                    writer.writerow([int(step), repr(float(auc))])

    _write_top_k(reports / "top_k.csv", gold, cfg.top_k)
    print(f"reports written to {reports}")


def _write_top_k(path: Path, gold: G.GoldScores, k: int) -> None:
    """Most helpful / harmful subset instances per test instance, by gold
    score at the final checkpoint."""
    table = gold.scores[-1]  # (m, l)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["test_id", "rank", "kind", "loo_id", "score"])
        for j, tid in enumerate(gold.test_ids):
            order = np.argsort(table[j])
            for rank in range(min(k, len(order))):
                best = order[-(rank + 1)]
                writer.writerow([int(tid), rank + 1, "helpful",
                                 int(gold.loo_ids[best]),
                                 repr(float(table[j, best]))])
            for rank in range(min(k, len(order))):
                worst = order[rank]
                writer.writerow([int(tid), rank + 1, "harmful",
                                 int(gold.loo_ids[worst]),
                                 repr(float(table[j, worst]))])


def cmd_all(cfg: RunConfig) -> int:
    cmd_train(cfg)
    cmd_gold(cfg)
    code = cmd_attribute(cfg)
    cmd_report(cfg)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ftda",
        description="Further-training sensitivity scores and their "
                    "gradient-based approximations")
    parser.add_argument("command",
                        choices=["train", "gold", "attribute", "report",
                                 "all"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed-count", type=int, default=None,
                        help="override gold.seeds")
    parser.add_argument("--output", default=None,
                        help="override output_dir")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config,
                           overrides={"workers": args.workers,
                                      "seed_count": args.seed_count,
                                      "output": args.output})
    except (ConfigError, D.DataError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.command == "train":
            cmd_train(cfg)
            return EXIT_OK
        if args.command == "gold":
            cmd_gold(cfg)
            return EXIT_OK
        if args.command == "attribute":
            return cmd_attribute(cfg)
        if args.command == "report":
            cmd_report(cfg)
            return EXIT_OK
        return cmd_all(cfg)
    except (ConfigError, D.DataError, E.MetricError, E.AlignmentError,
            attr.AttributionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivergedError, G.GoldRunError, SolverDivergedError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
