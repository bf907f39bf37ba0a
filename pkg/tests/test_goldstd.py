import numpy as np
import pytest

from conftest import linear_dataset, linear_model
from ftda.data import Dataset, EvalSubsets, Task, REGRESSION
from ftda.goldstd import (FULL_ID, GoldRunError, GoldRunRecord,
                          adjust_full_subtract, adjust_mean_subtract,
                          load_record, retrain_gold, run_gold_sweep,
                          save_record)
from ftda.model import init_mlp, losses
from ftda.training import TrainPlan, train


def gd_plan(n, epochs=2500, lr=0.4, seed=0, checkpoint_every=10**6):
    """Full-batch deterministic plan that converges on small linear tasks."""
    return TrainPlan(optimizer="sgd", lr=lr, epochs=epochs, batch_size=n,
                     shuffle_seed=seed, checkpoint_every=checkpoint_every)


def exact_loo_solutions(ds):
    """Closed-form least-squares leave-one-out minimizers.

    Rank-one downdate of the normal equations: removing row i shifts the
    full solution by + A^-1 x_i e_i / (1 - h_i) with e_i the full-fit
    residual and h_i the leverage.
    """
    xb = np.hstack([ds.features, np.ones((ds.n, 1))])
    A = xb.T @ xb
    theta = np.linalg.solve(A, xb.T @ ds.targets)
    Ainv_x = np.linalg.solve(A, xb.T).T       # rows: A^-1 x_i
    leverage = np.einsum("ij,ij->i", xb, Ainv_x)
    resid = xb @ theta - ds.targets
    loo = theta[None, :] + Ainv_x * (resid / (1.0 - leverage))[:, None]
    return theta, loo


def test_downdate_oracle_matches_brute_force_refit():
    ds = linear_dataset(n=20, d=3, noise=0.5, seed=13)
    _, loo = exact_loo_solutions(ds)
    xb = np.hstack([ds.features, np.ones((ds.n, 1))])
    for i in (0, 7, 19):
        keep = np.delete(np.arange(ds.n), i)
        w, *_ = np.linalg.lstsq(xb[keep], ds.targets[keep], rcond=None)
        np.testing.assert_allclose(loo[i], w, atol=1e-10)


def synthetic_record(loo_values, full_values):
    l, r, T, m = loo_values.shape
    return GoldRunRecord(
        loo_ids=np.arange(l, dtype=np.int64),
        test_ids=np.arange(m, dtype=np.int64),
        seeds=np.arange(r, dtype=np.int64),
        steps=np.arange(1, T + 1, dtype=np.int64),
        loo_values=np.asarray(loo_values, dtype=np.float64),
        full_values=np.asarray(full_values, dtype=np.float64),
        plan=gd_plan(4, epochs=1))


@pytest.fixture(scope="module")
def convex_setup():
    train_ds = linear_dataset(n=30, d=3, noise=0.4, seed=21)
    test_ds = Dataset(
        np.random.default_rng(99).normal(size=(6, 3)),
        np.random.default_rng(98).normal(size=6), Task(REGRESSION),
        ids=np.arange(100, 106))
    subsets = EvalSubsets(np.arange(6), np.arange(test_ds.n), subset_seed=0)
    theta_star, _ = exact_loo_solutions(train_ds)
    model_f = linear_model(train_ds, theta=theta_star)
    return train_ds, test_ds, subsets, model_f


class TestSweepGrid:
    def test_zero_epochs_cells_constant(self, convex_setup):
        train_ds, test_ds, subsets, model_f = convex_setup
        rec = run_gold_sweep(model_f, train_ds, test_ds, subsets,
                             gd_plan(train_ds.n, epochs=0), r=2)
        base = losses(model_f, test_ds.features, test_ds.targets)
        for arr in (rec.loo_values, rec.full_values):
            np.testing.assert_allclose(arr, np.broadcast_to(base, arr.shape),
                                       rtol=1e-15)
        np.testing.assert_allclose(adjust_mean_subtract(rec).scores, 0.0,
                                   atol=1e-15)
        np.testing.assert_allclose(adjust_full_subtract(rec).scores, 0.0,
                                   atol=1e-15)

    def test_grid_shape_counts(self, convex_setup):
        train_ds, test_ds, subsets, model_f = convex_setup
        rec = run_gold_sweep(model_f, train_ds, test_ds, subsets,
                             gd_plan(train_ds.n, epochs=1), r=3)
        assert rec.loo_values.shape == (subsets.l, 3, 1, subsets.m)
        assert rec.full_values.shape == (3, 1, subsets.m)

    def test_convex_cells_match_downdate_oracle(self, convex_setup):
        train_ds, test_ds, subsets, model_f = convex_setup
        rec = run_gold_sweep(model_f, train_ds, test_ds, subsets,
                             gd_plan(train_ds.n), r=1)
        _, loo_thetas = exact_loo_solutions(train_ds)
        for k, pos in enumerate(subsets.train_subset_indices):
            oracle_m = model_f.with_theta(loo_thetas[pos])
            want = losses(oracle_m, test_ds.features, test_ds.targets)
            got = rec.loo_values[k, 0, -1]
            assert np.abs(got - want).max() < 1e-4

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_diverged_run_identifies_cell(self, convex_setup):
        train_ds, test_ds, subsets, model_f = convex_setup
        bad_plan = gd_plan(train_ds.n, epochs=400, lr=1e5)
        with pytest.raises(GoldRunError) as err:
            run_gold_sweep(model_f, train_ds, test_ds, subsets, bad_plan, r=1)
        assert err.value.seed == 0

    def test_worker_pool_matches_serial(self, convex_setup):
        train_ds, test_ds, subsets, model_f = convex_setup
        plan = gd_plan(train_ds.n, epochs=3)
        a = run_gold_sweep(model_f, train_ds, test_ds, subsets, plan, r=2)
        b = run_gold_sweep(model_f, train_ds, test_ds, subsets, plan, r=2,
                           workers=2)
        np.testing.assert_array_equal(a.loo_values, b.loo_values)
        np.testing.assert_array_equal(a.full_values, b.full_values)


class TestSweepVariants:
    def test_adam_further_training_smoke(self, convex_setup):
        train_ds, test_ds, subsets, model_f = convex_setup
        plan = TrainPlan(optimizer="adam", lr=0.01, epochs=3,
                         batch_size=8, shuffle_seed=1)
        rec = run_gold_sweep(model_f, train_ds, test_ds, subsets, plan, r=2)
        assert np.all(np.isfinite(rec.loo_values))
        assert np.all(np.isfinite(adjust_mean_subtract(rec).scores))

    def test_step_unit_checkpoints(self, convex_setup):
        train_ds, test_ds, subsets, model_f = convex_setup
        plan = TrainPlan(optimizer="sgd", lr=0.1, epochs=2, batch_size=8,
                         shuffle_seed=1, checkpoint_every=3,
                         checkpoint_unit="step")
        rec = run_gold_sweep(model_f, train_ds, test_ds, subsets, plan, r=1)
        # n=30, B=8 -> 4 steps/epoch, 8 total: checkpoints 3, 6, 8
        np.testing.assert_array_equal(rec.steps, [3, 6, 8])
        assert rec.loo_values.shape[2] == 3


class TestAdjustments:
    def test_constant_cells_zero_scores(self):
        rec = synthetic_record(np.full((3, 2, 2, 2), 5.0),
                               np.full((2, 2, 2), 5.0))
        np.testing.assert_array_equal(adjust_mean_subtract(rec).scores, 0.0)

    def test_two_instance_centering_formula(self):
        g1, g2 = 3.0, 8.0
        loo = np.array([g1, g2]).reshape(2, 1, 1, 1)
        rec = synthetic_record(loo, np.zeros((1, 1, 1)))
        scores = adjust_mean_subtract(rec).scores[0, 0]
        np.testing.assert_allclose(scores, [(g1 - g2) / 2, (g2 - g1) / 2])

    def test_two_seed_hand_average(self, rng):
        loo = rng.normal(size=(4, 2, 3, 2))
        rec = synthetic_record(loo, rng.normal(size=(2, 3, 2)))
        got = adjust_mean_subtract(rec).scores
        # spreadsheet recomputation: per seed, center over the 4 left-out
        # runs, then average the two seeds
        want = np.zeros_like(got)
        for t in range(3):
            for j in range(2):
                per_seed = [loo[:, s, t, j] - loo[:, s, t, j].mean()
                            for s in range(2)]
                want[t, j] = (per_seed[0] + per_seed[1]) / 2
        np.testing.assert_allclose(got, want, atol=1e-14)

    def test_full_subtract_identical_runs_zero(self):
        vals = np.arange(12.0).reshape(1, 2, 3, 2)
        rec = synthetic_record(np.repeat(vals, 2, axis=0), vals[0])
        np.testing.assert_array_equal(adjust_full_subtract(rec).scores, 0.0)

    def test_full_subtract_single_seed_direct_difference(self, rng):
        loo = rng.normal(size=(3, 1, 2, 2))
        full = rng.normal(size=(1, 2, 2))
        rec = synthetic_record(loo, full)
        got = adjust_full_subtract(rec).scores
        want = np.transpose(loo[:, 0] - full[0], (1, 2, 0))
        np.testing.assert_allclose(got, want, atol=1e-15)

    def test_centering_identity_between_adjustments(self, rng):
        # Centering the full-subtract scores over the subset reproduces the
        # mean-subtract scores: both center the same per-seed vectors.
        loo = rng.normal(size=(5, 3, 2, 2))
        rec = synthetic_record(loo, rng.normal(size=(3, 2, 2)))
        v = adjust_full_subtract(rec).scores
        centered = v - v.mean(axis=2, keepdims=True)
        np.testing.assert_allclose(centered, adjust_mean_subtract(rec).scores,
                                   atol=1e-12)

    def test_mean_subtract_sums_to_zero(self, rng):
        loo = rng.normal(size=(7, 4, 3, 5))
        rec = synthetic_record(loo, rng.normal(size=(4, 3, 5)))
        scores = adjust_mean_subtract(rec).scores
        sums = np.abs(scores.sum(axis=2))
        scale = np.abs(scores).sum(axis=2)
        assert (sums <= 1e-12 * np.maximum(scale, 1e-300)).all()

    def test_seed_averaging_consistency(self, rng):
        loo = rng.normal(size=(3, 4, 2, 2))
        full = rng.normal(size=(4, 2, 2))
        rec = synthetic_record(loo, full)
        whole = adjust_mean_subtract(rec).scores
        per_seed = [adjust_mean_subtract(rec.seed_slice([s])).scores
                    for s in range(4)]
        np.testing.assert_allclose(whole, np.mean(per_seed, axis=0),
                                   atol=1e-14)

    def test_permutation_equivariance(self, rng):
        loo = rng.normal(size=(5, 2, 2, 3))
        full = rng.normal(size=(2, 2, 3))
        rec = synthetic_record(loo, full)
        perm = np.array([4, 2, 0, 1, 3])
        rec_p = GoldRunRecord(
            loo_ids=rec.loo_ids[perm], test_ids=rec.test_ids,
            seeds=rec.seeds, steps=rec.steps,
            loo_values=rec.loo_values[perm], full_values=rec.full_values,
            plan=rec.plan)
        np.testing.assert_allclose(adjust_mean_subtract(rec_p).scores,
                                   adjust_mean_subtract(rec).scores[..., perm],
                                   atol=1e-15)


class TestRetrainGold:
    def test_convex_equivalence_with_further_training(self, convex_setup):
        # Strictly convex risk: the further-training and from-scratch gold
        # scores both converge to the exact leave-one-out differences.
        train_ds, test_ds, subsets, model_f = convex_setup
        plan = gd_plan(train_ds.n)
        rec_ft = run_gold_sweep(model_f, train_ds, test_ds, subsets, plan,
                                r=1)
        init = linear_model(train_ds).with_theta(
            np.zeros(train_ds.d + 1))
        rec_rt = retrain_gold(init, train_ds, test_ds, subsets,
                              gd_plan(train_ds.n, epochs=4000), r=1)
        a = adjust_mean_subtract(rec_ft).scores
        b = adjust_mean_subtract(rec_rt).scores
        assert np.abs(a - b).max() < 1e-4 * max(np.abs(a).max(), 1.0)

    def test_zero_epochs_zero_scores(self, convex_setup):
        train_ds, test_ds, subsets, _ = convex_setup
        init = linear_model(train_ds)
        rec = retrain_gold(init, train_ds, test_ds, subsets,
                           gd_plan(train_ds.n, epochs=0), r=1)
        np.testing.assert_allclose(adjust_mean_subtract(rec).scores, 0.0,
                                   atol=1e-15)

    def test_nonconvex_smoke(self, convex_setup):
        train_ds, test_ds, subsets, _ = convex_setup
        mlp = init_mlp(train_ds.d, [4], train_ds.task, seed=7)
        rec = retrain_gold(mlp, train_ds, test_ds, subsets,
                           gd_plan(train_ds.n, epochs=5, lr=0.05), r=1)
        assert np.all(np.isfinite(adjust_mean_subtract(rec).scores))


class TestPersistence:
    def test_record_round_trip(self, tmp_path, rng):
        loo = rng.normal(size=(3, 2, 2, 4))
        full = rng.normal(size=(2, 2, 4))
        rec = synthetic_record(loo, full)
        save_record(rec, tmp_path / "rec.csv", tmp_path / "meta.json")
        back = load_record(tmp_path / "rec.csv", tmp_path / "meta.json")
        np.testing.assert_array_equal(back.loo_values, rec.loo_values)
        np.testing.assert_array_equal(back.full_values, rec.full_values)
        np.testing.assert_array_equal(back.steps, rec.steps)
        assert back.plan == rec.plan

    def test_incomplete_grid_rejected(self, tmp_path, rng):
        rec = synthetic_record(rng.normal(size=(2, 1, 1, 1)),
                               rng.normal(size=(1, 1, 1)))
        save_record(rec, tmp_path / "rec.csv", tmp_path / "meta.json")
        lines = (tmp_path / "rec.csv").read_text().splitlines()
        (tmp_path / "rec.csv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError, match="incomplete"):
            load_record(tmp_path / "rec.csv", tmp_path / "meta.json")
