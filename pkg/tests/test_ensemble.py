import numpy as np
import pytest

from ecad.backends import BackendSpec
from ecad.ensemble import (
    AggregatorSpec,
    aggregate,
    bootstrap_indices,
    load_ensemble,
    loo_predict,
    save_ensemble,
    train_ensemble,
)
from ecad.panel import FeatureRow


def _rows_from_matrix(values, n_lags=1):
    """Single-lag, self-only feature rows from a T x K matrix."""
    T, K = values.shape
    rows = []
    for t in range(n_lags, T):
        for k in range(K):
            x = np.array([values[t - lag, k] for lag in range(1, n_lags + 1)])
            rows.append(FeatureRow(t, k, x, float(values[t, k])))
    return rows


def test_bootstrap_single_index_has_empty_loo():
    plan = bootstrap_indices([0], 3, seed=0)
    assert plan.in_bag.shape == (3, 1)
    assert np.all(plan.in_bag == 0)
    assert plan.loo_models(0).size == 0


def test_bootstrap_shapes_and_membership():
    plan = bootstrap_indices(range(10, 20), 4, seed=1)
    assert plan.in_bag.shape == (4, 10)
    assert np.all(np.isin(plan.in_bag, plan.available))
    for b in range(4):
        in_bag = set(plan.in_bag[b].tolist())
        for i, t in enumerate(plan.available):
            assert plan.membership[b, i] == (int(t) in in_bag)


def test_bootstrap_deterministic():
    a = bootstrap_indices(range(50), 5, seed=3)
    b = bootstrap_indices(range(50), 5, seed=3)
    assert np.array_equal(a.in_bag, b.in_bag)
    assert not np.array_equal(a.in_bag, bootstrap_indices(range(50), 5, seed=4).in_bag)


def test_bootstrap_errors():
    with pytest.raises(ValueError, match="empty"):
        bootstrap_indices([], 3, seed=0)
    with pytest.raises(ValueError):
        bootstrap_indices([1, 2], 0, seed=0)


def test_bootstrap_nonempty_loo_fraction_monte_carlo():
    # with 100 available times and 25 bags, essentially every time index keeps
    # a nonempty LOO set: expected empty rate (1 - (1 - 1/100)^100)^25 ~ 1e-5
    total = 0
    nonempty = 0
    for seed in range(1000):
        plan = bootstrap_indices(range(100), 25, seed=seed)
        counts = (~plan.membership).sum(axis=0)
        total += 100
        nonempty += int((counts > 0).sum())
    assert nonempty / total >= 0.999


def test_empty_loo_rare_at_operating_scale():
    # B=25, 120 times, 100 seeds: pooled empty-LOO fraction below 0.1%
    empty = 0
    total = 0
    for seed in range(100):
        plan = bootstrap_indices(range(120), 25, seed=seed)
        empty += int(((~plan.membership).sum(axis=0) == 0).sum())
        total += 120
    assert empty / total < 0.001


def test_single_bag_scores_only_out_of_bag_times():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(40, 2))
    rows = _rows_from_matrix(values)
    ens = train_ensemble(rows, BackendSpec(kind="ridge"), 1, seed=5)
    in_bag = set(ens.plan.in_bag[0].tolist())
    available = set(ens.plan.available.tolist())
    scored = set(ens.score_times.tolist())
    assert scored == available - in_bag
    assert ens.dropped_empty_loo == len(available & in_bag)


def test_noiseless_linear_scores_are_zero():
    t = np.arange(60, dtype=float)
    values = np.column_stack([2.0 * t + 1.0, 2.0 * t + 5.0])
    # both sensors satisfy y_t = y_{t-1} + 2, so one lag feature fits exactly
    rows = _rows_from_matrix(values)
    ens = train_ensemble(rows, BackendSpec(kind="ridge", ridge_lambda=0.0), 10, seed=2)
    assert ens.score_values.size > 0
    assert np.max(ens.score_values) < 1e-6


def test_no_training_score_uses_in_bag_model():
    # construction audit: the LOO model set of every scored time must be
    # disjoint from the bags containing that time
    rng = np.random.default_rng(1)
    rows = _rows_from_matrix(rng.normal(size=(30, 2)))
    ens = train_ensemble(rows, BackendSpec(kind="ridge"), 8, seed=3)
    for t in np.unique(ens.score_times):
        loo = set(ens.plan.loo_models(int(t)).tolist())
        for b in range(ens.n_models):
            if int(t) in set(ens.plan.in_bag[b].tolist()):
                assert b not in loo


def test_loo_predict_mean_and_median():
    rng = np.random.default_rng(2)
    rows = _rows_from_matrix(rng.normal(size=(25, 2)))
    for agg, combine in [
        (AggregatorSpec("mean"), np.mean),
        (AggregatorSpec("median"), np.median),
    ]:
        ens = train_ensemble(rows, BackendSpec(kind="ridge"), 6, aggregator=agg, seed=4)
        t = int(ens.usable_times[0])
        x = rows[0].x
        expected = combine(
            [ens.models[b].predict(x[None, :])[0] for b in ens.plan.loo_models(t)]
        )
        assert loo_predict(ens, t, x) == pytest.approx(float(expected), abs=1e-12)


def test_aggregate_examples():
    assert aggregate(np.array([1.0, 3.0]), AggregatorSpec("mean")) == 2.0
    assert aggregate(np.array([1.0, 2.0, 100.0]), AggregatorSpec("median")) == 2.0


def test_trimmed_mean_matches_hand_oracle():
    rng = np.random.default_rng(3)
    for n in [10, 23, 40]:
        values = rng.normal(size=n)
        got = aggregate(values, AggregatorSpec("trimmed_mean", trim_fraction=0.1))
        cut = int(np.floor(0.1 * n))
        expected = sorted(values.tolist())[cut : n - cut]
        assert got == pytest.approx(sum(expected) / len(expected), abs=1e-12)


def test_aggregate_errors():
    with pytest.raises(ValueError, match="empty"):
        aggregate(np.array([]), AggregatorSpec("mean"))
    with pytest.raises(ValueError, match="trim_fraction"):
        aggregate(np.array([1.0, 2.0]), AggregatorSpec("trimmed_mean", trim_fraction=0.5))


def test_mean_over_identical_models_equals_single_model():
    from ecad.backends import fit as fit_backend

    values = np.cumsum(np.ones((20, 1)), axis=0) + 0.25
    rows = _rows_from_matrix(values)
    model = fit_backend(
        BackendSpec(kind="ridge"),
        np.stack([r.x for r in rows]),
        np.array([r.y for r in rows]),
    )
    x = rows[5].x[None, :]
    single = model.predict(x)[0]
    preds = np.array([single] * 4)
    assert aggregate(preds, AggregatorSpec("mean")) == single


def test_loo_predict_empty_set_errors():
    plan_rows = _rows_from_matrix(np.random.default_rng(4).normal(size=(6, 1)))
    ens = train_ensemble(plan_rows, BackendSpec(kind="ridge"), 1, seed=1)
    in_bag_times = set(ens.plan.in_bag[0].tolist())
    t = next(iter(in_bag_times))
    with pytest.raises(ValueError, match="empty leave-one-out"):
        loo_predict(ens, int(t), plan_rows[0].x)


def test_ensemble_roundtrip_through_disk(tmp_path):
    rng = np.random.default_rng(5)
    rows = _rows_from_matrix(rng.normal(size=(30, 3)))
    ens = train_ensemble(rows, BackendSpec(kind="ridge", ridge_lambda=0.7), 7, seed=9)
    path = tmp_path / "ensemble.npz"
    save_ensemble(ens, path)
    loaded = load_ensemble(path)
    assert loaded.n_models == ens.n_models
    assert loaded.backend == ens.backend
    assert np.array_equal(loaded.plan.in_bag, ens.plan.in_bag)
    assert np.array_equal(loaded.score_values, ens.score_values)
    assert np.array_equal(loaded.score_times, ens.score_times)
    x = rows[0].x[None, :]
    assert np.array_equal(loaded.predict_all_models(x), ens.predict_all_models(x))


def test_ensemble_version_refusal(tmp_path):
    rng = np.random.default_rng(6)
    rows = _rows_from_matrix(rng.normal(size=(12, 1)))
    ens = train_ensemble(rows, BackendSpec(kind="ridge"), 3, seed=0)
    path = tmp_path / "ensemble.npz"
    save_ensemble(ens, path)
    import json

    with np.load(path) as data:
        arrays = {key: data[key] for key in data.files}
    meta = json.loads(str(arrays["meta"]))
    meta["format_version"] = 99
    arrays["meta"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)
    with pytest.raises(ValueError, match="format version"):
        load_ensemble(path)


def test_mlp_backend_trains_in_ensemble():
    rng = np.random.default_rng(7)
    rows = _rows_from_matrix(rng.normal(size=(20, 2)))
    spec = BackendSpec(kind="mlp", mlp_hidden=(4,), mlp_epochs=20, mlp_learning_rate=0.05, seed=0)
    ens = train_ensemble(rows, spec, 3, seed=1)
    assert ens.score_values.size > 0
    assert np.isfinite(ens.score_values).all()
