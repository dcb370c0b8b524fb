import numpy as np
import pytest

from ecad.panel import (
    SensorMetadata,
    TimeSeriesPanel,
    build_feature_arrays,
    build_features,
    load_panel,
    load_sensors,
    neighbor_sets,
    save_panel,
    save_sensors,
)
from ecad.scenario import inject_missing


def _grid_sensors(coords):
    return [SensorMetadata(i, (float(x), float(y))) for i, (x, y) in enumerate(coords)]


def test_load_panel_counts_missing_cells(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("sensor_0,sensor_1\n1.0,2.0\n3.0,NA\n5.0,6.0\n")
    panel = load_panel(path)
    assert panel.values.shape == (3, 2)
    assert panel.mask.sum() == 5
    assert not panel.mask[1, 1]
    assert panel.values[2, 1] == 6.0


def test_load_panel_header_only_is_empty(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("sensor_0,sensor_1\n")
    with pytest.raises(ValueError, match="empty panel"):
        load_panel(path)


def test_load_panel_no_header_row(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="empty panel"):
        load_panel(path)


def test_load_panel_ragged_row(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("sensor_0,sensor_1\n1.0,2.0\n3.0\n")
    with pytest.raises(ValueError, match="ragged"):
        load_panel(path)


def test_load_panel_non_numeric_cell(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("sensor_0,sensor_1\n1.0,oops\n")
    with pytest.raises(ValueError, match="non-numeric"):
        load_panel(path)


def test_load_panel_duplicate_header(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("sensor_0,sensor_0\n1.0,2.0\n")
    with pytest.raises(ValueError, match="duplicate sensor ids"):
        load_panel(path)


def test_load_panel_custom_missing_token(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("sensor_0\n1.0\nmissing\n")
    panel = load_panel(path, missing_token="missing")
    assert panel.mask.sum() == 1


def test_panel_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(20, 4)) * 1e3
    mask = rng.random((20, 4)) > 0.3
    mask[0] = True
    panel = TimeSeriesPanel(values, mask)
    path = tmp_path / "panel.csv"
    save_panel(panel, path)
    loaded = load_panel(path)
    assert np.array_equal(loaded.mask, mask)
    assert np.array_equal(loaded.values[mask], values[mask])


def test_forty_percent_missingness_gives_point_six_t_observed(tmp_path):
    # paper-scale masking: each column keeps 0.6 T observed cells (+-1 rounding)
    T, K = 1000, 20
    rng = np.random.default_rng(1)
    panel = TimeSeriesPanel(rng.normal(size=(T, K)), np.ones((T, K), dtype=bool))
    masked = inject_missing(panel, 0.4, seed=7)
    path = tmp_path / "panel.csv"
    save_panel(masked, path)
    loaded = load_panel(path)
    observed = loaded.observed_counts()
    assert np.all(np.abs(observed - 0.6 * T) <= 1)


def test_sensor_csv_roundtrip(tmp_path):
    sensors = _grid_sensors([(0.1, 0.2), (0.9, 0.4), (0.5, 0.5)])
    path = tmp_path / "sensors.csv"
    save_sensors(sensors, path)
    assert load_sensors(path) == sensors


def test_load_sensors_rejects_unscaled_coords(tmp_path):
    path = tmp_path / "sensors.csv"
    path.write_text("sensor_id,lat,lon\n0,0.5,1.5\n")
    with pytest.raises(ValueError, match="scaled"):
        load_sensors(path)


def test_load_sensors_rejects_gappy_ids(tmp_path):
    path = tmp_path / "sensors.csv"
    path.write_text("sensor_id,lat,lon\n0,0.5,0.5\n2,0.2,0.2\n")
    with pytest.raises(ValueError, match="contiguous"):
        load_sensors(path)


def test_neighbor_sets_collinear():
    sensors = _grid_sensors([(0.0, 0.0), (0.1, 0.0), (0.9, 0.0)])
    nb = neighbor_sets(sensors, 2)
    assert nb[0] == (0, 1)
    assert nb[1] == (1, 0)
    assert nb[2] == (2, 1)


def test_neighbor_sets_full_size_is_permutation():
    rng = np.random.default_rng(3)
    sensors = _grid_sensors(rng.uniform(size=(7, 2)))
    nb = neighbor_sets(sensors, 7)
    for k in range(7):
        assert sorted(nb[k]) == list(range(7))


def test_neighbor_sets_self_always_first():
    rng = np.random.default_rng(4)
    sensors = _grid_sensors(rng.uniform(size=(15, 2)))
    nb = neighbor_sets(sensors, 4)
    for k in range(15):
        assert nb[k][0] == k


def test_neighbor_sets_matches_brute_force_distance_sort():
    rng = np.random.default_rng(5)
    coords = rng.uniform(size=(20, 2))
    sensors = _grid_sensors(coords)
    nb = neighbor_sets(sensors, 5)
    for k in range(20):
        dists = [
            (float(np.hypot(*(coords[j] - coords[k]))), j) for j in range(20)
        ]
        dists.sort()
        assert list(nb[k]) == [j for _, j in dists[:5]]


def test_neighbor_sets_size_errors():
    sensors = _grid_sensors([(0.0, 0.0), (1.0, 1.0)])
    with pytest.raises(ValueError):
        neighbor_sets(sensors, 0)
    with pytest.raises(ValueError):
        neighbor_sets(sensors, 3)


def test_build_features_single_sensor_lags():
    panel = TimeSeriesPanel(
        np.array([[1.0], [2.0], [3.0], [4.0]]), np.ones((4, 1), dtype=bool)
    )
    rows = build_features(panel, {0: (0,)}, 2)
    assert len(rows) == 2
    assert rows[0].t == 2 and rows[0].y == 3.0
    assert rows[0].x.tolist() == [2.0, 1.0]
    assert rows[1].t == 3 and rows[1].y == 4.0
    assert rows[1].x.tolist() == [3.0, 2.0]


def test_build_features_dimension_is_lags_times_neighbors():
    rng = np.random.default_rng(6)
    sensors = _grid_sensors(rng.uniform(size=(6, 2)))
    panel = TimeSeriesPanel(rng.normal(size=(12, 6)), np.ones((12, 6), dtype=bool), sensors)
    rows = build_features(panel, neighbor_sets(sensors, 5), 5)
    assert rows[0].x.shape == (25,)
    assert len(rows) == (12 - 5) * 6


def test_build_features_matches_direct_index_lookup():
    rng = np.random.default_rng(7)
    sensors = _grid_sensors(rng.uniform(size=(3, 2)))
    values = rng.normal(size=(10, 3))
    panel = TimeSeriesPanel(values, np.ones((10, 3), dtype=bool), sensors)
    neighbors = neighbor_sets(sensors, 2)
    rows = build_features(panel, neighbors, 3)
    for row in rows:
        assert row.y == values[row.t, row.k]
        for j, nb in enumerate(neighbors[row.k]):
            for lag in range(1, 4):
                assert row.x[j * 3 + (lag - 1)] == values[row.t - lag, nb]


def test_build_features_is_pure():
    rng = np.random.default_rng(8)
    sensors = _grid_sensors(rng.uniform(size=(4, 2)))
    panel = TimeSeriesPanel(rng.normal(size=(9, 4)), np.ones((9, 4), dtype=bool), sensors)
    neighbors = neighbor_sets(sensors, 3)
    first = build_feature_arrays(panel, neighbors, 2)
    second = build_feature_arrays(panel, neighbors, 2)
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_build_features_never_leaks_future_values():
    # max referenced lag index is t-1, min is t-n_lags: perturbing any value at
    # time >= t must leave the features of row (t, k) unchanged
    rng = np.random.default_rng(9)
    sensors = _grid_sensors(rng.uniform(size=(3, 2)))
    values = rng.normal(size=(8, 3))
    panel = TimeSeriesPanel(values, np.ones((8, 3), dtype=bool), sensors)
    neighbors = neighbor_sets(sensors, 3)
    n_lags = 3
    rows = build_features(panel, neighbors, n_lags)
    bumped = values.copy()
    target_t = 5
    bumped[target_t:] += 100.0
    bumped_rows = build_features(
        TimeSeriesPanel(bumped, np.ones((8, 3), dtype=bool), sensors), neighbors, n_lags
    )
    for before, after in zip(rows, bumped_rows):
        if before.t == target_t:
            assert np.array_equal(before.x, after.x)
    # and perturbing time t - n_lags - 1 must also leave row t unchanged
    older = values.copy()
    older[target_t - n_lags - 1] += 100.0
    older_rows = build_features(
        TimeSeriesPanel(older, np.ones((8, 3), dtype=bool), sensors), neighbors, n_lags
    )
    for before, after in zip(rows, older_rows):
        if before.t == target_t:
            assert np.array_equal(before.x, after.x)


def test_build_features_rejects_incomplete_panel():
    mask = np.ones((5, 2), dtype=bool)
    mask[2, 1] = False
    panel = TimeSeriesPanel(np.zeros((5, 2)), mask)
    with pytest.raises(ValueError, match="missing"):
        build_features(panel, {0: (0,), 1: (1,)}, 2)


def test_build_features_rejects_excessive_lag():
    panel = TimeSeriesPanel(np.zeros((4, 1)), np.ones((4, 1), dtype=bool))
    with pytest.raises(ValueError, match="lag depth"):
        build_features(panel, {0: (0,)}, 4)
