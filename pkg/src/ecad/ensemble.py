"""Bootstrap leave-one-out ensemble training and the initial anomaly score set.

Bootstrap sampling runs over time indices only: each model trains on every
sensor's rows at its in-bag times, so a single ensemble serves all sensors.
A time's training score is aggregated exclusively from models whose bag
excludes that time, which keeps the scores out-of-sample without any data
splitting.  Ensembles are immutable after construction.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backends import BackendSpec, fit, model_from_state
from .panel import FeatureRow

__all__ = [
    "AggregatorSpec",
    "aggregate",
    "BootstrapPlan",
    "bootstrap_indices",
    "train_ensemble",
    "Ensemble",
    "loo_predict",
    "save_ensemble",
    "load_ensemble",
    "ENSEMBLE_FORMAT_VERSION",
]

logger = logging.getLogger(__name__)

ENSEMBLE_FORMAT_VERSION = 1

AGGREGATOR_KINDS = ("mean", "median", "trimmed_mean")


@dataclass(frozen=True)
class AggregatorSpec:
    """Pointwise combiner of bootstrap predictions."""

    kind: str = "mean"
    trim_fraction: float = 0.1

    def validate(self) -> None:
        if self.kind not in AGGREGATOR_KINDS:
            raise ValueError(
                f"unknown aggregator {self.kind!r}; expected one of {AGGREGATOR_KINDS}"
            )
        if self.kind == "trimmed_mean" and not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError(f"trim_fraction must be in [0, 0.5), got {self.trim_fraction}")


def aggregate(values: np.ndarray, agg: AggregatorSpec) -> float:
    """Apply the aggregator to a vector of model predictions."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot aggregate an empty prediction set")
    if agg.kind == "mean":
        return float(np.mean(values))
    if agg.kind == "median":
        return float(np.median(values))
    cut = int(np.floor(agg.trim_fraction * values.size))
    if values.size - 2 * cut < 1:
        raise ValueError(
            f"trim_fraction {agg.trim_fraction} removes all {values.size} predictions"
        )
    trimmed = np.sort(values)[cut : values.size - cut]
    return float(np.mean(trimmed))


@dataclass
class BootstrapPlan:
    """B multisets of time indices drawn with replacement from the available times.

    ``in_bag[b]`` preserves draw order and duplicates; a duplicated time
    contributes its rows twice to that model's fit.
    """

    n_models: int
    available: np.ndarray
    in_bag: np.ndarray
    seed: int
    _membership: np.ndarray | None = field(default=None, repr=False)

    @property
    def membership(self) -> np.ndarray:
        """(n_models, n_available) boolean matrix: bag b contains available[i]."""
        if self._membership is None:
            member = np.zeros((self.n_models, self.available.size), dtype=bool)
            for b in range(self.n_models):
                pos = np.searchsorted(self.available, self.in_bag[b])
                member[b, pos] = True
            self._membership = member
        return self._membership

    def loo_models(self, t: int) -> np.ndarray:
        """Model ids whose bag excludes time t (the usable LOO set)."""
        pos = int(np.searchsorted(self.available, t))
        if pos >= self.available.size or self.available[pos] != t:
            raise ValueError(f"time index {t} is not in the available set")
        return np.flatnonzero(~self.membership[:, pos])


def bootstrap_indices(available: Iterable[int], n_models: int, seed: int) -> BootstrapPlan:
    """Draw B bootstrap multisets over the available time indices.

    Each multiset has exactly ``len(available)`` entries drawn i.i.d. uniformly
    with replacement; deterministic given the seed.
    """
    avail = np.unique(np.asarray(list(available), dtype=np.int64))
    if avail.size == 0:
        raise ValueError("available time index set is empty")
    if n_models < 1:
        raise ValueError(f"need at least one bootstrap model, got {n_models}")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, avail.size, size=(n_models, avail.size))
    return BootstrapPlan(n_models, avail, avail[draws], int(seed))


@dataclass
class Ensemble:
    """B fitted models plus the plan, aggregator, and initial training scores.

    ``score_times/score_sensors/score_values`` hold one aggregated score per
    (time, sensor) row whose LOO model set is nonempty, sorted by (time,
    sensor).  Times whose LOO set is empty are dropped and counted in
    ``dropped_empty_loo``.
    """

    plan: BootstrapPlan
    models: tuple
    aggregator: AggregatorSpec
    backend: BackendSpec
    n_sensors: int
    score_times: np.ndarray
    score_sensors: np.ndarray
    score_values: np.ndarray
    usable_times: np.ndarray
    usable_loo_mask: np.ndarray
    dropped_empty_loo: int

    @property
    def n_models(self) -> int:
        return self.plan.n_models

    def training_score_map(self) -> dict[tuple[int, int], float]:
        return {
            (int(t), int(k)): float(s)
            for t, k, s in zip(self.score_times, self.score_sensors, self.score_values)
        }

    def scores_for_sensor(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(times, scores) for sensor k, ascending by time."""
        sel = self.score_sensors == k
        return self.score_times[sel], self.score_values[sel]

    def predict_all_models(self, X: np.ndarray) -> np.ndarray:
        """(n_models, n_points) matrix of per-model predictions."""
        return np.stack([m.predict(X) for m in self.models])


def _rows_to_arrays(
    rows: Sequence[FeatureRow],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    times = np.array([r.t for r in rows], dtype=np.int64)
    sensors = np.array([r.k for r in rows], dtype=np.int64)
    X = np.stack([r.x for r in rows]).astype(np.float64)
    y = np.array([r.y for r in rows], dtype=np.float64)
    return times, sensors, X, y


def train_ensemble(
    rows: Sequence[FeatureRow],
    spec: BackendSpec,
    n_models: int,
    aggregator: AggregatorSpec = AggregatorSpec(),
    seed: int = 0,
) -> Ensemble:
    """Fit B bootstrap models over time indices and compute the LOO score set.

    Model b trains on all rows (every sensor) whose time index lies in its bag,
    honoring duplicates.  The training score of row (i, k) is
    |y_ik - aggregate(predictions at x_ik of the models excluding time i)|;
    rows whose LOO set is empty are dropped with a warning.
    """
    if not rows:
        raise ValueError("no feature rows to train on")
    spec.validate()
    aggregator.validate()
    times, sensors, X, y = _rows_to_arrays(rows)
    n_sensors = int(sensors.max()) + 1
    plan = bootstrap_indices(np.unique(times), n_models, seed)

    order = np.argsort(times, kind="stable")
    sorted_times = times[order]
    block_starts = np.searchsorted(sorted_times, plan.available, side="left")
    block_stops = np.searchsorted(sorted_times, plan.available, side="right")

    models = []
    for b in range(n_models):
        positions = np.searchsorted(plan.available, plan.in_bag[b])
        row_idx = np.concatenate(
            [order[block_starts[p] : block_stops[p]] for p in positions]
        )
        try:
            models.append(fit(spec, X[row_idx], y[row_idx]))
        except Exception as exc:
            raise RuntimeError(f"bootstrap model {b} failed to fit: {exc}") from exc

    predictions = np.stack([m.predict(X) for m in models])  # (B, n_rows)
    member = plan.membership
    time_pos = np.searchsorted(plan.available, times)
    loo_counts = (~member).sum(axis=0)

    usable = loo_counts > 0
    usable_times = plan.available[usable]
    usable_loo_mask = (~member[:, usable]).T  # (n_usable, B), True = model excludes time
    dropped = int(np.count_nonzero(~usable))
    if dropped:
        logger.warning(
            "dropped %d of %d time indices with empty leave-one-out model sets",
            dropped,
            plan.available.size,
        )

    row_usable = usable[time_pos]
    agg_pred = np.full(len(rows), np.nan)
    if aggregator.kind == "mean":
        loo = ~member[:, time_pos]  # (B, n_rows)
        sums = np.sum(np.where(loo, predictions, 0.0), axis=0)
        with np.errstate(invalid="ignore"):
            agg_pred = sums / loo_counts[time_pos]
    else:
        for p in np.flatnonzero(usable):
            cols = np.flatnonzero(time_pos == p)
            sub = predictions[~member[:, p]][:, cols]
            if aggregator.kind == "median":
                agg_pred[cols] = np.median(sub, axis=0)
            else:
                cut = int(np.floor(aggregator.trim_fraction * sub.shape[0]))
                if sub.shape[0] - 2 * cut < 1:
                    raise ValueError(
                        f"trim_fraction {aggregator.trim_fraction} removes all "
                        f"{sub.shape[0]} LOO predictions at time {plan.available[p]}"
                    )
                agg_pred[cols] = np.mean(
                    np.sort(sub, axis=0)[cut : sub.shape[0] - cut], axis=0
                )

    scores = np.abs(y - agg_pred)
    keep = np.flatnonzero(row_usable)
    keep = keep[np.lexsort((sensors[keep], times[keep]))]

    return Ensemble(
        plan=plan,
        models=tuple(models),
        aggregator=aggregator,
        backend=spec,
        n_sensors=n_sensors,
        score_times=times[keep],
        score_sensors=sensors[keep],
        score_values=scores[keep],
        usable_times=usable_times,
        usable_loo_mask=usable_loo_mask,
        dropped_empty_loo=dropped,
    )


def loo_predict(ensemble: Ensemble, t: int, x: np.ndarray) -> float:
    """Aggregate the predictions at x of exactly the models whose bag excludes t."""
    model_ids = ensemble.plan.loo_models(t)
    if model_ids.size == 0:
        raise ValueError(f"time index {t} has an empty leave-one-out model set")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    preds = np.array([ensemble.models[b].predict(x)[0] for b in model_ids])
    return aggregate(preds, ensemble.aggregator)


def save_ensemble(ensemble: Ensemble, path: str | Path) -> None:
    """Serialize the ensemble to a versioned .npz artifact."""
    meta = {
        "format_version": ENSEMBLE_FORMAT_VERSION,
        "backend": asdict(ensemble.backend),
        "aggregator": asdict(ensemble.aggregator),
        "n_models": ensemble.n_models,
        "n_sensors": ensemble.n_sensors,
        "seed": ensemble.plan.seed,
        "dropped_empty_loo": ensemble.dropped_empty_loo,
    }
    arrays: dict[str, np.ndarray] = {
        "meta": np.array(json.dumps(meta, sort_keys=True)),
        "available": ensemble.plan.available,
        "in_bag": ensemble.plan.in_bag,
        "score_times": ensemble.score_times,
        "score_sensors": ensemble.score_sensors,
        "score_values": ensemble.score_values,
    }
    for b, model in enumerate(ensemble.models):
        for key, value in model.state_arrays().items():
            arrays[f"model{b}_{key}"] = value
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    Path(path).write_bytes(buffer.getvalue())


def load_ensemble(path: str | Path) -> Ensemble:
    """Load a serialized ensemble, refusing mismatched format versions."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        version = meta.get("format_version")
        if version != ENSEMBLE_FORMAT_VERSION:
            raise ValueError(
                f"ensemble artifact format version {version} is not supported "
                f"(expected {ENSEMBLE_FORMAT_VERSION})"
            )
        backend_fields = dict(meta["backend"])
        backend_fields["mlp_hidden"] = tuple(backend_fields["mlp_hidden"])
        backend = BackendSpec(**backend_fields)
        aggregator = AggregatorSpec(**meta["aggregator"])
        n_models = int(meta["n_models"])
        plan = BootstrapPlan(
            n_models=n_models,
            available=data["available"],
            in_bag=data["in_bag"],
            seed=int(meta["seed"]),
        )
        models = []
        for b in range(n_models):
            prefix = f"model{b}_"
            state = {
                key[len(prefix) :]: data[key] for key in data.files if key.startswith(prefix)
            }
            models.append(model_from_state(backend, state))
        member = plan.membership
        loo_counts = (~member).sum(axis=0)
        usable = loo_counts > 0
        return Ensemble(
            plan=plan,
            models=tuple(models),
            aggregator=aggregator,
            backend=backend,
            n_sensors=int(meta["n_sensors"]),
            score_times=data["score_times"],
            score_sensors=data["score_sensors"],
            score_values=data["score_values"],
            usable_times=plan.available[usable],
            usable_loo_mask=(~member[:, usable]).T,
            dropped_empty_loo=int(meta["dropped_empty_loo"]),
        )
