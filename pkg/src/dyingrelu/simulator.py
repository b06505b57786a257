"""Monte Carlo simulation of a single adaptive ReLU unit.

Two update rules are supported, both on the augmented weights
``w_bar = [b, w]`` with linear output ``y = w^T x + b``:

``original``
    backprop through ``f(y) = max(0, y)``: update only when ``y > 0``.
``analysis``
    LMS with data-dependent step ``eta * u(d)``: update only when ``d > 0``.

Every run draws from its own substream, derived from ``(master_seed, run)``,
so a run's data never depends on the run count or on how runs are split
across worker processes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .model import SamplePair, SignalModel, optimal_weights

__all__ = [
    "VARIANTS",
    "UnitState",
    "SimulationConfig",
    "TrajectoryRecord",
    "step_original",
    "step_analysis",
    "run_rng",
    "initial_weights",
    "run_monte_carlo",
    "time_to_threshold",
]

VARIANTS = ("original", "analysis")
_CHUNK = 1000


@dataclass(frozen=True, eq=False)
class UnitState:
    w_bar: np.ndarray

    @property
    def bias(self) -> float:
        return float(self.w_bar[0])

    @property
    def weights(self) -> np.ndarray:
        return self.w_bar[1:]


def _augment(x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[:-1] + (x.shape[-1] + 1,))
    out[..., 0] = 1.0
    out[..., 1:] = x
    return out


def _gated_update(W: np.ndarray, Xb: np.ndarray, d: np.ndarray, eta: float, variant: str):
    """One in-place update of every row of ``W``; returns the open-gate mask.

    A gate exactly at zero is closed.
    """
    y = (W * Xb).sum(axis=1)
    gate = (d > 0.0) if variant == "analysis" else (y > 0.0)
    g = np.where(gate, eta * (d - y), 0.0)
    W += g[:, None] * Xb
    return gate


def _step(state: UnitState, sample: SamplePair, eta: float, variant: str) -> UnitState:
    w = np.asarray(state.w_bar, dtype=float)
    x = np.asarray(sample.x, dtype=float)
    if w.size != x.size + 1:
        raise ValueError(f"state has {w.size} entries but sample has L={x.size}")
    W = w.reshape(1, -1).copy()
    _gated_update(W, _augment(x.reshape(1, -1)), np.array([sample.d]), eta, variant)
    return UnitState(W[0])


def step_original(state: UnitState, sample: SamplePair, eta: float) -> UnitState:
    """Backprop step through the ReLU: moves only when ``y = w^T x + b > 0``."""
    return _step(state, sample, eta, "original")


def step_analysis(state: UnitState, sample: SamplePair, eta: float) -> UnitState:
    """LMS step with step size ``eta * u(d)``: moves only when ``d > 0``."""
    return _step(state, sample, eta, "analysis")


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    model: SignalModel
    variant: str = "analysis"
    eta: float = 0.01
    iters: int = 10000
    runs: int = 200
    init_std: float = 0.1
    master_seed: int = 0
    record_stride: int = 1
    # shifts the mean of the initial weights away from w_star
    init_offset: tuple | None = None

    def __post_init__(self):
        if self.init_offset is not None:
            off = tuple(float(v) for v in self.init_offset)
            if len(off) != self.model.L + 1:
                raise ValueError(f"init_offset needs {self.model.L + 1} entries, got {len(off)}")
            object.__setattr__(self, "init_offset", off)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.eta >= 0.0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be finite and >= 0, got {self.eta}")
        if self.iters < 1 or self.runs < 1 or self.record_stride < 1:
            raise ValueError("iters, runs and record_stride must all be >= 1")
        if self.init_std < 0.0:
            raise ValueError("init_std must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "variant": self.variant,
            "eta": self.eta,
            "iters": self.iters,
            "runs": self.runs,
            "init_std": self.init_std,
            "master_seed": self.master_seed,
            "record_stride": self.record_stride,
            "init_offset": None if self.init_offset is None else list(self.init_offset),
        }

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "SimulationConfig":
        rest = {k: v for k, v in record.items() if k != "model"}
        return cls(model=SignalModel.from_dict(record["model"]), **rest)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(eq=False)
class TrajectoryRecord:
    config: SimulationConfig
    iterations: np.ndarray
    avg_sq_error_norm: np.ndarray
    runs: int
    variant: str
    update_fraction: float
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def config_digest(self) -> str:
        return self.config.digest()

    def sidecar(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "config_digest": self.config_digest,
            "variant": self.variant,
            "runs": self.runs,
            "points": int(self.iterations.size),
            "update_fraction": self.update_fraction,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "avg_sq_error_norm"])
            for k, v in zip(self.iterations, self.avg_sq_error_norm):
                writer.writerow([int(k), repr(float(v))])

    def save(self, csv_path) -> str:
        """Write the CSV and a ``.json`` sidecar next to it; returns the sidecar path."""
        self.write_csv(csv_path)
        json_path = os.path.splitext(str(csv_path))[0] + ".json"
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2)
        return json_path


def run_rng(master_seed: int, run: int) -> np.random.Generator:
    """Independent stream for one run; depends only on ``(master_seed, run)``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(run,)))


def _initial(config: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    # first draw of every run stream is the initial weight error
    e = rng.standard_normal(config.model.L + 1)
    w = optimal_weights(config.model) + config.init_std * e
    if config.init_offset is not None:
        w += np.asarray(config.init_offset)
    return w


def initial_weights(config: SimulationConfig) -> np.ndarray:
    """Initial augmented weights of every run, exactly as :func:`run_monte_carlo` draws them."""
    return np.array([_initial(config, run_rng(config.master_seed, i)) for i in range(config.runs)])


def _simulate_runs(config: SimulationConfig, run_ids: Sequence[int], snapshot_iters: Sequence[int]):
    model = config.model
    L = model.L
    n = len(run_ids)
    w_star = optimal_weights(model)
    rngs = [run_rng(config.master_seed, i) for i in run_ids]
    W = np.array([_initial(config, g) for g in rngs]).reshape(n, L + 1)

    recorded = np.arange(0, config.iters, config.record_stride)
    per_run = np.empty((recorded.size, n))
    opened = np.zeros(n, dtype=np.int64)
    wanted = set(int(k) for k in snapshot_iters)
    snaps: dict[int, np.ndarray] = {}

    j = 0
    Xb = np.empty((_CHUNK, n, L + 1))
    Xb[..., 0] = 1.0
    for start in range(0, config.iters, _CHUNK):
        m = min(_CHUNK, config.iters - start)
        for r, g in enumerate(rngs):
            x = g.standard_normal((m, L))
            x += model.mu
            Xb[:m, r, 1:] = x
        D = model.a * Xb[:m, :, -1] + model.c
        for t in range(m):
            k = start + t
            if k in wanted:
                snaps[k] = W.copy()
            if k % config.record_stride == 0:
                e = W - w_star
                per_run[j] = (e * e).sum(axis=1)
                j += 1
            opened += _gated_update(W, Xb[t], D[t], config.eta, config.variant)
    if config.iters in wanted:
        snaps[config.iters] = W.copy()
    return per_run, opened, snaps


def _split(runs: int, parts: int) -> list[list[int]]:
    bounds = np.linspace(0, runs, parts + 1).astype(int)
    return [list(range(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def run_monte_carlo(
    config: SimulationConfig,
    workers: int = 1,
    snapshot_iters: Iterable[int] = (),
) -> TrajectoryRecord:
    """Average ``||w_k - w_star||^2`` over independent runs.

    Points are recorded before update ``k`` for ``k = 0, stride, ...`` below
    ``config.iters``.  ``snapshot_iters`` selects iterations (0..iters) at which
    the per-run weights are kept, stacked in run order.  With ``workers > 1``
    runs are split across processes; the result is identical to the serial one
    because each run is computed independently and the average is an exactly
    rounded sum.
    """
    snapshot_iters = tuple(snapshot_iters)
    if workers <= 1 or config.runs == 1:
        parts = [_simulate_runs(config, range(config.runs), snapshot_iters)]
    else:
        groups = _split(config.runs, min(workers, config.runs))
        with ProcessPoolExecutor(max_workers=len(groups)) as pool:
            futures = [pool.submit(_simulate_runs, config, g, snapshot_iters) for g in groups]
            parts = [f.result() for f in futures]

    per_run = np.concatenate([p[0] for p in parts], axis=1)
    opened = np.concatenate([p[1] for p in parts])
    snaps = {k: np.concatenate([p[2][k] for p in parts]) for k in parts[0][2]}

    avg = np.array([math.fsum(row) / config.runs for row in per_run])
    return TrajectoryRecord(
        config=config,
        iterations=np.arange(0, config.iters, config.record_stride),
        avg_sq_error_norm=avg,
        runs=config.runs,
        variant=config.variant,
        update_fraction=math.fsum(opened) / (config.runs * config.iters),
        snapshots=snaps,
    )


def time_to_threshold(record, fraction: float):
    """First recorded iteration whose error is at most ``fraction`` times the initial one.

    ``record`` may be a :class:`TrajectoryRecord`, a theory trajectory with
    ``iterations``/``error_norm_sq``, or a plain sequence (positions are then
    the iteration indices).  Returns ``None`` when the threshold is never met.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if hasattr(record, "avg_sq_error_norm"):
        series, iters = record.avg_sq_error_norm, record.iterations
    elif hasattr(record, "error_norm_sq"):
        series, iters = record.error_norm_sq, record.iterations
    else:
        series = record
        iters = None
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty trajectory")
    hits = np.flatnonzero(series <= fraction * series[0])
    if hits.size == 0:
        return None
    i = int(hits[0])
    return i if iters is None else int(iters[i])
