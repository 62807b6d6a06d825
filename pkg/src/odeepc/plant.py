"""
Discrete-time state-space plants.

``x_{t+1} = A_t x_t + B_t u_t``, ``y_t = C x_t + D u_t``, with optional
multiplicative random-walk drift on ``A_t`` and ``B_t`` and a piecewise
constant random reference.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _rng
from .errors import DimensionError, DivergenceError, GenerationError

__all__ = [
    "PlantModel",
    "DriftSpec",
    "ReferenceSchedule",
    "step",
    "simulate",
    "generate_random_system",
    "drift",
    "reference_at",
    "reference_horizon",
    "save_plant",
    "load_plant",
]


@dataclass(eq=False)
class PlantModel:
    """State-space matrices and the current state (mutated by :func:`step`)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x: np.ndarray = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        n = self.A.shape[0]
        self.x = np.zeros(n) if self.x is None else np.asarray(self.x, dtype=float).copy()
        m, p = self.B.shape[1], self.C.shape[0]
        if (self.A.shape != (n, n) or self.B.shape != (n, m) or self.C.shape != (p, n)
                or self.D.shape != (p, m) or self.x.shape != (n,)):
            raise DimensionError(
                f"non-conforming plant: A{self.A.shape} B{self.B.shape} C{self.C.shape} "
                f"D{self.D.shape} x{self.x.shape}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def copy(self):
        return PlantModel(self.A.copy(), self.B.copy(), self.C.copy(), self.D.copy(), self.x.copy())


@dataclass(frozen=True)
class DriftSpec:
    """Per step, every entry of ``A`` and ``B`` is scaled by ``1 + f``
    with fresh ``f ~ U[-bound, bound]``."""

    per_step_fraction_bound: float = 1e-4
    rng_seed: int = 0


@dataclass
class ReferenceSchedule:
    """Reference drawn from ``U[low, high]^p`` once per ``hold`` time steps."""

    channels: int
    hold_iterations: int = 1000
    value_range: tuple = (0.0, 0.1)
    rng_seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.hold_iterations < 1:
            raise ValueError("reference hold length must be positive")


def step(plant, u):
    """Return ``y_t = C x_t + D u_t`` and advance ``x`` to ``A x_t + B u_t``."""
    u = np.asarray(u, dtype=float).ravel()
    if u.shape != (plant.m,):
        raise DimensionError(f"input has {u.size} entries, plant expects {plant.m}")
    with np.errstate(over="ignore", invalid="ignore"):
        y = plant.C @ plant.x + plant.D @ u
        x = plant.A @ plant.x + plant.B @ u
    if not np.all(np.isfinite(x)):
        raise DivergenceError("plant state became non-finite")
    plant.x = x
    return y


def simulate(plant, inputs):
    """Run ``step`` over the rows of ``inputs``; returns the ``(T, p)`` outputs."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    return np.array([step(plant, u) for u in inputs]).reshape(len(inputs), plant.p)


def _rank(M):
    return np.linalg.matrix_rank(M)


def _controllable(A, B):
    n = A.shape[0]
    blocks, AkB = [], B
    for _ in range(n):
        blocks.append(AkB)
        AkB = A @ AkB
    return _rank(np.hstack(blocks)) == n


def generate_random_system(n, m, p, seed, max_tries=10):
    """Random plant with unit spectral norm ``A``, ``B``, ``C`` and ``D = 0``.

    Entries are drawn from ``U[-1, 1]`` and each matrix is divided by its
    spectral norm. Draws that are not both controllable and observable are
    rejected; after ``max_tries`` rejections :class:`GenerationError` is
    raised.
    """
    if min(n, m, p) < 1:
        raise ValueError(f"plant dimensions must be positive, got n={n}, m={m}, p={p}")
    for attempt in range(max_tries):
        rng = _rng.stream_rng(seed, _rng.SYSTEM, attempt)
        A, B, C = (rng.uniform(-1.0, 1.0, shape) for shape in ((n, n), (n, m), (p, n)))
        norms = [np.linalg.norm(M, 2) for M in (A, B, C)]
        if min(norms) == 0:
            continue
        A, B, C = A / norms[0], B / norms[1], C / norms[2]
        if _controllable(A, B) and _controllable(A.T, C.T):
            return PlantModel(A, B, C, np.zeros((p, m)))
    raise GenerationError(f"no controllable and observable system after {max_tries} draws (seed {seed})")


def drift(plant, spec, index):
    """Plant after the ``index``-th drift step; ``C``, ``D`` and ``x`` carry over."""
    b = spec.per_step_fraction_bound
    if b == 0:
        return plant.copy()
    rng = _rng.stream_rng(spec.rng_seed, _rng.DRIFT, index)
    fa = rng.uniform(-b, b, plant.A.shape)
    fb = rng.uniform(-b, b, plant.B.shape)
    return replace(plant, A=plant.A * (1.0 + fa), B=plant.B * (1.0 + fb),
                   C=plant.C.copy(), D=plant.D.copy(), x=plant.x.copy())


def reference_at(schedule, t):
    """Reference for time step ``t >= 0``; constant within each hold window."""
    if t < 0:
        raise ValueError(f"time index must be nonnegative, got {t}")
    window = t // schedule.hold_iterations
    r = schedule._cache.get(window)
    if r is None:
        lo, hi = schedule.value_range
        r = _rng.stream_rng(schedule.rng_seed, _rng.REFERENCE, window).uniform(lo, hi, schedule.channels)
        schedule._cache[window] = r
    return r.copy()


def reference_horizon(schedule, t, horizon):
    """Stacked ``(r_t, ..., r_{t+horizon-1})``."""
    return np.concatenate([reference_at(schedule, t + k) for k in range(horizon)])


def _matrix_record(M):
    return {"shape": list(M.shape), "data": [float(v) for v in M.ravel()]}


def _matrix_from(record):
    return np.array(record["data"], dtype=float).reshape(record["shape"])


def save_plant(path, plant, lineage=None):
    """JSON snapshot: dimensions, row-major matrices, state and seed lineage."""
    doc = {
        "n": plant.n, "m": plant.m, "p": plant.p,
        "A": _matrix_record(plant.A), "B": _matrix_record(plant.B),
        "C": _matrix_record(plant.C), "D": _matrix_record(plant.D),
        "x": [float(v) for v in plant.x],
        "lineage": dict(lineage or {}),
    }
    with open(Path(path), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_plant(path):
    """Returns ``(plant, lineage)``."""
    with open(Path(path)) as fh:
        doc = json.load(fh)
    plant = PlantModel(_matrix_from(doc["A"]), _matrix_from(doc["B"]), _matrix_from(doc["C"]),
                       _matrix_from(doc["D"]), np.array(doc["x"], dtype=float))
    if (plant.n, plant.m, plant.p) != (doc["n"], doc["m"], doc["p"]):
        raise DimensionError(f"{path}: recorded dimensions disagree with matrices")
    return plant, doc.get("lineage", {})
