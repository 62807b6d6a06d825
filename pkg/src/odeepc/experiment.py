"""
Closed-loop experiments: online DeePC, the frozen-data gradient baseline,
trace serialisation and the FFT-versus-dense product benchmark.
"""

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _rng
from ._version import __version__
from .behavioral import BehavioralModel, ConstraintBox, advance_measurements
from .errors import DivergenceError, PersistenceError
from .hankel import (
    Signal,
    block_hankel_transpose_vec,
    block_hankel_vec,
    build_hankel,
    is_persistently_exciting,
)
from .convolution import ScalarHankel, hankel_vec, predicted_flop_cost
from .plant import (
    DriftSpec,
    ReferenceSchedule,
    drift,
    generate_random_system,
    reference_horizon,
    simulate,
    step,
)
from .solver import (
    Boxes,
    SaddleParams,
    SolverState,
    TrackingCost,
    _update,
    data_norm,
    default_step_size,
    shift_state,
)

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "Dataset",
    "RunTrace",
    "BenchRow",
    "bootstrap_dataset",
    "run_odeepc",
    "run_gradient_deepc",
    "run_controller",
    "emit_trace",
    "read_trace",
    "bench_products",
    "bench_scaling",
    "write_bench_csv",
    "loglog_slope",
    "window_summary",
    "DEFAULT_BENCH_SIZES",
]


@dataclass
class ExperimentConfig:
    """Every scalar needed to reproduce a run. Defaults are the full-scale setup (d=10, N_I=50, T_ini=20, N=120, kappa=1651)."""

    # plant
    n_states: int = 10
    m: int = 10
    p: int = 10
    drift_bound: float = 1e-4
    # data model
    t_ini: int = 20
    horizon: int = 120
    kappa: int = 1651
    excitation_amplitude: float = None
    pe_check: bool = True
    pe_retries: int = 10
    # solver
    n_inner: int = 50
    eps_g: float = 0.1
    eps_nu: float = None
    alpha: float = None
    # default alpha = alpha_safety * (per-block stability limit)
    alpha_safety: float = 0.5
    # re-derive alpha from the current data every this many control steps (0: never)
    alpha_refresh: int = 0
    q_weight: float = 1.0
    r_weight: float = 0.0
    input_bound: float = 1.0
    output_bound: float = math.inf
    kernel: str = "fft"
    # experiment
    total_steps: int = 2000
    reference_hold: int = 1000
    reference_low: float = 0.0
    reference_high: float = 0.1
    feedback: str = "measured"
    hankel_update: bool = True
    halt_threshold: float = 0.0
    seed_system: int = 0
    seed_drift: int = 0
    seed_reference: int = 0
    seed_excitation: int = 0

    def __post_init__(self):
        if self.feedback not in ("measured", "iterate"):
            raise ValueError(f"feedback must be 'measured' or 'iterate', got {self.feedback!r}")
        if self.kernel not in ("fft", "dense"):
            raise ValueError(f"kernel must be 'fft' or 'dense', got {self.kernel!r}")
        for name in ("n_states", "m", "p", "t_ini", "horizon", "kappa", "n_inner",
                     "reference_hold", "pe_retries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")
        if self.pe_check and self.kappa < self.m * self.t_tot:
            raise ValueError(
                f"kappa={self.kappa} < m*(T_ini+N)={self.m * self.t_tot}: "
                f"the input Hankel matrix cannot have full row rank")

    @property
    def t_tot(self):
        return self.t_ini + self.horizon

    @property
    def dataset_length(self):
        """Recorded samples ``T`` implied by ``kappa = T - T_tot + 1``."""
        return self.kappa + self.t_tot - 1

    @property
    def effective_eps_nu(self):
        return self.eps_g if self.eps_nu is None else self.eps_nu

    @property
    def effective_excitation(self):
        return self.input_bound if self.excitation_amplitude is None else self.excitation_amplitude

    @classmethod
    def table1(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def small(cls, **overrides):
        base = dict(n_states=2, m=1, p=1, t_ini=4, horizon=10, kappa=40, n_inner=500,
                    total_steps=150, reference_hold=50, drift_bound=1e-3, halt_threshold=1e-2,
                    kernel="dense", alpha_safety=0.8)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_seed(self, seed):
        return self.replace(seed_system=seed, seed_drift=seed, seed_reference=seed, seed_excitation=seed)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(eq=False)
class Dataset:
    """Recorded excitation experiment; ``plant`` is left at the final state."""

    plant: object
    inputs: Signal
    outputs: Signal
    report: object
    attempts: int = 1

    def manifest(self, cfg):
        r = self.report
        return {
            "T_ini": cfg.t_ini, "N": cfg.horizon, "kappa": cfg.kappa, "m": cfg.m, "p": cfg.p,
            "T": self.inputs.length,
            "persistence": {"order": cfg.t_tot, "exciting": bool(r.exciting), "rank": r.rank,
                            "rows": r.rows, "sigma_min": r.sigma_min, "sigma_max": r.sigma_max},
            "excitation_attempts": self.attempts,
            "config": cfg.to_dict(),
            "version": __version__,
        }


def bootstrap_dataset(cfg):
    """Generate the plant and record an i.i.d. uniform excitation experiment.

    Excitation draws that fail the rank test of order ``T_ini + N`` are
    redrawn (``pe_retries`` attempts) before :class:`PersistenceError`.
    """
    plant = generate_random_system(cfg.n_states, cfg.m, cfg.p, cfg.seed_system)
    amp = cfg.effective_excitation
    T = cfg.dataset_length
    report = None
    for attempt in range(cfg.pe_retries):
        rng = _rng.stream_rng(cfg.seed_excitation, _rng.EXCITATION, attempt)
        u = rng.uniform(-amp, amp, (T, cfg.m))
        report = is_persistently_exciting(u, cfg.t_tot)
        if report.exciting or not cfg.pe_check:
            break
    else:
        raise PersistenceError(
            f"excitation not persistently exciting of order {cfg.t_tot} after "
            f"{cfg.pe_retries} draws (rank {report.rank} < {report.rows})", report)
    y = simulate(plant, u)
    return Dataset(plant, Signal(u), Signal(y), report, attempt + 1)


@dataclass(eq=False)
class RunTrace:
    """Per-iteration record of a closed-loop run.

    Metrics are taken at the point each update was evaluated: ``cost`` is the
    tracking objective of the predicted outputs against the active reference
    and ``violation`` is ``||H g - h||_2`` for the active data model. ``u0``
    and ``y0`` are the input held on the plant and the latest measured
    output; ``block_ms`` is the wall time of the enclosing control interval.
    """

    m: int
    p: int
    tau: np.ndarray
    t: np.ndarray
    cost: np.ndarray
    violation: np.ndarray
    u0: np.ndarray
    y0: np.ndarray
    block_ms: np.ndarray
    status: str = "completed"
    message: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def allocate(cls, size, m, p):
        return cls(m, p, np.zeros(size, dtype=np.int64), np.zeros(size, dtype=np.int64),
                   np.zeros(size), np.zeros(size), np.zeros((size, m)), np.zeros((size, p)),
                   np.zeros(size))

    def __len__(self):
        return self.tau.size

    def truncated(self, size):
        return dataclasses.replace(
            self, tau=self.tau[:size], t=self.t[:size], cost=self.cost[:size],
            violation=self.violation[:size], u0=self.u0[:size], y0=self.y0[:size],
            block_ms=self.block_ms[:size], meta=dict(self.meta))

    def columns(self):
        return (["tau", "t", "cost", "violation"] + [f"u0_{k}" for k in range(self.m)]
                + [f"y0_{k}" for k in range(self.p)] + ["block_ms"])

    def equals(self, other, include_timing=False):
        same = (self.m == other.m and self.p == other.p and len(self) == len(other)
                and np.array_equal(self.tau, other.tau) and np.array_equal(self.t, other.t)
                and np.array_equal(self.cost, other.cost)
                and np.array_equal(self.violation, other.violation)
                and np.array_equal(self.u0, other.u0) and np.array_equal(self.y0, other.y0))
        if include_timing:
            same = same and np.array_equal(self.block_ms, other.block_ms)
        return same


def run_controller(cfg, hankel_update=True, dataset=None):
    """Algorithm loop shared by both controllers.

    Iterations with ``tau mod N_I != 0`` take a static step against the
    current data model. At ``tau mod N_I == 0`` the first predicted input is
    applied to the plant, the measured pair is shifted into the model (and
    into the Hankel windows if ``hankel_update``), the plant drifts, and one
    shifted online step is taken against the new model.

    Divergence and persistence failures end the run early; the partial trace
    is returned with ``status`` set accordingly.
    """
    if dataset is None:
        try:
            dataset = bootstrap_dataset(cfg)
        except PersistenceError as exc:
            trace = RunTrace.allocate(0, cfg.m, cfg.p)
            trace.status, trace.message = "persistence_failure", str(exc)
            return trace
    plant = dataset.plant.copy()
    try:
        model = BehavioralModel.from_data(dataset.inputs, dataset.outputs, cfg.t_ini, cfg.horizon,
                                          require_pe=cfg.pe_check, kernel=cfg.kernel)
    except PersistenceError as exc:
        trace = RunTrace.allocate(0, cfg.m, cfg.p)
        trace.status, trace.message = "persistence_failure", str(exc)
        return trace

    m, p, N, NI = cfg.m, cfg.p, cfg.horizon, cfg.n_inner
    schedule = ReferenceSchedule(p, cfg.reference_hold, (cfg.reference_low, cfg.reference_high),
                                 cfg.seed_reference)
    drift_spec = DriftSpec(cfg.drift_bound, cfg.seed_drift)
    cost = TrackingCost(reference_horizon(schedule, 0, N), cfg.q_weight, cfg.r_weight)
    sigma = None
    alpha = cfg.alpha
    probe = SaddleParams(1.0, cfg.eps_g, cfg.effective_eps_nu)
    if alpha is None:
        sigma = data_norm(model)
        alpha = default_step_size(model, cost, probe, cfg.alpha_safety, sigma)
    params = SaddleParams(alpha, cfg.eps_g, cfg.effective_eps_nu)
    refresh = cfg.alpha_refresh if (cfg.alpha is None and hankel_update) else 0
    alpha_min = alpha
    boxes = Boxes(ConstraintBox.symmetric(m * N, cfg.input_bound),
                  ConstraintBox.symmetric(p * N, cfg.output_bound))
    log.info("controller start: alpha=%.4g sigma_h=%s hankel_update=%s", alpha, sigma, hankel_update)

    total = cfg.total_steps * NI
    trace = RunTrace.allocate(total, m, p)
    trace.meta.update(alpha=alpha, sigma_h=sigma, hankel_update=hankel_update,
                      excitation_attempts=dataset.attempts, pe_sigma_min=dataset.report.sigma_min)
    state = SolverState.zeros(model)
    u_held = dataset.inputs.samples[-1].copy()
    y_meas = dataset.outputs.samples[-1].copy()
    t = 0
    halted_updates = 0
    block_start, block_first = time.perf_counter(), 0
    done = 0
    try:
        for tau in range(1, total + 1):
            if tau % NI:
                y_eval = state.y
                state, resid = _update(model, state.u, state.y, state.g, state.nu, cost, params, boxes)
            else:
                u_prev = u_held
                u_held = state.u[:m].copy()
                y_meas = step(plant, u_held)
                y_fb = y_meas if cfg.feedback == "measured" else state.y[:p]
                update = hankel_update
                if update and cfg.halt_threshold > 0 and np.max(np.abs(u_held - u_prev)) < cfg.halt_threshold:
                    update = False
                    halted_updates += 1
                model = advance_measurements(model, u_held, y_fb, update)
                plant = drift(plant, drift_spec, t)
                t += 1
                cost = TrackingCost(reference_horizon(schedule, t, N), cfg.q_weight, cfg.r_weight)
                if refresh and t % refresh == 0:
                    a = default_step_size(model, cost, probe, cfg.alpha_safety, data_norm(model, tol=1e-3))
                    params = SaddleParams(a, params.eps_g, params.eps_nu)
                    alpha_min = min(alpha_min, params.alpha)
                s = shift_state(model, state)
                y_eval = s.y
                state, resid = _update(model, s.u, s.y, s.g, s.nu, cost, params, boxes)
            i = tau - 1
            trace.tau[i] = tau
            trace.t[i] = t
            trace.cost[i] = float(np.sum((y_eval - cost.reference) ** 2))
            trace.violation[i] = np.linalg.norm(resid)
            trace.u0[i] = u_held
            trace.y0[i] = y_meas
            done = tau
            if tau % NI == 0:
                now = time.perf_counter()
                trace.block_ms[block_first:tau] = 1e3 * (now - block_start)
                block_start, block_first = now, tau
    except DivergenceError as exc:
        trace = trace.truncated(done)
        trace.status, trace.message = "diverged", str(exc)
        log.warning("run diverged at tau=%d: %s", done + 1, exc)
    else:
        now = time.perf_counter()
        trace.block_ms[block_first:done] = 1e3 * (now - block_start)
    trace.meta["halted_updates"] = halted_updates
    trace.meta["alpha_min"] = alpha_min
    trace.meta["final_t"] = t
    return trace


def run_odeepc(cfg, dataset=None):
    """Online DeePC: data windows slide with every control application."""
    return run_controller(cfg, hankel_update=cfg.hankel_update, dataset=dataset)


def run_gradient_deepc(cfg, dataset=None):
    """Baseline with the data matrices frozen at their recorded contents."""
    return run_controller(cfg, hankel_update=False, dataset=dataset)


def window_summary(trace, hold, n_inner, horizon=0):
    """Per reference window: cost at its first iteration, terminal cost and mean violation.

    The objective previews ``r_{t+k}`` over the horizon, so during the last
    ``horizon - 1`` steps of a window the cost already includes the next
    reference. The terminal cost is therefore read at the final iteration of
    step ``end - horizon``, the last step whose horizon lies inside the
    window. Only windows fully covered by the trace are reported.
    """
    if horizon >= hold:
        raise ValueError(f"horizon {horizon} must be shorter than the hold length {hold}")
    out = []
    per_window = hold * n_inner
    for w in range(len(trace) // per_window):
        start, stop = w * per_window, (w + 1) * per_window
        terminal = stop - max(horizon - 1, 0) * n_inner - 1
        out.append({"window": w, "cost_start": float(trace.cost[start]),
                    "cost_end": float(trace.cost[terminal]),
                    "violation_mean": float(np.mean(trace.violation[start:stop]))})
    return out


def emit_trace(trace, path, manifest=None):
    """Write the trace CSV and a JSON sidecar (``<path>.json``) manifest."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trace.columns())
        for i in range(len(trace)):
            writer.writerow([int(trace.tau[i]), int(trace.t[i]), repr(float(trace.cost[i])),
                             repr(float(trace.violation[i]))]
                            + [repr(float(v)) for v in trace.u0[i]]
                            + [repr(float(v)) for v in trace.y0[i]]
                            + [repr(float(trace.block_ms[i]))])
    doc = {"status": trace.status, "message": trace.message, "m": trace.m, "p": trace.p,
           "records": len(trace), "meta": trace.meta, "version": __version__}
    doc.update(manifest or {})
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def read_trace(path):
    """Parse a trace written by :func:`emit_trace` (sidecar optional)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    m = sum(h.startswith("u0_") for h in header)
    p = sum(h.startswith("y0_") for h in header)
    trace = RunTrace.allocate(len(rows), m, p)
    if rows:
        data = np.array(rows, dtype=float)
        trace.tau[:] = data[:, 0].astype(np.int64)
        trace.t[:] = data[:, 1].astype(np.int64)
        trace.cost[:] = data[:, 2]
        trace.violation[:] = data[:, 3]
        trace.u0[:] = data[:, 4:4 + m]
        trace.y0[:] = data[:, 4 + m:4 + m + p]
        trace.block_ms[:] = data[:, -1]
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        with open(sidecar) as fh:
            doc = json.load(fh)
        trace.status = doc.get("status", trace.status)
        trace.message = doc.get("message", "")
        trace.meta = doc.get("meta", {})
    return trace


class BenchRow(NamedTuple):
    d: int
    L: int
    kappa: int
    fast_ms: float
    dense_ms: float
    predicted_cost: float

    @property
    def speedup(self):
        return self.dense_ms / self.fast_ms


# (channels, depth, columns); the last entry is one of the two full-scale data matrices
DEFAULT_BENCH_SIZES = ((1, 64, 256), (4, 64, 512), (10, 70, 800), (10, 140, 1651))


def _median_ms(fn, trials, batch):
    fn()
    times = []
    for _ in range(trials):
        t0 = time.perf_counter()
        for _ in range(batch):
            fn()
        times.append((time.perf_counter() - t0) / batch)
    return 1e3 * float(np.median(times))


def bench_products(sizes=DEFAULT_BENCH_SIZES, trials=7, batch=10, seed=0):
    """Median wall time of one ``H v`` plus one ``H.T w`` product, fast vs dense.

    ``predicted_cost`` is ``d`` times the scalar-kernel operation count.
    """
    rows = []
    for d, L, kappa in sizes:
        rng = np.random.default_rng([seed, d, L, kappa])
        Hb = build_hankel(rng.uniform(-1, 1, (L + kappa - 1, d)), L)
        dense = Hb.to_dense()
        v = rng.standard_normal(kappa)
        w = rng.standard_normal(d * L)
        Hb.embedding, Hb.embedding_t  # spectra are built once per data window
        fast = _median_ms(lambda: (block_hankel_vec(Hb, v), block_hankel_transpose_vec(Hb, w)), trials, batch)
        slow = _median_ms(lambda: (dense @ v, dense.T @ w), trials, batch)
        rows.append(BenchRow(d, L, kappa, fast, slow, d * predicted_flop_cost(L, kappa)))
    return rows


def bench_scaling(lengths, trials=7, batch=20, dense_limit=2 ** 11, seed=0):
    """Square ``L x L`` scalar Hankel products: ``[(L, fast_ms, dense_ms)]``.

    Dense timings beyond ``dense_limit`` are reported as NaN.
    """
    out = []
    for L in lengths:
        rng = np.random.default_rng([seed, L])
        H = ScalarHankel(rng.standard_normal(2 * L - 1), L, L)
        v = rng.standard_normal(L)
        H.embedding()
        fast = _median_ms(lambda: hankel_vec(H, v), trials, batch)
        dense = math.nan
        if L <= dense_limit:
            D = H.to_dense()
            dense = _median_ms(lambda: D @ v, trials, batch)
        out.append((L, fast, dense))
    return out


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def write_bench_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["d", "L", "kappa", "fast_ms", "dense_ms", "predicted_cost"])
        for r in rows:
            writer.writerow([r.d, r.L, r.kappa, f"{r.fast_ms:.6f}", f"{r.dense_ms:.6f}", f"{r.predicted_cost:.1f}"])
