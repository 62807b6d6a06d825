"""
Data-driven trajectory model ``H g = h``.

``H`` stacks the input and output block Hankel matrices of depth
``T_tot = T_ini + N``; viewed by row blocks it is ``[U_p; U_f; Y_p; Y_f]``.
The right-hand side ``h = [u_ini; u; y_ini; y]`` pairs the most recent
measured trajectory (length ``T_ini``) with the ``N``-step prediction.
"""

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .convolution import CirculantEmbedding, transform_length
from .errors import DimensionError, PersistenceError
from .hankel import (
    ShiftSpec,
    Signal,
    build_hankel,
    is_persistently_exciting,
    read_signal_csv,
    shift_up,
    slide_window,
    write_signal_csv,
)

__all__ = [
    "ConstraintBox",
    "BehavioralModel",
    "apply_H",
    "apply_H_transpose",
    "assemble_rhs",
    "advance_measurements",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True, eq=False)
class ConstraintBox:
    """Entrywise bounds ``lower <= v <= upper``; infinite bounds allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError(f"box bounds must be matching vectors, got {lo.shape} and {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, size, bound):
        b = np.full(size, float(bound))
        return cls(-b, b)

    @classmethod
    def unbounded(cls, size):
        return cls.symmetric(size, np.inf)

    @property
    def size(self):
        return self.lower.size

    def project(self, v):
        return np.clip(v, self.lower, self.upper)

    def contains(self, v):
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))


@dataclass(frozen=True, eq=False)
class BehavioralModel:
    """Hankel data matrices plus the measured initial trajectory.

    ``kernel`` selects FFT products (``"fft"``) or products with the
    materialised matrices (``"dense"``); both give the same numbers.
    """

    u_hankel: object
    y_hankel: object
    t_ini: int
    horizon: int
    u_ini: np.ndarray
    y_ini: np.ndarray
    kernel: str = "fft"
    pe_report: object = field(default=None, compare=False)

    def __post_init__(self):
        T_tot = self.t_ini + self.horizon
        if self.t_ini < 1 or self.horizon < 1:
            raise DimensionError(f"T_ini and N must be positive, got {self.t_ini}, {self.horizon}")
        for name, hk in (("input", self.u_hankel), ("output", self.y_hankel)):
            if hk.depth != T_tot:
                raise DimensionError(f"{name} Hankel depth {hk.depth} != T_ini + N = {T_tot}")
        if self.u_hankel.cols != self.y_hankel.cols:
            raise DimensionError("input and output Hankel matrices must have the same number of columns")
        u_ini = np.asarray(self.u_ini, dtype=float).ravel()
        y_ini = np.asarray(self.y_ini, dtype=float).ravel()
        if u_ini.size != self.m * self.t_ini or y_ini.size != self.p * self.t_ini:
            raise DimensionError("initial trajectory length does not match T_ini and channel counts")
        if self.kernel not in ("fft", "dense"):
            raise ValueError(f"kernel must be 'fft' or 'dense', got {self.kernel!r}")
        object.__setattr__(self, "u_ini", u_ini)
        object.__setattr__(self, "y_ini", y_ini)

    @classmethod
    def from_data(cls, inputs, outputs, t_ini, horizon, *, u_ini=None, y_ini=None,
                  require_pe=True, kernel="fft", pad=True):
        """Build the model from recorded input/output signals.

        The input signal is tested for persistency of excitation of order
        ``t_ini + horizon``; the report is kept on the model and a failing
        test raises :class:`PersistenceError` when ``require_pe`` is set.
        The initial trajectory defaults to the last ``t_ini`` samples.
        """
        inputs = inputs if isinstance(inputs, Signal) else Signal(inputs)
        outputs = outputs if isinstance(outputs, Signal) else Signal(outputs)
        if inputs.length != outputs.length:
            raise DimensionError("input and output records differ in length")
        T_tot = t_ini + horizon
        report = is_persistently_exciting(inputs, T_tot)
        if require_pe and not report.exciting:
            raise PersistenceError(
                f"input data not persistently exciting of order {T_tot}: "
                f"rank {report.rank} < {report.rows}", report)
        if u_ini is None:
            u_ini = inputs.samples[-t_ini:]
        if y_ini is None:
            y_ini = outputs.samples[-t_ini:]
        return cls(build_hankel(inputs, T_tot, pad), build_hankel(outputs, T_tot, pad),
                   t_ini, horizon, u_ini, y_ini, kernel, report)

    @cached_property
    def m(self):
        return self.u_hankel.channels

    @cached_property
    def p(self):
        return self.y_hankel.channels

    @cached_property
    def t_tot(self):
        return self.t_ini + self.horizon

    @cached_property
    def kappa(self):
        return self.u_hankel.cols

    @cached_property
    def n_dual(self):
        return (self.m + self.p) * self.t_tot

    @cached_property
    def u_future(self):
        """Rows of ``H`` (and ``h``, ``nu``) holding the predicted inputs."""
        return slice(self.m * self.t_ini, self.m * self.t_tot)

    @cached_property
    def y_future(self):
        """Rows of ``H`` (and ``h``, ``nu``) holding the predicted outputs."""
        off = self.m * self.t_tot
        return slice(off + self.p * self.t_ini, off + self.p * self.t_tot)

    @cached_property
    def _joint(self):
        # U and Y share depth and column count, so their channels batch into
        # one embedding: two transforms per product instead of four
        U, Y = self.u_hankel, self.y_hankel
        seq = np.hstack([U.window, Y.window])
        fwd = CirculantEmbedding(seq, U.depth, U.cols, transform_length(U.depth, U.cols, U.pad))
        bwd = CirculantEmbedding(seq, U.cols, U.depth, transform_length(U.cols, U.depth, U.pad))
        return fwd, bwd

    @cached_property
    def _dense(self):
        return self.u_hankel.to_dense(), self.y_hankel.to_dense()

    def to_dense(self):
        """Materialised ``[U; Y]`` (test oracles and diagnostics only)."""
        U, Y = self._dense
        return np.vstack([U, Y])


def apply_H(model, g):
    """``[U; Y] @ g`` ordered as ``[U_p; U_f; Y_p; Y_f]``."""
    g = np.asarray(g, dtype=float)
    if g.shape != (model.kappa,):
        raise DimensionError(f"g has shape {g.shape}, model has {model.kappa} columns")
    if model.kernel == "dense":
        U, Y = model._dense
        return np.concatenate([U @ g, Y @ g])
    out = model._joint[0].multiply(g)
    return np.concatenate([out[:, :model.m].ravel(), out[:, model.m:].ravel()])


def apply_H_transpose(model, nu):
    """``U.T @ nu_u + Y.T @ nu_y``."""
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (model.n_dual,):
        raise DimensionError(f"nu has shape {nu.shape}, model needs {model.n_dual}")
    k = model.m * model.t_tot
    if model.kernel == "dense":
        U, Y = model._dense
        return U.T @ nu[:k] + Y.T @ nu[k:]
    w = np.hstack([nu[:k].reshape(model.t_tot, model.m), nu[k:].reshape(model.t_tot, model.p)])
    return model._joint[1].multiply_summed(w)


def assemble_rhs(model, u, y):
    """Right-hand side ``h = [u_ini; u; y_ini; y]``."""
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.size != model.m * model.horizon or y.size != model.p * model.horizon:
        raise DimensionError(
            f"prediction lengths ({u.size}, {y.size}) do not match "
            f"({model.m * model.horizon}, {model.p * model.horizon})")
    return np.concatenate([model.u_ini, u, model.y_ini, y])


def advance_measurements(model, u_new, y_new, update_hankel=True):
    """Shift in the newest measured pair; optionally slide the data windows.

    ``u_ini`` and ``y_ini`` drop their oldest block and append the new
    sample. With ``update_hankel`` both Hankel windows slide by one sample as
    well; otherwise the data matrices are returned untouched.
    """
    u_new = np.asarray(u_new, dtype=float).ravel()
    y_new = np.asarray(y_new, dtype=float).ravel()
    if u_new.size != model.m or y_new.size != model.p:
        raise DimensionError(f"new sample sizes ({u_new.size}, {y_new.size}) != (m, p) = ({model.m}, {model.p})")
    u_ini = shift_up(ShiftSpec(model.t_ini, model.m), model.u_ini)
    u_ini[-model.m:] = u_new
    y_ini = shift_up(ShiftSpec(model.t_ini, model.p), model.y_ini)
    y_ini[-model.p:] = y_new
    if not update_hankel:
        return replace(model, u_ini=u_ini, y_ini=y_ini)
    return replace(model, u_ini=u_ini, y_ini=y_ini,
                   u_hankel=slide_window(model.u_hankel, u_new),
                   y_hankel=slide_window(model.y_hankel, y_new))


def save_dataset(directory, inputs, outputs, manifest):
    """Write ``inputs.csv``, ``outputs.csv`` and ``dataset.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_signal_csv(directory / "inputs.csv", inputs)
    write_signal_csv(directory / "outputs.csv", outputs)
    with open(directory / "dataset.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory):
    """Inverse of :func:`save_dataset`: ``(inputs, outputs, manifest)``."""
    directory = Path(directory)
    inputs = read_signal_csv(directory / "inputs.csv")
    outputs = read_signal_csv(directory / "outputs.csv")
    with open(directory / "dataset.json") as fh:
        manifest = json.load(fh)
    return inputs, outputs, manifest
