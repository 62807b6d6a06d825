"""
Block Hankel matrices over vector-valued signals.

A depth-``L`` block Hankel matrix over samples ``w_1 .. w_T`` (each in
``R^d``) has ``block(i, j) = w_{i+j-1}`` and is stored only as its generating
window. Row ``i * d + k`` of the materialised matrix holds channel ``k`` of
block row ``i``, so products interleave channels fastest.
"""

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .convolution import CirculantEmbedding, transform_length
from .errors import DimensionError

__all__ = [
    "Signal",
    "BlockHankelView",
    "ShiftSpec",
    "PersistenceReport",
    "build_hankel",
    "block_hankel_vec",
    "block_hankel_transpose_vec",
    "is_persistently_exciting",
    "shift_up",
    "slide_window",
    "read_signal_csv",
    "write_signal_csv",
]


@dataclass(frozen=True, eq=False)
class Signal:
    """``T`` samples of a ``d``-channel signal, stored as a ``(T, d)`` array."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise DimensionError(f"signal needs shape (T, d) with T, d >= 1, got {s.shape}")
        object.__setattr__(self, "samples", s)

    @property
    def length(self):
        return self.samples.shape[0]

    @property
    def channels(self):
        return self.samples.shape[1]

    def stacked(self):
        """The signal as one vector ``(w_1^T, ..., w_T^T)^T``."""
        return self.samples.ravel()

    def __len__(self):
        return self.length


class _SampleBuffer:
    """Append-only sample storage shared by successive window views.

    Rows below ``length`` are never rewritten, so every view into the buffer
    stays valid after later appends. Single writer only.
    """

    __slots__ = ("data", "length")

    def __init__(self, data, length):
        self.data = data
        self.length = length

    @property
    def capacity(self):
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class BlockHankelView:
    """Depth-``depth`` block Hankel matrix with ``cols`` columns.

    The generating window is ``buffer.data[start : start + depth + cols - 1]``.
    Views are immutable; :func:`slide_window` returns a new one.
    """

    buffer: _SampleBuffer
    start: int
    depth: int
    cols: int
    pad: bool = True

    @property
    def channels(self):
        return self.buffer.data.shape[1]

    @property
    def window_length(self):
        return self.depth + self.cols - 1

    @property
    def shape(self):
        return (self.channels * self.depth, self.cols)

    @cached_property
    def window(self):
        w = self.buffer.data[self.start:self.start + self.window_length]
        w = w.view()
        w.flags.writeable = False
        return w

    @cached_property
    def embedding(self):
        size = transform_length(self.depth, self.cols, self.pad)
        return CirculantEmbedding(self.window, self.depth, self.cols, size)

    @cached_property
    def embedding_t(self):
        size = transform_length(self.cols, self.depth, self.pad)
        return CirculantEmbedding(self.window, self.cols, self.depth, size)

    def to_dense(self):
        # (cols, d, depth) -> (cols, depth, d) -> one column per window start
        win = sliding_window_view(self.window, self.depth, axis=0)
        return np.ascontiguousarray(win.transpose(0, 2, 1).reshape(self.cols, -1).T)

    def signal(self):
        return Signal(np.array(self.window))


@dataclass(frozen=True)
class ShiftSpec:
    """Block up-shift ``S_{m,n} = [[0, I_{m-1}], [0, 0]] (x) I_n``."""

    blocks: int
    blocksize: int

    @property
    def size(self):
        return self.blocks * self.blocksize


@dataclass(frozen=True)
class PersistenceReport:
    """Outcome of a persistency-of-excitation rank test."""

    exciting: bool
    rank: int
    rows: int
    cols: int
    sigma_max: float
    sigma_min: float
    tolerance: float

    def __bool__(self):
        return self.exciting

    @property
    def gap(self):
        """``sigma_min / sigma_max`` of the leading ``rows`` singular values."""
        return self.sigma_min / self.sigma_max if self.sigma_max > 0 else 0.0


def _as_signal(sig):
    return sig if isinstance(sig, Signal) else Signal(sig)


def build_hankel(sig, depth, pad=True):
    """Block Hankel view of depth ``depth`` over the whole signal.

    The view references the signal's sample array; nothing is copied.
    """
    sig = _as_signal(sig)
    depth = int(depth)
    if depth < 1 or depth > sig.length:
        raise DimensionError(f"Hankel depth {depth} invalid for signal of length {sig.length}")
    buf = _SampleBuffer(sig.samples, sig.length)
    return BlockHankelView(buf, 0, depth, sig.length - depth + 1, pad)


def block_hankel_vec(Hb, v):
    """``Hb @ v`` with all channels transformed in one batch."""
    v = np.asarray(v, dtype=float)
    if v.shape != (Hb.cols,):
        raise DimensionError(f"vector shape {v.shape} does not match {Hb.shape} block Hankel")
    return Hb.embedding.multiply(v).ravel()


def block_hankel_transpose_vec(Hb, w):
    """``Hb.T @ w``: per-channel transpose products, summed over channels."""
    w = np.asarray(w, dtype=float)
    if w.shape != (Hb.shape[0],):
        raise DimensionError(f"vector shape {w.shape} does not match {Hb.shape} block Hankel transpose")
    return Hb.embedding_t.multiply_summed(w.reshape(Hb.depth, Hb.channels))


def is_persistently_exciting(sig, order):
    """Rank test: is the depth-``order`` block Hankel matrix of full row rank?

    Singular values above ``1e-10 * max(rows, cols) * sigma_max`` count
    toward the rank. The report carries ``sigma_min / sigma_max`` over the
    leading ``rows`` singular values so callers can apply a stricter bound.
    """
    sig = _as_signal(sig)
    H = build_hankel(sig, order).to_dense()
    rows, cols = H.shape
    s = np.linalg.svd(H, compute_uv=False)
    sigma_max = float(s[0]) if s.size else 0.0
    tol = 1e-10 * max(rows, cols) * sigma_max
    rank = int(np.count_nonzero(s > tol))
    sigma_min = float(s[rows - 1]) if rows <= s.size else 0.0
    return PersistenceReport(rank == rows, rank, rows, cols, sigma_max, sigma_min, tol)


def shift_up(spec, v):
    """Apply ``S_{m,n}``: move blocks up by one, zero the last block.

    Works along axis 0, so ``v`` may also be a matrix with ``m * n`` rows.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[:1] != (spec.size,):
        raise DimensionError(f"shift S_{{{spec.blocks},{spec.blocksize}}} needs {spec.size} rows, got {v.shape}")
    out = np.zeros_like(v)
    out[:spec.size - spec.blocksize] = v[spec.blocksize:]
    return out


def slide_window(Hb, newest):
    """Drop the oldest sample of the generating window and append ``newest``.

    Depth and column count are unchanged. When ``Hb`` is the most recent view
    on its buffer and there is spare capacity the sample is appended in
    place; otherwise the window is copied into a fresh buffer with headroom.
    """
    newest = np.asarray(newest, dtype=float).ravel()
    if newest.shape != (Hb.channels,):
        raise DimensionError(f"new sample has {newest.size} channels, window has {Hb.channels}")
    buf = Hb.buffer
    end = Hb.start + Hb.window_length
    if buf.length == end and end < buf.capacity:
        buf.data[end] = newest
        buf.length = end + 1
        return BlockHankelView(buf, Hb.start + 1, Hb.depth, Hb.cols, Hb.pad)
    n = Hb.window_length
    data = np.empty((2 * n + 16, Hb.channels))
    data[:n - 1] = Hb.window[1:]
    data[n - 1] = newest
    return BlockHankelView(_SampleBuffer(data, n), 0, Hb.depth, Hb.cols, Hb.pad)


def write_signal_csv(path, sig):
    """Write one row per time step: ``t,ch0,ch1,...``."""
    sig = _as_signal(sig)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"ch{k}" for k in range(sig.channels)])
        for t, row in enumerate(sig.samples):
            writer.writerow([t] + [repr(float(x)) for x in row])


def read_signal_csv(path):
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t" or any(h != f"ch{k}" for k, h in enumerate(header[1:])):
            raise ValueError(f"{path}: expected header t,ch0,ch1,..., got {header}")
        rows = [[float(x) for x in row[1:]] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: signal has no samples")
    return Signal(np.array(rows))
