r"""
FFT products for Hankel matrices via circulant embedding.

A Hankel matrix :math:`H \in \mathbb{R}^{n \times m}` with entries
:math:`H_{ij} = h_{i+j-1}` becomes a Toeplitz matrix after reversing its
columns, and the Toeplitz matrix sits in the upper-left block of a circulant
matrix whose first column is

    .. math:: c = (h_m, \dots, h_{n+m-1}, 0, \dots, 0, h_1, \dots, h_{m-1}).

Circulants are diagonalised by the DFT, so :math:`Hv` costs three length
:math:`P \geq n+m-1` transforms instead of :math:`nm` multiply-adds. With
:math:`P = n+m-1` the zero gap vanishes and :math:`c` is the classic
embedding; larger :math:`P` (a power of two by default) pads the gap with
zeros, which leaves the first :math:`n` outputs untouched.

All kernels accept a 2-D generating sequence of shape ``(n+m-1, d)``; every
column is an independent scalar Hankel matrix and the transforms run along
axis 0 for all channels at once.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, KernelError

__all__ = [
    "DftPlan",
    "ScalarHankel",
    "CirculantEmbedding",
    "transform_length",
    "hankel_vec",
    "hankel_transpose_vec",
    "fft_convolve",
    "predicted_flop_cost",
]

# imaginary residue tolerated in complex-path outputs, relative to max(1, |y|_inf)
IMAG_TOL = 1e-10


@dataclass(frozen=True)
class DftPlan:
    """Real-input DFT of a fixed length along axis 0.

    ``forward`` maps a real array of length ``length`` (zero padded or
    truncated) to its ``length // 2 + 1`` non-negative frequencies;
    ``inverse`` maps such a half spectrum back to ``length`` real samples.
    Plans hold no mutable state, so one plan may serve concurrent callers.
    """

    length: int
    direction: str = "forward"

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"transform length must be positive, got {self.length}")
        if self.direction not in ("forward", "inverse"):
            raise ValueError(f"direction must be 'forward' or 'inverse', got {self.direction!r}")

    def __call__(self, x, axis=0):
        if self.direction == "forward":
            return np.fft.rfft(x, n=self.length, axis=axis)
        return np.fft.irfft(x, n=self.length, axis=axis)

    @property
    def inverse(self):
        flipped = "inverse" if self.direction == "forward" else "forward"
        return DftPlan(self.length, flipped)


def transform_length(rows, cols, pad=True):
    """Transform size for a ``rows x cols`` Hankel product.

    ``pad=False`` gives the exact embedding size ``rows + cols - 1``;
    otherwise the next power of two at or above it.
    """
    exact = int(rows) + int(cols) - 1
    if not pad:
        return exact
    return 1 << (exact - 1).bit_length()


class CirculantEmbedding:
    """Circulant embedding of one or more ``rows x cols`` Hankel matrices.

    Parameters
    ----------
    seq : array_like, shape (rows + cols - 1,) or (rows + cols - 1, d)
        Generating sequence(s) ``h_1 .. h_{rows+cols-1}``.
    rows, cols : int
        Hankel dimensions.
    size : int, optional
        Transform length, at least ``rows + cols - 1``. Defaults to the exact
        embedding size.
    """

    def __init__(self, seq, rows, cols, size=None):
        seq = np.asarray(seq, dtype=float)
        exact = rows + cols - 1
        if seq.shape[:1] != (exact,) or seq.ndim > 2:
            raise DimensionError(
                f"generating sequence must have {exact} samples along axis 0, got shape {seq.shape}")
        size = exact if size is None else int(size)
        if size < exact:
            raise DimensionError(f"transform length {size} below embedding size {exact}")
        self.rows, self.cols, self.size = rows, cols, size
        c = np.zeros((size,) + seq.shape[1:])
        c[:rows] = seq[cols - 1:]
        if cols > 1:
            c[size - (cols - 1):] = seq[:cols - 1]
        self.c = c
        self._forward = DftPlan(size, "forward")
        self._inverse = DftPlan(size, "inverse")

    @cached_property
    def spectrum(self):
        """DFT of the first column ``c``; computed once, reused per product."""
        return self._forward(self.c)

    def _embed(self, v):
        # v_e = (v_m, ..., v_1, 0, ..., 0)
        v_e = np.zeros((self.size,) + v.shape[1:])
        v_e[:self.cols] = v[::-1]
        return self._forward(v_e)

    def multiply(self, v):
        """Hankel product for every channel.

        ``v`` of shape ``(cols,)`` is shared by all channels; shape
        ``(cols, d)`` supplies one vector per channel. Returns shape
        ``(rows,)`` for a 1-D sequence, else ``(rows, d)``.
        """
        v = np.asarray(v, dtype=float)
        spec = self.spectrum
        V = self._embed(v)
        if V.ndim < spec.ndim:
            V = V[:, None]
        y = self._inverse(spec * V)
        return y[:self.rows]

    def multiply_summed(self, v):
        """Sum over channels of the per-channel products, ``v`` shape ``(cols, d)``.

        The channel sum is taken in the frequency domain, so only one inverse
        transform is needed.
        """
        v = np.asarray(v, dtype=float)
        spec = self.spectrum
        if spec.ndim == 1:
            return self.multiply(v)
        total = (spec * self._embed(v)).sum(axis=1)
        return self._inverse(total)[:self.rows]


@dataclass(frozen=True, eq=False)
class ScalarHankel:
    """``rows x cols`` Hankel matrix held as its generating sequence.

    ``entry(i, j) = seq[i + j]`` (0-based). ``seq`` may also be 2-D, in which
    case each column defines an independent matrix of the same shape.
    """

    seq: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        seq = np.asarray(self.seq, dtype=float)
        object.__setattr__(self, "seq", seq)
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))
        if self.rows < 1 or self.cols < 1:
            raise DimensionError(f"Hankel dimensions must be positive, got {self.rows}x{self.cols}")
        if seq.ndim not in (1, 2) or seq.shape[0] != self.rows + self.cols - 1:
            raise DimensionError(
                f"{self.rows}x{self.cols} Hankel needs {self.rows + self.cols - 1} "
                f"generating samples, got shape {seq.shape}")
        object.__setattr__(self, "_embeddings", {})

    @property
    def T(self):
        """Transpose: same generating sequence, rows and columns swapped."""
        return ScalarHankel(self.seq, self.cols, self.rows)

    def embedding(self, pad=True):
        size = transform_length(self.rows, self.cols, pad)
        emb = self._embeddings.get(size)
        if emb is None:
            emb = CirculantEmbedding(self.seq, self.rows, self.cols, size)
            self._embeddings[size] = emb
        return emb

    def entry(self, i, j):
        return self.seq[i + j]

    def to_dense(self):
        idx = np.arange(self.rows)[:, None] + np.arange(self.cols)[None, :]
        return self.seq[idx]


def hankel_vec(H, v, pad=True):
    """Fast product ``H @ v`` through the circulant embedding of ``H``.

    Parameters
    ----------
    H : ScalarHankel
    v : array_like, shape (H.cols,)
    pad : bool
        Transform at the next power of two (default) or at the exact length
        ``rows + cols - 1``. Both give the same product.

    Returns
    -------
    ndarray, shape (H.rows,) (or (H.rows, d) for a multi-channel ``H``)
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != H.cols:
        raise DimensionError(f"vector of length {v.shape} does not match {H.rows}x{H.cols} Hankel")
    return H.embedding(pad).multiply(v)


def hankel_transpose_vec(H, w, pad=True):
    """Fast product ``H.T @ w``; ``H.T`` is again Hankel over the same sequence."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.shape[0] != H.rows:
        raise DimensionError(f"vector of length {w.shape} does not match {H.rows}x{H.cols} Hankel transpose")
    return hankel_vec(H.T, w, pad)


def fft_convolve(a, b):
    """Circular convolution of two equal-length real vectors via complex FFTs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"circular convolution needs equal-length vectors, got {a.shape} and {b.shape}")
    y = np.fft.ifft(np.fft.fft(a) * np.fft.fft(b))
    return _real_part(y)


def _real_part(y):
    scale = max(1.0, float(np.max(np.abs(y.real), initial=0.0)))
    residue = float(np.max(np.abs(y.imag), initial=0.0))
    if residue > IMAG_TOL * scale:
        raise KernelError(f"imaginary residue {residue:.3e} exceeds tolerance on real-valued product")
    return y.real.copy()


def predicted_flop_cost(n, m):
    """Operation count ``15 L log2 L + 6 L`` with ``L = n + m - 1``.

    Two forward transforms and one inverse at ``5 L log2 L`` each, plus the
    complex pointwise product at 6 flops per entry.
    """
    if n < 1 or m < 1:
        raise ValueError(f"dimensions must be positive, got n={n}, m={m}")
    L = n + m - 1
    return 15.0 * L * np.log2(L) + 6.0 * L
