r"""
Primal-dual iteration on the regularized Lagrangian

    .. math::

        \mathcal{L}(u, y, g, \nu) = \tilde f(u, y) + \frac{\epsilon_g}{2}\|g\|^2
            + \nu^\top (H g - h) - \frac{\epsilon_\nu}{2}\|\nu\|^2 .

One step maps :math:`z = (u, y, g, \nu)` to
:math:`\mathrm{Proj}\{z - \alpha \Psi(z)\}` with every component evaluated at
the current iterate (Jacobi form). The online step first warm-starts the
iterate for the next horizon by block shifts.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .behavioral import ConstraintBox, apply_H, apply_H_transpose, assemble_rhs
from .errors import DimensionError, DivergenceError
from .hankel import ShiftSpec, shift_up

__all__ = [
    "SolverState",
    "SaddleParams",
    "TrackingCost",
    "Boxes",
    "Contraction",
    "lagrangian_value",
    "static_step",
    "online_step",
    "project_box",
    "cost_gradient",
    "contraction_factor",
    "saddle_operator",
    "estimate_saddle_constants",
    "saddle_norm",
    "default_step_size",
    "step_size_limit",
    "data_norm",
    "DIVERGENCE_BOUND",
    "DENSE_LIMIT",
]

DIVERGENCE_BOUND = 1e9
# largest saddle-operator dimension built densely
DENSE_LIMIT = 4000


@dataclass(frozen=True, eq=False)
class SolverState:
    """Iterate ``z = (u, y, g, nu)``; ``nu`` follows the row layout of ``H``."""

    u: np.ndarray
    y: np.ndarray
    g: np.ndarray
    nu: np.ndarray

    @classmethod
    def zeros(cls, model):
        return cls(np.zeros(model.m * model.horizon), np.zeros(model.p * model.horizon),
                   np.zeros(model.kappa), np.zeros(model.n_dual))

    @classmethod
    def from_vector(cls, model, z):
        z = np.asarray(z, dtype=float)
        sizes = np.cumsum([model.m * model.horizon, model.p * model.horizon, model.kappa])
        if z.shape != (sizes[-1] + model.n_dual,):
            raise DimensionError(f"stacked iterate has shape {z.shape}")
        u, y, g, nu = np.split(z, sizes)
        return cls(u, y, g, nu)

    def as_vector(self):
        return np.concatenate([self.u, self.y, self.g, self.nu])

    def check_dims(self, model):
        if (self.u.shape != (model.m * model.horizon,) or self.y.shape != (model.p * model.horizon,)
                or self.g.shape != (model.kappa,) or self.nu.shape != (model.n_dual,)):
            raise DimensionError(
                f"iterate shapes u{self.u.shape} y{self.y.shape} g{self.g.shape} nu{self.nu.shape} "
                f"do not fit the model")


@dataclass(frozen=True)
class SaddleParams:
    """Step size and regularization weights.

    ``alpha = 0`` is accepted and freezes the iterate.
    """

    alpha: float
    eps_g: float
    eps_nu: float

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"step size must be nonnegative, got {self.alpha}")
        if not (self.eps_g > 0 and self.eps_nu > 0):
            raise ValueError(f"regularization weights must be positive, got {self.eps_g}, {self.eps_nu}")


@dataclass(frozen=True, eq=False)
class TrackingCost:
    """``sum_k q (y_k - r_k)^2 + r u_k^2`` with diagonal (or scalar) weights."""

    reference: np.ndarray
    q_weight: object = 1.0
    r_weight: object = 0.0

    def __post_init__(self):
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float).ravel())
        if np.any(np.asarray(self.q_weight) < 0) or np.any(np.asarray(self.r_weight) < 0):
            raise ValueError("cost weights must be nonnegative")

    def value(self, u, y):
        e = y - self.reference
        return float(np.sum(self.q_weight * e * e) + np.sum(self.r_weight * u * u))

    def gradient(self, u, y):
        if y.shape != self.reference.shape:
            raise DimensionError(f"output prediction {y.shape} vs reference {self.reference.shape}")
        return 2.0 * self.r_weight * u, 2.0 * self.q_weight * (y - self.reference)

    def weights(self, nu, ny):
        """Diagonals ``(r, q)`` broadcast to lengths ``nu`` and ``ny``."""
        return np.broadcast_to(self.r_weight, (nu,)).astype(float), np.broadcast_to(self.q_weight, (ny,)).astype(float)


class Boxes(NamedTuple):
    u: ConstraintBox
    y: ConstraintBox

    @classmethod
    def unbounded(cls, model):
        return cls(ConstraintBox.unbounded(model.m * model.horizon),
                   ConstraintBox.unbounded(model.p * model.horizon))


class Contraction(NamedTuple):
    rho: float
    contracting: bool


def project_box(v, box):
    """Euclidean projection onto a box: entrywise clamp."""
    return box.project(np.asarray(v, dtype=float))


def cost_gradient(cost, u, y):
    """``(grad_u, grad_y)`` of the stage-cost sum."""
    return cost.gradient(np.asarray(u, dtype=float), np.asarray(y, dtype=float))


def lagrangian_value(model, state, cost, params):
    state.check_dims(model)
    r = apply_H(model, state.g) - assemble_rhs(model, state.u, state.y)
    return (cost.value(state.u, state.y) + 0.5 * params.eps_g * state.g @ state.g
            + state.nu @ r - 0.5 * params.eps_nu * state.nu @ state.nu)


def _update(model, u, y, g, nu, cost, params, boxes, h=None):
    """One projected primal-descent / dual-ascent step at ``(u, y, g, nu)``.

    Returns the new state and the equality residual ``H g - h`` at the
    evaluation point.
    """
    a = params.alpha
    if boxes is None:
        boxes = Boxes.unbounded(model)
    grad_u, grad_y = cost.gradient(u, y)
    if h is None:
        h = assemble_rhs(model, u, y)
    elif h.shape != (model.n_dual,):
        raise DimensionError(f"right-hand side has shape {h.shape}, model needs {model.n_dual}")
    residual = apply_H(model, g) - h
    u_new = boxes.u.project(u - a * (grad_u - nu[model.u_future]))
    y_new = boxes.y.project(y - a * (grad_y - nu[model.y_future]))
    g_new = g - a * (apply_H_transpose(model, nu) + params.eps_g * g)
    nu_new = nu + a * (residual - params.eps_nu * nu)
    new = SolverState(u_new, y_new, g_new, nu_new)
    peak = max(abs(u_new).max(), abs(y_new).max(), abs(g_new).max(), abs(nu_new).max())
    if not peak <= DIVERGENCE_BOUND:
        dump = {"u": u_new, "y": y_new, "g": g_new, "nu": nu_new}
        raise DivergenceError(
            f"iterate left the bounded region (|z|_inf = {peak:.3e})",
            state=SolverState(u, y, g, nu), iterate=dump)
    return new, residual


def static_step(model, state, cost, params, boxes=None):
    """One primal-dual iteration against a fixed model and right-hand side."""
    state.check_dims(model)
    new, _ = _update(model, state.u, state.y, state.g, state.nu, cost, params, boxes)
    return new


def shift_state(model, state):
    """Warm start for the next horizon: ``(S u, S y, g, [S nu_u; S nu_y])``."""
    k = model.m * model.t_tot
    nu_hat = np.concatenate([shift_up(ShiftSpec(model.t_tot, model.m), state.nu[:k]),
                             shift_up(ShiftSpec(model.t_tot, model.p), state.nu[k:])])
    return SolverState(shift_up(ShiftSpec(model.horizon, model.m), state.u),
                       shift_up(ShiftSpec(model.horizon, model.p), state.y),
                       state.g, nu_hat)


def online_step(model_next, state, cost_next, params, boxes=None, h_next=None):
    """Shifted warm start followed by one iteration against the next model.

    ``h_next`` defaults to ``[u_ini; S u; y_ini; S y]`` assembled from
    ``model_next``, i.e. the prediction slots carry the shifted iterate at
    which the step is evaluated.
    """
    state.check_dims(model_next)
    s = shift_state(model_next, state)
    new, _ = _update(model_next, s.u, s.y, s.g, s.nu, cost_next, params, boxes, h_next)
    return new


def contraction_factor(alpha, sigma_psi, eta):
    """``rho = sqrt(1 + alpha^2 sigma^2 - 2 alpha eta)`` and whether ``rho < 1``."""
    if alpha < 0 or sigma_psi < 0 or eta < 0:
        raise ValueError("contraction constants must be nonnegative")
    radicand = 1.0 + alpha * alpha * sigma_psi * sigma_psi - 2.0 * alpha * eta
    if radicand < 0:
        # rounding can undershoot when eta == sigma and alpha = 1/sigma
        if radicand > -1e-12 * (1.0 + alpha * alpha * sigma_psi * sigma_psi):
            radicand = 0.0
        else:
            raise ValueError(
                f"negative radicand {radicand:.3e}: eta={eta} exceeds what sigma={sigma_psi} allows")
    rho = float(np.sqrt(radicand))
    return Contraction(rho, rho < 1.0)


def saddle_operator(model, cost, params):
    """Dense affine saddle map ``Psi(z) = M z + b`` for a quadratic cost.

    Block structure, with ``E_u``/``E_y`` injecting the predictions into
    their rows of ``h``::

        [ 2R    0     0     -E_u^T ]
        [ 0     2Q    0     -E_y^T ]
        [ 0     0   eps_g I   H^T  ]
        [ E_u   E_y   -H    eps_nu I]
    """
    nu_, ny_, k, nd = model.m * model.horizon, model.p * model.horizon, model.kappa, model.n_dual
    dim = nu_ + ny_ + k + nd
    if dim > DENSE_LIMIT:
        raise ValueError(f"saddle operator of dimension {dim} exceeds dense limit {DENSE_LIMIT}")
    H = model.to_dense()
    R, Q = cost.weights(nu_, ny_)
    iu = slice(0, nu_)
    iy = slice(nu_, nu_ + ny_)
    ig = slice(nu_ + ny_, nu_ + ny_ + k)
    iv = slice(nu_ + ny_ + k, dim)
    E_u = np.zeros((nd, nu_))
    E_u[model.u_future, :] = np.eye(nu_)
    E_y = np.zeros((nd, ny_))
    E_y[model.y_future, :] = np.eye(ny_)
    M = np.zeros((dim, dim))
    M[iu, iu] = np.diag(2 * R)
    M[iy, iy] = np.diag(2 * Q)
    M[iu, iv] = -E_u.T
    M[iy, iv] = -E_y.T
    M[ig, ig] = params.eps_g * np.eye(k)
    M[ig, iv] = H.T
    M[iv, iu] = E_u
    M[iv, iy] = E_y
    M[iv, ig] = -H
    M[iv, iv] = params.eps_nu * np.eye(nd)
    b = np.zeros(dim)
    b[iy] = -2 * Q * cost.reference
    b[iv] = assemble_rhs(model, np.zeros(nu_), np.zeros(ny_))
    return M, b


def estimate_saddle_constants(model, cost, params):
    """``(sigma_psi, eta)``: Lipschitz and strong-monotonicity constants.

    ``sigma_psi`` is the largest singular value of the dense operator and
    ``eta`` the smallest eigenvalue of its symmetric part. Small models only.
    """
    M, _ = saddle_operator(model, cost, params)
    sigma = float(np.linalg.norm(M, 2))
    eta = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    return sigma, eta


def _saddle_matvec(model, cost, params, z, transpose=False):
    s = SolverState.from_vector(model, z)
    R, Q = cost.weights(s.u.size, s.y.size)
    sign = -1.0 if transpose else 1.0
    Hg = apply_H(model, s.g)
    out_nu = params.eps_nu * s.nu - sign * Hg
    out_nu[model.u_future] += sign * s.u
    out_nu[model.y_future] += sign * s.y
    return np.concatenate([
        2 * R * s.u - sign * s.nu[model.u_future],
        2 * Q * s.y - sign * s.nu[model.y_future],
        params.eps_g * s.g + sign * apply_H_transpose(model, s.nu),
        out_nu,
    ])


def saddle_norm(model, cost, params, tol=1e-6):
    """Largest singular value of the saddle operator, matrix-free.

    Uses Lanczos bidiagonalisation (ARPACK) over the fast ``H`` products, so
    it scales to models far beyond :data:`DENSE_LIMIT`.
    """
    from scipy.sparse.linalg import LinearOperator, svds

    dim = model.m * model.horizon + model.p * model.horizon + model.kappa + model.n_dual
    op = LinearOperator(
        (dim, dim), dtype=float,
        matvec=lambda z: _saddle_matvec(model, cost, params, np.ravel(z)),
        rmatvec=lambda z: _saddle_matvec(model, cost, params, np.ravel(z), transpose=True))
    v0 = np.ones(dim) / np.sqrt(dim)
    s = svds(op, k=1, tol=tol, v0=v0, return_singular_vectors=False)
    return float(s[0])


def data_norm(model, tol=1e-6):
    """Largest singular value of ``H`` from the fast products (ARPACK)."""
    from scipy.sparse.linalg import LinearOperator, svds

    op = LinearOperator((model.n_dual, model.kappa), dtype=float,
                        matvec=lambda g: apply_H(model, np.ravel(g)),
                        rmatvec=lambda nu: apply_H_transpose(model, np.ravel(nu)))
    v0 = np.ones(min(op.shape)) / np.sqrt(min(op.shape))
    return float(svds(op, k=1, tol=tol, v0=v0, return_singular_vectors=False)[0])


def _block_limit(a, d, c):
    # [[a, c], [-c, d]]: |1 - alpha*lambda| < 1 for both eigenvalues
    disc = 0.25 * (a - d) ** 2 - c * c
    if disc < 0:
        return (a + d) / (a * d + c * c)
    return 2.0 / (0.5 * (a + d) + np.sqrt(disc))


def step_size_limit(sigma_h, eps_g, eps_nu, q_max=1.0, r_min=0.0):
    """Largest stable step predicted by the 2x2 blocks of the saddle map.

    Each singular pair of ``H`` couples ``g`` and ``nu`` as
    ``[[eps_g, s], [-s, eps_nu]]``; each prediction slot couples to its
    dual entry as ``[[2q, 1], [-1, eps_nu]]`` (outputs) or
    ``[[2r, 1], [-1, eps_nu]]`` (inputs). The returned value is the
    smallest per-block bound; on the models in the test suite it lies
    between 80% and 105% of the exact spectral limit.
    """
    return min(_block_limit(eps_g, eps_nu, sigma_h),
               _block_limit(2.0 * q_max, eps_nu, 1.0),
               _block_limit(2.0 * r_min, eps_nu, 1.0))


def default_step_size(model, cost, params, safety=0.5, sigma_h=None):
    """``safety`` times :func:`step_size_limit` for the current data.

    Without an input penalty the symmetric part of the saddle map is
    singular (``eta = 0``), so the contraction bound cannot pick a step;
    the per-block stability limit can.
    """
    if sigma_h is None:
        sigma_h = data_norm(model)
    r, q = cost.weights(model.m * model.horizon, model.p * model.horizon)
    return safety * step_size_limit(sigma_h, params.eps_g, params.eps_nu,
                                    float(q.max(initial=0.0)), float(r.min(initial=0.0)))
