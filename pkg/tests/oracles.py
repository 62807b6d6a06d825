"""Independent dense reference implementations used as test oracles.

Everything here is written from the defining formulas with explicit loops or
dense matrices, without calling into the FFT kernels or the window views.
"""

import numpy as np


def dense_hankel(seq, rows, cols):
    """H[i, j] = seq[i + j], built entry by entry."""
    H = np.empty((rows, cols))
    for i in range(rows):
        for j in range(cols):
            H[i, j] = seq[i + j]
    return H


def dense_block_hankel(samples, depth):
    """Block (i, j) = w_{i+j} for a (T, d) sample array; channel index fastest."""
    samples = np.asarray(samples, dtype=float)
    T, d = samples.shape
    cols = T - depth + 1
    H = np.empty((depth * d, cols))
    for i in range(depth):
        for j in range(cols):
            H[i * d:(i + 1) * d, j] = samples[i + j]
    return H


def circular_convolution(a, b):
    n = len(a)
    return np.array([sum(a[k] * b[(i - k) % n] for k in range(n)) for i in range(n)])


def shift_matrix(blocks, blocksize):
    """S_{m,n} = [[0, I], [0, 0]] (x) I_n."""
    return np.kron(np.eye(blocks, k=1), np.eye(blocksize))


class DenseController:
    """Literal dense version of the primal-dual iteration and online updates.

    ``U`` and ``Y`` are the materialised data matrices; ``u_ini``/``y_ini``
    the measured initial trajectory.
    """

    def __init__(self, U, Y, u_ini, y_ini, m, p, t_ini, horizon, alpha, eps_g, eps_nu,
                 reference, q=1.0, r=0.0, u_bound=np.inf, y_bound=np.inf):
        self.U, self.Y = np.array(U, dtype=float), np.array(Y, dtype=float)
        self.u_ini, self.y_ini = np.array(u_ini, dtype=float), np.array(y_ini, dtype=float)
        self.m, self.p, self.t_ini, self.N = m, p, t_ini, horizon
        self.alpha, self.eps_g, self.eps_nu = alpha, eps_g, eps_nu
        self.reference = np.array(reference, dtype=float)
        self.q, self.r = q, r
        self.u_bound, self.y_bound = u_bound, y_bound

    @property
    def H(self):
        return np.vstack([self.U, self.Y])

    def h(self, u, y):
        return np.concatenate([self.u_ini, u, self.y_ini, y])

    def _split_nu(self, nu):
        mt = self.m * (self.t_ini + self.N)
        nu_u, nu_y = nu[:mt], nu[mt:]
        return nu_u[self.m * self.t_ini:], nu_y[self.p * self.t_ini:]

    def step(self, u, y, g, nu, h=None):
        """One Jacobi step of the projected saddle iteration."""
        a = self.alpha
        nu_uf, nu_yf = self._split_nu(nu)
        grad_u = 2 * self.r * u
        grad_y = 2 * self.q * (y - self.reference)
        h = self.h(u, y) if h is None else h
        u_new = np.clip(u - a * (grad_u - nu_uf), -self.u_bound, self.u_bound)
        y_new = np.clip(y - a * (grad_y - nu_yf), -self.y_bound, self.y_bound)
        g_new = g - a * (self.H.T @ nu + self.eps_g * g)
        nu_new = nu + a * (self.H @ g - h - self.eps_nu * nu)
        return u_new, y_new, g_new, nu_new

    def shift(self, u, y, nu):
        T_tot = self.t_ini + self.N
        mt = self.m * T_tot
        S_u, S_y = shift_matrix(self.N, self.m), shift_matrix(self.N, self.p)
        S_nu_u, S_nu_y = shift_matrix(T_tot, self.m), shift_matrix(T_tot, self.p)
        return S_u @ u, S_y @ y, np.concatenate([S_nu_u @ nu[:mt], S_nu_y @ nu[mt:]])

    def advance(self, u_new, y_new, update_hankel=True):
        """Measurement and data update written with shift matrices.

        The block rows move up by one; the vacated last block row receives the
        old last block row shifted one column left plus the newest sample in
        the final column.
        """
        T_tot = self.t_ini + self.N
        kappa = self.U.shape[1]
        S_k = shift_matrix(kappa, 1)
        if update_hankel:
            for name, d, w in (("U", self.m, u_new), ("Y", self.p, y_new)):
                M = getattr(self, name)
                add = np.zeros_like(M)
                last = np.hstack([np.zeros((d, (T_tot - 1) * d)), np.eye(d)])
                corner = np.zeros((d, kappa))
                corner[:, -1] = w
                add[-d:, :] = last @ M @ S_k.T + corner
                setattr(self, name, shift_matrix(T_tot, d) @ M + add)
        tail_u = np.vstack([np.zeros(((self.t_ini - 1) * self.m, self.m)), np.eye(self.m)])
        tail_y = np.vstack([np.zeros(((self.t_ini - 1) * self.p, self.p)), np.eye(self.p)])
        self.u_ini = shift_matrix(self.t_ini, self.m) @ self.u_ini + tail_u @ u_new
        self.y_ini = shift_matrix(self.t_ini, self.p) @ self.y_ini + tail_y @ y_new

    def online_step(self, u, y, g, nu):
        u_h, y_h, nu_h = self.shift(u, y, nu)
        return self.step(u_h, y_h, g, nu_h)


def kkt_saddle_point(U, Y, u_ini, y_ini, t_ini, horizon, m, p, eps_g, eps_nu, reference, q=1.0, r=0.0):
    """Stationary point of the regularized Lagrangian by one dense linear solve.

    Unknowns (u, y, g, nu); equations are the zero-gradient conditions
    2R u - nu_uf = 0, 2Q (y - ref) - nu_yf = 0, eps_g g + H^T nu = 0,
    H g - h(u, y) - eps_nu nu = 0.
    """
    H = np.vstack([U, Y])
    nu_, ny_, k = m * horizon, p * horizon, H.shape[1]
    nd = H.shape[0]
    T_tot = t_ini + horizon
    E_u = np.zeros((nd, nu_))
    E_u[m * t_ini:m * T_tot, :] = np.eye(nu_)
    E_y = np.zeros((nd, ny_))
    E_y[m * T_tot + p * t_ini:, :] = np.eye(ny_)
    dim = nu_ + ny_ + k + nd
    A = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    iu, iy = slice(0, nu_), slice(nu_, nu_ + ny_)
    ig, iv = slice(nu_ + ny_, nu_ + ny_ + k), slice(nu_ + ny_ + k, dim)
    A[iu, iu] = 2 * r * np.eye(nu_)
    A[iu, iv] = -E_u.T
    A[iy, iy] = 2 * q * np.eye(ny_)
    A[iy, iv] = -E_y.T
    rhs[iy] = 2 * q * np.asarray(reference, dtype=float)
    A[ig, ig] = eps_g * np.eye(k)
    A[ig, iv] = H.T
    A[iv, ig] = H
    A[iv, iu] = -E_u
    A[iv, iy] = -E_y
    A[iv, iv] = -eps_nu * np.eye(nd)
    h0 = np.zeros(nd)
    h0[:m * t_ini] = u_ini
    h0[m * T_tot:m * T_tot + p * t_ini] = y_ini
    rhs[iv] = h0
    z = np.linalg.solve(A, rhs)
    return z[iu], z[iy], z[ig], z[iv]


def power_iteration_norm(apply, apply_t, dim, iters=5000, seed=0, tol=1e-14):
    """Largest singular value of a linear map by power iteration on A^T A."""
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply_t(apply(v))
        new = np.linalg.norm(w)
        v = w / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return float(np.sqrt(lam))
