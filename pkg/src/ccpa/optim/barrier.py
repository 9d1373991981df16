"""Log-barrier interior-point solver for smooth convex problems.

Problems are ``min f(x) s.t. g_i(x) <= 0`` where the constraints come in
vectorized blocks. Each block supplies values, the Jacobian and the weighted
Hessian sum ``sum_i w_i grad^2 g_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, optimize, sparse

from ..errors import SolverError

_CMIN = -700.0  # log-coefficient floor standing in for log(0)


class LinearBlock:
    """``A x - b <= 0``."""

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).ravel()

    def __len__(self):
        return self.A.shape[0]

    def value(self, x):
        return self.A @ x - self.b

    def jacobian(self, x):
        return self.A

    def hessian(self, x, w):
        return np.zeros((self.A.shape[1], self.A.shape[1]))


class LseBlock:
    """``log sum_j exp(A[i, j] . x + c[i, j]) + a[i] . x + d[i] <= 0`` for every row i.

    ``A`` has shape (m, T, n); every row uses the same number of terms ``T``.
    The term rows are expected to be sparse: products are formed by scattering
    precomputed coordinate lists.
    """

    def __init__(self, A, c, a=None, d=None):
        A = np.asarray(A, dtype=float)
        m, T, n = A.shape
        self.shape = (m, T, n)
        self.c = np.maximum(np.asarray(c, dtype=float).reshape(m, T), _CMIN)
        self.a = np.zeros((m, n)) if a is None else np.asarray(a, dtype=float)
        self.d = np.zeros(m) if d is None else np.asarray(d, dtype=float)
        A2 = A.reshape(m * T, n)
        self._A2 = sparse.csr_matrix(A2)
        tr, col = np.nonzero(A2)
        self._tr, self._val = tr, A2[tr, col]
        self._mean_idx = (tr // T) * n + col
        # all nonzero pairs within one term row, for sum_t w_t A_t A_t^T
        order = np.argsort(tr, kind="stable")
        tr, col, val = tr[order], col[order], self._val[order]
        starts = np.searchsorted(tr, np.arange(m * T))
        ends = np.searchsorted(tr, np.arange(m * T), side="right")
        pt, pi, pv = [], [], []
        for r in np.flatnonzero(ends > starts):
            cs, vs = col[starts[r]:ends[r]], val[starts[r]:ends[r]]
            pt.append(np.full(len(cs) ** 2, r))
            pi.append((cs[:, None] * n + cs[None, :]).ravel())
            pv.append(np.outer(vs, vs).ravel())
        cat = (lambda v, dt: np.concatenate(v) if v else np.zeros(0, dt))
        self._pt, self._pi, self._pv = cat(pt, int), cat(pi, int), cat(pv, float)

    def __len__(self):
        return self.shape[0]

    def _softmax(self, x):
        z = (self._A2 @ x).reshape(self.c.shape) + self.c
        zmax = z.max(axis=1, keepdims=True)
        e = np.exp(z - zmax)
        s = e.sum(axis=1, keepdims=True)
        return zmax[:, 0] + np.log(s[:, 0]), e / s

    def value(self, x):
        lse, _ = self._softmax(x)
        return lse + self.a @ x + self.d

    def _mean(self, p):
        m, _, n = self.shape
        w = p.ravel()[self._tr] * self._val
        return np.bincount(self._mean_idx, weights=w, minlength=m * n).reshape(m, n)

    def jacobian(self, x):
        _, p = self._softmax(x)
        return self._mean(p) + self.a

    def hessian(self, x, w):
        _, p = self._softmax(x)
        n = self.shape[2]
        mean = self._mean(p)
        wp = (w[:, None] * p).ravel()
        H = np.bincount(self._pi, weights=wp[self._pt] * self._pv, minlength=n * n).reshape(n, n)
        return H - mean.T @ (w[:, None] * mean)


class ExpSumObjective:
    """``sum_i exp(x_i)`` over the index set ``idx``."""

    def __init__(self, n, idx):
        self.n = n
        self.idx = np.asarray(idx)

    def __call__(self, x):
        e = np.exp(x[self.idx])
        g = np.zeros(self.n)
        g[self.idx] = e
        H = np.zeros((self.n, self.n))
        H[self.idx, self.idx] = e
        return float(e.sum()), g, H


class LseObjective:
    """``log sum_i exp(x_i)`` over the index set ``idx``."""

    def __init__(self, n, idx):
        self.n = n
        self.idx = np.asarray(idx)

    def __call__(self, x):
        z = x[self.idx]
        zmax = z.max()
        e = np.exp(z - zmax)
        p = e / e.sum()
        g = np.zeros(self.n)
        g[self.idx] = p
        H = np.zeros((self.n, self.n))
        H[np.ix_(self.idx, self.idx)] = np.diag(p) - np.outer(p, p)
        return float(zmax + np.log(e.sum())), g, H


class QuadraticObjective:
    """``0.5 x^T Q x + c^T x``."""

    def __init__(self, Q, c):
        self.Q = np.asarray(Q, dtype=float)
        self.c = np.asarray(c, dtype=float)

    def __call__(self, x):
        Qx = self.Q @ x
        return float(0.5 * x @ Qx + self.c @ x), Qx + self.c, self.Q


@dataclass
class ConvexNLP:
    n: int
    objective: Callable
    constraints: list = field(default_factory=list)
    x0: np.ndarray = None

    @property
    def m(self) -> int:
        return sum(len(b) for b in self.constraints)

    def values(self, x):
        if not self.constraints:
            return np.zeros(0)
        return np.concatenate([b.value(x) for b in self.constraints])

    def jacobian(self, x):
        if not self.constraints:
            return np.zeros((0, self.n))
        return np.vstack([b.jacobian(x) for b in self.constraints])

    def constraint_hessian(self, x, w):
        H = np.zeros((self.n, self.n))
        start = 0
        for b in self.constraints:
            k = len(b)
            if not isinstance(b, LinearBlock):
                H += b.hessian(x, w[start:start + k])
            start += k
        return H


@dataclass
class BarrierResult:
    x: np.ndarray
    fun: float
    duals: np.ndarray
    gap: float
    newton_steps: int
    outer_steps: int
    kkt_residual: float


def barrier_solve(p: ConvexNLP, x0=None, tol=1e-8, t0=1.0, factor=10.0, newton_tol=1e-9,
                  max_newton=500, max_outer=80) -> BarrierResult:
    """Log-barrier method with damped Newton centering and Armijo backtracking.

    Stops once the duality-gap bound ``m/t`` falls below ``tol``.
    """
    x = np.array(p.x0 if x0 is None else x0, dtype=float)
    m = p.m
    g = p.values(x)
    if np.any(g >= 0) or not np.all(np.isfinite(g)):
        raise SolverError("infeasible start: barrier needs a strictly feasible point")
    t = t0
    steps = 0
    outer = 0

    def phi(xx, tt):
        gg = p.values(xx)
        if np.any(gg >= 0) or not np.all(np.isfinite(gg)):
            return np.inf
        with np.errstate(over="ignore"):
            f = p.objective(xx)[0]
        if not np.isfinite(f):
            return np.inf
        return tt * f - np.sum(np.log(-gg))

    while True:
        outer += 1
        for _ in range(max_newton):
            f, gf, Hf = p.objective(x)
            g = p.values(x)
            J = p.jacobian(x)
            inv = 1.0 / (-g)
            grad = t * gf + J.T @ inv
            H = t * Hf + (J.T * inv ** 2) @ J + p.constraint_hessian(x, inv)
            H = 0.5 * (H + H.T)
            dx = _newton_step(H, grad)
            dec = -grad @ dx
            phi0 = phi(x, t)
            # below this decrement, phi differences are lost to rounding
            floor = 64 * np.finfo(float).eps * (abs(t * f) + np.sum(np.abs(np.log(-g))) + 1.0)
            if dec / 2 <= max(newton_tol, floor):
                break
            s = 1.0
            while s > 1e-16:
                val = phi(x + s * dx, t)
                if val <= phi0 - 0.25 * s * dec:
                    break
                s *= 0.5
            else:
                if dec <= 1e3 * floor:
                    break
                raise SolverError("line-search stall in barrier centering")
            x = x + s * dx
            steps += 1
        else:
            raise SolverError("barrier centering hit the Newton iteration limit")
        if m == 0 or m / t < tol:
            break
        if outer >= max_outer:
            raise SolverError("barrier method hit the outer iteration limit")
        t *= factor
    f, gf, _ = p.objective(x)
    duals = _refine_duals(p, x, t, gf) if m else np.zeros(0)
    kkt = float(np.linalg.norm(gf + p.jacobian(x).T @ duals)) if m else float(np.linalg.norm(gf))
    return BarrierResult(x, f, duals, m / t, steps, outer, kkt)


def _newton_step(H, grad):
    # Jacobi scaling: barrier terms of near-active bounds dwarf the rest of the diagonal
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / d[:, None] / d[None, :]
    try:
        c = linalg.cho_factor(Hs, check_finite=False)
        y = linalg.cho_solve(c, -grad / d, check_finite=False)
    except linalg.LinAlgError:
        y = linalg.lstsq(Hs + 1e-12 * np.eye(len(d)), -grad / d)[0]
    return y / d


def _refine_duals(p, x, t, gf):
    """Central-path duals ``1/(-t g)`` polished by NNLS on stationarity.

    At large ``t`` the slacks of active constraints suffer cancellation, so
    the raw estimate is only accurate to a few digits.
    """
    g = p.values(x)
    raw = 1.0 / (-t * g)
    J = p.jacobian(x)
    active = raw > 1e-6 * max(raw.max(), 1e-300)
    lam = np.zeros_like(raw)
    try:
        sol, _ = optimize.nnls(J[active].T, -gf)
    except RuntimeError:
        return raw
    lam[active] = sol
    if np.linalg.norm(gf + J.T @ lam) <= np.linalg.norm(gf + J.T @ raw):
        return lam
    return raw
