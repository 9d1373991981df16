"""Power-allocation subproblems for fixed receive filters and the SCA loop.

For fixed filters the per-bin SINR of user u at MI index k is

    t[u,k,m] = P[u,m] own[u,k,m] / (sum_l P[l,m] cross[u,k,l,m] + noise[u,k,m])

with ``own = |w^H g_u|^2``, ``cross = |w^H g_l|^2 D[u,k,l]`` and
``noise = s2 ||w||^2``. The constraint is ``sum_m t[u,k,m] >= N_F xi[u,k]``.
Two convex inner approximations are provided: a linearized log form over
``(log P, t)`` and a geometric-program form over ``(log P, log t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SolverError
from ..exitlab import ConvergenceSpec
from ..model import ChannelRealization
from ..receiver import filter_gains
from .barrier import (ConvexNLP, ExpSumObjective, LinearBlock, LseBlock, LseObjective,
                      barrier_solve)

METHODS = ("scavc", "scagp")


@dataclass
class PapData:
    own: np.ndarray     # (U, K, N_F)
    cross: np.ndarray   # (U, K, U, N_F), residual-weighted
    noise: np.ndarray   # (U, K, N_F)
    xi: np.ndarray      # (U, K)
    active: np.ndarray  # (U, K, N_F) bool, bins carrying a t variable

    @property
    def shape(self):
        return self.own.shape

    @property
    def N_F(self) -> int:
        return self.own.shape[2]

    def ratios(self, P):
        """True per-bin SINR terms at ``P`` (zero on inactive entries)."""
        P = np.asarray(P, dtype=float)
        num = P[:, None, :] * self.own
        den = np.einsum("uklm,lm->ukm", self.cross, P) + self.noise
        return np.where(self.active, num / den, 0.0)

    def slack(self, P):
        """``mean_m t - xi``, shape (U, K); nonnegative when feasible."""
        return self.ratios(P).sum(axis=2) / self.N_F - self.xi

    def t_index(self):
        idx = -np.ones(self.active.shape, dtype=int)
        idx[self.active] = np.arange(np.count_nonzero(self.active))
        return idx


def pap_data(chan: ChannelRealization, omega, spec: ConvergenceSpec, noise_var) -> PapData:
    a, nrm = filter_gains(np.asarray(omega), chan)
    U = chan.U
    own = a[np.arange(U), :, np.arange(U), :]
    cross = a * spec.delta_seen[..., None]
    noise = noise_var * nrm
    scale = max(own.max(), 1e-300)
    active = (own > 1e-14 * scale) & (noise > 0) & (spec.xi[:, :, None] > 0)
    return PapData(own, cross, noise, np.asarray(spec.xi, dtype=float), active)


def _check_t_hat(data: PapData, t_hat):
    t_hat = np.asarray(t_hat, dtype=float)
    if t_hat.shape != data.shape:
        raise ValueError(f"t_hat must have shape {data.shape}")
    if np.any(t_hat[data.active] <= 0) or not np.all(np.isfinite(t_hat[data.active])):
        raise ValueError("linearization point t_hat must be strictly positive")
    return t_hat


def _lse_rows(data: PapData, n):
    """Common term layout of the per-bin ratio constraints.

    Terms per row: ``P_l cross_l`` for every l, then the noise. Returns the
    (rows, T, n) term matrix, log-coefficients and the (u, k, m) of each row.
    """
    U, K, N_F = data.shape
    rows = np.argwhere(data.active)
    r = len(rows)
    A = np.zeros((r, U + 1, n))
    c = np.empty((r, U + 1))
    ri = np.arange(r)
    u, k, m = rows.T
    with np.errstate(divide="ignore"):
        for l in range(U):
            A[ri, l, l * N_F + m] = 1.0
            c[:, l] = np.log(data.cross[u, k, l, m])
        c[:, U] = np.log(data.noise[u, k, m])
    return rows, A, c


def _floor_block(n, nP, log_floor):
    """``log P >= log_floor``: keeps the log-domain problem bounded when a bin's
    optimal power is zero."""
    A = np.zeros((nP, n))
    A[np.arange(nP), np.arange(nP)] = -1.0
    return LinearBlock(A, np.full(nP, -log_floor))


def build_scavc(data: PapData, t_hat, log_floor=None) -> ConvexNLP:
    """Linearized-log subproblem over ``x = (alpha, t)`` with ``alpha = log P``.

    ``log t`` is replaced by its tangent ``Y(t, t_hat) = log t_hat + t/t_hat - 1``,
    an upper bound, so every feasible point is feasible for the true problem.
    """
    t_hat = _check_t_hat(data, t_hat)
    U, K, N_F = data.shape
    tidx = data.t_index()
    nP = U * N_F
    n = nP + np.count_nonzero(data.active)
    blocks = []

    # sum_m t >= N_F xi
    uk = [(u, k) for u in range(U) for k in range(K) if data.active[u, k].any()]
    A = np.zeros((len(uk), n))
    b = np.empty(len(uk))
    for i, (u, k) in enumerate(uk):
        A[i, nP + tidx[u, k, data.active[u, k]]] = -1.0
        b[i] = -N_F * data.xi[u, k]
    blocks.append(LinearBlock(A, b))

    rows, At, c = _lse_rows(data, n)
    u, k, m = rows.T
    ri = np.arange(len(rows))
    th = t_hat[u, k, m]
    a = np.zeros((len(rows), n))
    a[ri, u * N_F + m] -= 1.0
    a[ri, nP + tidx[u, k, m]] += 1.0 / th
    d = -np.log(data.own[u, k, m]) + np.log(th) - 1.0
    blocks.append(LseBlock(At, c, a, d))
    if log_floor is not None:
        blocks.append(_floor_block(n, nP, log_floor))
    return ConvexNLP(n, ExpSumObjective(n, np.arange(nP)), blocks)


def build_scagp(data: PapData, t_hat, log_floor=None) -> ConvexNLP:
    """Log-transformed GP over ``x = (y, s) = (log P, log t)``.

    ``sum_m t`` is replaced by the monomial ``prod_m (t_m/phi_m)^phi_m`` with
    ``phi = t_hat / sum(t_hat)``, which never exceeds the sum.
    """
    t_hat = _check_t_hat(data, t_hat)
    U, K, N_F = data.shape
    tidx = data.t_index()
    nP = U * N_F
    n = nP + np.count_nonzero(data.active)
    blocks = []

    uk = [(u, k) for u in range(U) for k in range(K) if data.active[u, k].any()]
    A = np.zeros((len(uk), n))
    b = np.empty(len(uk))
    for i, (u, k) in enumerate(uk):
        act = data.active[u, k]
        th = t_hat[u, k, act]
        phi = th / th.sum()
        A[i, nP + tidx[u, k, act]] = -phi
        b[i] = -np.log(N_F * data.xi[u, k]) - np.sum(phi * np.log(phi))
    blocks.append(LinearBlock(A, b))

    rows, At, c = _lse_rows(data, n)
    u, k, m = rows.T
    ri = np.arange(len(rows))
    At[ri, :, nP + tidx[u, k, m]] = 1.0
    a = np.zeros((len(rows), n))
    a[ri, u * N_F + m] = -1.0
    d = -np.log(data.own[u, k, m])
    blocks.append(LseBlock(At, c, a, d))
    if log_floor is not None:
        blocks.append(_floor_block(n, nP, log_floor))
    return ConvexNLP(n, LseObjective(n, np.arange(nP)), blocks)


BUILDERS = {"scavc": build_scavc, "scagp": build_scagp}


def linearization(t, t_hat):
    """Tangent of ``log`` at ``t_hat``: ``log t_hat + (t - t_hat)/t_hat``."""
    return np.log(t_hat) + (np.asarray(t) - t_hat) / t_hat


def monomial_bound(t, phi):
    """Weighted AM-GM underestimate ``prod (t/phi)^phi`` of ``sum t``."""
    t = np.asarray(t, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return float(np.exp(np.sum(phi * (np.log(t) - np.log(phi)))))


def _start_point(method, data: PapData, P_base, t_hat):
    """Strictly feasible subproblem point near ``P_base``.

    Scaling all powers up by ``c > 1`` strictly raises every ratio to ``r``;
    the auxiliary ratio sits at the geometric mean of ``t_hat`` and ``r``.
    """
    act = data.active
    for c in 1.0 + 1e-3 * 2.0 ** np.arange(12):
        P = c * P_base
        r = data.ratios(P)
        if np.all(r[act] > t_hat[act] * (1 + 1e-12)):
            break
    else:
        raise SolverError("could not build a strictly feasible subproblem start")
    half = 0.5 * (np.log(t_hat[act]) + np.log(r[act]))
    aux = t_hat[act] * (1.0 + 0.5 * np.log(r[act] / t_hat[act])) if method == "scavc" else half
    return np.concatenate([np.log(P).ravel(), aux])


@dataclass
class ScaResult:
    P: np.ndarray
    history: list = field(default_factory=list)
    iterations: int = 0
    violations: int = 0
    t_hat: np.ndarray = None


def sca_solve(method, data: PapData, P0, t_hat0=None, tol=0.01, max_iters=100,
              gap_tol=1e-9, barrier: dict | None = None, floor=1e-10) -> ScaResult:
    """Successive convex approximation for fixed filters.

    Each step solves the convex surrogate around ``t_hat`` (true ratios at the
    current powers), then moves ``t_hat`` to the true ratios at the new powers.
    Stops when the total power drops by at most ``tol``. Every surrogate
    solution is re-checked against the exact constraints. ``barrier`` holds
    extra keyword arguments for :func:`barrier_solve`. Every power is kept
    above ``floor`` times the current total.
    """
    if method not in BUILDERS:
        raise ValueError(f"unknown SCA method {method!r}")
    P = np.asarray(P0, dtype=float)
    if np.any(P <= 0):
        raise ValueError("SCA needs strictly positive starting powers")
    t_true = data.ratios(P)
    if np.any(data.slack(P) < 0):
        raise SolverError("SCA start violates the constraints")
    t_hat = t_true if t_hat0 is None else np.minimum(_check_t_hat(data, t_hat0), t_true)
    obj = float(P.sum())
    hist = [obj]
    violations = 0
    it = 0
    for it in range(1, max_iters + 1):
        log_floor = min(np.log(floor * obj), np.log(P.min()) - 1.0)
        nlp = BUILDERS[method](data, t_hat, log_floor)
        x0 = _start_point(method, data, P, t_hat)
        scale = max(abs(nlp.objective(x0)[0]), 1.0)
        res = barrier_solve(nlp, x0, tol=gap_tol * scale, **(barrier or {}))
        P_new = np.exp(res.x[:P.size]).reshape(P.shape)
        if np.any(data.slack(P_new) < 0):
            violations += 1
        new = float(P_new.sum())
        if new > obj:
            break  # surrogate optimum reached to solver precision
        P, t_hat = P_new, data.ratios(P_new)
        step = obj - new
        obj = new
        hist.append(obj)
        if step <= tol:
            break
    return ScaResult(P, hist, it, violations, t_hat)
