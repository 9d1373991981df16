"""Reference allocators: exhaustive orthogonal search, spatial ZF + single-user
loading, and equal power found by bisection."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InfeasibleError, SolverError
from .exitlab import ConvergenceSpec
from .model import ChannelRealization
from .optim.barrier import ConvexNLP, LinearBlock, barrier_solve
from .receiver import mmse_sinr

MAX_ASSIGNMENTS = 10 ** 6


# -- single-user loading ----------------------------------------------------------

class _LoadingConstraints:
    """``xi_k - (1/N_F) sum_m P_m g_m / (P_m g_m D_k + s2) <= 0`` for every k."""

    def __init__(self, gains, xi, delta, noise_var, N_F):
        self.g = np.asarray(gains, dtype=float)
        self.xi = np.asarray(xi, dtype=float)
        self.d = np.asarray(delta, dtype=float)
        self.s2 = float(noise_var)
        self.N_F = N_F

    def __len__(self):
        return len(self.xi)

    def _den(self, x):
        return x[None, :] * self.g[None, :] * self.d[:, None] + self.s2  # (K, n)

    def value(self, x):
        return self.xi - np.sum(x * self.g / self._den(x), axis=1) / self.N_F

    def jacobian(self, x):
        return -(self.g * self.s2) / self._den(x) ** 2 / self.N_F

    def hessian(self, x, w):
        h = 2 * self.g ** 2 * self.d[:, None] * self.s2 / self._den(x) ** 3 / self.N_F
        return np.diag(w @ h)


def loading_sinr(P, gains, delta, noise_var, N_F):
    """``(1/N_F) sum_m P g / (P g D_k + s2)`` for each entry of ``delta``."""
    P = np.asarray(P, dtype=float)
    gains = np.asarray(gains, dtype=float)
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    return np.sum(P * gains / (P * gains * d[:, None] + noise_var), axis=1) / N_F


def loading_feasible(n_bins, xi, delta, N_F) -> bool:
    """Necessary bin-count test ``n_bins > xi_k N_F D_k`` for every k.

    The SINR of one bin is below ``1/D_k`` for any finite power, so fewer bins
    can never reach ``xi_k``.
    """
    xi = np.asarray(xi, dtype=float)
    return bool(np.all((xi <= 0) | (n_bins > xi * N_F * np.asarray(delta, dtype=float))))


def single_user_loading(gains, xi, delta, noise_var, N_F, tol=1e-10):
    """Minimum total power on the given bins meeting every SINR constraint.

    ``gains`` are the effective per-bin gains of the assigned bins.
    """
    g = np.asarray(gains, dtype=float)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if g.size == 0:
        if np.all(xi <= 0):
            return g.copy()
        raise InfeasibleError("no bins assigned")
    need = xi > 0
    if not np.any(need):
        return np.zeros_like(g)
    xi, delta = xi[need], delta[need]
    if not loading_feasible(np.count_nonzero(g > 0), xi, delta, N_F):
        raise InfeasibleError("bin count below the necessary bound n > xi N_F D")
    usable = g > 0
    gu = g[usable]
    n = gu.size
    cons = _LoadingConstraints(gu, xi, delta, noise_var, N_F)
    # strictly feasible uniform start, found by doubling
    p = noise_var / gu.max()
    for _ in range(400):
        if np.all(cons.value(np.full(n, p)) < 0):
            break
        p *= 2.0
    else:
        raise InfeasibleError("single-user constraints cannot be met at any finite power")

    nlp = ConvexNLP(n, _linear_objective(n), [cons, LinearBlock(-np.eye(n), np.zeros(n))],
                    np.full(n, p))
    res = barrier_solve(nlp, tol=tol * max(1.0, n * p))
    out = np.zeros_like(g)
    out[usable] = np.maximum(res.x, 0.0)
    return out


def _linear_objective(n):
    ones = np.ones(n)
    zero = np.zeros((n, n))
    return lambda x: (float(x.sum()), ones, zero)


# -- OES ----------------------------------------------------------------------------

@dataclass(frozen=True)
class OrthogonalAssignment:
    owner: tuple  # owner[m] = user holding bin m

    def __post_init__(self):
        if any(o < 0 for o in self.owner):
            raise ValueError("every bin needs an owner")

    def bins(self, u) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.owner) == u)

    def sets(self, U):
        return [self.bins(u) for u in range(U)]


def _own_rows(spec: ConvergenceSpec):
    return spec.xi, spec.delta


def oes_allocate(chan: ChannelRealization, spec: ConvergenceSpec, noise_var, prune=True):
    """Exhaustive search over orthogonal bin assignments.

    Every bin goes to exactly one user; without sharing there is no multiuser
    interference and each user reduces to :func:`single_user_loading` with
    matched-filter gains. Assignments are scanned in lexicographic order and
    the first minimum is kept.
    """
    U, N_F = chan.U, chan.N_F
    if U ** N_F > MAX_ASSIGNMENTS:
        raise ValueError(f"{U}^{N_F} assignments exceed the enumeration guard")
    xi, delta = _own_rows(spec)
    gains = chan.gains()
    cache: dict = {}

    def cost(u, mask):
        key = (u, mask)
        if key not in cache:
            bins = [m for m in range(N_F) if mask >> m & 1]
            if prune and not loading_feasible(len(bins), xi[u], delta[u], N_F):
                cache[key] = None
            else:
                try:
                    P = single_user_loading(gains[u, bins], xi[u], delta[u], noise_var, N_F)
                    cache[key] = (float(P.sum()), P)
                except InfeasibleError:
                    cache[key] = None
        return cache[key]

    best = None
    for owner in itertools.product(range(U), repeat=N_F):
        masks = [0] * U
        for m, o in enumerate(owner):
            masks[o] |= 1 << m
        total = 0.0
        for u in range(U):
            c = cost(u, masks[u])
            if c is None:
                break
            total += c[0]
        else:
            if best is None or total < best[0]:
                best = (total, owner, masks)
    if best is None:
        raise InfeasibleError("OES infeasible: no orthogonal assignment meets the constraints")
    _, owner, masks = best
    P = np.zeros((U, N_F))
    for u in range(U):
        bins = [m for m in range(N_F) if masks[u] >> m & 1]
        P[u, bins] = cache[(u, masks[u])][1]
    return OrthogonalAssignment(tuple(owner)), P


def save_assignment_csv(assignment: OrthogonalAssignment, P, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "user", "power"])
        for m, u in enumerate(assignment.owner):
            w.writerow([m, u, f"{P[u, m]:.12g}"])


def save_powers_csv(P, path, meta: dict | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["user", "bin", "power"])
        for u in range(P.shape[0]):
            for m in range(P.shape[1]):
                w.writerow([u, m, f"{P[u, m]:.12g}"])


def load_powers_csv(path):
    """Inverse of :func:`save_powers_csv`: returns ``(P, meta)``."""
    meta, lines = {}, []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    rows = list(csv.DictReader(lines))
    if not rows:
        raise ValueError(f"{path}: no power rows")
    U = 1 + max(int(r["user"]) for r in rows)
    N_F = 1 + max(int(r["bin"]) for r in rows)
    P = np.zeros((U, N_F))
    for r in rows:
        P[int(r["user"]), int(r["bin"])] = float(r["power"])
    return P, meta


# -- ZF + single-user loading ----------------------------------------------------------

def zf_filters(chan: ChannelRealization, cond_max=1e10):
    """Per-bin ZF receive vectors (U, N_F, N_R) with ``w_u^H gamma_u = 1``."""
    U, N_F, N_R = chan.freq.shape
    if N_R < U:
        raise InfeasibleError(f"spatial ZF needs N_R >= U (got N_R={N_R}, U={U})")
    W = np.empty((U, N_F, N_R), dtype=complex)
    for m in range(N_F):
        G = chan.freq[:, m, :].T  # (N_R, U)
        if np.linalg.cond(G) > cond_max:
            raise InfeasibleError(f"rank-deficient channel matrix at bin {m}")
        W[:, m, :] = np.linalg.pinv(G).conj()
    return W


def zf_gains(chan: ChannelRealization):
    """Post-ZF gains ``1/||w_{u,m}||^2``: noise amplification folded into the gain."""
    W = zf_filters(chan)
    return 1.0 / np.sum(np.abs(W) ** 2, axis=-1)


def zf_scmmse(chan: ChannelRealization, spec: ConvergenceSpec, noise_var, margin=1.0):
    """Spatial ZF followed by interference-free single-user loading per user."""
    g = zf_gains(chan)
    xi, delta = _own_rows(spec)
    P = np.zeros_like(g)
    for u in range(chan.U):
        try:
            P[u] = single_user_loading(g[u], xi[u] * margin, delta[u], noise_var, chan.N_F)
        except InfeasibleError as exc:
            raise InfeasibleError(f"ZF loading infeasible for user {u}: {exc}", where=(u, None))
    return P


# -- equal power ------------------------------------------------------------------------

def ep_bisection(chan: ChannelRealization, spec: ConvergenceSpec, noise_var, tol=1e-6,
                 max_doublings=200):
    """Smallest common power level ``p`` (per user and bin) meeting every constraint.

    The bracket keeps ``feasible(hi)`` and ``not feasible(lo)``; bisection runs
    on ``log p`` until ``hi/lo - 1 <= tol``.
    """
    U, N_F = chan.U, chan.N_F
    ds = spec.delta_seen
    xi = spec.xi

    def margin(p):
        return float(np.min(mmse_sinr(np.full((U, N_F), p), chan, ds, noise_var) - xi))

    if np.all(xi <= 0):
        return 0.0
    hi = noise_var / max(chan.gains().max(), 1e-300) * 1e-3
    prev = margin(hi)
    lo = 0.0
    for _ in range(max_doublings):
        if prev >= 0:
            break
        lo = hi
        hi *= 2.0
        cur = margin(hi)
        if cur < 0 and abs(cur - prev) < 1e-9:
            raise InfeasibleError("EP infeasible: SINR saturates below target "
                                  "(interference limited)")
        prev = cur
    else:
        raise SolverError("EP bracket search did not terminate")
    if lo == 0.0:
        lo = hi / 2.0
        while margin(lo) >= 0:
            hi, lo = lo, lo / 2.0
    while hi / lo - 1.0 > tol:
        mid = np.sqrt(lo * hi)
        if margin(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi
