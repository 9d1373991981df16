"""Independent reference computations shared by the module and acceptance tests."""
import numpy as np

from ccpa.exitlab import ConvergenceSpec
from ccpa.optim.sca import PapData


def projected_gradient_qp(Q, c, lo, hi, iters=200000, tol=1e-15):
    """``min 0.5 x'Qx + c'x`` over a box by projected gradient with step 1/L."""
    L = np.linalg.eigvalsh(Q).max()
    x = np.clip(np.zeros_like(c), lo, hi)
    for _ in range(iters):
        nx = np.clip(x - (Q @ x + c) / L, lo, hi)
        if np.max(np.abs(nx - x)) < tol:
            return nx
        x = nx
    return x


def random_qp(rng, n):
    A = rng.normal(size=(n, n))
    Q = A @ A.T + 0.5 * np.eye(n)
    c = rng.normal(size=n) * 3
    lo = -rng.uniform(0.2, 1.0, n)
    hi = rng.uniform(0.2, 1.0, n)
    return Q, c, lo, hi


def fd_gradient(f, x, h=1e-6):
    g = np.zeros((np.size(f(x)), x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[:, i] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h)
    return g


def random_pap_data(rng, U=2, K=3, N_F=4):
    own = rng.uniform(0.2, 2.0, (U, K, N_F))
    cross = rng.uniform(0.0, 0.5, (U, K, U, N_F))
    cross[np.arange(U), :, np.arange(U), :] = own * rng.uniform(0, 1, (U, K, 1))
    noise = rng.uniform(0.2, 1.0, (U, K, N_F))
    xi = rng.uniform(0.05, 0.4, (U, K))
    return PapData(own, cross, noise, xi, np.ones((U, K, N_F), dtype=bool))


def manual_spec(xi, delta, mode="diagonal"):
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    delta = np.broadcast_to(np.asarray(delta, dtype=float), xi.shape).copy()
    z = np.zeros_like(xi)
    return ConvergenceSpec(z, z, delta, 4 * xi / np.maximum(1 - xi * delta, 1e-12), xi, mode)


def scalar_bisection(f, lo, hi, tol=1e-13):
    """Smallest x in [lo, hi] with f(x) >= 0 for an increasing f."""
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi
