import itertools

import numpy as np
import pytest
from scipy.optimize import minimize

from ccpa.baselines import (OrthogonalAssignment, ep_bisection, load_powers_csv, loading_feasible,
                            loading_sinr, oes_allocate, save_powers_csv, single_user_loading,
                            zf_filters, zf_scmmse)
from ccpa.errors import InfeasibleError
from ccpa.exitlab import build_convergence_spec
from ccpa.model import SystemConfig, gen_static_channel, snr_db
from ccpa.optim import alternating_optimize
from ccpa.receiver import mmse_sinr

from conftest import flat_channel, random_channel
from oracles import manual_spec, scalar_bisection


def test_loading_without_residual_uses_strongest_bin():
    g = np.array([0.5, 2.0, 1.2, 0.1])
    P = single_user_loading(g, [0.7], [0.0], 0.8, 4)
    assert np.isclose(P.sum(), 4 * 0.7 * 0.8 / 2.0, rtol=1e-6)
    assert np.argmax(P) == 1 and P[1] / P.sum() > 0.999


def test_loading_single_bin_closed_form():
    g, xi, d, s2, N_F = 1.3, 0.2, 0.5, 0.9, 2
    P = single_user_loading([g], [xi], [d], s2, N_F)[0]
    closed = xi * N_F * s2 / (g * (1 - xi * N_F * d))
    bis = scalar_bisection(lambda p: p * g / (p * g * d + s2) / N_F - xi, 0, 1e3)
    assert np.isclose(P, closed, rtol=1e-6) and np.isclose(P, bis, rtol=1e-6)


def test_loading_zero_target():
    assert np.all(single_user_loading([1.0, 2.0], [0.0], [1.0], 1.0, 2) == 0)


def test_loading_bin_bound():
    with pytest.raises(InfeasibleError):
        single_user_loading([1.0, 1.0], [0.6], [1.0], 1.0, 4)
    assert not loading_feasible(2, [0.6], [1.0], 4)
    assert loading_feasible(3, [0.6], [1.0], 4)


def test_oes_single_user_takes_all_bins(small_spec):
    chan = random_channel(2, U=1, N_R=2)
    spec = build_convergence_spec([0.9999], [0.8], 0.1, 5)
    a, P = oes_allocate(chan, spec, 1.0)
    assert a.owner == (0,) * 8
    ref = single_user_loading(chan.gains()[0], spec.xi[0], spec.delta[0], 1.0, 8)
    assert np.allclose(P[0], ref, rtol=1e-6, atol=1e-9)


def _slsqp_loading(g, xi, delta, s2, N_F):
    """Independent per-assignment solver: SLSQP from several uniform starts."""
    n = len(g)
    if n == 0:
        return None
    cons = {"type": "ineq", "fun": lambda P: loading_sinr(np.maximum(P, 0), g, delta, s2, N_F) - xi}
    best = None
    for p0 in (1.0, 10.0, 100.0, 1000.0):
        x0 = np.full(n, p0)
        if np.any(cons["fun"](x0) < 0):
            continue
        r = minimize(np.sum, x0, jac=lambda P: np.ones(n), constraints=[cons],
                     bounds=[(0, None)] * n, method="SLSQP",
                     options=dict(ftol=1e-12, maxiter=500))
        if r.success and np.all(cons["fun"](r.x) > -1e-7):
            if best is None or r.fun < best:
                best = r.fun
    return best


def test_oes_matches_bruteforce_oracle():
    cfg = SystemConfig(U=2, N_R=2, N_F=4, N_L=3)
    chan = gen_static_channel(cfg, seed=4)
    spec = build_convergence_spec([0.9999] * 2, [0.6, 0.7], 0.1, 3)
    a, P = oes_allocate(chan, spec, 1.0)
    g = chan.gains()
    best = np.inf
    for owner in itertools.product(range(2), repeat=4):
        total = 0.0
        for u in range(2):
            bins = [m for m in range(4) if owner[m] == u]
            c = _slsqp_loading(g[u, bins], spec.xi[u], spec.delta[u], 1.0, 4)
            if c is None:
                total = np.inf
                break
            total += c
        best = min(best, total)
    assert np.isclose(P.sum(), best, rtol=1e-5)
    for u in range(2):
        assert np.all(P[u, a.bins(u)] >= 0)
        assert np.all(P[u, [m for m in range(4) if a.owner[m] != u]] == 0)


def test_oes_16qam_is_infeasible():
    chan = random_channel(0)
    spec = build_convergence_spec([0.9999] * 2, [0.7, 0.9], 0.1, 11, modulation="16qam")
    with pytest.raises(InfeasibleError):
        oes_allocate(chan, spec, 1.0)


def test_assignment_sets():
    a = OrthogonalAssignment((0, 1, 1, 0))
    assert [list(s) for s in a.sets(2)] == [[0, 3], [1, 2]]


def test_zf_cancels_cross_gains():
    chan = random_channel(9)
    W = zf_filters(chan)
    for m in range(8):
        G = np.einsum("ur,lr->ul", W[:, m].conj(), chan.freq[:, m])
        assert np.allclose(np.diag(G), 1.0)
        assert np.all(np.abs(G[~np.eye(2, dtype=bool)]) <= 1e-10)


def test_zf_on_orthogonal_channels_is_matched_filter():
    chan = flat_channel([[1.5, 0.0], [0.0, 0.8j]], N_F=2)
    spec = manual_spec([[0.9], [1.4]], [[0.0], [0.0]])
    P = zf_scmmse(chan, spec, 1.0)
    zeta = mmse_sinr(P, chan, spec.delta_seen, 1.0)
    assert np.allclose(zeta, spec.xi, rtol=1e-6)


def test_zf_needs_enough_antennas():
    with pytest.raises(InfeasibleError):
        zf_filters(random_channel(1, U=2, N_R=1))


def test_ep_single_user_closed_form():
    chan = flat_channel([[0.7 + 0.7j]], N_F=2)
    spec = manual_spec([[1.3]], [[0.0]])
    p = ep_bisection(chan, spec, 0.5, tol=1e-10)
    assert np.isclose(p, 1.3 * 0.5 / chan.gains()[0, 0], rtol=1e-8)


def test_ep_feasibility_monotone():
    chan = flat_channel([[1.0]], N_F=2)
    spec = manual_spec([[0.4, 0.9]], [[1.0, 0.3]])
    ps = np.geomspace(1e-2, 1e2, 60)
    ok = [np.all(mmse_sinr(np.full((1, 2), p), chan, spec.delta_seen, 1.0) >= spec.xi) for p in ps]
    assert all(b >= a for a, b in zip(ok, ok[1:]))
    p = ep_bisection(chan, spec, 1.0)
    assert np.all(mmse_sinr(np.full((1, 2), p), chan, spec.delta_seen, 1.0) >= spec.xi)


def test_ep_saturation_is_infeasible():
    chan = flat_channel([[1.0]], N_F=2)
    spec = manual_spec([[1.2]], [[1.0]])  # SINR stays below 1/D = 1
    with pytest.raises(InfeasibleError):
        ep_bisection(chan, spec, 1.0)


def test_ep_far_above_scagp_on_desk_instance(static_channel, table_spec):
    cfg = SystemConfig()
    p = ep_bisection(static_channel, table_spec, 1.0)
    P, _, _ = alternating_optimize(static_channel, table_spec, 1.0)
    assert snr_db(np.full((2, 8), p), cfg) - snr_db(P, cfg) > 5.0


def test_powers_csv_roundtrip(tmp_path):
    P = np.arange(16.0).reshape(2, 8) / 7
    save_powers_csv(P, tmp_path / "p.csv", {"method": "x"})
    back, meta = load_powers_csv(tmp_path / "p.csv")
    assert np.allclose(back, P, rtol=1e-11) and meta["method"] == "x"
