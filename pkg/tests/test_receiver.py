import numpy as np

from ccpa.receiver import (ChainSetup, ReceiveFilters, delta_all_users, effective_sinr, equalize,
                           interference_covariance, mmse_filters, mmse_sinr, transmit,
                           turbo_equalize)

from conftest import flat_channel, random_channel


def test_covariance_trivial_cases():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
    assert np.allclose(interference_covariance(np.zeros(2), g, np.ones(2), 0.3), 0.3 * np.eye(3))
    assert np.allclose(interference_covariance(np.ones(2), g, np.zeros(2), 0.3), 0.3 * np.eye(3))


def test_covariance_matches_outer_products():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    P, d = rng.uniform(0.1, 2, 2), rng.uniform(0, 1, 2)
    ref = 0.5 * np.eye(2, dtype=complex)
    for l in range(2):
        ref += P[l] * d[l] * np.outer(g[l], g[l].conj())
    assert np.allclose(interference_covariance(P, g, d, 0.5), ref, atol=1e-12)


def test_no_interference_gives_matched_filter():
    chan = flat_channel([[0.6 - 0.2j, 0.1 + 0.9j]])
    f = mmse_filters(np.ones((1, 1)), chan, np.zeros((1, 1, 1)), 1.0)
    w, g = f.omega[0, 0, 0], chan.freq[0, 0]
    assert np.isclose(abs(np.vdot(w, g)), np.linalg.norm(w) * np.linalg.norm(g))


def test_filter_scaling_invariance():
    chan = random_channel(3)
    rng = np.random.default_rng(3)
    P = rng.uniform(0.5, 2, (2, 8))
    ds = delta_all_users([0.4, 0.7], K=1)
    f = mmse_filters(P, chan, ds, 1.0)
    z1 = effective_sinr(P, f, chan, ds, 1.0)
    z2 = effective_sinr(P, f.omega * 3.7, chan, ds, 1.0)
    assert np.allclose(z1, z2, rtol=1e-12)


def test_mmse_beats_random_filters():
    chan = random_channel(4)
    rng = np.random.default_rng(4)
    P = rng.uniform(0.5, 2, (2, 8))
    ds = delta_all_users([0.5, 0.5], K=1)
    best = mmse_sinr(P, chan, ds, 1.0)
    for _ in range(100):
        w = rng.normal(size=(2, 1, 8, 2)) + 1j * rng.normal(size=(2, 1, 8, 2))
        w /= np.linalg.norm(w, axis=-1, keepdims=True)
        assert np.all(effective_sinr(P, w, chan, ds, 1.0) <= best + 1e-12)


def test_effective_sinr_closed_forms():
    chan = random_channel(5)
    P = np.ones((2, 8))
    P[1] = 0
    assert np.allclose(mmse_sinr(P, chan, delta_all_users([1.0, 1.0]), 1.0)[1], 0.0)
    flat = flat_channel([[1.0]])
    assert np.isclose(mmse_sinr(np.full((1, 1), 2.0), flat, np.zeros((1, 1, 1)), 0.5)[0, 0], 4.0)


def test_closed_and_explicit_forms_agree():
    for seed in range(5):
        chan = random_channel(seed)
        rng = np.random.default_rng(seed)
        P = rng.uniform(0.1, 3, (2, 8))
        ds = rng.uniform(0, 1, (2, 3, 2))
        f = mmse_filters(P, chan, ds, 0.8)
        assert isinstance(f, ReceiveFilters)
        assert np.allclose(effective_sinr(P, f, chan, ds, 0.8), mmse_sinr(P, chan, ds, 0.8),
                           rtol=1e-10)


def test_noiseless_perfect_apriori_zero_ber():
    chan = random_channel(6)
    setup = ChainSetup.build(2, 1200, 2, 8, seed=0)
    # the chain draws its info bits first from the seeded generator
    _, rec = turbo_equalize(np.ones((2, 8)), chan, setup, 1.0, max_iters=1, frames=1, seed=0,
                            apriori_override=_perfect_apriori(setup, seed=0), noiseless=True)
    assert np.all(rec.ber[0] == 0)


def _perfect_apriori(setup, seed):
    rng = np.random.default_rng(seed)
    info = np.stack([rng.integers(0, 2, (1, c.n_info), dtype=np.int8) for c in setup.codes])
    coded = np.stack([setup.codes[u].encode(info[u]) for u in range(len(setup.codes))])
    return 30.0 * (1.0 - 2.0 * coded)


def test_first_pass_is_linear_mmse():
    chan = random_channel(7)
    rng = np.random.default_rng(7)
    P = rng.uniform(0.5, 2, (2, 8))
    sym = (rng.choice([-1, 1], (2, 4, 8)) + 1j * rng.choice([-1, 1], (2, 4, 8))) / np.sqrt(2)
    R = transmit(P, chan, sym, 0.5, rng)
    y, _, _ = equalize(R, P, chan, np.zeros_like(sym), np.ones(2), 0.5)
    # oracle: textbook LMMSE with every user's signal in the covariance, unit-gain output
    for u in range(2):
        out = np.empty((4, 8), dtype=complex)
        gain = np.empty(8)
        for m in range(8):
            H = chan.freq[:, m, :].T * np.sqrt(P[:, m])
            C = H @ H.conj().T + 0.5 * np.eye(2)
            w = np.linalg.solve(C, H[:, u])
            out[:, m] = R[:, m, :] @ w.conj()
            gain[m] = np.real(w.conj() @ H[:, u])
        z = np.fft.ifft(out, axis=-1, norm="ortho") / gain.mean()
        assert np.allclose(y[u], z, atol=1e-10)
