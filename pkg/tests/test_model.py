import numpy as np
import pytest
from scipy import stats

from ccpa.model import (ChannelRealization, SystemConfig, freq_response, gen_rayleigh_channel,
                        gen_static_channel, load_channel_csv, power_for_snr, save_channel_csv,
                        snr_db)


def test_config_rejects_bad_counts():
    with pytest.raises(ValueError):
        SystemConfig(N_L=9, N_F=8)
    with pytest.raises(ValueError):
        SystemConfig(N_Q=3)
    with pytest.raises(ValueError):
        SystemConfig(U=0)


def test_single_tap_is_flat():
    chan = gen_static_channel(SystemConfig(N_L=1), seed=3)
    mag = np.abs(chan.freq)
    assert np.allclose(mag, mag[:, :1, :], rtol=1e-12)


def test_static_channel_deterministic():
    cfg = SystemConfig()
    a, b = gen_static_channel(cfg, seed=7), gen_static_channel(cfg, seed=7)
    assert np.array_equal(a.taps, b.taps)
    assert np.array_equal(a.freq, b.freq)


def test_static_channel_unit_energy():
    cfg = SystemConfig(U=1, N_R=1)
    e = [np.sum(np.abs(gen_static_channel(cfg, seed=s).taps) ** 2) for s in range(10000)]
    assert abs(np.mean(e) - 1.0) < 0.02


def test_rayleigh_taps():
    cfg = SystemConfig(U=1, N_R=1, N_L=5)
    taps = np.stack([c.taps[0, 0] for c in gen_rayleigh_channel(cfg, seed=1, blocks=10000)])
    var = np.mean(np.abs(taps) ** 2, axis=0)
    assert np.all(np.abs(var * 5 - 1.0) < 0.02)
    # |h| ~ Rayleigh with sigma^2 = 1/(2 N_L)
    p = stats.kstest(np.abs(taps[:, 0]), "rayleigh", args=(0, np.sqrt(0.1))).pvalue
    assert p > 0.01
    again = gen_rayleigh_channel(cfg, seed=1)
    assert np.array_equal(again.taps, gen_rayleigh_channel(cfg, seed=1).taps)


def test_impulse_and_delay():
    N_F = 8
    h = np.zeros((1, 2, 3), dtype=complex)
    h[0, :, 0] = 1
    assert np.allclose(freq_response(h, N_F), 1.0)
    h = np.zeros((1, 1, 3), dtype=complex)
    h[0, 0, 1] = 1
    g = freq_response(h, N_F)[0, :, 0]
    assert np.allclose(np.abs(g), 1.0)
    assert np.allclose(np.diff(np.unwrap(np.angle(g))), -2 * np.pi / N_F)


def test_freq_response_matches_naive_dft():
    rng = np.random.default_rng(0)
    taps = rng.standard_normal((2, 3, 5)) + 1j * rng.standard_normal((2, 3, 5))
    N_F = 8
    naive = np.zeros((2, N_F, 3), dtype=complex)
    for u in range(2):
        for r in range(3):
            for m in range(N_F):
                naive[u, m, r] = sum(taps[u, r, l] * np.exp(-2j * np.pi * m * l / N_F)
                                     for l in range(5))
    assert np.allclose(freq_response(taps, N_F), naive, rtol=1e-12, atol=1e-12)


def test_snr_db():
    cfg = SystemConfig(noise_var=0.1)
    assert snr_db(np.zeros((2, 8)), cfg) == -np.inf
    assert np.isclose(snr_db(np.full((2, 8), 1.0), cfg), 10.0)
    one = SystemConfig()
    assert np.isclose(snr_db(np.full((2, 8), power_for_snr(0.0, one) / 16), one), 0.0)


def test_channel_csv_roundtrip(tmp_path):
    chan = gen_static_channel(SystemConfig(), seed=2)
    save_channel_csv(chan, tmp_path / "c.csv")
    back = load_channel_csv(tmp_path / "c.csv")
    assert np.array_equal(back.taps, chan.taps)
    assert back.N_F == chan.N_F


def test_realization_validates_layout():
    with pytest.raises(ValueError):
        ChannelRealization(np.zeros((2, 2)), N_F=8)
