import numpy as np
import pytest
from scipy.optimize import brentq

from ccpa.codec import RACode
from ccpa.errors import InfeasibleError
from ccpa.exitlab import (ConvergenceSpec, DecoderExitCurve, JParams, bep_from_mi,
                          bpsk_llr_mi, build_convergence_spec, ccc_bitwise_mi,
                          decoder_exit_curve, default_decoder_curve, default_jparams,
                          equalizer_exit, fit_j_params, invert_decoder_curve, j_forward,
                          j_inverse, load_jparams_csv, predicted_iterations,
                          residual_interference, save_jparams_csv, semi_analytic_exit,
                          xi_from_variance)
from ccpa.receiver import ChainSetup, turbo_equalize

from conftest import flat_channel

QPSK = default_jparams("qpsk")
QAM = default_jparams("16qam")


def test_j_limits_and_roundtrip():
    assert j_inverse(0.0, QPSK) == 0.0
    assert j_forward(0.0, QPSK) == 0.0
    I = np.linspace(0.1, 0.9, 9)
    assert np.allclose(j_forward(j_inverse(I, QPSK), QPSK), I, atol=1e-10)
    s = np.geomspace(1e-2, 1e3, 200)
    v = j_forward(s, QPSK)
    assert np.all(np.diff(v) >= 0) and np.all(np.diff(v[v < 0.999]) > 0) and v[-1] > 0.999999
    with pytest.raises(InfeasibleError):
        j_inverse(1.0, QPSK)


def test_j_inverse_ordering():
    I = np.linspace(0.01, 0.99, 99)
    assert np.all(j_inverse(I, QAM) >= j_inverse(I, QPSK))


@pytest.mark.parametrize("s2", [1.0, 4.0, 9.0])
def test_j_forward_matches_monte_carlo(s2):
    rng = np.random.default_rng(int(s2))
    L = s2 / 2 + np.sqrt(s2) * rng.standard_normal(400000)
    mc = 1.0 - np.mean(np.logaddexp(0.0, -L)) / np.log(2.0)
    assert abs(j_forward(s2, QPSK) - mc) < 0.01


def test_refit_recovers_known_parameters():
    truth = JParams(0.37, 0.86, 1.05)
    s2 = np.geomspace(1e-2, 200, 120)
    p, res = fit_j_params("qpsk", table=(s2, j_forward(s2, truth)))
    assert res < 1e-8
    assert np.allclose([p.H1, p.H2, p.H3], [truth.H1, truth.H2, truth.H3], atol=1e-3)


@pytest.mark.parametrize("mod", ["qpsk", "16qam"])
def test_fitted_curves_follow_oracle(mod):
    s2 = np.geomspace(1e-2, 400, 160)
    p = default_jparams(mod)
    assert np.max(np.abs(j_forward(s2, p) - ccc_bitwise_mi(s2, mod))) <= 0.01


def test_qpsk_oracle_is_bpsk_llr_mi():
    s2 = np.array([0.5, 2.0, 10.0])
    assert np.allclose(ccc_bitwise_mi(s2, "qpsk"), bpsk_llr_mi(s2), atol=1e-10)


def test_jparams_csv_roundtrip(tmp_path):
    save_jparams_csv({"qpsk": QPSK, "16qam": QAM}, tmp_path / "j.csv")
    back = load_jparams_csv(tmp_path / "j.csv")
    assert back["qpsk"] == QPSK and back["16qam"] == QAM


def test_residual_interference_limits_and_mc():
    assert residual_interference(0.0, "qpsk") == 1.0
    assert residual_interference(1.0, "qpsk") == 0.0
    rng = np.random.default_rng(0)
    s2 = float(j_inverse(0.5, QPSK))
    L = s2 / 2 + np.sqrt(s2) * rng.standard_normal(10 ** 6)
    mc = 1.0 - np.mean(np.tanh(L / 2) ** 2)
    assert abs(residual_interference(0.5, "qpsk") - mc) < 1e-3
    I = np.linspace(0, 1, 21)
    for mod in ("qpsk", "16qam"):
        d = residual_interference(I, mod)
        assert np.all(np.diff(d) <= 1e-12)


def test_decoder_exit_curve_endpoints_and_determinism():
    grid = [0.0, 0.5, 0.9999]
    a = decoder_exit_curve(grid, blocks=4, block_bits=3000, seed=2)
    b = decoder_exit_curve(grid, blocks=4, block_bits=3000, seed=2)
    assert a.output[0] <= 0.02
    assert a.output[-1] >= 0.99
    assert np.array_equal(a.raw, b.raw)


def test_shipped_curve_roundtrip(tmp_path):
    c = default_decoder_curve()
    c.save_csv(tmp_path / "c.csv")
    back = DecoderExitCurve.load_csv(tmp_path / "c.csv")
    assert np.array_equal(back.grid, c.grid) and np.array_equal(back.output, c.output)


def test_invert_decoder_curve():
    c = default_decoder_curve()
    j = 20
    assert invert_decoder_curve(c, c.output[j]) == pytest.approx(c.grid[j], abs=1e-12)
    assert invert_decoder_curve(c, 0.0) == 0.0
    target = 0.5 * (c.output[j] + c.output[j + 1])
    oracle = brentq(lambda x: c(x) - target, c.grid[j], c.grid[j + 1], xtol=1e-14)
    assert abs(invert_decoder_curve(c, target) - oracle) < 1e-9
    with pytest.raises(InfeasibleError):
        invert_decoder_curve(c, 1.5)


def test_xi_closed_forms():
    assert xi_from_variance(4.0, 0.0) == 1.0
    assert xi_from_variance(4.0, 1.0) == 0.5


def test_convergence_spec_shape(table_spec):
    s = table_spec
    assert s.xi.shape == (2, 11)
    assert np.all(np.diff(s.I, axis=1) > 0)
    assert np.all(s.eps[:, :-1] == 0.1) and np.all(s.eps[:, -1] == 0)
    assert np.all(np.diff(s.delta, axis=1) <= 0)
    assert np.all(np.isfinite(s.xi)) and np.all(s.xi > 0)


def test_linear_equalizer_spec():
    s = build_convergence_spec([0.9999] * 2, [0.7, 0.9], 0.1, 1)
    assert s.xi.shape == (2, 1)
    assert np.allclose(s.delta, 1.0)
    assert np.allclose(s.I, 0.0)


def test_worst_case_sees_full_interference(small_spec):
    ws = build_convergence_spec([0.9999] * 2, [0.7, 0.9], 0.1, 5, mode="worst-case")
    ds = ws.delta_seen
    assert np.allclose(ds[0, :, 1], 1.0) and np.allclose(ds[0, :, 0], ws.delta[0])
    assert np.allclose(small_spec.delta_seen[0, :, 1], small_spec.delta[1])


def test_bep_pairs():
    assert 2e-7 < bep_from_mi(0.9998, 0.9819) < 5e-6
    assert 2e-4 < bep_from_mi(0.99, 0.6185) < 5e-3
    assert bep_from_mi(0.0, 0.0) == 0.5


def test_semi_analytic_limits():
    chan = flat_channel([[1.0]])
    spec0 = ConvergenceSpec(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                            np.full((1, 1), 4.0), np.ones((1, 1)))
    assert semi_analytic_exit(np.zeros((1, 1)), chan, spec0, 0, 0, 1.0) == 0.0
    # zeta = P |g|^2 / s2 = 1 with no residual interference -> variance 4
    assert np.isclose(semi_analytic_exit(np.ones((1, 1)), chan, spec0, 0, 0, 1.0),
                      j_forward(4.0, QPSK))


def test_semi_analytic_matches_chain_single_user():
    chan = flat_channel([[0.8 + 0.3j]], N_F=8)
    setup = ChainSetup.build(1, 6000, 2, 8, seed=1)
    for p in (0.3, 1.0, 2.5):
        P = np.full((1, 8), p)
        _, rec = turbo_equalize(P, chan, setup, 1.0, max_iters=1, frames=2, seed=3)
        pred = equalizer_exit(P, chan, [0.0], 1.0, "qpsk")[0]
        assert abs(rec.I_eq[0, 0] - pred) < 0.02


def test_predicted_iterations_counts(static_channel, small_spec):
    P = np.full((2, 8), 50.0)
    done, traj = predicted_iterations(P, static_channel, small_spec, 1.0)
    assert np.all(done >= 1) and np.all(done < 100)
    assert len(traj) == done.max()
