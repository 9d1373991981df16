"""Mutual-information machinery: J-functions, residual interference, decoder EXIT
curves, convergence constraints and semi-analytic equalizer EXIT prediction.

Modulation names are ``"qpsk"`` and ``"16qam"``; ``"bpsk"`` is an alias of the
QPSK J-function (Gray QPSK is two independent BPSK axes).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erfc, logsumexp
from sklearn.isotonic import IsotonicRegression

from .codec import RACode, bits_to_signs, llr_mi
from .errors import InfeasibleError
from .model import ChannelRealization
from .receiver import delta_all_users, mmse_sinr

MODULATIONS = {"qpsk": 2, "16qam": 4}


def _modname(modulation) -> str:
    if isinstance(modulation, int):
        return {2: "qpsk", 4: "16qam"}[modulation]
    m = str(modulation).lower()
    return "qpsk" if m == "bpsk" else m


# -- J-function ----------------------------------------------------------------

@dataclass(frozen=True)
class JParams:
    H1: float
    H2: float
    H3: float
    modulation: str = "qpsk"

    def __post_init__(self):
        if min(self.H1, self.H2, self.H3) <= 0:
            raise ValueError("J-function parameters must be positive")


def j_forward(s2, p: JParams):
    """MI of an LLR channel with variance ``s2``: ``(1 - 2**(-H1 s2**H2))**H3``."""
    s2 = np.asarray(s2, dtype=float)
    if np.any(s2 < 0):
        raise ValueError("LLR variance must be nonnegative")
    return (-np.expm1(-p.H1 * s2 ** p.H2 * np.log(2.0))) ** p.H3


def j_inverse(I, p: JParams):
    """LLR variance needed for MI ``I``; raises :class:`InfeasibleError` for ``I >= 1``."""
    I = np.asarray(I, dtype=float)
    if np.any(I < 0):
        raise ValueError("MI must be nonnegative")
    if np.any(I >= 1):
        raise InfeasibleError("MI target >= 1 needs unbounded LLR variance")
    inner = -np.log2(-np.expm1(np.log(np.maximum(I, 1e-300)) / p.H3)) / p.H1
    return np.where(I > 0, np.maximum(inner, 0.0) ** (1.0 / p.H2), 0.0)


# -- constellation-constrained MI oracle -----------------------------------------

_GH_N = 96


@lru_cache(maxsize=None)
def _gh(n=_GH_N):
    x, w = np.polynomial.hermite.hermgauss(n)
    return x, w / np.sqrt(np.pi)


def _pam_axis(N_Q: int):
    """Per-axis levels (normalized so the complex symbol has unit energy) and labels."""
    h = N_Q // 2
    if h == 1:
        levels = np.array([1.0, -1.0])
        labels = np.array([[0], [1]])
    else:
        levels = np.array([3.0, 1.0, -1.0, -3.0])
        labels = np.array([[0, 0], [0, 1], [1, 1], [1, 0]])
    levels = levels / np.sqrt(2 * np.mean(levels ** 2))
    return levels, labels


def bpsk_llr_mi(s2):
    """MI of consistent Gaussian LLRs ``N(s2/2, s2)`` by Gauss-Hermite quadrature."""
    x, w = _gh()
    s2 = np.atleast_1d(np.asarray(s2, dtype=float))
    L = s2[:, None] / 2 + np.sqrt(2 * s2[:, None]) * x
    return 1.0 - (np.logaddexp(0.0, -L) @ w) / np.log(2.0)


def ccc_bitwise_mi(s2, modulation):
    """Average bitwise MI of a Gray MAP demapper at SNR ``s2/4`` without a priori.

    The SNR scaling makes the QPSK case coincide with :func:`bpsk_llr_mi`, so
    ``s2`` is the LLR-variance axis of the J-function.
    """
    N_Q = MODULATIONS[_modname(modulation)]
    levels, labels = _pam_axis(N_Q)
    x, w = _gh()
    out = []
    for v in np.atleast_1d(np.asarray(s2, dtype=float)):
        if v <= 0:
            out.append(0.0)
            continue
        nv = 4.0 / v  # complex noise variance
        n = np.sqrt(nv / 2) * np.sqrt(2) * x  # real-axis noise nodes
        loss = 0.0
        for i, a in enumerate(levels):
            y = a + n
            metric = -(y[:, None] - levels[None, :]) ** 2 / nv
            for q in range(labels.shape[1]):
                zero = labels[:, q] == 0
                llr = logsumexp(metric[:, zero], axis=1) - logsumexp(metric[:, ~zero], axis=1)
                sgn = 1.0 - 2.0 * labels[i, q]
                loss += np.logaddexp(0.0, -sgn * llr) @ w
        out.append(1.0 - loss / (len(levels) * labels.shape[1] * np.log(2.0)))
    return np.array(out)


def fit_j_params(modulation, s2_grid=None, table=None, max_residual=0.02):
    """Least-squares fit of the J-function form to the CCC oracle.

    Returns ``(JParams, max_abs_residual)``. ``table`` may supply ``(s2, I)``
    directly instead of the oracle.
    """
    mod = _modname(modulation)
    if table is None:
        if s2_grid is None:
            s2_grid = np.geomspace(1e-2, 400.0, 160)
        s2 = np.asarray(s2_grid, dtype=float)
        I = ccc_bitwise_mi(s2, mod)
    else:
        s2, I = (np.asarray(a, dtype=float) for a in table)

    def resid(h):
        return j_forward(s2, JParams(*h, mod)) - I

    sol = least_squares(resid, x0=[0.3, 0.9, 1.1], bounds=([1e-6] * 3, [10.0] * 3),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
    p = JParams(*map(float, sol.x), mod)
    worst = float(np.max(np.abs(resid(sol.x))))
    if worst > max_residual:
        raise RuntimeError(f"J-function fit for {mod} failed: max residual {worst:.4f}")
    return p, worst


def save_jparams_csv(params: dict, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("# J-function parameters fitted to the bitwise CCC oracle\n")
        w = csv.writer(fh)
        w.writerow(["modulation", "H1", "H2", "H3"])
        for mod, p in params.items():
            w.writerow([mod, repr(p.H1), repr(p.H2), repr(p.H3)])


def load_jparams_csv(path) -> dict:
    with Path(path).open() as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return {r["modulation"]: JParams(float(r["H1"]), float(r["H2"]), float(r["H3"]),
                                         r["modulation"]) for r in rows}


@lru_cache(maxsize=None)
def default_jparams(modulation="qpsk") -> JParams:
    mod = _modname(modulation)
    try:
        with resources.as_file(resources.files("ccpa") / "data" / "jparams.csv") as path:
            table = load_jparams_csv(path)
        return table[mod]
    except (FileNotFoundError, KeyError):
        return fit_j_params(mod)[0]


# -- residual interference -------------------------------------------------------

def residual_interference(I_A, modulation, jp_bpsk: JParams | None = None):
    """Average residual interference ``1 - E|b_tilde|^2`` for a priori MI ``I_A``.

    The a priori bit LLRs are modelled as consistent Gaussians with variance
    ``J^{-1}(I_A)`` (BPSK J-function); the expectation is evaluated by
    Gauss-Hermite quadrature over each axis' bits.
    """
    jp = jp_bpsk or default_jparams("qpsk")
    N_Q = MODULATIONS[_modname(modulation)]
    levels, labels = _pam_axis(N_Q)
    h = labels.shape[1]
    x, w = _gh(48)
    I_arr = np.atleast_1d(np.asarray(I_A, dtype=float))
    if np.any((I_arr < 0) | (I_arr > 1)):
        raise ValueError("a priori MI must lie in [0, 1]")
    out = np.empty_like(I_arr)
    for idx, I in enumerate(I_arr):
        if I >= 1:
            out[idx] = 0.0
            continue
        s2 = float(j_inverse(I, jp))
        if s2 == 0:
            out[idx] = 1.0
            continue
        sbar = 2.0 * labels - 1.0
        e2 = 0.0
        for i in range(len(levels)):
            xs = 1.0 - 2.0 * labels[i]
            grids = [xs[q] * s2 / 2 + np.sqrt(2 * s2) * x for q in range(h)]
            mesh = np.meshgrid(*grids, indexing="ij")
            wmesh = np.prod(np.meshgrid(*([w] * h), indexing="ij"), axis=0)
            th = np.stack([np.tanh(m / 2) for m in mesh], axis=-1)  # (..., h)
            probs = np.prod(0.5 * (1 - sbar * th[..., None, :]), axis=-1)  # (..., levels)
            soft = probs @ levels
            e2 += np.sum(wmesh * soft ** 2)
        # two axes, averaged over the per-axis symbols
        out[idx] = 1.0 - 2.0 * e2 / len(levels)
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(I_A) else float(out[0])


# -- decoder EXIT curves -----------------------------------------------------------

@dataclass
class DecoderExitCurve:
    grid: np.ndarray
    output: np.ndarray
    raw: np.ndarray = field(default=None)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.output = np.asarray(self.output, dtype=float)
        if self.raw is None:
            self.raw = self.output.copy()
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("decoder EXIT grid must be strictly increasing")

    def __call__(self, I_A):
        """Forward interpolation of the decoder transfer."""
        return np.interp(I_A, self.grid, self.output)

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            for k, v in self.meta.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["grid", "value", "raw"])
            for g, o, r in zip(self.grid, self.output, self.raw):
                w.writerow([repr(float(g)), repr(float(o)), repr(float(r))])

    @classmethod
    def load_csv(cls, path) -> "DecoderExitCurve":
        meta, lines = {}, []
        with Path(path).open() as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k.strip()] = v.strip()
                else:
                    lines.append(line)
        rows = list(csv.DictReader(lines))
        grid = [float(r["grid"]) for r in rows]
        out = [float(r["value"]) for r in rows]
        raw = [float(r["raw"]) for r in rows] if rows and "raw" in rows[0] else None
        return cls(grid, out, raw, meta)


def default_exit_grid():
    return np.unique(np.concatenate([np.linspace(0, 0.3, 7), np.linspace(0.3, 0.8, 26),
                                     np.linspace(0.8, 0.99, 5), [0.995, 0.999, 0.9999]]))


def decoder_exit_curve(grid=None, blocks=200, block_bits=6000, seed=0, iters=8,
                       jp_bpsk: JParams | None = None, code: RACode | None = None):
    """Measure the RA decoder's extrinsic MI against Gaussian a priori input.

    A priori LLRs of every coded bit are drawn as ``N(x s2/2, s2)`` with
    ``s2 = J^{-1}(I_A)``; the measured curve is made monotone by isotonic
    regression.
    """
    jp = jp_bpsk or default_jparams("qpsk")
    grid = default_exit_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any((grid < 0) | (grid >= 1)):
        raise ValueError("a priori grid must lie in [0, 1)")
    if block_bits % 3:
        raise ValueError("block_bits must be a multiple of 3")
    code = code or RACode(block_bits // 3, seed=seed)
    rng = np.random.default_rng(seed)
    raw = np.empty(len(grid))
    batch = 25
    for gi, I in enumerate(grid):
        s2 = float(j_inverse(I, jp))
        acc, done = 0.0, 0
        while done < blocks:
            nb = min(batch, blocks - done)
            info = rng.integers(0, 2, (nb, code.n_info))
            x = bits_to_signs(code.encode(info))
            L = x * s2 / 2 + np.sqrt(s2) * rng.standard_normal(x.shape)
            ext, _, _ = code.decode(L, iters)
            acc += llr_mi(ext, x) * nb
            done += nb
        raw[gi] = acc / blocks
    iso = IsotonicRegression(y_min=0.0, y_max=1.0, increasing=True)
    out = iso.fit_transform(grid, np.clip(raw, 0.0, 1.0))
    meta = {"blocks": blocks, "block_bits": block_bits, "seed": seed, "iters": iters}
    return DecoderExitCurve(grid, out, raw, meta)


@lru_cache(maxsize=None)
def default_decoder_curve() -> DecoderExitCurve:
    with resources.as_file(resources.files("ccpa") / "data" / "decoder_exit_ra13.csv") as path:
        return DecoderExitCurve.load_csv(path)


def invert_decoder_curve(curve: DecoderExitCurve, target: float) -> float:
    """Smallest a priori MI at which the interpolated curve reaches ``target``."""
    g, o = curve.grid, curve.output
    if target > o[-1] + 1e-12:
        raise InfeasibleError(f"decoder curve tops out at {o[-1]:.6f} < target {target:.6f}")
    if target <= o[0]:
        return float(np.clip(g[0], 0.0, 1.0))
    j = int(np.argmax(o >= target))
    x = g[j - 1] + (target - o[j - 1]) * (g[j] - g[j - 1]) / (o[j] - o[j - 1])
    return float(np.clip(x, 0.0, 1.0))


# -- convergence constraints ---------------------------------------------------------

@dataclass
class ConvergenceSpec:
    I: np.ndarray       # (U, K) decoder-output MI grid
    eps: np.ndarray     # (U, K)
    delta: np.ndarray   # (U, K) own residual interference
    sigma2: np.ndarray  # (U, K) required LLR variance
    xi: np.ndarray      # (U, K) SINR targets
    mode: str = "diagonal"
    modulation: str = "qpsk"
    I_dec_target: np.ndarray = None
    I_eq_target: np.ndarray = None

    @property
    def U(self) -> int:
        return self.xi.shape[0]

    @property
    def K(self) -> int:
        return self.xi.shape[1]

    @property
    def delta_seen(self) -> np.ndarray:
        """Residual interference of user l seen by constraint (u, k), shape (U, K, U)."""
        U, K = self.delta.shape
        if self.mode == "worst-case":
            ds = np.ones((U, K, U))
        else:
            ds = np.broadcast_to(self.delta.T[None, :, :], (U, K, U)).copy()
        ds[np.arange(U), :, np.arange(U)] = self.delta
        return ds

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write(f"# mode={self.mode}\n# modulation={self.modulation}\n")
            w = csv.writer(fh)
            w.writerow(["user", "k", "I", "eps", "delta", "xi"])
            for u in range(self.U):
                for k in range(self.K):
                    w.writerow([u, k + 1, f"{self.I[u, k]:.10g}", f"{self.eps[u, k]:.10g}",
                                f"{self.delta[u, k]:.10g}", f"{self.xi[u, k]:.10g}"])


def xi_from_variance(sigma2, delta):
    """SINR target ``s2 / (4 + s2 * delta)``."""
    sigma2 = np.asarray(sigma2, dtype=float)
    return sigma2 / (4.0 + sigma2 * np.asarray(delta, dtype=float))


def build_convergence_spec(I_dec_targets, I_eq_targets, eps, K, curves=None, modulation="qpsk",
                           mode="diagonal", jparams: JParams | None = None,
                           jp_bpsk: JParams | None = None) -> ConvergenceSpec:
    """Discretize the tunnel condition into K SINR constraints per user.

    The grid runs uniformly from 0 to the decoder target; the last point asks
    for ``max(f^{-1}(target), I_eq_target)`` with zero gap. ``K = 1`` is the
    linear-equalizer case: a single point with no feedback.
    """
    mod = _modname(modulation)
    if mode not in ("diagonal", "worst-case"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if K < 1:
        raise ValueError("K must be at least 1")
    I_dec_targets = np.atleast_1d(np.asarray(I_dec_targets, dtype=float))
    U = len(I_dec_targets)
    I_eq_targets = np.broadcast_to(np.asarray(I_eq_targets, dtype=float), (U,))
    eps_u = np.broadcast_to(np.asarray(eps, dtype=float), (U,))
    for t in np.concatenate([I_dec_targets, I_eq_targets]):
        if not 0 < t <= 1:
            raise ValueError("MI targets must lie in (0, 1]")
    if curves is None:
        curves = default_decoder_curve()
    if isinstance(curves, DecoderExitCurve):
        curves = [curves] * U
    jp = jparams or default_jparams(mod)
    jpb = jp_bpsk or default_jparams("qpsk")

    I = np.zeros((U, K))
    E = np.zeros((U, K))
    req = np.zeros((U, K))
    for u in range(U):
        I[u] = np.linspace(0.0, I_dec_targets[u], K) if K > 1 else [0.0]
        E[u, :-1] = eps_u[u]
        for k in range(K):
            if k < K - 1:
                req[u, k] = invert_decoder_curve(curves[u], I[u, k]) + eps_u[u]
            else:
                try:
                    need = invert_decoder_curve(curves[u], I_dec_targets[u])
                except InfeasibleError as exc:
                    raise InfeasibleError(str(exc), where=(u, k)) from None
                req[u, k] = max(need, I_eq_targets[u])
            if req[u, k] >= 1:
                raise InfeasibleError(
                    f"user {u} point {k + 1}: required equalizer MI {req[u, k]:.4f} >= 1",
                    where=(u, k))
    sigma2 = j_inverse(req, jp)
    delta = residual_interference(I.ravel(), mod, jpb).reshape(U, K)
    xi = xi_from_variance(sigma2, delta)
    return ConvergenceSpec(I, E, delta, sigma2, xi, mode, mod, I_dec_targets.copy(),
                           np.array(I_eq_targets, dtype=float))


def bep_from_mi(I_A, I_E, jp_bpsk: JParams | None = None):
    """Bit error probability after decoding for a priori/extrinsic MI targets."""
    jp = jp_bpsk or default_jparams("qpsk")
    s = j_inverse(I_A, jp) + j_inverse(I_E, jp)
    return 0.5 * erfc(np.sqrt(s) / (2 * np.sqrt(2)))


# -- semi-analytic equalizer EXIT ---------------------------------------------------

def variance_from_sinr(zeta, delta):
    zeta = np.asarray(zeta, dtype=float)
    denom = 1.0 - zeta * np.asarray(delta, dtype=float)
    if np.any(denom <= 0):
        raise ArithmeticError("zeta * delta >= 1: LLR variance mapping is singular")
    return 4.0 * zeta / denom


def semi_analytic_exit(P, chan: ChannelRealization, spec: ConvergenceSpec, u, k, noise_var,
                       jparams: JParams | None = None) -> float:
    """Predicted equalizer output MI of user ``u`` at MI index ``k`` (0-based)."""
    jp = jparams or default_jparams(spec.modulation)
    zeta = mmse_sinr(P, chan, spec.delta_seen, noise_var)[u, k]
    s2 = variance_from_sinr(zeta, spec.delta[u, k])
    return float(j_forward(s2, jp))


def equalizer_exit(P, chan: ChannelRealization, I_dec, noise_var, modulation,
                   jparams: JParams | None = None, jp_bpsk: JParams | None = None):
    """Predicted equalizer output MI of every user for decoder outputs ``I_dec`` (U,)."""
    mod = _modname(modulation)
    jp = jparams or default_jparams(mod)
    delta = residual_interference(np.asarray(I_dec, dtype=float), mod, jp_bpsk)
    delta = np.atleast_1d(delta)
    zeta = mmse_sinr(P, chan, delta_all_users(delta), noise_var)[:, 0]
    return j_forward(variance_from_sinr(zeta, delta), jp)


def predicted_iterations(P, chan, spec: ConvergenceSpec, noise_var, curves=None,
                         tol=0.01, max_iters=100, jparams=None):
    """Count EXIT-chart staircase steps until every decoder reaches its target minus ``tol``.

    All users iterate in parallel. Returns ``(iterations_per_user, trajectory)``;
    users that stall report ``max_iters``.
    """
    if curves is None:
        curves = default_decoder_curve()
    if isinstance(curves, DecoderExitCurve):
        curves = [curves] * spec.U
    I_dec = np.zeros(spec.U)
    done = np.full(spec.U, max_iters)
    traj = []
    for it in range(1, max_iters + 1):
        I_eq = equalizer_exit(P, chan, I_dec, noise_var, spec.modulation, jparams)
        I_dec = np.array([curves[u](I_eq[u]) for u in range(spec.U)])
        traj.append((I_eq.copy(), I_dec.copy()))
        hit = (I_dec >= spec.I_dec_target - tol) & (done == max_iters)
        done[hit] = it
        if np.all(done < max_iters):
            break
    return done, traj


def llr_mi_histogram(llrs, signs, bins=200):
    """Histogram estimate of the bit-LLR mutual information (no consistency assumption)."""
    llrs = np.asarray(llrs, dtype=float).ravel()
    signs = np.asarray(signs).ravel()
    edges = np.linspace(llrs.min() - 1e-9, llrs.max() + 1e-9, bins + 1)
    p_pos, _ = np.histogram(llrs[signs > 0], edges)
    p_neg, _ = np.histogram(llrs[signs < 0], edges)
    p_pos = p_pos / max(p_pos.sum(), 1)
    p_neg = p_neg / max(p_neg.sum(), 1)
    mix = 0.5 * (p_pos + p_neg)
    mi = 0.0
    for p in (p_pos, p_neg):
        nz = p > 0
        mi += 0.5 * np.sum(p[nz] * np.log2(p[nz] / mix[nz]))
    return float(mi)
