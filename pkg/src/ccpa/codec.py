"""Systematic repeat-accumulate codec, interleavers, Gray mapping and soft (de)mapping.

LLRs are natural-log ratios ``ln Pr(c=0)/Pr(c=1)``; bit 0 maps to the
positive antipodal level, so a positive LLR favours ``x = 1 - 2c = +1``.
All LLRs are clipped to ``+-LLR_CLIP``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numba
import numpy as np
from scipy.special import logsumexp

LLR_CLIP = 30.0


@dataclass(frozen=True)
class Interleaver:
    permutation: np.ndarray
    seed: int | None = None

    @classmethod
    def random(cls, n: int, seed: int) -> "Interleaver":
        # numpy's permutation is a Fisher-Yates shuffle
        return cls(np.random.default_rng(seed).permutation(n), seed)

    @classmethod
    def pair_spread(cls, n: int, seed: int, spread: int) -> "Interleaver":
        """Fisher-Yates permutation repaired so inputs ``2i`` and ``2i+1`` land
        at least ``spread`` positions apart (used for the RA repetition pairs)."""
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        for _ in range(100):
            bad = np.nonzero(np.abs(inv[0::2] - inv[1::2]) < spread)[0]
            if len(bad) == 0:
                break
            for i in bad:
                a, b = inv[2 * i + 1], rng.integers(n)
                ea, eb = perm[a], perm[b]
                perm[a], perm[b] = eb, ea
                inv[eb], inv[ea] = a, b
        return cls(perm, seed)

    @classmethod
    def identity(cls, n: int) -> "Interleaver":
        return cls(np.arange(n), None)

    def __len__(self):
        return len(self.permutation)

    def interleave(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a)[..., self.permutation]

    def deinterleave(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        out = np.empty_like(a)
        out[..., self.permutation] = a
        return out


# -- RA code -----------------------------------------------------------------

@numba.njit(cache=True)
def _boxplus(a, b):
    s = 1.0 if (a >= 0) == (b >= 0) else -1.0
    m = min(abs(a), abs(b))
    return s * m + np.log1p(np.exp(-abs(a + b))) - np.log1p(np.exp(-abs(a - b)))


@numba.njit(cache=True)
def _accumulator_bcjr(la_v, l_par, clip):
    """Extrinsic LLRs of the inputs and outputs of p_j = p_{j-1} xor v_j, p_0 = 0."""
    B, n = la_v.shape
    le_v = np.empty_like(la_v)
    le_p = np.empty_like(la_v)
    fwd = np.empty(n + 1)
    bwd = np.empty(n)
    for b in range(B):
        fwd[0] = clip
        for j in range(n):
            fwd[j + 1] = _boxplus(fwd[j], la_v[b, j]) + l_par[b, j]
        bwd[n - 1] = 0.0
        for j in range(n - 2, -1, -1):
            bwd[j] = _boxplus(bwd[j + 1] + l_par[b, j + 1], la_v[b, j + 1])
        for j in range(n):
            v = _boxplus(fwd[j], l_par[b, j] + bwd[j])
            p = _boxplus(fwd[j], la_v[b, j]) + bwd[j]
            le_v[b, j] = min(max(v, -clip), clip)
            le_p[b, j] = min(max(p, -clip), clip)
    return le_v, le_p


class RACode:
    """Rate-1/3 systematic RA code: info || accumulate(interleave(repeat2(info)))."""

    rate = Fraction(1, 3)

    def __init__(self, n_info: int, seed: int = 0, interleaver: Interleaver | None = None):
        self.n_info = int(n_info)
        if interleaver is None:
            spread = max(1, min(40, self.n_info // 8))
            interleaver = Interleaver.pair_spread(2 * self.n_info, seed, spread)
        if len(interleaver) != 2 * self.n_info:
            raise ValueError("RA interleaver must have length 2 * n_info")
        self.interleaver = interleaver

    @property
    def n_coded(self) -> int:
        return 3 * self.n_info

    def encode(self, info: np.ndarray) -> np.ndarray:
        info = np.asarray(info, dtype=np.int8)
        if info.shape[-1] != self.n_info:
            raise ValueError(f"expected {self.n_info} info bits, got {info.shape[-1]}")
        v = self.interleaver.interleave(np.repeat(info, 2, axis=-1))
        parity = (np.cumsum(v, axis=-1) & 1).astype(np.int8)
        return np.concatenate([info, parity], axis=-1)

    def decode(self, apriori: np.ndarray, iters: int = 8):
        """Sum-product decoding over the repetition nodes and the accumulator trellis.

        ``apriori`` holds LLRs for every coded bit, shape (..., 3*n_info).
        Returns ``(extrinsic, info_llrs, hard_info_bits)``; the extrinsic LLR of a
        bit never contains that bit's own a priori value.
        """
        apriori = np.asarray(apriori, dtype=float)
        if apriori.shape[-1] != self.n_coded:
            raise ValueError(f"expected {self.n_coded} LLRs, got {apriori.shape[-1]}")
        lead = apriori.shape[:-1]
        L = np.clip(apriori.reshape(-1, self.n_coded), -LLR_CLIP, LLR_CLIP)
        N = self.n_info
        l_sys, l_par = L[:, :N], np.ascontiguousarray(L[:, N:])
        ext_edge = np.zeros((L.shape[0], 2 * N))
        le_p = np.zeros_like(l_par)
        for _ in range(max(int(iters), 1)):
            # repetition node: channel value plus the other copy's message
            partner = ext_edge.reshape(-1, N, 2)[:, :, ::-1].reshape(-1, 2 * N)
            to_acc = np.repeat(l_sys, 2, axis=1) + partner
            la_v = np.ascontiguousarray(
                np.clip(self.interleaver.interleave(to_acc), -LLR_CLIP, LLR_CLIP))
            le_v, le_p = _accumulator_bcjr(la_v, l_par, LLR_CLIP)
            ext_edge = self.interleaver.deinterleave(le_v)
        ext_sys = ext_edge.reshape(-1, N, 2).sum(axis=2)
        extrinsic = np.clip(np.concatenate([ext_sys, le_p], axis=1), -LLR_CLIP, LLR_CLIP)
        info_llr = l_sys + ext_sys
        hard = (info_llr < 0).astype(np.int8)
        return (extrinsic.reshape(lead + (self.n_coded,)),
                info_llr.reshape(lead + (N,)), hard.reshape(lead + (N,)))


def ra_encode(info_bits, rate, interleaver: Interleaver) -> np.ndarray:
    if Fraction(rate).limit_denominator(1000) != Fraction(1, 3):
        raise ValueError(f"unsupported code rate {rate}; only 1/3 is implemented")
    info_bits = np.asarray(info_bits)
    return RACode(info_bits.shape[-1], interleaver=interleaver).encode(info_bits)


def ra_decode(apriori, iters: int, interleaver: Interleaver):
    apriori = np.asarray(apriori)
    if apriori.shape[-1] % 3:
        raise ValueError("frame length must be a multiple of 3")
    return RACode(apriori.shape[-1] // 3, interleaver=interleaver).decode(apriori, iters)


# -- Gray mapping --------------------------------------------------------------

def _pam_gray_levels(bits_per_axis: int):
    if bits_per_axis == 1:
        return {(0,): 1.0, (1,): -1.0}
    # first bit: sign, second bit: 0 outer / 1 inner
    return {(0, 0): 3.0, (0, 1): 1.0, (1, 1): -1.0, (1, 0): -3.0}


def constellation(N_Q: int):
    """Alphabet (2**N_Q,) and label table (2**N_Q, N_Q) of the Gray mapping.

    Label bits ``[:N_Q//2]`` drive the real axis and the rest the imaginary axis.
    QPSK: ``00 -> (1+1j)/sqrt(2)``; 16QAM levels ``{+-1, +-3}/sqrt(10)``.
    """
    if N_Q not in (2, 4):
        raise ValueError("N_Q must be 2 or 4")
    h = N_Q // 2
    levels = _pam_gray_levels(h)
    labels = np.array([[(i >> (N_Q - 1 - q)) & 1 for q in range(N_Q)] for i in range(2 ** N_Q)],
                      dtype=np.int8)
    pts = np.array([levels[tuple(lb[:h])] + 1j * levels[tuple(lb[h:])] for lb in labels])
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    return pts, labels


def map_symbols(coded_bits: np.ndarray, N_Q: int) -> np.ndarray:
    coded_bits = np.asarray(coded_bits, dtype=np.int64)
    if coded_bits.shape[-1] % N_Q:
        raise ValueError(f"bit count {coded_bits.shape[-1]} not divisible by N_Q={N_Q}")
    pts, _ = constellation(N_Q)
    groups = coded_bits.reshape(coded_bits.shape[:-1] + (-1, N_Q))
    weights = 1 << np.arange(N_Q - 1, -1, -1)
    return pts[groups @ weights]


def _bit_signs(labels):
    return 1.0 - 2.0 * labels  # +1 for bit 0


def soft_symbols(apriori: np.ndarray, N_Q: int):
    """Mean and squared-mean magnitude of symbols under bitwise a priori LLRs.

    Returns ``(b_tilde, b_ddot)`` with ``b_ddot = |b_tilde|^2``.
    """
    lam = np.clip(np.asarray(apriori, dtype=float), -LLR_CLIP, LLR_CLIP)
    lam = lam.reshape(lam.shape[:-1] + (-1, N_Q))
    pts, labels = constellation(N_Q)
    th = np.tanh(lam / 2)  # (..., n, N_Q)
    # Pr(c = s) = (1 - sbar*tanh(lam/2)) / 2 with sbar = 2s - 1
    sbar = 2.0 * labels - 1.0  # (M, N_Q)
    probs = np.prod(0.5 * (1 - sbar * th[..., None, :]), axis=-1)  # (..., n, M)
    b_t = probs @ pts
    return b_t, np.abs(b_t) ** 2


def residual_variance(apriori: np.ndarray, N_Q: int) -> np.ndarray:
    """Per-symbol ``E[|b|^2] - |b_tilde|^2`` under bitwise a priori LLRs.

    Equals ``1 - b_ddot`` for constant-modulus alphabets; for 16QAM it stays
    exactly zero under certain priors, where ``1 - |b|^2`` does not.
    """
    lam = np.clip(np.asarray(apriori, dtype=float), -LLR_CLIP, LLR_CLIP)
    lam = lam.reshape(lam.shape[:-1] + (-1, N_Q))
    pts, labels = constellation(N_Q)
    sbar = 2.0 * labels - 1.0
    probs = np.prod(0.5 * (1 - sbar * np.tanh(lam / 2)[..., None, :]), axis=-1)
    return np.maximum(probs @ np.abs(pts) ** 2 - np.abs(probs @ pts) ** 2, 0.0)


def demap_llr(equalized: np.ndarray, noise_var, apriori: np.ndarray, N_Q: int) -> np.ndarray:
    """Extrinsic MAP bit LLRs for ``y = b + n``, ``n ~ CN(0, noise_var)``.

    ``noise_var`` may be scalar or per symbol; ``apriori`` gives the bitwise
    prior used for the other bits of each symbol.
    """
    y = np.asarray(equalized)
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float), y.shape)
    if np.any(nv <= 0):
        raise ValueError("noise variance must be positive (SINR > 0)")
    pts, labels = constellation(N_Q)
    x = _bit_signs(labels)  # (M, N_Q)
    lam = np.clip(np.asarray(apriori, dtype=float), -LLR_CLIP, LLR_CLIP)
    lam = lam.reshape(y.shape + (N_Q,))
    metric = -np.abs(y[..., None] - pts) ** 2 / nv[..., None]  # (..., M)
    prior = 0.5 * lam @ x.T  # (..., M)
    total = metric + prior
    out = np.empty(y.shape + (N_Q,))
    for q in range(N_Q):
        zero = labels[:, q] == 0
        out[..., q] = (logsumexp(total[..., zero], axis=-1)
                       - logsumexp(total[..., ~zero], axis=-1)) - lam[..., q]
    out = np.clip(out, -LLR_CLIP, LLR_CLIP)
    return out.reshape(y.shape[:-1] + (-1,))


def bits_to_signs(bits: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)


def llr_mi(llrs: np.ndarray, signs: np.ndarray) -> float:
    """Averaging MI estimate ``1 - E log2(1 + exp(-x * llr))`` for known bits ``x = +-1``."""
    z = -np.asarray(signs) * np.clip(np.asarray(llrs, dtype=float), -LLR_CLIP, LLR_CLIP)
    return float(1.0 - np.mean(np.logaddexp(0.0, z)) / np.log(2.0))
