"""Frequency-domain soft-cancellation MMSE receiver and the turbo-equalization chain.

Everything is formulated per frequency bin: the block-circulant channel is
diagonal in the DFT domain, so each bin is an ``N_R x N_R`` problem.

Residual interference is carried as an array ``delta_seen`` of shape
``(U, K, U)``: entry ``[u, k, l]`` is the residual interference of user ``l``
in the covariance used for user ``u``'s constraint at MI index ``k``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import (RACode, Interleaver, demap_llr, llr_mi, map_symbols, residual_variance,
                    soft_symbols)
from .model import ChannelRealization


def interference_covariance(P_m, gamma_m, delta, noise_var):
    """Residual covariance of one bin: ``sum_l P_l D_l g_l g_l^H + noise_var I``.

    ``P_m`` (U,), ``gamma_m`` (U, N_R), ``delta`` (U,).
    """
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    P_m = np.asarray(P_m, dtype=float)
    gamma_m = np.asarray(gamma_m)
    w = P_m * np.asarray(delta, dtype=float)
    S = np.einsum("l,lr,ls->rs", w, gamma_m, gamma_m.conj())
    return S + noise_var * np.eye(gamma_m.shape[1])


def covariances(P, gamma, delta_seen, noise_var):
    """All residual covariances, shape (U, K, N_F, N_R, N_R).

    ``P`` (U, N_F), ``gamma`` (U, N_F, N_R), ``delta_seen`` (U, K, U).
    """
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    outer = np.einsum("lmr,lms->lmrs", gamma, gamma.conj())
    w = np.einsum("ukl,lm->uklm", delta_seen, P)
    S = np.einsum("uklm,lmrs->ukmrs", w, outer)
    return S + noise_var * np.eye(gamma.shape[2])


def delta_all_users(delta, K: int = 1):
    """Broadcast a per-user residual vector (U,) to the ``(U, K, U)`` layout."""
    delta = np.asarray(delta, dtype=float)
    U = delta.shape[0]
    return np.broadcast_to(delta, (U, K, U)).copy()


@dataclass
class ReceiveFilters:
    omega: np.ndarray  # (U, K, N_F, N_R)
    eta: np.ndarray    # (U, K)
    delta_seen: np.ndarray = field(default=None)

    @property
    def directions(self) -> np.ndarray:
        return self.omega


def mmse_directions(P, chan: ChannelRealization, delta_seen, noise_var):
    """Unscaled MMSE directions ``Sigma^{-1} gamma`` for every (u, k, m)."""
    S = covariances(P, chan.freq, delta_seen, noise_var)
    U, K = S.shape[:2]
    g = np.broadcast_to(chan.freq[:, None], (U, K) + chan.freq.shape[1:])
    return np.linalg.solve(S, g[..., None])[..., 0]


def mmse_filters(P, chan: ChannelRealization, delta_seen, noise_var, b_ddot_avg=None):
    """MMSE receive vectors ``eta * Sigma^{-1} gamma sqrt(P)``.

    The SINR does not depend on ``eta``, so it is computed first with
    ``eta = 1``; ``eta = 1/(avg(b_ddot) * zeta + 1)`` then sets the output
    scale expected by the demapper. ``b_ddot_avg`` defaults to one minus the
    user's own residual interference.
    """
    P = np.asarray(P, dtype=float)
    delta_seen = np.asarray(delta_seen, dtype=float)
    d = mmse_directions(P, chan, delta_seen, noise_var)
    zeta = mmse_sinr(P, chan, delta_seen, noise_var)
    U = P.shape[0]
    if b_ddot_avg is None:
        own = delta_seen[np.arange(U), :, np.arange(U)]  # (U, K)
        b_ddot_avg = 1.0 - own
    else:
        b_ddot_avg = np.broadcast_to(np.asarray(b_ddot_avg, dtype=float)[:, None], zeta.shape)
    eta = 1.0 / (b_ddot_avg * zeta + 1.0)
    omega = eta[:, :, None, None] * d * np.sqrt(P)[:, None, :, None]
    return ReceiveFilters(omega, eta, delta_seen)


def mmse_sinr(P, chan: ChannelRealization, delta_seen, noise_var):
    """Closed-form MMSE SINR ``(1/N_F) sum_m P gamma^H Sigma^{-1} gamma``, shape (U, K)."""
    P = np.asarray(P, dtype=float)
    d = mmse_directions(P, chan, delta_seen, noise_var)
    q = np.real(np.einsum("umr,ukmr->ukm", chan.freq.conj(), d))
    return np.mean(P[:, None, :] * q, axis=2)


def filter_gains(omega, chan: ChannelRealization):
    """``|omega_{u,k,m}^H gamma_{l,m}|^2`` as (U, K, U, N_F) and ``||omega||^2`` as (U, K, N_F)."""
    a = np.abs(np.einsum("ukmr,lmr->uklm", omega.conj(), chan.freq)) ** 2
    nrm = np.sum(np.abs(omega) ** 2, axis=-1)
    return a, nrm


def bin_ratios(P, omega, chan: ChannelRealization, delta_seen, noise_var):
    """Per-bin SINR terms ``t[u, k, m]`` for fixed filters (zero where the filter is zero)."""
    P = np.asarray(P, dtype=float)
    a, nrm = filter_gains(omega, chan)
    U = P.shape[0]
    own = a[np.arange(U), :, np.arange(U), :]  # (U, K, N_F)
    interf = np.einsum("ukl,uklm,lm->ukm", delta_seen, a, P) + noise_var * nrm
    num = P[:, None, :] * own
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(interf > 0, num / interf, 0.0)
    return t


def effective_sinr(P, filters, chan: ChannelRealization, delta_seen, noise_var):
    """Bin-averaged SINR ``zeta[u, k]``.

    With ``filters=None`` the closed MMSE form is used; otherwise the ratio is
    evaluated for the given receive vectors (array (U, K, N_F, N_R) or
    :class:`ReceiveFilters`).
    """
    delta_seen = np.asarray(delta_seen, dtype=float)
    if filters is None:
        return mmse_sinr(P, chan, delta_seen, noise_var)
    omega = filters.omega if isinstance(filters, ReceiveFilters) else np.asarray(filters)
    return np.mean(bin_ratios(P, omega, chan, delta_seen, noise_var), axis=2)


# -- chain simulation -----------------------------------------------------------

@dataclass
class TrajectoryRecord:
    I_eq: np.ndarray   # (iters, U)
    I_dec: np.ndarray  # (iters, U)
    ber: np.ndarray    # (iters, U)

    @property
    def iterations(self) -> int:
        return self.I_eq.shape[0]

    def rows(self):
        for i in range(self.iterations):
            for u in range(self.I_eq.shape[1]):
                yield i + 1, u, self.I_eq[i, u], self.I_dec[i, u], self.ber[i, u]

    def save_csv(self, path, meta: dict | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            for k, v in (meta or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["iter", "user", "I_eq", "I_dec", "ber"])
            for it, u, ie, idc, b in self.rows():
                w.writerow([it, u, f"{ie:.10g}", f"{idc:.10g}", f"{b:.10g}"])


@dataclass
class ChainSetup:
    """Per-user codes and channel interleavers for a chain simulation."""
    codes: list
    interleavers: list
    N_Q: int
    N_F: int

    @classmethod
    def build(cls, U: int, n_coded: int, N_Q: int, N_F: int, seed: int = 0):
        if n_coded % 3 or n_coded % (N_Q * N_F):
            raise ValueError("coded length must be divisible by 3 and by N_Q*N_F")
        codes = [RACode(n_coded // 3, seed=seed + 1000 + u) for u in range(U)]
        ilv = [Interleaver.random(n_coded, seed + 2000 + u) for u in range(U)]
        return cls(codes, ilv, N_Q, N_F)

    @property
    def n_coded(self) -> int:
        return self.codes[0].n_coded


def transmit(P, chan: ChannelRealization, symbols, noise_var, rng):
    """Received frequency-domain blocks for every user's symbol blocks.

    ``symbols`` (U, n_blocks, N_F) -> received (n_blocks, N_F, N_R).
    """
    X = np.fft.fft(symbols, axis=-1, norm="ortho") * np.sqrt(P)[:, None, :]
    R = np.einsum("ubm,umr->bmr", X, chan.freq)
    noise = np.sqrt(noise_var / 2) * (rng.standard_normal(R.shape)
                                      + 1j * rng.standard_normal(R.shape))
    return R + noise


def equalize(R, P, chan: ChannelRealization, b_tilde, delta, noise_var):
    """One soft-cancellation MMSE pass for all users.

    Returns the unit-gain equalizer outputs (U, n_blocks, N_F), the
    corresponding per-user residual noise variances (U,) and the SINRs (U,).
    """
    P = np.asarray(P, dtype=float)
    U = P.shape[0]
    delta = np.asarray(delta, dtype=float)
    dseen = delta_all_users(delta)
    filt = mmse_filters(P, chan, dseen, noise_var, b_ddot_avg=1.0 - delta)
    omega = filt.omega[:, 0]  # (U, N_F, N_R)
    sqP = np.sqrt(P)
    B_t = np.fft.fft(b_tilde, axis=-1, norm="ortho") * sqP[:, None, :]
    R_hat = R - np.einsum("ubm,umr->bmr", B_t, chan.freq)
    d = np.real(np.einsum("umr,umr->um", omega.conj(), chan.freq)) * sqP  # (U, N_F)
    mu = d.mean(axis=1)  # eta * zeta
    out = np.empty_like(b_tilde)
    zeta = mmse_sinr(P, chan, dseen, noise_var)[:, 0]
    nv = np.empty(U)
    for u in range(U):
        z = np.einsum("mr,bmr->bm", omega[u].conj(), R_hat)
        z = np.fft.ifft(z, axis=-1, norm="ortho") + mu[u] * b_tilde[u]
        if zeta[u] <= 0:
            out[u] = 0.0
            nv[u] = np.inf
            continue
        out[u] = z / mu[u]
        nv[u] = 1.0 / zeta[u] - delta[u]
    return out, nv, zeta


def turbo_equalize(P, chan: ChannelRealization, setup: ChainSetup, noise_var, max_iters=20,
                   frames=1, seed=0, decoder_iters=8, apriori_override=None, noiseless=False):
    """Monte Carlo chain simulation of the iterative FD-SC-MMSE receiver.

    Each frame carries one codeword per user spread over
    ``n_coded/(N_Q*N_F)`` SC-FDMA blocks of a static channel. MI values use the
    averaging estimator over all coded bits; BER is measured on info bits.
    ``apriori_override`` injects fixed a priori LLRs (U, frames, n_coded) at the
    first iteration in place of decoder feedback.

    Returns ``(decoded_info_bits, TrajectoryRecord)``.
    """
    P = np.asarray(P, dtype=float)
    U = P.shape[0]
    N_Q, N_F = setup.N_Q, setup.N_F
    n = setup.n_coded
    rng = np.random.default_rng(seed)
    info = np.stack([rng.integers(0, 2, (frames, c.n_info), dtype=np.int8) for c in setup.codes])
    coded = np.stack([setup.codes[u].encode(info[u]) for u in range(U)])  # (U, F, n)
    tx_bits = np.stack([setup.interleavers[u].interleave(coded[u]) for u in range(U)])
    symbols = map_symbols(tx_bits, N_Q)  # (U, F, n/N_Q)
    n_blocks = symbols.shape[-1] // N_F
    sym_blocks = symbols.reshape(U, frames * n_blocks, N_F)
    R = transmit(P, chan, sym_blocks, 0.0 if noiseless else noise_var, rng)
    signs = 1.0 - 2.0 * coded

    apri_tx = np.zeros((U, frames, n))  # a priori in transmit (interleaved) order
    if apriori_override is not None:
        apri_tx = np.stack([setup.interleavers[u].interleave(apriori_override[u])
                            for u in range(U)])
    I_eq, I_dec, ber = [], [], []
    decoded = np.zeros_like(info)
    for _ in range(max_iters):
        b_t, _ = soft_symbols(apri_tx, N_Q)
        delta = residual_variance(apri_tx, N_Q).reshape(U, -1).mean(axis=1)
        b_t = b_t.reshape(U, frames * n_blocks, N_F)
        y, nv, zeta = equalize(R, P, chan, b_t, delta, noise_var)
        y = y.reshape(U, frames, -1)
        ie, idc, be = np.zeros(U), np.zeros(U), np.zeros(U)
        new_apri = np.zeros_like(apri_tx)
        for u in range(U):
            if not np.isfinite(nv[u]) or nv[u] <= 0:
                ext_eq = np.zeros((frames, n))
            else:
                ext_eq = demap_llr(y[u], max(nv[u], 1e-12), apri_tx[u], N_Q)
            ext_eq = setup.interleavers[u].deinterleave(ext_eq)
            ext_dec, _, hard = setup.codes[u].decode(ext_eq, decoder_iters)
            ie[u] = llr_mi(ext_eq, signs[u])
            idc[u] = llr_mi(ext_dec, signs[u])
            be[u] = np.mean(hard != info[u])
            decoded[u] = hard
            new_apri[u] = setup.interleavers[u].interleave(ext_dec)
        apri_tx = new_apri
        I_eq.append(ie)
        I_dec.append(idc)
        ber.append(be)
    return decoded, TrajectoryRecord(np.array(I_eq), np.array(I_dec), np.array(ber))
