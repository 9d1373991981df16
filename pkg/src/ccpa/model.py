"""System dimensions, channel generation and the per-bin frequency-domain channel.

DFT convention
--------------
The per-bin channel vectors are the *unnormalized* forward DFT of the tap
sequence zero-padded to ``N_F``::

    gamma[u, m, r] = sum_l h[u, r, l] * exp(-2j*pi*m*l/N_F)

This is the eigenvalue sequence of the circulant channel matrix, so a data
block spread with the unitary DFT sees ``gamma[u, m]`` as its flat per-bin gain
and white noise of variance ``noise_var`` stays white with the same variance.
Energy bookkeeping is ``sum_m |gamma|^2 = N_F * sum_l |h|^2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SystemConfig:
    U: int = 2
    N_R: int = 2
    N_F: int = 8
    N_Q: int = 2
    R_c: Fraction = Fraction(1, 3)
    N_L: int = 5
    noise_var: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "R_c", Fraction(self.R_c).limit_denominator(1000))
        for name in ("U", "N_R", "N_F", "N_L"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.N_F < 2 or self.N_F & (self.N_F - 1):
            raise ValueError("N_F must be a power of two >= 2")
        if self.N_L > self.N_F:
            raise ValueError("N_L must not exceed N_F")
        if self.N_Q not in (2, 4):
            raise ValueError("N_Q must be 2 (QPSK) or 4 (16QAM)")
        if not (0 < self.R_c <= 1):
            raise ValueError("R_c must lie in (0, 1]")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    @property
    def modulation(self) -> str:
        return "qpsk" if self.N_Q == 2 else "16qam"


@dataclass
class ChannelRealization:
    taps: np.ndarray  # (U, N_R, N_L) complex
    freq: np.ndarray = field(default=None)  # (U, N_F, N_R) complex
    N_F: int = 0

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=complex)
        if self.taps.ndim != 3:
            raise ValueError("taps must be indexed (user, antenna, tap)")
        if self.freq is None:
            if self.N_F < self.taps.shape[2]:
                raise ValueError("N_F must be given and >= number of taps")
            self.freq = freq_response(self.taps, self.N_F)
        self.N_F = self.freq.shape[1]

    @property
    def U(self) -> int:
        return self.taps.shape[0]

    @property
    def N_R(self) -> int:
        return self.taps.shape[1]

    def gains(self) -> np.ndarray:
        """Per-user per-bin channel energy ``||gamma_{u,m}||^2``, shape (U, N_F)."""
        return np.sum(np.abs(self.freq) ** 2, axis=-1)


def freq_response(taps: np.ndarray, N_F: int) -> np.ndarray:
    """Per-bin channel vectors from time-domain taps, shape (U, N_F, N_R)."""
    taps = np.asarray(taps, dtype=complex)
    if taps.ndim != 3:
        raise ValueError("taps must have shape (U, N_R, N_L)")
    if taps.shape[2] > N_F:
        raise ValueError(f"{taps.shape[2]} taps do not fit in {N_F} bins")
    g = np.fft.fft(taps, n=N_F, axis=2)
    return np.transpose(g, (0, 2, 1)).copy()


def _draw_taps(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.U, cfg.N_R, cfg.N_L)
    scale = np.sqrt(0.5 / cfg.N_L)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def gen_static_channel(cfg: SystemConfig, seed: int | None = None) -> ChannelRealization:
    """One fixed random multipath channel, taps i.i.d. CN(0, 1/N_L)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return ChannelRealization(_draw_taps(cfg, rng), N_F=cfg.N_F)


def gen_rayleigh_channel(cfg: SystemConfig, seed: int | None = None,
                         blocks: int | None = None):
    """Quasi-static Rayleigh fading with equal average tap gains.

    Returns a single realization, or a list of ``blocks`` independent ones
    drawn from the same generator.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if blocks is None:
        return ChannelRealization(_draw_taps(cfg, rng), N_F=cfg.N_F)
    return [ChannelRealization(_draw_taps(cfg, rng), N_F=cfg.N_F) for _ in range(blocks)]


def snr_db(P: np.ndarray, cfg: SystemConfig) -> float:
    """Receive SNR per antenna averaged over bins; ``-inf`` for zero power."""
    if not cfg.noise_var > 0:
        raise ValueError("noise_var must be positive")
    total = float(np.sum(P))
    if total <= 0:
        return -np.inf
    return 10 * np.log10(total / (cfg.N_R * cfg.N_F * cfg.noise_var))


def power_for_snr(snr: float, cfg: SystemConfig) -> float:
    """Total power giving ``snr`` dB under :func:`snr_db`."""
    return 10 ** (snr / 10) * cfg.N_R * cfg.N_F * cfg.noise_var


# -- CSV fixtures ------------------------------------------------------------

def save_channel_csv(chan: ChannelRealization, path) -> None:
    path = Path(path)
    U, N_R, N_L = chan.taps.shape
    with path.open("w", newline="") as fh:
        fh.write(f"# N_F={chan.N_F}\n")
        w = csv.writer(fh)
        w.writerow(["user", "antenna", "tap", "re", "im"])
        for u in range(U):
            for r in range(N_R):
                for l in range(N_L):
                    h = chan.taps[u, r, l]
                    w.writerow([u, r, l, repr(float(h.real)), repr(float(h.imag))])


def load_channel_csv(path, N_F: int | None = None) -> ChannelRealization:
    path = Path(path)
    meta = {}
    rows = []
    with path.open() as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].split(","):
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k.strip()] = v.strip()
            else:
                lines.append(line)
        for rec in csv.DictReader(lines):
            rows.append((int(rec["user"]), int(rec["antenna"]), int(rec["tap"]),
                         float(rec["re"]) + 1j * float(rec["im"])))
    if not rows:
        raise ValueError(f"{path}: no channel taps")
    U = max(r[0] for r in rows) + 1
    N_R = max(r[1] for r in rows) + 1
    N_L = max(r[2] for r in rows) + 1
    taps = np.zeros((U, N_R, N_L), dtype=complex)
    for u, r, l, h in rows:
        taps[u, r, l] = h
    if N_F is None:
        if "N_F" not in meta:
            raise ValueError(f"{path}: N_F missing from header and not given")
        N_F = int(meta["N_F"])
    return ChannelRealization(taps, N_F=N_F)
