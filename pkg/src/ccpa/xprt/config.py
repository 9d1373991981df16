"""Flat YAML experiment configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..model import SystemConfig

METHODS = ("scavc", "scagp", "oes", "zf", "ep")
SWEEP_AXES = ("epsilon", "mi_target", "bep_target", "K")
CHANNELS = ("static", "rayleigh")


@dataclass
class ExperimentConfig:
    # system
    U: int = 2
    N_R: int = 2
    N_F: int = 8
    N_Q: int = 2
    R_c: str = "1/3"
    N_L: int = 5
    noise_var: float = 1.0
    # channel
    channel: str = "static"
    channel_file: str | None = None
    channel_seed: int = 0
    realizations: int = 1
    # convergence constraints (per user; scalars broadcast)
    I_dec_target: list = field(default_factory=lambda: [0.9999])
    I_eq_target: list = field(default_factory=lambda: [0.7, 0.9])
    epsilon: list = field(default_factory=lambda: [0.1])
    K: int = 11
    mode: str = "diagonal"
    decoder_curve: str | None = None
    # optimization
    method: str = "scagp"
    methods: list = field(default_factory=lambda: ["scagp"])
    outer_tol: float = 0.05
    inner_tol: float = 0.01
    max_outer: int = 30
    barrier_t0: float = 1.0
    barrier_factor: float = 10.0
    newton_tol: float = 1e-9
    # sweeps
    sweep_axis: str = "epsilon"
    sweep_values: list = field(default_factory=lambda: [0.2, 0.1, 0.01])
    # chain simulation and PAPR
    allocation_file: str | None = None
    interleaver_bits: int = 24000
    frames: int = 10
    max_iters: int = 20
    papr_blocks: int = 100000
    # decoder EXIT measurement
    exit_blocks: int = 200
    exit_block_bits: int = 6000
    # housekeeping
    seed: int = 0
    out_dir: str = "results"
    threads: int = 1
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        self.validate()

    # -- derived views --------------------------------------------------------
    @property
    def system(self) -> SystemConfig:
        try:
            return SystemConfig(U=self.U, N_R=self.N_R, N_F=self.N_F, N_Q=self.N_Q,
                                R_c=Fraction(self.R_c), N_L=self.N_L,
                                noise_var=self.noise_var, seed=self.channel_seed)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(str(exc), field="system") from None

    @property
    def modulation(self) -> str:
        return "qpsk" if self.N_Q == 2 else "16qam"

    @property
    def barrier(self) -> dict:
        return dict(t0=self.barrier_t0, factor=self.barrier_factor, newton_tol=self.newton_tol)

    def per_user(self, name) -> list:
        vals = getattr(self, name)
        vals = list(vals) if isinstance(vals, (list, tuple)) else [vals]
        if len(vals) == 1:
            vals = vals * self.U
        if len(vals) != self.U:
            raise ConfigError(f"{name} needs 1 or U={self.U} entries, got {len(vals)}", field=name)
        return [float(v) for v in vals]

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    # -- validation -------------------------------------------------------------
    def validate(self):
        for name in ("U", "N_R", "N_F", "N_L", "K", "realizations", "frames", "max_iters",
                     "papr_blocks", "interleaver_bits", "max_outer", "threads"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}", field=name)
        if self.N_Q not in (2, 4):
            raise ConfigError("N_Q must be 2 (QPSK) or 4 (16QAM)", field="N_Q")
        try:
            Fraction(str(self.R_c))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"R_c must be a fraction like 1/3, got {self.R_c!r}",
                              field="R_c") from None
        if not (isinstance(self.noise_var, (int, float)) and self.noise_var > 0):
            raise ConfigError("noise_var must be a positive number", field="noise_var")
        if self.channel not in CHANNELS:
            raise ConfigError(f"channel must be one of {CHANNELS}", field="channel")
        if self.channel_file is not None and not self.resolve(self.channel_file).is_file():
            raise ConfigError(f"channel file {self.channel_file} not found", field="channel_file")
        if self.decoder_curve is not None and not self.resolve(self.decoder_curve).is_file():
            raise ConfigError(f"decoder curve {self.decoder_curve} not found",
                              field="decoder_curve")
        for name in ("I_dec_target", "I_eq_target"):
            for v in self.per_user(name):
                if not 0 < v <= 1:
                    raise ConfigError(f"{name} entries must lie in (0, 1]", field=name)
        for v in self.per_user("epsilon"):
            if not 0 <= v < 1:
                raise ConfigError("epsilon entries must lie in [0, 1)", field="epsilon")
        if self.mode not in ("diagonal", "worst-case"):
            raise ConfigError("mode must be 'diagonal' or 'worst-case'", field="mode")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}", field="method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r} in methods", field="methods")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}", field="sweep_axis")
        if self.sweep_axis == "bep_target" and self.N_Q != 2:
            raise ConfigError("bep_target sweeps are defined for QPSK only", field="sweep_axis")
        for name in ("outer_tol", "inner_tol", "barrier_t0", "barrier_factor", "newton_tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be positive", field=name)
        if self.barrier_factor <= 1:
            raise ConfigError("barrier_factor must exceed 1", field="barrier_factor")


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a flat YAML mapping; unknown keys and bad values raise :class:`ConfigError`."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", field="config") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}", field="config") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of field: value", field="config")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"base_dir"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config field {key!r}", field=key)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if "R_c" in raw:
        raw["R_c"] = str(raw["R_c"])
    try:
        return ExperimentConfig(base_dir=str(path.parent), **raw)
    except TypeError as exc:
        raise ConfigError(str(exc), field="config") from None
