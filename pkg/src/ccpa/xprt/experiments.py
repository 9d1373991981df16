"""Experiment drivers. Every driver writes CSV files with ``#`` metadata lines
into an output directory and returns a small summary dict."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .. import baselines
from ..codec import constellation
from ..errors import ConfigError, InfeasibleError, SolverError
from ..exitlab import (ConvergenceSpec, DecoderExitCurve, bep_from_mi, build_convergence_spec,
                       decoder_exit_curve, default_decoder_curve, equalizer_exit, fit_j_params,
                       invert_decoder_curve, predicted_iterations, save_jparams_csv,
                       semi_analytic_exit)
from ..model import (ChannelRealization, gen_rayleigh_channel, gen_static_channel,
                     load_channel_csv, snr_db)
from ..optim import alternating_optimize
from ..receiver import ChainSetup, mmse_sinr, turbo_equalize
from .config import ExperimentConfig

# (decoder target, equalizer target) pairs for the four reference BEP levels
BEP_PAIRS = {1e-3: (0.99, 0.6185), 1e-4: (0.9987, 0.673),
             1e-5: (0.9998, 0.7892), 1e-6: (0.9998, 0.9819)}

SLACK_TOL = 1e-6


# -- shared plumbing ----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def write_csv(path, header, rows, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path):
    """Rows of a ``#``-commented CSV as dicts of strings."""
    with Path(path).open() as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _meta(cfg: ExperimentConfig, **extra):
    m = dict(U=cfg.U, N_R=cfg.N_R, N_F=cfg.N_F, N_Q=cfg.N_Q, R_c=cfg.R_c,
             noise_var=cfg.noise_var, K=cfg.K, mode=cfg.mode,
             I_dec_target=cfg.per_user("I_dec_target"), I_eq_target=cfg.per_user("I_eq_target"),
             epsilon=cfg.per_user("epsilon"), seed=cfg.seed)
    m.update(extra)
    return m


def load_channels(cfg: ExperimentConfig) -> list:
    """Channel realizations named by the config."""
    sysc = cfg.system
    if cfg.channel_file is not None:
        chan = load_channel_csv(cfg.resolve(cfg.channel_file), N_F=cfg.N_F)
        if (chan.U, chan.N_R, chan.N_F) != (cfg.U, cfg.N_R, cfg.N_F):
            raise ConfigError(f"channel file has (U, N_R, N_F)={(chan.U, chan.N_R, chan.N_F)}, "
                              f"config asks for {(cfg.U, cfg.N_R, cfg.N_F)}",
                              field="channel_file")
        return [chan]
    if cfg.channel == "static":
        return [gen_static_channel(sysc, seed=cfg.channel_seed + i)
                for i in range(cfg.realizations)]
    return gen_rayleigh_channel(sysc, seed=cfg.channel_seed, blocks=cfg.realizations)


def decoder_curves(cfg: ExperimentConfig):
    if cfg.decoder_curve is None:
        return default_decoder_curve()
    return DecoderExitCurve.load_csv(cfg.resolve(cfg.decoder_curve))


def build_spec(cfg: ExperimentConfig, **over) -> ConvergenceSpec:
    """Convergence constraints for the config; keyword overrides replace config fields."""
    c = cfg.replace(**over) if over else cfg
    return build_convergence_spec(c.per_user("I_dec_target"), c.per_user("I_eq_target"),
                                  c.per_user("epsilon"), c.K, curves=decoder_curves(c),
                                  modulation=c.modulation, mode=c.mode)


def oes_bin_report(spec: ConvergenceSpec, N_F: int):
    """Per-user minimum bin counts from the necessary bound ``n > xi N_F D``.

    Returns a list of ``(user, k, bins_needed)`` where ``k`` is the binding
    constraint index.
    """
    out = []
    for u in range(spec.U):
        bound = np.where(spec.xi[u] > 0, spec.xi[u] * N_F * spec.delta[u], -1.0)
        k = int(np.argmax(bound))
        out.append((u, k, int(np.floor(bound[k])) + 1 if bound[k] >= 0 else 0))
    return out


def allocate(method, chan: ChannelRealization, spec: ConvergenceSpec, cfg: ExperimentConfig):
    """Run one allocation method. Returns ``(P, info)``; ``info`` carries
    iteration counts, the diagnostics object and the OES assignment when present."""
    nv = cfg.noise_var
    info = dict(outer_iters=0, inner_iters=0, diagnostics=None, assignment=None)
    if method in ("scavc", "scagp"):
        P, _, diag = alternating_optimize(chan, spec, nv, method=method, tol=cfg.outer_tol,
                                          max_outer=cfg.max_outer, sca_tol=cfg.inner_tol,
                                          barrier=cfg.barrier)
        info.update(outer_iters=diag.outer_iterations,
                    inner_iters=int(sum(r["inner_iters"] for r in diag.rows)),
                    diagnostics=diag, sca_violations=diag.sca_violations)
    elif method == "oes":
        report = oes_bin_report(spec, chan.N_F)
        if sum(n for _, _, n in report) > chan.N_F:
            u, k, n = max(report, key=lambda r: r[2])
            raise InfeasibleError(
                f"OES infeasible: users need {[r[2] for r in report]} bins, only {chan.N_F} "
                f"available (binding constraint user {u}, k={k + 1})", where=(u, k))
        assignment, P = baselines.oes_allocate(chan, spec, nv)
        info["assignment"] = assignment
    elif method == "zf":
        P = baselines.zf_scmmse(chan, spec, nv)
    elif method == "ep":
        P = np.full((chan.U, chan.N_F), baselines.ep_bisection(chan, spec, nv))
    else:
        raise ConfigError(f"unknown method {method!r}", field="method")
    return P, info


def constraint_slack(P, chan, spec: ConvergenceSpec, noise_var):
    """Rows ``(user, k, xi, zeta, zeta/xi - 1)`` under fresh MMSE filters."""
    zeta = mmse_sinr(P, chan, spec.delta_seen, noise_var)
    rows = []
    for u in range(spec.U):
        for k in range(spec.K):
            xi = spec.xi[u, k]
            rows.append((u, k + 1, float(xi), float(zeta[u, k]),
                         float(zeta[u, k] / xi - 1.0) if xi > 0 else float("inf")))
    return rows


# -- optimize -------------------------------------------------------------------------

def run_optimize(cfg: ExperimentConfig, out_dir=None, method=None) -> dict:
    """Allocate power for the first configured channel and emit
    ``powers.csv``, ``slack.csv``, ``spec.csv`` and, for SCA methods,
    ``diagnostics.csv``. Infeasibility writes ``infeasible.csv`` and re-raises."""
    method = method or cfg.method
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chan = load_channels(cfg)[0]
    meta = _meta(cfg, method=method)
    try:
        spec = build_spec(cfg)
        spec.save_csv(out / "spec.csv")
        P, info = allocate(method, chan, spec, cfg)
    except InfeasibleError as exc:
        where = exc.where or (None, None)
        u, k = where
        write_csv(out / "infeasible.csv", ["method", "user", "k", "reason"],
                  [(method, "" if u is None else u, "" if k is None else k + 1, str(exc))], meta)
        raise
    slack = constraint_slack(P, chan, spec, cfg.noise_var)
    worst = min(r[4] for r in slack)
    snr = snr_db(P, cfg.system)
    meta.update(snr_db=f"{snr:.10g}", total_power=f"{float(P.sum()):.10g}")
    baselines.save_powers_csv(P, out / "powers.csv", meta)
    write_csv(out / "slack.csv", ["user", "k", "xi", "zeta", "slack"], slack, meta)
    if info["diagnostics"] is not None:
        info["diagnostics"].save_csv(out / "diagnostics.csv", meta)
    if info["assignment"] is not None:
        baselines.save_assignment_csv(info["assignment"], P, out / "assignment.csv")
    if worst < -SLACK_TOL:
        raise SolverError(f"{method} allocation violates a constraint: min slack {worst:.3g}")
    return dict(P=P, snr_db=snr, min_slack=worst, spec=spec, chan=chan, **info)


def _allocation(cfg: ExperimentConfig, chan, spec):
    """Powers from ``allocation_file`` when given, else from the configured method."""
    if cfg.allocation_file is not None:
        path = cfg.resolve(cfg.allocation_file)
        if not path.is_file():
            raise ConfigError(f"allocation file {cfg.allocation_file} not found",
                              field="allocation_file")
        P, _ = baselines.load_powers_csv(path)
        if P.shape != (cfg.U, cfg.N_F):
            raise ConfigError(f"allocation has shape {P.shape}, expected {(cfg.U, cfg.N_F)}",
                              field="allocation_file")
        return P
    return allocate(cfg.method, chan, spec, cfg)[0]


# -- EXIT surface -----------------------------------------------------------------------

def run_exit_surface(cfg: ExperimentConfig, out_dir=None, points: int = 21) -> dict:
    """Predicted equalizer EXIT samples at an allocation.

    ``surface.csv`` holds the dense grid over all decoder MIs for ``U = 2``
    and the diagonal line for any ``U``; each row carries the decoder inverse
    at the same MI for comparison. ``constraints.csv`` lists the sampled
    constraint points with their tunnel gap.
    """
    out = Path(out_dir or cfg.out_dir)
    chan = load_channels(cfg)[0]
    spec = build_spec(cfg)
    P = _allocation(cfg, chan, spec)
    curves = decoder_curves(cfg)
    U = cfg.U
    axis = np.linspace(0.0, 1.0, points)
    if U == 2:
        grid = [(a, b) for a in axis for b in axis]
        kind = "surface"
    else:
        grid = [(a,) * U for a in axis]
        kind = "diagonal"
    header = [f"I_dec_{u + 1}" for u in range(U)] + ["user", "I_eq", "decoder_inverse", "kind"]
    rows = []
    for point in grid:
        diag = all(x == point[0] for x in point)
        I_eq = equalizer_exit(P, chan, np.array(point), cfg.noise_var, cfg.modulation)
        for u in range(U):
            inv = invert_decoder_curve(curves, point[u]) if point[u] <= curves.output[-1] \
                else float("nan")
            rows.append((*point, u, float(I_eq[u]), inv, "diagonal" if diag else kind))
    meta = _meta(cfg, method=cfg.method)
    write_csv(out / "surface.csv", header, rows, meta)
    crow = []
    for u in range(U):
        for k in range(spec.K):
            pred = semi_analytic_exit(P, chan, spec, u, k, cfg.noise_var)
            inv = invert_decoder_curve(curves, spec.I[u, k])
            crow.append((u, k + 1, float(spec.I[u, k]), pred, inv, pred - inv,
                         float(spec.eps[u, k])))
    write_csv(out / "constraints.csv",
              ["user", "k", "I_dec", "I_eq_predicted", "decoder_inverse", "gap", "eps"],
              crow, meta)
    return dict(P=P, rows=rows, constraints=crow)


# -- chain trajectory ---------------------------------------------------------------------

def run_trajectory(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Chain simulation at a stored allocation plus the semi-analytic prediction
    at every measured decoder MI."""
    if cfg.allocation_file is None:
        raise ConfigError("trajectory needs allocation_file", field="allocation_file")
    out = Path(out_dir or cfg.out_dir)
    chan = load_channels(cfg)[0]
    P = _allocation(cfg, chan, None)
    setup = ChainSetup.build(cfg.U, cfg.interleaver_bits, cfg.N_Q, cfg.N_F, seed=cfg.seed)
    _, rec = turbo_equalize(P, chan, setup, cfg.noise_var, max_iters=cfg.max_iters,
                            frames=cfg.frames, seed=cfg.seed)
    meta = _meta(cfg, interleaver_bits=cfg.interleaver_bits, frames=cfg.frames)
    rec.save_csv(out / "trajectory.csv", meta)
    pred = predicted_chain_points(P, chan, rec, cfg.noise_var, cfg.modulation)
    rows = [(i + 1, u, float(pred[i, u, 0]), float(rec.I_eq[i, u]), float(pred[i, u, 1]))
            for i in range(rec.iterations) for u in range(cfg.U)]
    write_csv(out / "prediction.csv", ["iter", "user", "I_dec_in", "I_eq_measured",
                                       "I_eq_predicted"], rows, meta)
    return dict(P=P, record=rec, prediction=pred)


def predicted_chain_points(P, chan, rec, noise_var, modulation):
    """``(iters, U, 2)``: decoder MI fed into each iteration and the
    semi-analytic equalizer output there."""
    it, U = rec.I_eq.shape
    out = np.zeros((it, U, 2))
    I_in = np.zeros(U)
    for i in range(it):
        out[i, :, 0] = I_in
        out[i, :, 1] = equalizer_exit(P, chan, np.minimum(I_in, 1.0), noise_var, modulation)
        I_in = rec.I_dec[i]
    return out


# -- PAPR ------------------------------------------------------------------------------

def papr_samples(P, N_Q, blocks, rng):
    """Per-block PAPR in dB of every user's IDFT output ``F^H diag(sqrt P) F b``.

    Returns an array (U, blocks). Users with zero power are skipped (NaN).
    """
    P = np.asarray(P, dtype=float)
    U, N_F = P.shape
    pts = constellation(N_Q)[0]
    out = np.full((U, blocks), np.nan)
    for u in range(U):
        if P[u].sum() <= 0:
            continue
        b = pts[rng.integers(0, len(pts), (blocks, N_F))]
        x = np.fft.ifft(np.sqrt(P[u]) * np.fft.fft(b, axis=1, norm="ortho"), axis=1, norm="ortho")
        pw = np.abs(x) ** 2
        out[u] = 10 * np.log10(pw.max(axis=1) / pw.mean(axis=1))
    return out


def ccdf(samples, thresholds):
    """``Pr[PAPR > x]`` for each threshold."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    s = s[np.isfinite(s)]
    return 1.0 - np.searchsorted(s, thresholds, side="right") / len(s)


def ccdf_knee(samples, level=0.1):
    """PAPR value exceeded with probability ``level``."""
    s = np.asarray(samples, dtype=float).ravel()
    return float(np.quantile(s[np.isfinite(s)], 1.0 - level))


def run_papr(cfg: ExperimentConfig, out_dir=None, P=None) -> dict:
    """CCDF of the per-block PAPR over ``papr_blocks`` blocks per user."""
    out = Path(out_dir or cfg.out_dir)
    if P is None:
        if cfg.allocation_file is None:
            raise ConfigError("papr needs allocation_file", field="allocation_file")
        P = _allocation(cfg, None, None)
    rng = np.random.default_rng(cfg.seed)
    s = papr_samples(P, cfg.N_Q, cfg.papr_blocks, rng)
    x = np.round(np.arange(0.0, 12.0 + 1e-9, 0.05), 2)
    rows = [(float(v), float(c)) for v, c in zip(x, ccdf(s, x))]
    knee = ccdf_knee(s)
    write_csv(out / "ccdf.csv", ["papr_db", "ccdf"], rows,
              dict(N_Q=cfg.N_Q, blocks=cfg.papr_blocks, seed=cfg.seed, knee_db=f"{knee:.6g}"))
    return dict(samples=s, knee_db=knee, ccdf=rows)


# -- sweeps ------------------------------------------------------------------------------

def eq_target_for_bep(bep, I_dec_target):
    """Equalizer MI target reaching ``bep`` after decoding at ``I_dec_target``.

    The four reference levels use the tabulated pairs; others are solved
    from the BEP mapping.
    """
    for level, pair in BEP_PAIRS.items():
        if np.isclose(bep, level, rtol=1e-9):
            return pair
    f = lambda e: float(bep_from_mi(I_dec_target, e)) - bep
    lo, hi = 1e-6, 1 - 1e-9
    if f(lo) < 0 or f(hi) > 0:
        raise InfeasibleError(f"BEP {bep:g} unreachable at decoder MI {I_dec_target}")
    return I_dec_target, brentq(f, lo, hi, xtol=1e-12)


def _sweep_over(cfg: ExperimentConfig, value) -> dict:
    if cfg.sweep_axis == "epsilon":
        return dict(epsilon=[float(value)])
    if cfg.sweep_axis == "mi_target":
        return dict(I_eq_target=[float(value)])
    if cfg.sweep_axis == "K":
        return dict(K=int(value))
    pairs = [eq_target_for_bep(float(value), d) for d in cfg.per_user("I_dec_target")]
    return dict(I_dec_target=[p[0] for p in pairs], I_eq_target=[p[1] for p in pairs])


def _sweep_point(cfg, value, method, r, chan):
    over = _sweep_over(cfg, value)
    c = cfg.replace(**over)
    try:
        spec = build_spec(c)
        P, info = allocate(method, chan, spec, c)
    except InfeasibleError as exc:
        return (value, method, r, float("nan"), 0, 0, "", "", f"infeasible: {exc}")
    pred, _ = predicted_iterations(P, chan, spec, c.noise_var, curves=decoder_curves(c))
    worst = min(s[4] for s in constraint_slack(P, chan, spec, c.noise_var))
    return (value, method, r, snr_db(P, c.system), info["outer_iters"], info["inner_iters"],
            ";".join(str(int(p)) for p in pred), worst, "ok")


SWEEP_HEADER = ["value", "method", "realization", "snr_db", "outer_iters", "inner_iters",
                "predicted_iters", "min_slack", "status"]


def run_sweep(cfg: ExperimentConfig, out_dir=None, methods=None, threads=None) -> dict:
    """Required SNR and iteration counts per sweep value, method and channel.

    Points run on a thread pool; rows are written in a fixed order so the
    output does not depend on scheduling.
    """
    out = Path(out_dir or cfg.out_dir)
    methods = list(methods or cfg.methods)
    chans = load_channels(cfg)
    jobs = [(v, m, r) for v in cfg.sweep_values for m in methods for r in range(len(chans))]
    n = threads or cfg.threads
    run = lambda j: _sweep_point(cfg, j[0], j[1], j[2], chans[j[2]])
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    write_csv(out / "sweep.csv", SWEEP_HEADER, rows,
              _meta(cfg, sweep_axis=cfg.sweep_axis, methods=methods))
    return dict(rows=rows)


# -- calibration runs ------------------------------------------------------------------

def run_fit_j(cfg: ExperimentConfig, out_dir=None) -> dict:
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fits = {mod: fit_j_params(mod) for mod in ("qpsk", "16qam")}
    save_jparams_csv({m: f[0] for m, f in fits.items()}, out / "jparams.csv")
    return {m: dict(params=f[0], max_residual=f[1]) for m, f in fits.items()}


def run_decoder_exit(cfg: ExperimentConfig, out_dir=None) -> dict:
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve = decoder_exit_curve(blocks=cfg.exit_blocks, block_bits=cfg.exit_block_bits,
                               seed=cfg.seed)
    curve.save_csv(out / "decoder_exit.csv")
    return dict(curve=curve)
