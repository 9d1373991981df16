"""Alternating transmit/receive optimization and its feasible starting point."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InfeasibleError, SolverError
from ..exitlab import ConvergenceSpec
from ..model import ChannelRealization
from ..receiver import ReceiveFilters, mmse_directions, mmse_filters, mmse_sinr
from .sca import pap_data, sca_solve

DIAG_FIELDS = ("outer_iter", "inner_iters", "objective", "snr_db", "max_constraint_violation")


def constraint_violation(P, chan, spec: ConvergenceSpec, noise_var) -> float:
    """Largest relative shortfall ``max(0, 1 - zeta/xi)`` under fresh MMSE filters."""
    zeta = mmse_sinr(P, chan, spec.delta_seen, noise_var)
    need = spec.xi > 0
    if not need.any():
        return 0.0
    return float(max(0.0, np.max(1.0 - zeta[need] / spec.xi[need])))


def _snr_db(P, chan, noise_var):
    total = float(np.sum(P))
    return 10 * np.log10(total / (chan.N_R * chan.N_F * noise_var)) if total > 0 else -np.inf


def feasible_init(chan: ChannelRealization, spec: ConvergenceSpec, noise_var,
                  margins=(1.1, 1.05, 1.01, 1.001), floor=1e-6):
    """Strictly feasible ``(P0, t_hat0)``.

    With ``N_R >= U`` per-bin spatial ZF decouples the users and each one gets
    single-user loading with ``margin * xi``; otherwise equal power with the
    same margin. A small power floor keeps every bin strictly positive, which
    the log-domain subproblems require. ``t_hat0`` holds the per-bin ratios
    under MMSE filters at ``P0``.
    """
    from ..baselines import ep_bisection, zf_scmmse

    last = None
    for margin in margins:
        try:
            if chan.N_R >= chan.U:
                P = zf_scmmse(chan, spec, noise_var, margin=margin)
            else:
                P = np.full((chan.U, chan.N_F), margin * ep_bisection(chan, spec, noise_var))
        except InfeasibleError as exc:
            last = exc
            continue
        P = P + floor * max(P.max(), noise_var)
        if np.all(mmse_sinr(P, chan, spec.delta_seen, noise_var) > spec.xi):
            omega = mmse_directions(P, chan, spec.delta_seen, noise_var)
            return P, pap_data(chan, omega, spec, noise_var).ratios(P)
        last = InfeasibleError("initial point not strictly feasible")
    raise InfeasibleError(f"no feasible initialization: {last}",
                          where=getattr(last, "where", None))


@dataclass
class Diagnostics:
    rows: list = field(default_factory=list)
    sca_violations: int = 0
    inner_histories: list = field(default_factory=list)

    @property
    def outer_iterations(self) -> int:
        return len(self.rows) - 1

    @property
    def objectives(self):
        return [r["objective"] for r in self.rows]

    def save_csv(self, path, meta: dict | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            for k, v in (meta or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.DictWriter(fh, fieldnames=DIAG_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def alternating_optimize(chan: ChannelRealization, spec: ConvergenceSpec, noise_var,
                         method="scagp", tol=0.05, max_outer=30, sca_tol=0.01,
                         sca_max_iters=100, P0=None, barrier: dict | None = None):
    """Alternate MMSE filter updates and SCA power updates until the total
    power changes by at most ``tol``.

    Returns ``(P, ReceiveFilters, Diagnostics)``. Row 0 of the diagnostics is
    the initial point.
    """
    if P0 is None:
        P0, _ = feasible_init(chan, spec, noise_var)
    P = np.asarray(P0, dtype=float)
    diag = Diagnostics()
    obj = float(P.sum())
    diag.rows.append(dict(outer_iter=0, inner_iters=0, objective=obj,
                          snr_db=_snr_db(P, chan, noise_var),
                          max_constraint_violation=constraint_violation(P, chan, spec, noise_var)))
    for outer in range(1, max_outer + 1):
        omega = mmse_directions(P, chan, spec.delta_seen, noise_var)
        data = pap_data(chan, omega, spec, noise_var)
        res = sca_solve(method, data, P, tol=sca_tol, max_iters=sca_max_iters, barrier=barrier)
        diag.sca_violations += res.violations
        diag.inner_histories.append(res.history)
        new = float(res.P.sum())
        if new > obj * (1 + 1e-12):
            raise SolverError("alternating optimization increased the objective")
        P = res.P
        step = obj - new
        obj = new
        diag.rows.append(dict(outer_iter=outer, inner_iters=res.iterations, objective=obj,
                              snr_db=_snr_db(P, chan, noise_var),
                              max_constraint_violation=constraint_violation(
                                  P, chan, spec, noise_var)))
        if step <= tol:
            break
    filters: ReceiveFilters = mmse_filters(P, chan, spec.delta_seen, noise_var)
    return P, filters, diag
