"""
Computable envelopes for Markov channels.

Lower bounds fix one resource level for the whole lifetime of a packet and
assume the worst channel state throughout; upper bounds assume the best
state in every slot. Both give dual-function sandwiches and hence bounds on
the throughput gain from prediction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dual import eval_dual, golden_section_search, price_cap
from .model import SystemConfig, UserConfig, ValidationError, predicted_rate


@dataclass(frozen=True)
class BoundTables:
    """Per-user value envelopes indexed by remaining time ``0..deadline+window``.

    ``Vl``/``Vu`` treat the window as known; ``Vl_pred``/``Vu_pred`` are the
    imperfect-prediction versions (``None`` without a window).
    """

    Vl: np.ndarray
    Vu: np.ndarray
    Vl_pred: np.ndarray | None
    Vu_pred: np.ndarray | None
    i_min: int
    i_max: int


def extreme_states(user: UserConfig, grid) -> tuple[int, int]:
    """(worst, best) channel state under the total order of success curves."""
    Z = user.zeta(grid)
    K = Z.shape[0]
    if K == 1:
        return 0, 0
    score = Z[:, 1:].sum(axis=1) if Z.shape[1] > 1 else Z[:, 0]
    i_min, i_max = int(np.argmin(score)), int(np.argmax(score))
    tol = 1e-12
    if np.any(Z[i_max][None, :] < Z - tol) or np.any(Z[i_min][None, :] > Z + tol):
        raise ValidationError("success curves are not totally ordered across channel states")
    return i_min, i_max


def _geometric(z: np.ndarray, k) -> np.ndarray:
    """(1 - (1 - z)^k) / z with the series limit k for tiny z."""
    z = np.asarray(z, dtype=float)
    k = np.asarray(k, dtype=float)
    small = z < 1e-9
    safe = np.where(small, 0.5, z)
    exact = -np.expm1(k * np.log1p(-safe)) / safe
    series = k - k * (k - 1) / 2 * z
    return np.where(small, series, exact)


def _fixed_lower(z, cost, beta, taus):
    """max over e>0 of G_tau(z(e)) * (z(e) beta - cost(e)) for each tau."""
    G = _geometric(z[None, :], np.asarray(taus)[:, None])
    return (G * (z * beta - cost)[None, :]).max(axis=1)


def value_bounds_perfect(user: UserConfig, lam: float, grid, horizon: int | None = None):
    """
    ``(Vl, Vu)`` over remaining time ``0..H`` with ``H = deadline + window``.

    ``Vl`` is the best fixed-level, worst-state value; ``Vu`` sums best-state
    one-slot gains, each reduced by the lower bound one slot later.
    """
    H = user.deadline + user.window if horizon is None else horizon
    i_min, i_max = extreme_states(user, grid)
    Z = user.zeta(grid)
    levels = grid.levels
    cost = lam * levels
    Vl = np.zeros(H + 1)
    if levels.size > 1 and H > 0:
        Vl[1:] = _fixed_lower(Z[i_min, 1:], cost[1:], user.weight, range(1, H + 1))
    Vu = np.zeros(H + 1)
    zmax = Z[i_max]
    for t in range(1, H + 1):
        Vu[t] = Vu[t - 1] + float(np.max(-cost + zmax * (user.weight - max(0.0, Vl[t - 1]))))
    return Vl, Vu


def value_bounds_imperfect(user: UserConfig, lam: float, grid):
    """
    ``(Vl_pred, Vu_pred)`` for a predicted packet of a user with a window.

    Entries below the deadline equal the perfect bounds. From the deadline up
    the lower bound prices the wasted effort on false alarms and the upper
    bound scales the post-reveal part by ``p``.
    """
    if user.window < 1:
        raise ValueError("imperfect bounds need window >= 1")
    tau_n, H, p, beta = user.deadline, user.deadline + user.window, user.p, user.weight
    Vl, Vu = value_bounds_perfect(user, lam, grid)
    i_min, i_max = extreme_states(user, grid)
    Z = user.zeta(grid)
    cost = lam * grid.levels
    Lt = Vl.copy()
    if grid.levels.size > 1:
        z, c = Z[i_min, 1:], cost[1:]
        for t in range(tau_n, H + 1):
            val = -(1 - p) * _geometric(z, t - tau_n) * c + p * _geometric(z, t) * (z * beta - c)
            Lt[t] = float(val.max())
    zmax = Z[i_max]
    post = sum(
        float(np.max(-cost + zmax * (beta - max(0.0, Lt[z - 1])))) for z in range(1, tau_n + 1)
    )
    Ut = Vu.copy()
    Ut[tau_n] = p * post
    pre = 0.0
    for z in range(tau_n + 1, H + 1):
        pre += float(np.max(-cost + zmax * (p * beta - max(0.0, Lt[tau_n], Lt[z - 1]))))
        Ut[z] = pre + p * post
    return Lt, Ut


def bound_tables(user: UserConfig, lam: float, grid) -> BoundTables:
    Vl, Vu = value_bounds_perfect(user, lam, grid)
    Lt = Ut = None
    if user.window >= 1:
        Lt, Ut = value_bounds_imperfect(user, lam, grid)
    i_min, i_max = extreme_states(user, grid)
    return BoundTables(Vl=Vl, Vu=Vu, Vl_pred=Lt, Vu_pred=Ut, i_min=i_min, i_max=i_max)


def _user_bounds(user: UserConfig, lam: float, system: SystemConfig, mode: str) -> tuple[float, float]:
    tau = user.deadline
    if mode == "zero":
        Vl, Vu = value_bounds_perfect(user, lam, system.grid, horizon=tau)
        a = user.arrival_rate
        return a * max(0.0, Vl[tau]), a * min(user.weight, Vu[tau])
    if mode == "perfect" or (mode == "imperfect" and user.window == 0):
        Vl, Vu = value_bounds_perfect(user, lam, system.grid)
        H, a = tau + user.window, user.arrival_rate
        return a * max(0.0, Vl[H]), a * min(user.weight, Vu[H])
    if mode == "imperfect":
        H = tau + user.window
        Vl, Vu = value_bounds_perfect(user, lam, system.grid)
        Lt, Ut = value_bounds_imperfect(user, lam, system.grid)
        at = predicted_rate(user.arrival_rate, user.p, user.q, system.A_max)
        missed = (system.A_max - at) * user.q
        lo = at * max(0.0, Lt[tau], Lt[H]) + missed * max(0.0, Vl[tau])
        hi = at * min(user.p * user.weight, Ut[H]) + missed * min(user.weight, Vu[tau])
        return lo, hi
    raise ValueError(f"unknown mode {mode!r}")


def dual_bounds(system: SystemConfig, lam: float, mode: str) -> tuple[float, float]:
    """``(g_l(lam), g_u(lam))`` bracketing the dual function."""
    lo = hi = lam * system.budget
    for u in system.users:
        a, b = _user_bounds(u, lam, system, mode)
        lo += a
        hi += b
    return float(lo), float(hi)


def lower_dual(system: SystemConfig, lam: float, mode: str) -> float:
    return dual_bounds(system, lam, mode)[0]


def argmin_lower(system: SystemConfig, mode: str, tol: float = 1e-8) -> float:
    """Minimizer of the (convex) lower envelope on ``[0, price_cap]``."""
    lam, _ = golden_section_search(lambda x: lower_dual(system, x, mode), 0.0, price_cap(system), tol=tol)
    return lam


def improvement_bounds_general(system: SystemConfig, mode: str = "perfect", tol: float = 1e-8) -> tuple[float, float]:
    """
    ``(lower, upper)`` on ``phi*_mode - phi*_0``.

    The lower bound is ``g_l_mode - g_u_zero`` at the minimizer of
    ``g_l_mode``; the upper bound is ``g_u_mode - g_l_zero`` at the minimizer
    of ``g_l_zero``.
    """
    if mode not in ("perfect", "imperfect"):
        raise ValueError(f"improvement bounds need a predictive mode, got {mode!r}")
    lam0 = argmin_lower(system, "zero", tol)
    lam_m = argmin_lower(system, mode, tol)
    lower = dual_bounds(system, lam_m, mode)[0] - dual_bounds(system, lam_m, "zero")[1]
    upper = dual_bounds(system, lam0, mode)[1] - dual_bounds(system, lam0, "zero")[0]
    return float(lower), float(upper)


BOUND_HEADER = ["lambda", "g", "g_lower", "g_upper"]


def bound_curve(system: SystemConfig, mode: str, lams) -> list[tuple[float, float, float, float]]:
    rows = []
    for lam in lams:
        lo, hi = dual_bounds(system, float(lam), mode)
        rows.append((float(lam), eval_dual(system, float(lam), mode), lo, hi))
    return rows


def bound_curve_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOUND_HEADER)
    for r in rows:
        w.writerow([repr(x) for x in r])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
