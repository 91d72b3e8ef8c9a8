"""Preset configuration, reference tables and parameter sweeps."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bounds
from .dual import subgradient_search
from .model import ChannelModel, ResourceGrid, SuccessCurve, SystemConfig, UserConfig

PRESET_P = (
    (0.4, 0.3, 0.2, 0.1),
    (0.25, 0.3, 0.25, 0.2),
    (0.2, 0.25, 0.3, 0.25),
    (0.1, 0.2, 0.3, 0.4),
)


def reference_preset(grid: ResourceGrid | None = None) -> SystemConfig:
    """Four-user reference system on a 60001-level grid with step 1e-4."""
    channel = ChannelModel(states=(1.0, 2.0, 3.0, 4.0), transition=PRESET_P)
    params = zip((0.7, 0.6, 0.4, 0.3), (2, 3, 4, 5), (3.0, 1.0, 2.0, 4.0), (1.1, 1.2, 1.3, 1.4), (0.2, 0.1, 0.1, 0.2))
    users = tuple(
        UserConfig(
            arrival_rate=a, deadline=tau, weight=beta, window=2, p=0.8, q=q,
            channel=channel, curve=SuccessCurve.logistic(d),
        )
        for a, tau, beta, d, q in params
    )
    return SystemConfig(
        users=users,
        A_max=1,
        budget=6.0,
        deadline_cap=7,
        grid=grid if grid is not None else ResourceGrid.uniform(1e-4, 60001),
    )


# Published optimal policy tables for users 2 and 4 (0-based 1 and 3).
# Rows are states s1..s4, columns are remaining time, largest first.
REFERENCE_TABLES: dict[str, dict[int, list[list[float]]]] = {
    "zero": {
        1: [[1.3915, 1.4674, 1.6328], [0, 0.2762, 1.0554], [0, 0, 0], [0, 0, 0]],
        3: [
            [2.6024, 2.7488, 2.9284, 3.2269, 4.1129],
            [2.3917, 2.9635, 3.5677, 4.3658, 6.0],
            [0, 0, 1.6809, 3.9651, 6.0],
            [0, 0, 0, 1.9522, 6.0],
        ],
    },
    "perfect": {
        1: [
            [1.3651, 1.4248, 1.4906, 1.5797, 1.7865],
            [0, 0, 0.6726, 1.1571, 1.6759],
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
        ],
        3: [
            [2.3912, 2.5051, 2.6355, 2.7873, 2.9807, 3.3168, 4.3156],
            [1.2882, 1.948, 2.5292, 3.1024, 3.7309, 4.6111, 6.0],
            [0, 0, 0, 0, 2.315, 4.5133, 6.0],
            [0, 0, 0, 0, 0, 3.4852, 6.0],
        ],
    },
    "imperfect": {
        1: [
            [0.8382, 0.8269, 1.2468, 1.313, 1.4435],
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
        ],
        3: [
            [1.9575, 1.9758, 2.5562, 2.6954, 2.8624, 3.1235, 3.8744],
            [0, 0, 2.1895, 2.7631, 3.3489, 4.0761, 5.4601],
            [0, 0, 0, 0, 0, 3.2527, 5.7612],
            [0, 0, 0, 0, 0, 0, 4.5436],
        ],
    },
}


def policy_matrix(policy) -> np.ndarray:
    """Policy levels as (states, remaining time descending)."""
    H = policy.horizon
    return policy.levels[H:0:-1, :].T.copy()


def compare_tables(solution, mode: str, tol: float = 0.05) -> list[str]:
    """Mismatches between a solution's policies and the reference tables."""
    out = []
    for n, ref in REFERENCE_TABLES[mode].items():
        got = policy_matrix(solution.policies[n])
        ref = np.asarray(ref, dtype=float)
        if got.shape != ref.shape:
            out.append(f"user {n + 1}: shape {got.shape} != {ref.shape}")
            continue
        for i, j in zip(*np.nonzero(ref == 0)):
            if got[i, j] != 0:
                out.append(f"user {n + 1} s{i + 1} col {j}: {got[i, j]:.4f} should be 0")
        for i, j in zip(*np.nonzero(ref != 0)):
            if abs(got[i, j] - ref[i, j]) > tol:
                out.append(f"user {n + 1} s{i + 1} col {j}: {got[i, j]:.4f} vs {ref[i, j]:.4f}")
    return out


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

AXES = ("deadline", "window", "p", "q", "B")


def parse_sweep(text: str) -> tuple[str, np.ndarray]:
    """``axis=lo:hi:step`` with an inclusive upper end."""
    try:
        axis, rng = text.split("=", 1)
        lo, hi, step = (float(x) for x in rng.split(":"))
    except ValueError as exc:
        raise ValueError(f"sweep must look like axis=lo:hi:step, got {text!r}") from exc
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")
    if step <= 0 or hi < lo:
        raise ValueError("sweep range must be non-empty and increasing")
    values = np.arange(lo, hi + step * 1e-9, step)
    if axis in ("deadline", "window"):
        values = np.unique(np.round(values).astype(int))
    return axis, values


def apply_axis(system: SystemConfig, axis: str, value) -> SystemConfig:
    if axis == "B":
        return system.replace(budget=float(value))
    if axis == "deadline":
        s = system.map_users(deadline=int(value))
        return s.replace(deadline_cap=max(s.deadline_cap, int(value)))
    if axis == "window":
        return system.map_users(window=int(value))
    if axis in ("p", "q"):
        return system.map_users(**{axis: float(value)})
    raise ValueError(f"unknown sweep axis {axis!r}")


def phi_star(system: SystemConfig, mode: str, tol: float = 1e-6) -> float:
    return subgradient_search(system, mode, tol=tol).phi


def equivalent_budget(system: SystemConfig, target_phi: float, *, tol: float = 1e-4, hi: float | None = None) -> float:
    """Zero-prediction budget whose optimal throughput equals ``target_phi`` (bisection on B)."""
    lo_b = system.budget
    hi_b = hi if hi is not None else 2.0 * system.budget
    phi_hi = phi_star(system.replace(budget=hi_b), "zero")
    grow = 0
    while phi_hi < target_phi - tol / 2 and grow < 20:
        lo_b, hi_b = hi_b, 2.0 * hi_b
        phi_hi = phi_star(system.replace(budget=hi_b), "zero")
        grow += 1
    if phi_hi < target_phi - tol / 2:
        return float("inf")
    phi_lo = phi_star(system.replace(budget=lo_b), "zero")
    if phi_lo >= target_phi - tol / 2:
        return lo_b
    for _ in range(200):
        mid = 0.5 * (lo_b + hi_b)
        phi_mid = phi_star(system.replace(budget=mid), "zero")
        if abs(phi_mid - target_phi) <= tol / 2:
            return mid
        if phi_mid < target_phi:
            lo_b = mid
        else:
            hi_b = mid
    return 0.5 * (lo_b + hi_b)


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    phi0: float
    phi: float
    lower: float
    upper: float
    equivalent_budget: float


SWEEP_HEADER = ["axis", "value", "phi0", "phi", "lower", "upper", "equivalent_budget"]


def sweep_point(system: SystemConfig, axis: str, value, mode: str, *, with_budget: bool = True) -> SweepPoint:
    s = apply_axis(system, axis, value)
    phi0 = phi_star(s, "zero")
    phi = phi_star(s, mode) if mode != "zero" else phi0
    if mode == "zero":
        lower = upper = 0.0
    else:
        lower, upper = bounds.improvement_bounds_general(s, mode)
    eqb = s.budget
    if with_budget and phi > phi0 + 1e-4:
        eqb = equivalent_budget(s, phi)
    return SweepPoint(axis, float(value), phi0, phi, lower, upper, eqb)


def thread_count() -> int:
    env = os.environ.get("TIMELY_SCHED_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def run_sweep(system: SystemConfig, axis: str, values, mode: str = "imperfect", *, with_budget: bool = True) -> list[SweepPoint]:
    """Evaluate sweep points in a thread pool (numpy releases the GIL in the DP)."""
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        jobs = [pool.submit(sweep_point, system, axis, v, mode, with_budget=with_budget) for v in values]
        return [j.result() for j in jobs]


def sweep_to_csv(points, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for pt in points:
        w.writerow([pt.axis, pt.value, pt.phi0, pt.phi, pt.lower, pt.upper, pt.equivalent_budget])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


__all__ = [
    "AXES",
    "REFERENCE_TABLES",
    "SweepPoint",
    "apply_axis",
    "compare_tables",
    "equivalent_budget",
    "parse_sweep",
    "phi_star",
    "policy_matrix",
    "reference_preset",
    "run_sweep",
    "sweep_point",
    "sweep_to_csv",
]
