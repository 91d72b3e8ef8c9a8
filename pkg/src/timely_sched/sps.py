"""
Single-packet scheduling: finite-horizon value iteration for one packet of
one user at a fixed resource price ``lam``.

A packet state is (remaining slots ``tau``, channel state ``i``). Tables are
indexed ``[tau, i]`` for ``tau = 0..H`` where ``H = deadline + window``.
Row 0 is the expired state and is identically zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import ResourceGrid, UserConfig


@dataclass(frozen=True)
class ValueTable:
    """Optimal value V(0, tau, i) of an undelivered packet."""

    V: np.ndarray
    weight: float
    deadline: int
    window: int
    p: float
    mode: str

    @property
    def horizon(self) -> int:
        return self.V.shape[0] - 1

    @property
    def entry(self) -> np.ndarray:
        """Values at the state a packet enters the system in (full horizon)."""
        return self.V[self.horizon]

    @property
    def arrival(self) -> np.ndarray:
        """Values at remaining time equal to the deadline (unpredicted entry)."""
        return self.V[self.deadline]

    def delivered_value(self, tau: int) -> float:
        """Reward constant of a packet delivered with ``tau`` slots left."""
        if self.mode == "imperfect" and tau >= self.deadline:
            return self.p * self.weight
        return self.weight


@dataclass(frozen=True)
class PolicyTable:
    """Optimal level e*(0, tau, i) as grid indices and as levels."""

    index: np.ndarray
    levels: np.ndarray
    deadline: int
    window: int
    p: float
    mode: str

    @property
    def horizon(self) -> int:
        return self.index.shape[0] - 1


def _reward_schedule(beta: float, H: int, deadline: int, p: float, imperfect: bool):
    """Per-stage success reward and failure-continuation factor for tau = 1..H."""
    reward = np.full(H + 1, float(beta))
    carry = np.ones(H + 1)
    if imperfect:
        reward[deadline + 1 :] = p * beta
        if deadline + 1 <= H:
            carry[deadline + 1] = p
    return reward, carry


def _backward(Z, P, levels, lam, reward, carry, H, tie):
    K = Z.shape[0]
    V = np.zeros((H + 1, K))
    idx = np.zeros((H + 1, K), dtype=np.int64)
    cost = lam * levels
    rows = np.arange(K)
    for tau in range(1, H + 1):
        cont = carry[tau] * (P @ V[tau - 1])
        vals = Z * reward[tau] + (1.0 - Z) * cont[:, None] - cost[None, :]
        if tie == "smallest":
            k = np.argmax(vals, axis=1)
        elif tie == "largest":
            k = vals.shape[1] - 1 - np.argmax(vals[:, ::-1], axis=1)
        else:
            raise ValueError(f"unknown tie-break {tie!r}")
        idx[tau] = k
        V[tau] = vals[rows, k]
    return V, idx


def _solve(user: UserConfig, lam: float, grid: ResourceGrid, mode: str, tie: str):
    if lam < 0:
        raise ValueError("price must be non-negative")
    H = user.deadline + user.window
    if H < 1:
        raise ValueError("horizon deadline + window must be at least 1")
    imperfect = mode == "imperfect"
    reward, carry = _reward_schedule(user.weight, H, user.deadline, user.p, imperfect)
    Z = user.zeta(grid)
    V, idx = _backward(Z, user.channel.P, grid.levels, float(lam), reward, carry, H, tie)
    V.setflags(write=False)
    idx.setflags(write=False)
    levels = grid.levels[idx]
    levels.setflags(write=False)
    meta = dict(deadline=user.deadline, window=user.window, p=user.p if imperfect else 1.0, mode=mode)
    return ValueTable(V=V, weight=user.weight, **meta), PolicyTable(index=idx, levels=levels, **meta)


def solve_perfect(user: UserConfig, lam: float, grid: ResourceGrid, *, tie: str = "smallest"):
    """
    Value and policy tables for a packet known ``user.window`` slots ahead.

    ``window=0`` is the zero-prediction case. Ties in the maximization over
    levels go to the smallest level unless ``tie="largest"``.

    Returns
    -------
    (ValueTable, PolicyTable)
    """
    return _solve(user, lam, grid, "perfect", tie)


def solve_imperfect(user: UserConfig, lam: float, grid: ResourceGrid, *, tie: str = "smallest"):
    """
    Value and policy tables for a predicted packet that is real with
    probability ``user.p``.

    Stages ``tau > deadline`` are pre-service: a delivery there is worth
    ``p * weight`` and, one slot before the reveal, a failed packet survives
    only if it is real. Stages ``tau <= deadline`` coincide with the
    zero-prediction recursion, so row ``deadline`` also serves unpredicted
    arrivals.
    """
    if user.window < 1:
        raise ValueError("imperfect prediction needs window >= 1")
    return _solve(user, lam, grid, "imperfect", tie)


def solve(user: UserConfig, lam: float, grid: ResourceGrid, mode: str, *, tie: str = "smallest"):
    """Dispatch on prediction mode (``zero``, ``perfect``, ``imperfect``)."""
    if mode == "zero":
        return _solve(user.replace(window=0), lam, grid, "perfect", tie)
    if mode == "perfect" or (mode == "imperfect" and user.window == 0):
        return _solve(user, lam, grid, "perfect", tie)
    if mode == "imperfect":
        return _solve(user, lam, grid, "imperfect", tie)
    raise ValueError(f"unknown mode {mode!r}")


def _policy_recursion(user, policy, grid, per_stage):
    """Shared forward-in-tau recursion X(tau) = f(tau, e*) + (1 - ζ) carry P X(tau-1)."""
    if policy.horizon != user.deadline + user.window or policy.index.shape[1] != user.channel.K:
        raise ValueError("policy table does not match the user configuration")
    Z = user.zeta(grid)
    P = user.channel.P
    H = policy.horizon
    rows = np.arange(user.channel.K)
    carry = np.ones(H + 1)
    if policy.mode == "imperfect" and user.deadline + 1 <= H:
        carry[user.deadline + 1] = policy.p
    X = np.zeros((H + 1, user.channel.K))
    for tau in range(1, H + 1):
        k = policy.index[tau]
        z = Z[rows, k]
        X[tau] = per_stage(tau, k, z) + (1.0 - z) * carry[tau] * (P @ X[tau - 1])
    return X


def expected_resource(user: UserConfig, policy: PolicyTable, grid: ResourceGrid) -> np.ndarray:
    """
    Expected total resource a packet consumes from each state under ``policy``.

    In imperfect mode a false alarm is dropped at the reveal, so the
    continuation into ``tau = deadline`` carries the factor ``p``.
    """
    levels = grid.levels
    return _policy_recursion(user, policy, grid, lambda tau, k, z: levels[k])


def expected_reward(user: UserConfig, policy: PolicyTable, grid: ResourceGrid) -> np.ndarray:
    """Expected weight collected (weight times probability of a timely, real delivery) from each state."""
    beta = user.weight

    def stage(tau, k, z):
        r = policy.p * beta if policy.mode == "imperfect" and tau > user.deadline else beta
        return z * r

    return _policy_recursion(user, policy, grid, stage)


def _tau_labels(deadline: int, horizon: int) -> list[str]:
    return [f"{deadline}+{t - deadline}" if t > deadline else str(t) for t in range(horizon, 0, -1)]


def table_to_csv(table, path=None, *, digits: int | None = None) -> str:
    """
    CSV with one row per channel state and one column per remaining time,
    largest first. Accepts a :class:`PolicyTable` (levels) or
    :class:`ValueTable` (values).
    """
    data = table.levels if isinstance(table, PolicyTable) else table.V
    H = data.shape[0] - 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state"] + _tau_labels(table.deadline, H))
    for i in range(data.shape[1]):
        row = data[H:0:-1, i]
        if digits is not None:
            row = np.round(row, digits)
        w.writerow([f"s{i + 1}"] + [f"{float(x):.12g}" for x in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
