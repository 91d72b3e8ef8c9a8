"""
Problem instances: channels, success curves, resource grids, users and systems.

All types are frozen dataclasses. Validation is explicit: :func:`validate`
returns every violated invariant, :func:`check` raises on the first call that
finds any.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

Mode = Literal["zero", "perfect", "imperfect"]
MODES: tuple[str, ...] = ("zero", "perfect", "imperfect")

_STOCHASTIC_TOL = 1e-12
_SHAPE_TOL = 1e-12
_POWER_MAX_ITERS = 10**6


class ValidationError(ValueError):
    """Raised when a problem instance violates a model invariant."""

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


class ErgodicityError(ValidationError):
    """Raised for reducible or periodic channel chains."""


class GridError(ValueError):
    """Raised when a resource level is not a member of the grid."""


@dataclass(frozen=True)
class Violation:
    user: int | None
    field: str
    message: str

    def __str__(self) -> str:
        where = "system" if self.user is None else f"user {self.user}"
        return f"{where}: {self.field}: {self.message}"


# --------------------------------------------------------------------------
# Markov channel
# --------------------------------------------------------------------------


def _check_stochastic(P: np.ndarray) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValidationError(f"transition matrix must be square and non-empty, got shape {P.shape}")
    if np.any(P < 0) or np.any(P > 1):
        raise ValidationError("transition matrix entries must lie in [0, 1]")
    bad = np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > _STOCHASTIC_TOL)
    if bad.size:
        raise ValidationError(f"rows {bad.tolist()} of the transition matrix do not sum to 1")


def _period(P: np.ndarray, members: np.ndarray) -> int:
    """Period of the closed class ``members`` via BFS levels."""
    inside = set(members.tolist())
    root = int(members[0])
    level = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(P[u] > 0):
                v = int(v)
                if v in inside and v not in level:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u in inside:
        for v in np.flatnonzero(P[u] > 0):
            v = int(v)
            if v in inside:
                g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g)


def check_ergodic(P: np.ndarray) -> None:
    """Raise :class:`ErgodicityError` unless ``P`` has one aperiodic recurrent class."""
    n_comp, labels = connected_components(P > 0, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        outside = np.setdiff1d(np.arange(P.shape[0]), members)
        if outside.size == 0 or not np.any(P[np.ix_(members, outside)] > 0):
            closed.append(members)
    if len(closed) != 1:
        raise ErgodicityError(f"chain has {len(closed)} recurrent classes, expected 1")
    if _period(P, closed[0]) != 1:
        raise ErgodicityError("chain is periodic")


def stationary_distribution(P) -> np.ndarray:
    """
    Stationary distribution of an ergodic row-stochastic matrix.

    Power iteration from the uniform vector, falling back to a dense linear
    solve when the iteration does not settle.

    Raises
    ------
    ValidationError
        If a row is not a probability vector.
    ErgodicityError
        If the chain is reducible (more than one recurrent class) or periodic.
    """
    P = np.asarray(P, dtype=float)
    _check_stochastic(P)
    check_ergodic(P)
    K = P.shape[0]
    eta = np.full(K, 1.0 / K)
    for _ in range(_POWER_MAX_ITERS):
        nxt = eta @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - eta)) < 1e-15:
            eta = nxt
            break
        eta = nxt
    if np.max(np.abs(eta @ P - eta)) > 1e-12:
        A = np.vstack([P.T - np.eye(K), np.ones(K)])
        rhs = np.zeros(K + 1)
        rhs[-1] = 1.0
        eta = np.linalg.lstsq(A, rhs, rcond=None)[0]
    eta = np.clip(eta, 0.0, None)
    return eta / eta.sum()


@dataclass(frozen=True)
class ChannelModel:
    """Finite-state Markov channel; ``states`` are noise levels."""

    states: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(float(s) for s in self.states))
        object.__setattr__(self, "transition", tuple(tuple(float(x) for x in row) for row in self.transition))

    @property
    def K(self) -> int:
        return len(self.states)

    @cached_property
    def P(self) -> np.ndarray:
        P = np.array(self.transition, dtype=float)
        P.setflags(write=False)
        return P

    @cached_property
    def stationary(self) -> np.ndarray:
        eta = stationary_distribution(self.P)
        eta.setflags(write=False)
        return eta

    @classmethod
    def static(cls, noise: float = 1.0) -> "ChannelModel":
        return cls(states=(noise,), transition=((1.0,),))


# --------------------------------------------------------------------------
# Resource grid and success curves
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResourceGrid:
    """Sorted set of resource levels starting at 0.

    Equality compares levels; hashing is by identity so grids can key caches
    cheaply.
    """

    levels: np.ndarray
    step: float | None = None
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        levels = np.array(self.levels, dtype=float).ravel()
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def uniform(cls, step: float, count: int) -> "ResourceGrid":
        return cls(np.arange(count) * step, step=step)

    @classmethod
    def binary(cls) -> "ResourceGrid":
        return cls(np.array([0.0, 1.0]), step=1.0)

    def __len__(self) -> int:
        return self.levels.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResourceGrid):
            return NotImplemented
        return self is other or (
            self.levels.shape == other.levels.shape and bool(np.array_equal(self.levels, other.levels))
        )

    __hash__ = object.__hash__

    def index_of(self, e: float) -> int:
        """Grid index of level ``e``; raises :class:`GridError` off-grid."""
        k = int(np.searchsorted(self.levels, e))
        for j in (k - 1, k):
            if 0 <= j < self.levels.size and abs(self.levels[j] - e) <= 1e-12 * max(1.0, abs(e)):
                return j
        raise GridError(f"resource level {e!r} is not on the grid")

    def problems(self) -> list[str]:
        out = []
        if self.levels.size == 0:
            return ["grid is empty"]
        if self.levels[0] != 0.0:
            out.append("first level must be 0")
        if np.any(np.diff(self.levels) <= 0):
            out.append("levels must be strictly increasing")
        if not np.all(np.isfinite(self.levels)):
            out.append("levels must be finite")
        return out

    def to_json(self):
        if self.step is not None and np.array_equal(self.levels, np.arange(len(self)) * self.step):
            return {"step": self.step, "count": len(self)}
        return self.levels.tolist()

    @classmethod
    def from_json(cls, obj) -> "ResourceGrid":
        if isinstance(obj, dict):
            return cls.uniform(float(obj["step"]), int(obj["count"]))
        return cls(np.asarray(obj, dtype=float))


@dataclass(frozen=True)
class SuccessCurve:
    """Transmission success probability as a function of (state, level).

    ``kind="logistic"`` evaluates ``2 / (1 + exp(-2 e / (d^3 s_i))) - 1`` for
    distance ``d`` and noise ``s_i``; ``kind="table"`` looks up
    ``rows[i][level_index]``.
    """

    kind: str
    distance: float | None = None
    rows: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("logistic", "table"):
            raise ValueError(f"unknown success curve kind {self.kind!r}")
        if self.kind == "logistic" and (self.distance is None or self.distance <= 0):
            raise ValueError("logistic curve needs a positive distance")
        if self.kind == "table":
            if self.rows is None:
                raise ValueError("table curve needs rows")
            object.__setattr__(self, "rows", tuple(tuple(float(x) for x in r) for r in self.rows))

    @classmethod
    def logistic(cls, d: float) -> "SuccessCurve":
        return cls("logistic", distance=float(d))

    @classmethod
    def table(cls, rows) -> "SuccessCurve":
        return cls("table", rows=rows)

    @classmethod
    def constant(cls, zeta: float) -> "SuccessCurve":
        """Single-state binary-grid curve: success ``zeta`` at level 1."""
        return cls("table", rows=((0.0, float(zeta)),))

    def matrix(self, states: Sequence[float], grid: ResourceGrid) -> np.ndarray:
        """ζ over all (state, level) pairs as a read-only ``(K, |grid|)`` array, memoized per grid."""
        key = (self, tuple(states))
        cached = grid._memo.get(key)
        if cached is not None:
            return cached
        if self.kind == "logistic":
            scale = self.distance**3 * np.asarray(states, dtype=float)[:, None]
            # 2/(1+exp(-2x)) - 1 == tanh(x); tanh is exact at ζ(i,0)=0
            Z = np.tanh(grid.levels[None, :] / scale)
        else:
            Z = np.array(self.rows, dtype=float)
            if Z.shape != (len(states), len(grid)):
                raise ValueError(f"table curve has shape {Z.shape}, expected {(len(states), len(grid))}")
        Z.setflags(write=False)
        grid._memo[key] = Z
        return Z

    def to_json(self) -> dict:
        if self.kind == "logistic":
            return {"kind": "logistic", "d": self.distance}
        return {"kind": "table", "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_json(cls, obj: dict) -> "SuccessCurve":
        if obj["kind"] == "logistic":
            return cls.logistic(obj["d"])
        return cls.table(obj["rows"])


def success_prob(curve: SuccessCurve, i: int, e: float, *, states: Sequence[float], grid: ResourceGrid) -> float:
    """ζ(i, e) for an on-grid level ``e``."""
    if not 0 <= i < len(states):
        raise IndexError(f"state index {i} out of range")
    return float(curve.matrix(states, grid)[i, grid.index_of(e)])


def curve_problems(Z: np.ndarray, levels: np.ndarray) -> list[tuple[str, str]]:
    """Shape violations of a ζ matrix on the grid as (field, message) pairs."""
    out = []
    if np.any(Z[:, 0] != 0.0):
        out.append(("curve", "ζ(i,0)=0"))
    if Z.shape[1] > 1:
        if np.any(Z[:, 1:] <= 0.0):
            out.append(("curve", "ζ(i,e)>0 for e>0"))
        if np.any(np.diff(Z, axis=1) <= 0.0):
            out.append(("curve", "ζ strictly increasing in e"))
        slopes = np.diff(Z, axis=1) / np.diff(levels)[None, :]
        if Z.shape[1] > 2 and np.any(np.diff(slopes, axis=1) > _SHAPE_TOL):
            out.append(("curve", "ζ concave in e"))
    if np.any(Z < 0) or np.any(Z >= 1):
        out.append(("curve", "ζ in [0,1)"))
    K = Z.shape[0]
    for i in range(K):
        for j in range(i + 1, K):
            d = Z[i] - Z[j]
            if not (np.all(d >= -_SHAPE_TOL) or np.all(d <= _SHAPE_TOL)):
                out.append(("curve", f"total order between states {i} and {j}"))
    return out


# --------------------------------------------------------------------------
# Users and systems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UserConfig:
    arrival_rate: float
    deadline: int
    weight: float
    window: int
    p: float
    q: float
    channel: ChannelModel
    curve: SuccessCurve

    def zeta(self, grid: ResourceGrid) -> np.ndarray:
        return self.curve.matrix(self.channel.states, grid)

    def replace(self, **changes) -> "UserConfig":
        return dataclasses.replace(self, **changes)


def effective_user(user: UserConfig, mode: str) -> UserConfig:
    """User as seen by the solver in a given prediction mode.

    ``zero`` drops the window, ``perfect`` forces p=1 and q=0; ``imperfect``
    keeps the user unchanged. An imperfect user with an empty window is
    treated as zero-prediction.
    """
    if mode == "zero":
        return user.replace(window=0, p=1.0, q=0.0)
    if mode == "perfect":
        return user.replace(p=1.0, q=0.0)
    if mode == "imperfect":
        return user
    raise ValueError(f"unknown mode {mode!r}")


def predicted_rate(a: float, p: float, q: float, A_max: float) -> float:
    """Rate of positive predictions that reproduces mean arrival rate ``a``.

    Inverts ``a = ã p + (A_max - ã) q``.
    """
    if not p > q:
        raise ValidationError(f"need p > q, got p={p}, q={q}")
    ratio = a / A_max
    if ratio < q - 1e-12 or ratio > p + 1e-12:
        raise ValidationError(f"need q <= a/A_max <= p, got q={q}, a/A_max={ratio}, p={p}")
    at = (a - A_max * q) / (p - q)
    return float(min(max(at, 0.0), A_max))


@dataclass(frozen=True)
class SystemConfig:
    users: tuple[UserConfig, ...]
    A_max: int
    budget: float
    deadline_cap: int
    grid: ResourceGrid
    capacity: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))

    @property
    def N(self) -> int:
        return len(self.users)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def map_users(self, **changes) -> "SystemConfig":
        """Apply the same field changes to every user."""
        return self.replace(users=tuple(u.replace(**changes) for u in self.users))

    def for_mode(self, mode: str) -> "SystemConfig":
        return self.replace(users=tuple(effective_user(u, mode) for u in self.users))


def validate(config: SystemConfig) -> list[Violation]:
    """Every violated invariant of ``config``; an empty list means valid."""
    out: list[Violation] = []
    for msg in config.grid.problems():
        out.append(Violation(None, "grid", msg))
    if not config.users:
        out.append(Violation(None, "users", "non-empty user list"))
    if not config.A_max >= 1 or int(config.A_max) != config.A_max:
        out.append(Violation(None, "A_max", "positive integer"))
    if not config.budget > 0:
        out.append(Violation(None, "budget", "B > 0"))
    if not config.deadline_cap >= 1:
        out.append(Violation(None, "deadline_cap", "positive integer"))
    if config.capacity is not None and not config.capacity >= 1:
        out.append(Violation(None, "capacity", "positive integer"))
    grid_ok = not config.grid.problems()
    for n, u in enumerate(config.users):
        if not 0 < u.arrival_rate <= config.A_max:
            out.append(Violation(n, "arrival_rate", "a in (0, A_max]"))
        if not (u.deadline >= 1 and int(u.deadline) == u.deadline):
            out.append(Violation(n, "deadline", "positive integer"))
        elif u.deadline > config.deadline_cap:
            out.append(Violation(n, "deadline", "τ ≤ Γ"))
        if not u.weight >= 0:
            out.append(Violation(n, "weight", "β ≥ 0"))
        if not (u.window >= 0 and int(u.window) == u.window):
            out.append(Violation(n, "window", "non-negative integer"))
        if not 0 < u.p <= 1:
            out.append(Violation(n, "p", "p in (0,1]"))
        if not 0 <= u.q < 1:
            out.append(Violation(n, "q", "q in [0,1)"))
        if not u.p > u.q:
            out.append(Violation(n, "p", "p > q"))
        ratio = u.arrival_rate / config.A_max
        if not (u.q - 1e-12 <= ratio <= u.p + 1e-12):
            out.append(Violation(n, "q", "q ≤ a/A_max ≤ p"))
        try:
            P = u.channel.P
            _check_stochastic(P)
            check_ergodic(P)
        except ValidationError as exc:
            out.append(Violation(n, "channel", str(exc)))
        if any(s <= 0 for s in u.channel.states):
            out.append(Violation(n, "channel", "noise levels must be positive"))
        if grid_ok:
            try:
                Z = u.zeta(config.grid)
            except ValueError as exc:
                out.append(Violation(n, "curve", str(exc)))
            else:
                for fld, msg in curve_problems(Z, config.grid.levels):
                    out.append(Violation(n, fld, msg))
    return out


def check(config: SystemConfig) -> SystemConfig:
    """Return ``config`` unchanged, or raise :class:`ValidationError` listing every violation."""
    violations = validate(config)
    if violations:
        raise ValidationError("; ".join(str(v) for v in violations), violations)
    return config


# --------------------------------------------------------------------------
# JSON config files
# --------------------------------------------------------------------------


def user_to_dict(u: UserConfig) -> dict:
    return {
        "arrival_rate": u.arrival_rate,
        "deadline": u.deadline,
        "weight": u.weight,
        "window": u.window,
        "p": u.p,
        "q": u.q,
        "channel": {"states": list(u.channel.states), "transition": [list(r) for r in u.channel.transition]},
        "curve": u.curve.to_json(),
    }


def user_from_dict(d: dict) -> UserConfig:
    return UserConfig(
        arrival_rate=float(d["arrival_rate"]),
        deadline=int(d["deadline"]),
        weight=float(d["weight"]),
        window=int(d.get("window", 0)),
        p=float(d.get("p", 1.0)),
        q=float(d.get("q", 0.0)),
        channel=ChannelModel(states=d["channel"]["states"], transition=d["channel"]["transition"]),
        curve=SuccessCurve.from_json(d["curve"]),
    )


def config_to_dict(config: SystemConfig) -> dict:
    return {
        "users": [user_to_dict(u) for u in config.users],
        "A_max": config.A_max,
        "budget": config.budget,
        "deadline_cap": config.deadline_cap,
        "capacity": config.capacity,
        "grid": config.grid.to_json(),
    }


def config_from_dict(d: dict) -> SystemConfig:
    return SystemConfig(
        users=tuple(user_from_dict(u) for u in d["users"]),
        A_max=int(d["A_max"]),
        budget=float(d["budget"]),
        deadline_cap=int(d["deadline_cap"]),
        grid=ResourceGrid.from_json(d["grid"]),
        capacity=None if d.get("capacity") is None else int(d["capacity"]),
    )


def load_config(path) -> SystemConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(config: SystemConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2))
