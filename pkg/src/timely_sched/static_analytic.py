"""
Closed forms for static channels with an on/off resource (levels {0, 1}).

With constant success probability ``zeta`` a packet is either transmitted in
every slot until delivery or never; expected transmissions over ``k`` slots
are ``G_k = (1 - (1 - zeta)^k) / zeta``. Every dual here is piecewise linear
in the price, so optimal prices come from enumerating breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ChannelModel, ResourceGrid, SuccessCurve, SystemConfig, UserConfig, predicted_rate


@dataclass(frozen=True)
class StaticUser:
    zeta: float
    beta: float
    a: float
    tau: int
    D: int = 0
    p: float = 1.0
    q: float = 0.0
    A_max: float = 1.0

    def __post_init__(self):
        if not 0 < self.zeta < 1:
            raise ValueError("static success probability must lie in (0, 1)")

    @property
    def margin(self) -> float:
        """One-slot reward minus price is ``margin - lam``."""
        return self.zeta * self.beta

    def to_user(self) -> UserConfig:
        return UserConfig(
            arrival_rate=self.a,
            deadline=self.tau,
            weight=self.beta,
            window=self.D,
            p=self.p,
            q=self.q,
            channel=ChannelModel.static(),
            curve=SuccessCurve.constant(self.zeta),
        )


def as_system(users, B: float, A_max: int = 1) -> SystemConfig:
    """Equivalent single-state, binary-grid :class:`SystemConfig`."""
    return SystemConfig(
        users=tuple(u.to_user() for u in users),
        A_max=A_max,
        budget=B,
        deadline_cap=max(u.tau for u in users),
        grid=ResourceGrid.binary(),
    )


def geometric(zeta: float, k: int) -> float:
    """``G_k``: expected transmissions of a packet sent every slot for ``k`` slots."""
    return (1.0 - (1.0 - zeta) ** k) / zeta


def value_perfect_static(u: StaticUser, lam: float, tau: int) -> float:
    """Value of an undelivered packet with ``tau`` slots left, window known exactly."""
    if not 0 < tau <= u.tau + u.D:
        raise ValueError(f"tau must lie in 1..{u.tau + u.D}")
    if u.margin <= lam:
        return 0.0
    return geometric(u.zeta, tau) * (u.margin - lam)


def threshold_c(u: StaticUser, lam: float) -> float:
    """Smallest true-positive rate at which pre-serving a prediction pays off."""
    if u.margin <= lam:
        raise ValueError("threshold undefined when zeta*beta <= lam")
    return lam / ((u.margin - lam) * (1.0 - u.zeta) ** u.tau + lam)


def threshold_price(u: StaticUser) -> float:
    """Price at which ``threshold_c`` equals ``u.p`` (pre-service pays off strictly below it)."""
    rho = (1.0 - u.zeta) ** u.tau
    return u.p * u.margin * rho / (1.0 - u.p * (1.0 - rho))


def value_imperfect_static(u: StaticUser, lam: float, w: int) -> float:
    """Value of a predicted packet ``w`` slots before its nominal arrival."""
    if not 0 < w <= u.D:
        raise ValueError(f"w must lie in 1..{u.D}")
    if u.margin <= lam:
        return 0.0
    z = u.zeta
    if u.p > threshold_c(u, lam):
        return -(1 - u.p) * geometric(z, w) * lam + u.p * geometric(z, u.tau + w) * (u.margin - lam)
    return u.p * geometric(z, u.tau) * (u.margin - lam)


def v_n(u: StaticUser, lam: float) -> float:
    """Predicted-packet entry value at the full window."""
    if u.margin <= lam:
        raise ValueError("v_n undefined when zeta*beta <= lam")
    z = u.zeta
    if u.p <= threshold_c(u, lam):
        return u.p * geometric(z, u.tau) * (u.margin - lam)
    return -(1 - u.p) * geometric(z, u.D) * lam + u.p * geometric(z, u.tau + u.D) * (u.margin - lam)


def zero_prediction(users):
    return [replace(u, D=0) for u in users]


def dual_static_perfect(users, B: float, lam: float) -> float:
    return lam * B + sum(
        u.a * geometric(u.zeta, u.tau + u.D) * (u.margin - lam) for u in users if u.margin > lam
    )


def dual_static_imperfect(users, B: float, lam: float) -> float:
    total = lam * B
    for u in users:
        if u.margin <= lam:
            continue
        at = predicted_rate(u.a, u.p, u.q, u.A_max)
        missed = (u.A_max - at) * u.q * geometric(u.zeta, u.tau) * (u.margin - lam)
        total += (at * v_n(u, lam) if u.D > 0 else at * u.p * geometric(u.zeta, u.tau) * (u.margin - lam)) + missed
    return total


def _minimize_breakpoints(g, points) -> tuple[float, float]:
    best = None
    for lam in sorted(set(float(x) for x in points if x >= 0)):
        val = g(lam)
        if best is None or val < best[1] - 1e-15:
            best = (lam, val)
    return best


def optimize_static_perfect(users, B: float) -> tuple[float, float]:
    """(lam*, phi*) under perfect prediction; ``D=0`` users give zero prediction."""
    return _minimize_breakpoints(lambda x: dual_static_perfect(users, B, x), [0.0] + [u.margin for u in users])


def optimize_static_imperfect(users, B: float) -> tuple[float, float]:
    points = [0.0] + [u.margin for u in users] + [threshold_price(u) for u in users if u.D > 0]
    return _minimize_breakpoints(lambda x: dual_static_imperfect(users, B, x), points)


def improvement_terms_perfect(users, lam: float) -> float:
    """Gain expression of the perfect case over zero prediction at price ``lam``."""
    return sum(
        u.a / u.zeta * ((1 - u.zeta) ** u.tau - (1 - u.zeta) ** (u.tau + u.D)) * (u.margin - lam)
        for u in users
        if u.margin > lam
    )


def improvement_terms_imperfect(users, lam: float) -> float:
    total = 0.0
    for u in users:
        if u.margin <= lam:
            continue
        at = predicted_rate(u.a, u.p, u.q, u.A_max)
        base = (u.a * u.p - u.A_max * u.p * u.q) * geometric(u.zeta, u.tau) / (u.p - u.q) * (u.margin - lam)
        pred = at * v_n(u, lam) if u.D > 0 else at * u.p * geometric(u.zeta, u.tau) * (u.margin - lam)
        total += pred - base
    return total


def improvement_bounds(users, B: float, mode: str = "perfect") -> tuple[float, float]:
    """
    (lower, upper) on the optimal-throughput gain over zero prediction.

    The upper bound is the gain expression at the zero-prediction optimal
    price, the lower bound the same expression at the predictive optimum.
    """
    lam0, _ = optimize_static_perfect(zero_prediction(users), B)
    if mode == "perfect":
        lamP, _ = optimize_static_perfect(users, B)
        return improvement_terms_perfect(users, lamP), improvement_terms_perfect(users, lam0)
    if mode == "imperfect":
        lamI, _ = optimize_static_imperfect(users, B)
        return improvement_terms_imperfect(users, lamI), improvement_terms_imperfect(users, lam0)
    raise ValueError(f"unknown mode {mode!r}")


def expected_transmissions(u: StaticUser) -> float:
    """Expected transmissions of an always-served packet over the full horizon."""
    return geometric(u.zeta, u.tau + u.D)


def budget_randomization(users, lam: float, B: float, tol: float = 1e-9) -> dict[int, float]:
    """
    Serving probabilities of boundary users (``zeta*beta == lam``) that make
    the average resource equal ``B``. Boundary users are filled in index order.

    Raises
    ------
    ValueError
        If the budget left after strictly profitable users is negative or
        exceeds what the boundary users can absorb (price mislocated).
    """
    strict = sum(u.a * expected_transmissions(u) for u in users if u.margin > lam + tol)
    boundary = [n for n, u in enumerate(users) if abs(u.margin - lam) <= tol]
    residual = B - strict
    capacity = sum(users[n].a * expected_transmissions(users[n]) for n in boundary)
    if residual < -1e-9 or residual > capacity + 1e-9:
        raise ValueError(f"no serving probability meets the budget (residual {residual}, boundary load {capacity})")
    out = {}
    for n in boundary:
        load = users[n].a * expected_transmissions(users[n])
        r = float(np.clip(residual / load, 0.0, 1.0))
        out[n] = r
        residual -= r * load
    return out
