"""
Lagrange dual of the budget-constrained throughput problem.

For a resource price ``lam`` every packet solves its own scheduling problem
(:mod:`timely_sched.sps`); the dual value is the arrival-weighted entry value
plus ``lam * B``. The optimal price is the root of the subgradient
``B - E_av(lam)``, which is non-decreasing in ``lam``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .model import SystemConfig, UserConfig, check, effective_user, predicted_rate
from .sps import PolicyTable, ValueTable, expected_resource, expected_reward, solve

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """The price search did not converge; ``trace`` holds the iterates."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = list(trace)


def entry_terms(user: UserConfig, mode: str, A_max: float) -> list[tuple[float, int]]:
    """
    (rate, table row) pairs whose weighted entry values make up one user's
    share of the dual.

    Perfect and zero prediction contribute ``(a, deadline + window)``. Imperfect
    prediction contributes predicted packets at the full horizon and missed
    packets at the deadline row.
    """
    if mode == "zero":
        return [(user.arrival_rate, user.deadline)]
    if mode == "perfect" or (mode == "imperfect" and user.window == 0):
        return [(user.arrival_rate, user.deadline + user.window)]
    if mode == "imperfect":
        at = predicted_rate(user.arrival_rate, user.p, user.q, A_max)
        return [(at, user.deadline + user.window), ((A_max - at) * user.q, user.deadline)]
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class UserSolution:
    values: ValueTable
    policy: PolicyTable
    energy: np.ndarray
    reward: np.ndarray
    terms: tuple[tuple[float, int], ...]
    eta: np.ndarray

    def _weigh(self, table: np.ndarray) -> float:
        return float(sum(rate * (self.eta @ table[row]) for rate, row in self.terms))

    @property
    def value(self) -> float:
        return self._weigh(self.values.V)

    @property
    def resource(self) -> float:
        return self._weigh(self.energy)

    @property
    def throughput(self) -> float:
        """Weighted timely-throughput of this user under the table policy."""
        return self._weigh(self.reward)


@dataclass(frozen=True)
class DualEvaluation:
    lam: float
    g: float
    E_av: float
    budget: float
    users: tuple[UserSolution, ...]

    @property
    def subgradient(self) -> float:
        """Slope of the dual at ``lam``: ``B - E_av``."""
        return self.budget - self.E_av


def solve_user(user: UserConfig, lam: float, system: SystemConfig, mode: str) -> UserSolution:
    user = effective_user(user, mode)
    values, policy = solve(user, lam, system.grid, mode)
    return UserSolution(
        values=values,
        policy=policy,
        energy=expected_resource(user, policy, system.grid),
        reward=expected_reward(user, policy, system.grid),
        terms=tuple(entry_terms(user, mode, system.A_max)),
        eta=user.channel.stationary,
    )


def evaluate(system: SystemConfig, lam: float, mode: str) -> DualEvaluation:
    """Dual value, expected resource and per-user tables at price ``lam``."""
    users = tuple(solve_user(u, lam, system, mode) for u in system.users)
    g = lam * system.budget + sum(us.value for us in users)
    E = sum(us.resource for us in users)
    return DualEvaluation(lam=float(lam), g=float(g), E_av=float(E), budget=system.budget, users=users)


def eval_dual(system: SystemConfig, lam: float, mode: str) -> float:
    values = [solve(u, lam, system.grid, mode)[0] for u in system.users]
    total = lam * system.budget
    for u, vt in zip(system.users, values):
        for rate, row in entry_terms(u, mode, system.A_max):
            total += rate * float(u.channel.stationary @ vt.V[row])
    return float(total)


def eval_dual_perfect(system: SystemConfig, lam: float) -> float:
    """Dual with every user's window known exactly (``window=0`` gives zero prediction)."""
    return eval_dual(system, lam, "perfect")


def eval_dual_zero(system: SystemConfig, lam: float) -> float:
    return eval_dual(system, lam, "zero")


def eval_dual_imperfect(system: SystemConfig, lam: float) -> float:
    """Dual under imperfect prediction: predicted and missed arrivals weighted separately."""
    return eval_dual(system, lam, "imperfect")


def price_cap(system: SystemConfig) -> float:
    """Smallest price at which no transmission has positive one-step value."""
    levels = system.grid.levels
    if levels.size < 2:
        return 0.0
    e1 = levels[1]
    return float(max(np.max(u.zeta(system.grid)[:, 1]) * u.weight / e1 for u in system.users))


@dataclass(frozen=True)
class DualSolution:
    """
    Optimal price, dual value and a budget-feasible (possibly randomized)
    policy.

    ``users`` hold tables at the feasible price ``lam``; ``alt_users`` hold
    tables at the infeasible side of the bracket. A packet of user ``n``
    follows the alternative tables with probability ``randomization[n]``.
    """

    mode: str
    lam: float
    phi: float
    E_av: float
    budget: float
    users: tuple[UserSolution, ...]
    alt_users: tuple[UserSolution, ...] | None = None
    randomization: dict[int, float] = field(default_factory=dict)
    bracket: tuple[float, float] = (0.0, 0.0)
    trace: tuple[tuple[int, float, float, float], ...] = ()

    @property
    def policies(self) -> list[PolicyTable]:
        return [us.policy for us in self.users]

    @property
    def alt_policies(self) -> list[PolicyTable] | None:
        return None if self.alt_users is None else [us.policy for us in self.alt_users]

    @property
    def phi_policy(self) -> float:
        """Weighted timely-throughput of the randomized policy itself."""
        total = 0.0
        for n, us in enumerate(self.users):
            r = self.randomization.get(n, 0.0)
            total += (1.0 - r) * us.throughput
            if r:
                total += r * self.alt_users[n].throughput
        return total

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "lambda": self.lam,
            "phi": self.phi,
            "phi_policy": self.phi_policy,
            "E_av": self.E_av,
            "budget": self.budget,
            "bracket": list(self.bracket),
            "randomization": {str(k): v for k, v in self.randomization.items()},
            "users": [
                {
                    "value": us.value,
                    "resource": us.resource,
                    "throughput": us.throughput,
                    "entry_values": us.values.entry.tolist(),
                }
                for us in self.users
            ],
            "iterations": len(self.trace),
        }


def randomize(hi: DualEvaluation, lo: DualEvaluation | None, budget: float) -> dict[int, float]:
    """
    Per-user probabilities of following the ``lo``-price tables so that the
    mixed resource meets the budget. Users are filled greedily in index order.
    """
    if lo is None:
        return {}
    residual = budget - hi.E_av
    probs: dict[int, float] = {}
    for n, (uh, ul) in enumerate(zip(hi.users, lo.users)):
        delta = ul.resource - uh.resource
        if delta <= 1e-15 or residual <= 0:
            continue
        r = min(1.0, residual / delta)
        probs[n] = r
        residual -= r * delta
    return probs


def _finish(system, mode, lo_ev, hi_ev, trace) -> DualSolution:
    probs = randomize(hi_ev, lo_ev, system.budget)
    E = hi_ev.E_av + sum(r * (lo_ev.users[n].resource - hi_ev.users[n].resource) for n, r in probs.items())
    return DualSolution(
        mode=mode,
        lam=hi_ev.lam,
        phi=hi_ev.g,
        E_av=float(E),
        budget=system.budget,
        users=hi_ev.users,
        alt_users=None if lo_ev is None else lo_ev.users,
        randomization=probs,
        bracket=(lo_ev.lam if lo_ev is not None else hi_ev.lam, hi_ev.lam),
        trace=tuple(trace),
    )


def _bisect(system, mode, lo_ev, hi_ev, tol, trace, max_iters):
    """Shrink a sign bracket (E(lo) > B >= E(hi)) to width ``tol``."""
    B = system.budget
    it = len(trace)
    while hi_ev.lam - lo_ev.lam > tol:
        it += 1
        if it > max_iters:
            raise ConvergenceError(f"price bisection did not converge in {max_iters} iterations", trace)
        ev = evaluate(system, 0.5 * (lo_ev.lam + hi_ev.lam), mode)
        trace.append((it, ev.lam, ev.g, ev.subgradient))
        if ev.E_av > B:
            lo_ev = ev
        else:
            hi_ev = ev
    return lo_ev, hi_ev


def subgradient_search(
    system: SystemConfig,
    mode: str = "imperfect",
    *,
    eps0: float | None = None,
    tol: float = 1e-6,
    max_iters: int = 200,
    lam0: float = 0.0,
    validate: bool = True,
) -> DualSolution:
    """
    Minimize the dual over ``lam >= 0`` by projected subgradient steps.

    Steps are ``lam <- max(0, lam + eps0/sqrt(k) * (E_av - B))``. Every
    evaluation tightens a sign bracket; a step that would leave the bracket is
    replaced by its midpoint, and so is any step taken while the bracket has
    not halved over the previous two iterations. Above ``price_cap`` nothing
    is transmitted, so the cap serves as the upper end until a feasible price
    has been evaluated. Stops when ``|B - E_av| <= tol`` or the bracket is
    narrower than ``tol``, and returns the feasible end of the bracket.

    Raises
    ------
    ConvergenceError
        If ``max_iters`` evaluations do not reach the tolerance.
    """
    if validate:
        check(system)
    B = system.budget
    eps0 = B if eps0 is None else eps0
    cap = max(price_cap(system), lam0)
    trace: list[tuple[int, float, float, float]] = []
    lo_ev: DualEvaluation | None = None
    hi_ev: DualEvaluation | None = None
    lam = float(lam0)
    widths = [cap, cap]
    for k in range(1, max_iters + 1):
        ev = evaluate(system, lam, mode)
        trace.append((k, ev.lam, ev.g, ev.subgradient))
        if ev.E_av <= B:
            if hi_ev is None or ev.lam < hi_ev.lam:
                hi_ev = ev
            if ev.lam == 0.0 or B - ev.E_av <= tol:
                log.debug("price search stopped at lam=%g after %d steps", ev.lam, k)
                return _finish(system, mode, lo_ev, hi_ev, trace)
        elif lo_ev is None or ev.lam > lo_ev.lam:
            lo_ev = ev
        lo = lo_ev.lam if lo_ev is not None else 0.0
        if hi_ev is not None and hi_ev.lam - lo <= tol:
            return _finish(system, mode, lo_ev, hi_ev, trace)
        hi = hi_ev.lam if hi_ev is not None else cap
        nxt = min(max(0.0, lam - eps0 / math.sqrt(k) * ev.subgradient), cap)
        stalled = hi - lo > 0.5 * widths[-2]
        widths.append(hi - lo)
        if stalled or (hi_ev is not None and not lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        lam = nxt
    raise ConvergenceError(f"subgradient search did not converge in {max_iters} iterations", trace)


def golden_section_search(f, lo: float, hi: float, tol: float = 1e-8) -> tuple[float, float]:
    """Minimize a unimodal scalar function on ``[lo, hi]``; returns ``(x, f(x))``."""
    if hi <= lo:
        return lo, float(f(lo))
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": tol})
    x, fx = float(res.x), float(res.fun)
    # the bounded method never probes the endpoints themselves
    for end in (lo, hi):
        fe = float(f(end))
        if fe < fx:
            x, fx = end, fe
    return x, fx


def golden_search(system: SystemConfig, mode: str = "imperfect", *, tol: float = 1e-6, max_iters: int = 200) -> DualSolution:
    """Price search by direct scalar minimization of the dual, then a sign bracket of width ``tol``."""
    check(system)
    B = system.budget
    cap = price_cap(system)
    lam, _ = golden_section_search(lambda x: eval_dual(system, x, mode), 0.0, cap, tol=tol)
    trace: list = []
    ev = evaluate(system, lam, mode)
    trace.append((1, ev.lam, ev.g, ev.subgradient))
    if ev.E_av <= B:
        hi_ev, lo_ev, step = ev, None, tol
        while lo_ev is None:
            probe = evaluate(system, max(0.0, hi_ev.lam - step), mode)
            trace.append((len(trace) + 1, probe.lam, probe.g, probe.subgradient))
            if probe.E_av > B:
                lo_ev = probe
            elif probe.lam == 0.0:
                return _finish(system, mode, None, probe, trace)
            else:
                hi_ev, step = probe, 2 * step
    else:
        lo_ev, hi_ev, step = ev, None, tol
        while hi_ev is None:
            probe = evaluate(system, min(cap, lo_ev.lam + step), mode)
            trace.append((len(trace) + 1, probe.lam, probe.g, probe.subgradient))
            if probe.E_av <= B:
                hi_ev = probe
            else:
                lo_ev, step = probe, 2 * step
    lo_ev, hi_ev = _bisect(system, mode, lo_ev, hi_ev, tol, trace, max_iters)
    return _finish(system, mode, lo_ev, hi_ev, trace)


def optimal_throughput(system: SystemConfig, mode: str, **kw) -> float:
    """``min_lam g(lam)`` for ``mode``."""
    return subgradient_search(system, mode, **kw).phi


def write_trace(solution_or_trace, path) -> None:
    trace = solution_or_trace.trace if isinstance(solution_or_trace, DualSolution) else solution_or_trace
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lambda", "g", "subgradient"])
        for row in trace:
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])
