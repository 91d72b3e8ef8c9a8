"""
Seeded slot-level simulation of the scheduling system.

Every packet is credited to its nominal arrival slot, so metrics over
arrival slots ``0..T-1`` are unbiased long-run rates. Without a capacity
limit users are independent and each user's packets advance in lock step
(one vectorized update per slot of packet age). With a capacity limit a
slot-by-slot engine runs the same random draws through a shared truncation
step.
"""

from __future__ import annotations

import bisect
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .model import ChannelModel, SystemConfig, UserConfig, effective_user, predicted_rate
from .sps import PolicyTable

PURPOSES = ("arrivals", "channel", "success", "randomization", "truncation")
N_BATCHES = 30


def stream(seed: int, purpose: str, user: int = 0) -> np.random.Generator:
    """Independent generator for one (purpose, user) pair."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(PURPOSES.index(purpose), int(user)))
    return np.random.default_rng(ss)


# --------------------------------------------------------------------------
# Arrivals and channel
# --------------------------------------------------------------------------


@dataclass
class PacketInstance:
    user: int
    predicted: bool
    real: bool
    arrival_slot: int
    enter_slot: int
    deadline_slot: int
    delivered: bool = False
    energy_spent: float = 0.0


@dataclass(frozen=True)
class ArrivalBatch:
    """All packets of one user as parallel arrays, in nominal-slot order."""

    user: int
    slot: np.ndarray
    predicted: np.ndarray
    real: np.ndarray
    deadline: int
    window: int

    def __len__(self) -> int:
        return self.slot.size

    @property
    def enter(self) -> np.ndarray:
        return self.slot - np.where(self.predicted, self.window, 0)

    @property
    def horizon(self) -> np.ndarray:
        return self.deadline + np.where(self.predicted, self.window, 0)

    def __iter__(self):
        for t, pr, re, en in zip(self.slot, self.predicted, self.real, self.enter):
            yield PacketInstance(
                user=self.user,
                predicted=bool(pr),
                real=bool(re),
                arrival_slot=int(t),
                enter_slot=int(en),
                deadline_slot=int(t) + self.deadline,
            )


def generate_arrivals(user: UserConfig, T: int, rng: np.random.Generator, *, A_max: int = 1, index: int = 0) -> ArrivalBatch:
    """
    Packets of one user over nominal slots ``0..T-1``.

    Each slot holds ``A_max`` candidates. A candidate is a positive
    prediction with probability ``ã / A_max``; positives are real with
    probability ``p`` and negatives with probability ``q``. Only real packets
    and false alarms are returned.
    """
    at = predicted_rate(user.arrival_rate, user.p, user.q, A_max)
    mark = rng.random((T, A_max)) < at / A_max
    u = rng.random((T, A_max))
    real = np.where(mark, u < user.p, u < user.q)
    keep = mark | real
    slots = np.broadcast_to(np.arange(T)[:, None], (T, A_max))[keep]
    return ArrivalBatch(
        user=index,
        slot=slots.astype(np.int64),
        predicted=mark[keep],
        real=real[keep],
        deadline=user.deadline,
        window=user.window,
    )


def _cumulative(channel: ChannelModel) -> list[list[float]]:
    cum = np.cumsum(channel.P, axis=1)
    return [list(row) for row in cum]


def evolve_channel(channel: ChannelModel, state: int, rng: np.random.Generator) -> int:
    """One Markov step from ``state``."""
    if not 0 <= state < channel.K:
        raise IndexError(f"channel state {state} out of range")
    row = np.cumsum(channel.P[state])
    return min(int(np.searchsorted(row, rng.random(), side="right")), channel.K - 1)


def channel_path(channel: ChannelModel, length: int, rng: np.random.Generator) -> np.ndarray:
    """State sequence of ``length`` slots started from the stationary law."""
    K = channel.K
    out = np.zeros(length, dtype=np.int64)
    if K == 1 or length == 0:
        return out
    eta_cum = list(np.cumsum(channel.stationary))
    s = min(bisect.bisect_right(eta_cum, rng.random()), K - 1)
    cum = _cumulative(channel)
    u = rng.random(length - 1).tolist()
    path = [s]
    for x in u:
        s = bisect.bisect_right(cum[s], x)
        if s >= K:
            s = K - 1
        path.append(s)
    out[:] = path
    return out


def truncate(scheduled: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random subset of at most ``C`` scheduled packet ids (order preserved)."""
    if C <= 0:
        raise ValueError("capacity must be positive")
    scheduled = np.asarray(scheduled)
    if scheduled.size <= C:
        return scheduled
    pick = np.sort(rng.choice(scheduled.size, size=C, replace=False))
    return scheduled[pick]


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimMetrics:
    x: tuple[float, ...]
    phi: float
    E_av: float
    slots: int
    energy: tuple[float, ...]
    half_widths: dict = field(default_factory=dict)
    std_errors: dict = field(default_factory=dict)
    seed: int | None = None
    capacity: int | None = None

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def _batch_stats(per_batch: np.ndarray) -> tuple[float, float]:
    """(standard error, 95% half-width) of the mean of batch means."""
    b = per_batch.shape[0]
    se = float(np.std(per_batch, ddof=1) / np.sqrt(b))
    return se, float(stats.t.ppf(0.975, b - 1) * se)


def _metrics(users, batches, packets, T, seed, capacity) -> SimMetrics:
    """Aggregate per-packet outcomes into rates and batch-mean intervals."""
    nb = min(N_BATCHES, T)
    edges = (np.arange(T) * nb) // T
    lengths = np.bincount(edges, minlength=nb).astype(float)
    x = []
    energy = []
    phi_b = np.zeros(nb)
    E_b = np.zeros(nb)
    x_b = []
    for user, batch, (delivered, spent) in zip(users, batches, packets):
        b = edges[batch.slot]
        got = delivered & batch.real
        x.append(float(np.count_nonzero(got)) / T)
        energy.append(float(spent.sum()) / T)
        xb = np.bincount(b, weights=got.astype(float), minlength=nb) / lengths
        x_b.append(xb)
        phi_b += user.weight * xb
        E_b += np.bincount(b, weights=spent, minlength=nb) / lengths
    phi = float(sum(u.weight * xn for u, xn in zip(users, x)))
    se_phi, hw_phi = _batch_stats(phi_b)
    se_E, hw_E = _batch_stats(E_b)
    se_x, hw_x = zip(*(_batch_stats(xb) for xb in x_b)) if x_b else ((), ())
    return SimMetrics(
        x=tuple(x),
        phi=phi,
        E_av=float(sum(energy)),
        slots=T,
        energy=tuple(energy),
        half_widths={"phi": hw_phi, "E_av": hw_E, "x": list(hw_x)},
        std_errors={"phi": se_phi, "E_av": se_E, "x": list(se_x)},
        seed=seed,
        capacity=capacity,
    )


# --------------------------------------------------------------------------
# Engines
# --------------------------------------------------------------------------


@dataclass
class _UserRun:
    user: UserConfig
    batch: ArrivalBatch
    tables: np.ndarray  # (2, H+1, K) grid indices: primary, alternative
    alt: np.ndarray  # per-packet flag: follow the alternative tables
    U: np.ndarray  # (packets, H) success uniforms
    path: np.ndarray  # channel state at absolute slot s stored at s + window
    Z: np.ndarray


def _prepare(system, users, policies, alt_policies, randomization, T, seed) -> list[_UserRun]:
    runs = []
    for n, (user, pol) in enumerate(zip(users, policies)):
        H = user.deadline + user.window
        if pol.horizon != H or pol.index.shape[1] != user.channel.K:
            raise ValueError(f"policy table of user {n + 1} does not match its configuration")
        alt_pol = alt_policies[n] if alt_policies is not None else pol
        if alt_pol.index.shape != pol.index.shape:
            raise ValueError(f"alternative policy of user {n + 1} has the wrong shape")
        batch = generate_arrivals(user, T, stream(seed, "arrivals", n), A_max=system.A_max, index=n)
        r = float(randomization.get(n, 0.0))
        alt = stream(seed, "randomization", n).random(len(batch)) < r
        U = stream(seed, "success", n).random((len(batch), H))
        path = channel_path(user.channel, T + H + user.window, stream(seed, "channel", n))
        runs.append(_UserRun(user, batch, np.stack([pol.index, alt_pol.index]), alt, U, path, user.zeta(system.grid)))
    return runs


def _vectorized(runs, levels):
    out = []
    for run in runs:
        b, user = run.batch, run.user
        D = user.window
        enter, horizon = b.enter, b.horizon
        n = len(b)
        alive = np.ones(n, dtype=bool)
        delivered = np.zeros(n, dtype=bool)
        spent = np.zeros(n)
        sel = run.alt.astype(np.int64)
        for j in range(user.deadline + D):
            if j == D:
                alive &= ~(b.predicted & ~b.real)
            act = alive & (j < horizon)
            st = run.path[enter + j + D]
            k = run.tables[sel, np.maximum(horizon - j, 0), st]
            e = np.where(act, levels[k], 0.0)
            spent += e
            succ = act & (e > 0) & (run.U[:, j] < run.Z[st, k])
            delivered |= succ
            alive &= ~succ
        out.append((delivered, spent))
    return out


def _slotted(runs, levels, T, C, rng_trunc, defer, trace_writer):
    """Slot-by-slot engine with optional capacity ``C`` shared by all users."""
    owners, offsets = [], [0]
    for n, run in enumerate(runs):
        owners.append(np.full(len(run.batch), n, dtype=np.int64))
        offsets.append(offsets[-1] + len(run.batch))
    owner = np.concatenate(owners) if owners else np.zeros(0, dtype=np.int64)
    enter = np.concatenate([r.batch.enter for r in runs])
    horizon = np.concatenate([r.batch.horizon for r in runs])
    false_alarm = np.concatenate([r.batch.predicted & ~r.batch.real for r in runs])
    window = np.array([r.user.window for r in runs], dtype=np.int64)[owner]
    real = np.concatenate([r.batch.real for r in runs])
    local = np.arange(owner.size) - np.asarray(offsets[:-1], dtype=np.int64)[owner]
    order = np.argsort(enter, kind="stable")
    delivered = np.zeros(owner.size, dtype=bool)
    spent = np.zeros(owner.size)
    gone = np.zeros(owner.size, dtype=bool)
    live = np.zeros(0, dtype=np.int64)
    ptr = 0
    first = int(enter.min()) if enter.size else 0
    last = int((enter + horizon).max()) if enter.size else 0
    for s in range(first, last):
        hi = ptr
        while hi < order.size and enter[order[hi]] == s:
            hi += 1
        if hi > ptr:
            live = np.concatenate([live, order[ptr:hi]])
            ptr = hi
        j = s - enter[live]
        drop = (j >= horizon[live]) | gone[live] | (false_alarm[live] & (j >= window[live]))
        live = live[~drop]
        if live.size == 0:
            continue
        j = s - enter[live]
        e = np.zeros(live.size)
        kk = np.zeros(live.size, dtype=np.int64)
        st = np.zeros(live.size, dtype=np.int64)
        for n, run in enumerate(runs):
            m = owner[live] == n
            if not m.any():
                continue
            ids = local[live[m]]
            st[m] = run.path[s + run.user.window]
            kk[m] = run.tables[run.alt[ids].astype(np.int64), horizon[live[m]] - j[m], st[m]]
            e[m] = levels[kk[m]]
        sched = np.nonzero(e > 0)[0]
        served = sched
        if C is not None and sched.size > C:
            served = truncate(sched, C, rng_trunc)
            skipped = np.setdiff1d(sched, served, assume_unique=True)
            if not defer:
                gone[live[skipped]] = True
        for pos in served:
            pid = live[pos]
            n = owner[pid]
            run = runs[n]
            spent[pid] += e[pos]
            if run.U[local[pid], j[pos]] < run.Z[st[pos], kk[pos]]:
                delivered[pid] = True
                gone[pid] = True
        if trace_writer is not None:
            own = owner[live]
            for n in range(len(runs)):
                m = own == n
                srv = np.zeros(live.size, dtype=bool)
                srv[served] = True
                trace_writer.writerow(
                    [s, n, int(m.sum()), int((srv & m).sum()),
                     int((delivered[live] & m & srv & real[live]).sum()), float(e[srv & m].sum())]
                )
    return [(delivered[offsets[n]:offsets[n + 1]], spent[offsets[n]:offsets[n + 1]]) for n in range(len(runs))]


TRACE_HEADER = ["slot", "user", "live", "scheduled", "delivered", "energy"]


def run(
    system: SystemConfig,
    policies,
    T: int,
    seed: int,
    capacity: int | None = None,
    *,
    mode: str | None = None,
    alt_policies=None,
    randomization: dict | None = None,
    defer: bool = False,
    trace_path=None,
    engine: str = "auto",
) -> SimMetrics:
    """
    Simulate ``T`` nominal arrival slots under the given policy tables.

    ``policies`` is either a :class:`~timely_sched.dual.DualSolution` (mode,
    alternative tables and randomization are taken from it) or a list of
    :class:`PolicyTable`. Packets skipped by truncation leave the system
    unless ``defer`` is set. ``engine`` forces ``"vectorized"`` or
    ``"slotted"``; the slotted engine is always used with a capacity limit or
    a trace.
    """
    if T < 1000:
        raise ValueError("simulation horizon must be at least 1000 slots")
    if hasattr(policies, "policies"):
        sol = policies
        mode = mode or sol.mode
        alt_policies = sol.alt_policies if alt_policies is None else alt_policies
        randomization = sol.randomization if randomization is None else randomization
        policies = sol.policies
    if mode is None:
        raise ValueError("mode is required when passing bare policy tables")
    randomization = randomization or {}
    policies = list(policies)
    if len(policies) != system.N:
        raise ValueError(f"expected {system.N} policy tables, got {len(policies)}")
    users = [effective_user(u, mode) for u in system.users]
    C = capacity if capacity is not None else system.capacity
    if C is not None and C <= 0:
        raise ValueError("capacity must be positive")
    runs = _prepare(system, users, policies, alt_policies, randomization, T, seed)
    levels = system.grid.levels
    slotted = engine == "slotted" or C is not None or trace_path is not None
    if engine == "vectorized" and slotted and (C is not None or trace_path is not None):
        raise ValueError("the vectorized engine supports neither capacity nor tracing")
    if slotted:
        rng_trunc = stream(seed, "truncation")
        if trace_path is not None:
            with open(trace_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(TRACE_HEADER)
                packets = _slotted(runs, levels, T, C, rng_trunc, defer, w)
        else:
            packets = _slotted(runs, levels, T, C, rng_trunc, defer, None)
    else:
        packets = _vectorized(runs, levels)
    return _metrics(users, [r.batch for r in runs], packets, T, seed, C)


def zero_policies(system: SystemConfig, mode: str) -> list[PolicyTable]:
    """Tables that never transmit (useful as a baseline)."""
    out = []
    for u in system.users:
        u = effective_user(u, mode)
        H = u.deadline + u.window
        idx = np.zeros((H + 1, u.channel.K), dtype=np.int64)
        out.append(
            PolicyTable(index=idx, levels=system.grid.levels[idx], deadline=u.deadline, window=u.window,
                        p=u.p, mode="imperfect" if mode == "imperfect" and u.window else "perfect")
        )
    return out
