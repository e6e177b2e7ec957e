"""Monte Carlo contention periods and the SIC peeling decoder.

Randomness comes from NumPy's Philox4x64 counter-based generator.  Trials are
grouped in fixed-size chunks; chunk ``i`` of a run with master seed ``s`` uses
``SeedSequence(s, spawn_key=(i,))``, so results do not depend on how chunks are
scheduled across workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np
from scipy import stats

from .core import SystemConfig

log = logging.getLogger(__name__)

CHUNK_TRIALS = 10_000
CI_LEVEL = 0.997


def trial_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy % (1 << 63))


@dataclass(frozen=True)
class ActivationMatrix:
    """Boolean slot-by-user incidence of one contention period."""

    incidence: np.ndarray  # (m, n)
    slot_class: np.ndarray  # (m,)

    @property
    def n(self) -> int:
        return self.incidence.shape[1]

    @property
    def m(self) -> int:
        return self.incidence.shape[0]

    @classmethod
    def from_slots(cls, n: int, slots: Sequence[Iterable[int]]) -> "ActivationMatrix":
        inc = np.zeros((len(slots), n), dtype=bool)
        for s, users in enumerate(slots):
            inc[s, list(users)] = True
        return cls(inc, np.zeros(len(slots), dtype=np.int64))


@dataclass(frozen=True)
class TrialOutcome:
    resolved_count: int
    resolution_slot_trace: np.ndarray  # resolved users after each slot prefix
    seed: int


def generate_trial(config: SystemConfig, seed: int) -> ActivationMatrix:
    """Independent Bernoulli(beta_h / n) activation per (slot, user), classes batched."""
    rng = trial_rng(seed)
    n = config.n
    p = np.repeat([b / n for b in config.betas], config.slot_counts)
    inc = rng.random((config.total_slots, n)) < p[:, None]
    return ActivationMatrix(inc, np.repeat(np.arange(config.k), config.slot_counts))


class PeelingDecoder:
    """Incremental SIC receiver.

    Slots are added one at a time.  Replicas of already resolved users are
    cancelled on arrival; degree-one slots are decoded immediately and the
    cancellation cascades through the stored slots.
    """

    def __init__(self, n: int, order: str = "ascending", rng: np.random.Generator | None = None):
        if order not in ("ascending", "descending", "random"):
            raise ValueError(f"unknown ripple order {order!r}")
        self.n = n
        self.order = order
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.resolved: set[int] = set()
        self.slot_users: list[set[int]] = []
        self.user_slots: list[list[int]] = [[] for _ in range(n)]
        self.ripple: set[int] = set()

    @property
    def unresolved(self) -> int:
        return self.n - len(self.resolved)

    @property
    def cloud_size(self) -> int:
        return sum(1 for users in self.slot_users if len(users) > 1)

    def add_slot(self, users: Iterable[int]) -> int:
        live = {int(x) for x in users} - self.resolved
        s = len(self.slot_users)
        self.slot_users.append(live)
        for x in live:
            self.user_slots[x].append(s)
        if len(live) == 1:
            self.ripple.add(s)
        before = len(self.resolved)
        self._drain()
        return len(self.resolved) - before

    def _pick(self) -> int:
        if self.order == "ascending":
            return min(self.ripple)
        if self.order == "descending":
            return max(self.ripple)
        return sorted(self.ripple)[int(self.rng.integers(len(self.ripple)))]

    def _drain(self):
        while self.ripple:
            s = self._pick()
            (x,) = self.slot_users[s]
            self.resolved.add(x)
            for t in self.user_slots[x]:
                users = self.slot_users[t]
                users.discard(x)
                if len(users) == 1:
                    self.ripple.add(t)
                else:
                    self.ripple.discard(t)


def peel(matrix: ActivationMatrix, order: str = "ascending", rng: np.random.Generator | None = None) -> frozenset[int]:
    """Set of users resolved by iterative interference cancellation."""
    dec = PeelingDecoder(matrix.n, order, rng)
    for s in range(matrix.m):
        dec.add_slot(np.flatnonzero(matrix.incidence[s]))
    return frozenset(dec.resolved)


def simulate_trial(config: SystemConfig, seed: int) -> TrialOutcome:
    matrix = generate_trial(config, seed)
    dec = PeelingDecoder(config.n)
    trace = np.zeros(matrix.m, dtype=np.int64)
    for s in range(matrix.m):
        dec.add_slot(np.flatnonzero(matrix.incidence[s]))
        trace[s] = len(dec.resolved)
    return TrialOutcome(len(dec.resolved), trace, seed)


def adaptive_beta(n: int, u: int, m: int, c_u: int, beta_star: float) -> float:
    """Mean slot degree for the next slot given ``u`` unresolved users and cloud size ``c_u``.

    ``(n/u) (1 + (beta* - 1)(m - (n - u) - c_u) / m)``, clamped to ``[0, n]``.
    """
    beta = (n / u) * (1.0 + (beta_star - 1.0) * (m - (n - u) - c_u) / m)
    return min(max(beta, 0.0), float(n))


_adaptive_beta_nb = numba.njit(cache=True)(adaptive_beta)


@numba.njit(cache=True)
def _simulate_chunk(rng, n, slot_beta, adaptive, beta_star, trials, hist):
    m = slot_beta.shape[0]
    live = np.empty(n, np.int64)
    pos = np.empty(n, np.int64)
    deg = np.zeros(max(m, 1), np.int64)
    xr = np.zeros(max(m, 1), np.int64)
    adj = np.empty((n, max(m, 1)), np.int64)
    cnt = np.zeros(n, np.int64)
    stack = np.empty(max(m, 1), np.int64)
    for _ in range(trials):
        for i in range(n):
            live[i] = i
            pos[i] = i
            cnt[i] = 0
        u = n
        cloud = 0
        for s in range(m):
            if u == 0:
                break
            if adaptive:
                beta = _adaptive_beta_nb(n, u, m, cloud, beta_star)
            else:
                beta = slot_beta[s]
            p = beta / n
            if p <= 0.0:
                d = 0
            elif p >= 1.0:
                d = u
            else:
                d = rng.binomial(u, p)
            # partial Fisher-Yates over the unresolved users
            x_acc = 0
            for i in range(d):
                j = rng.integers(i, u)
                a = live[i]
                b = live[j]
                live[i] = b
                live[j] = a
                pos[b] = i
                pos[a] = j
                x_acc ^= b
                adj[b, cnt[b]] = s
                cnt[b] += 1
            deg[s] = d
            xr[s] = x_acc
            top = 0
            if d == 1:
                stack[top] = s
                top += 1
            elif d > 1:
                cloud += 1
            while top > 0:
                top -= 1
                t = stack[top]
                if deg[t] != 1:
                    continue
                x = xr[t]
                # remove x from the unresolved pool
                u -= 1
                px = pos[x]
                last = live[u]
                live[px] = last
                pos[last] = px
                live[u] = x
                pos[x] = u
                for e in range(cnt[x]):
                    v = adj[x, e]
                    if deg[v] == 0:
                        continue
                    deg[v] -= 1
                    xr[v] ^= x
                    if deg[v] == 1:
                        cloud -= 1
                        stack[top] = v
                        top += 1
        hist[u] += 1


@dataclass
class SimulationResult:
    """Histogram of unresolved users over independent contention periods."""

    n: int
    counts: np.ndarray
    seed: int

    @property
    def trials(self) -> int:
        return int(self.counts.sum())

    @property
    def pmf(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def stderr(self) -> np.ndarray:
        p = self.pmf
        return np.sqrt(p * (1 - p) / self.trials)

    def confidence_interval(self, level: float = CI_LEVEL) -> tuple[np.ndarray, np.ndarray]:
        """Clopper-Pearson interval for every ``P_u``."""
        alpha = 1.0 - level
        k, N = self.counts, self.trials
        with np.errstate(invalid="ignore"):
            lo = np.where(k > 0, stats.beta.ppf(alpha / 2, k, N - k + 1), 0.0)
            hi = np.where(k < N, stats.beta.ppf(1 - alpha / 2, k + 1, N - k), 1.0)
        return lo, hi

    @property
    def reliability(self) -> np.ndarray:
        return np.cumsum(self.pmf)[::-1].copy()

    def F(self, t: int) -> float:
        return float(self.reliability[t])

    @property
    def failure_rate(self) -> float:
        """Fraction of periods that left at least one user unresolved."""
        return 1.0 - float(self.counts[0]) / self.trials


def _chunk_job(args):
    seed, index, n, slot_beta, adaptive, beta_star, trials = args
    hist = np.zeros(n + 1, np.int64)
    _simulate_chunk(trial_rng(seed, index), n, slot_beta, adaptive, beta_star, trials, hist)
    return hist


def _run(n, slot_beta, adaptive, beta_star, trials, seed, jobs) -> SimulationResult:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if seed is None:
        seed = fresh_seed()
    slot_beta = np.asarray(slot_beta, dtype=np.float64)
    chunks = math.ceil(trials / CHUNK_TRIALS)
    work = [
        (seed, i, n, slot_beta, adaptive, beta_star, min(CHUNK_TRIALS, trials - i * CHUNK_TRIALS))
        for i in range(chunks)
    ]
    counts = np.zeros(n + 1, np.int64)
    if jobs > 1 and chunks > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for hist in pool.map(_chunk_job, work):
                counts += hist
    else:
        for item in work:
            counts += _chunk_job(item)
    return SimulationResult(n, counts, seed)


def run_trials(config: SystemConfig, trials: int, seed: int | None = None, jobs: int = 1) -> SimulationResult:
    """Empirical pmf of unresolved users for a static slot-class configuration."""
    slot_beta = np.repeat(np.asarray(config.betas, dtype=float), config.slot_counts)
    return _run(config.n, slot_beta, False, 0.0, trials, seed, jobs)


def run_adaptive(
    n: int, m: int, beta_star: float, trials: int, seed: int | None = None, jobs: int = 1
) -> SimulationResult:
    """Simulate the adaptive rule, recomputing the mean degree before every slot."""
    if beta_star <= 0:
        raise ValueError("beta_star must be positive")
    return _run(n, np.zeros(m), True, float(beta_star), trials, seed, jobs)
