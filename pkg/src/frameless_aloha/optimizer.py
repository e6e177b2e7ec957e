"""Maximize the reliability ``F_t`` over slot-class sizes and mean degrees.

Search runs in an unconstrained space: mean degrees as logarithms, class sizes
as ``k - 1`` log-ratios against the last class.  Every decoded point has integer
class sizes summing to ``m`` (largest-remainder rounding) and degrees in ``[0, n]``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import unresolved_pmf
from .core import ConfigError, SystemConfig

log = logging.getLogger(__name__)

SEARCH_PRUNE = 1e-13
REPORT_PRUNE = 1e-15
_SHARE_FLOOR = 1e-9


def largest_remainder(values: Sequence[float], total: int) -> list[int]:
    """Round nonnegative ``values`` summing to ``total`` into integers with the same sum."""
    values = np.asarray(values, dtype=float)
    floors = np.floor(values).astype(int)
    short = total - int(floors.sum())
    if short > 0:
        rema = values - floors
        # stable: ties go to the lower class index
        for h in np.argsort(-rema, kind="stable")[:short]:
            floors[h] += 1
    return [int(v) for v in floors]


def encode(counts: Sequence[float], betas: Sequence[float]) -> np.ndarray:
    """Map class sizes and mean degrees to an unconstrained vector."""
    counts = np.maximum(np.asarray(counts, dtype=float), _SHARE_FLOOR)
    betas = np.maximum(np.asarray(betas, dtype=float), 1e-300)
    ratios = np.log(counts[:-1]) - np.log(counts[-1])
    return np.concatenate([np.log(betas), ratios])


def decode(x: Sequence[float], n: int, m: int) -> tuple[list[int], list[float]]:
    x = np.asarray(x, dtype=float)
    k = (len(x) + 1) // 2
    betas = np.clip(np.exp(np.clip(x[:k], -700, 700)), 0.0, float(n))
    logits = np.append(x[k:], 0.0)
    shares = np.exp(logits - logits.max())
    shares /= shares.sum()
    return largest_remainder(shares * m, m), [float(b) for b in betas]


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    evaluations: int
    converged: bool
    trajectory: list[float] = field(default_factory=list)


def nelder_mead(
    func: Callable[[np.ndarray], float],
    x0: Sequence[float],
    step: float | Sequence[float] = 0.25,
    xtol: float = 1e-4,
    ftol: float = 1e-6,
    max_evals: int = 400,
) -> NelderMeadResult:
    """Minimize ``func`` with the standard simplex method.

    Reflection 1, expansion 2, contraction 0.5, shrink 0.5.  Stops when both the
    simplex diameter (max coordinate distance to the best vertex) and the spread of
    objective values are within tolerance, or when ``max_evals`` is reached.
    """
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    steps = np.broadcast_to(np.asarray(step, dtype=float), (dim,))
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return float(func(x))

    simplex = [x0.copy()]
    for i in range(dim):
        v = x0.copy()
        v[i] += steps[i]
        simplex.append(v)
    values = [f(v) for v in simplex]
    trajectory = []

    while True:
        order = np.argsort(values, kind="stable")
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        trajectory.append(values[0])
        diameter = max(np.max(np.abs(v - simplex[0])) for v in simplex[1:]) if dim else 0.0
        spread = values[-1] - values[0]
        if diameter <= xtol and spread <= ftol:
            return NelderMeadResult(simplex[0], values[0], evals, True, trajectory)
        if evals >= max_evals:
            return NelderMeadResult(simplex[0], values[0], evals, False, trajectory)

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < values[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + 0.5 * (xr - centroid)
        else:
            xc = centroid + 0.5 * (worst - centroid)
        fc = f(xc)
        if fc < min(fr, values[-1]):
            simplex[-1], values[-1] = xc, fc
            continue
        best = simplex[0]
        for i in range(1, dim + 1):
            simplex[i] = best + 0.5 * (simplex[i] - best)
            values[i] = f(simplex[i])


@dataclass(frozen=True)
class OptimizationProblem:
    n: int
    m: int
    k: int
    t: int
    starts: int = 8
    seed: int = 0
    max_evals: int = 400
    xtol: float = 1e-4
    ftol: float = 1e-6
    initial: tuple[tuple[tuple[int, ...], tuple[float, ...]], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("users", "must be a positive integer")
        if self.m < 0:
            raise ConfigError("slots", "must be nonnegative")
        if self.k < 1:
            raise ConfigError("k", "need at least one slot class")
        if not 1 <= self.t <= self.n:
            raise ConfigError("target", f"t={self.t} outside [1, {self.n}]")
        if self.starts < 1 and not self.initial:
            raise ConfigError("starts", "need at least one start")


@dataclass
class StartRecord:
    start_counts: list[int]
    start_betas: list[float]
    counts: list[int]
    betas: list[float]
    F: float
    evaluations: int
    converged: bool
    trajectory: list[float]


@dataclass
class OptimizationResult:
    problem: OptimizationProblem
    counts: list[int]
    betas: list[float]
    F: float
    starts: list[StartRecord]

    @property
    def evaluations(self) -> int:
        return sum(s.evaluations for s in self.starts)

    @property
    def config(self) -> SystemConfig:
        return SystemConfig.from_pairs(self.problem.n, list(zip(self.counts, self.betas)))


class ReliabilityObjective:
    """Negated ``F_t`` on the encoded space, memoized on decoded parameters."""

    def __init__(self, n: int, m: int, t: int, prune: float = SEARCH_PRUNE):
        self.n, self.m, self.t, self.prune = n, m, t, prune
        self.cache: dict[tuple, float] = {}

    def reliability(self, counts: Sequence[int], betas: Sequence[float]) -> float:
        key = (tuple(counts), tuple(betas))
        if key not in self.cache:
            config = SystemConfig.from_pairs(self.n, list(zip(counts, betas)))
            self.cache[key] = unresolved_pmf(config, self.prune).F(self.t)
        return self.cache[key]

    def __call__(self, x: np.ndarray) -> float:
        counts, betas = decode(x, self.n, self.m)
        return -self.reliability(counts, betas)


def start_points(problem: OptimizationProblem) -> list[tuple[list[int], list[float]]]:
    """Given initial points first, then seeded random ones.

    Mean degrees are log-uniform on ``[1, n/2]``; class shares are uniform on the simplex.
    """
    rng = np.random.default_rng(problem.seed)
    points = [(list(c), list(b)) for c, b in problem.initial]
    hi = max(1.0, problem.n / 2)
    for _ in range(problem.starts):
        betas = np.exp(rng.uniform(0.0, math.log(hi), problem.k))
        shares = rng.dirichlet(np.ones(problem.k))
        points.append((largest_remainder(shares * problem.m, problem.m), list(betas)))
    return points


def _optimize_from(problem: OptimizationProblem, counts, betas) -> StartRecord:
    objective = ReliabilityObjective(problem.n, problem.m, problem.t)
    x0 = encode(counts, betas)
    res = nelder_mead(objective, x0, xtol=problem.xtol, ftol=problem.ftol, max_evals=problem.max_evals)
    best_counts, best_betas = decode(res.x, problem.n, problem.m)
    config = SystemConfig.from_pairs(problem.n, list(zip(best_counts, best_betas)))
    F = unresolved_pmf(config, REPORT_PRUNE).F(problem.t)
    log.info("start %s/%s -> F=%.7f after %d evals", counts, np.round(betas, 3), F, res.evaluations)
    return StartRecord(
        list(counts), [float(b) for b in betas], best_counts, best_betas, F,
        res.evaluations, res.converged, [-v for v in res.trajectory],
    )


def _start_job(args):
    return _optimize_from(*args)


def multistart_optimize(problem: OptimizationProblem, jobs: int = 1) -> OptimizationResult:
    """Run Nelder-Mead from every start point and keep the best reliability."""
    work = [(problem, c, b) for c, b in start_points(problem)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_start_job, work))
    else:
        records = [_start_job(w) for w in work]
    best = min(records, key=lambda r: (-r.F, r.evaluations))
    return OptimizationResult(problem, best.counts, best.betas, best.F, records)


def grid_search_single_class(n: int, m: int, t: int, step: float = 0.01, lo: float = 0.0, hi: float | None = None):
    """Exhaustive one-class search over mean degrees ``lo, lo + step, ..., hi``."""
    hi = float(n) if hi is None else hi
    best_beta, best_F = 0.0, -1.0
    for beta in np.arange(lo, hi + step / 2, step):
        beta = round(float(beta), 10)
        F = unresolved_pmf(SystemConfig.from_pairs(n, [(m, beta)]), REPORT_PRUNE).F(t)
        if F > best_F:
            best_beta, best_F = beta, F
    return best_beta, best_F
