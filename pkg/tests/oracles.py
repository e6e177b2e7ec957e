"""Independent brute-force references used only by the tests.

Nothing here imports the analysis code; slots are bitmasks over users and
probabilities come from direct Bernoulli products.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from fractions import Fraction
from math import comb


def naive_resolved(slots: list[int]) -> int:
    """Bitmask of users resolved by rescanning every slot until nothing changes."""
    resolved = 0
    changed = True
    while changed:
        changed = False
        for s in slots:
            rest = s & ~resolved
            if rest and rest & (rest - 1) == 0:
                resolved |= rest
                changed = True
    return resolved


def subset_probs(n: int, beta: float) -> list[float]:
    p = beta / n
    return [p ** bin(s).count("1") * (1 - p) ** (n - bin(s).count("1")) for s in range(1 << n)]


def _patterns(n: int, classes):
    per_slot = []
    for m, beta in classes:
        probs = subset_probs(n, beta)
        per_slot.extend([probs] * m)
    support = [[s for s in range(1 << n) if probs[s] > 0] for probs in per_slot]
    for pattern in itertools.product(*support):
        w = 1.0
        for probs, s in zip(per_slot, pattern):
            w *= probs[s]
        yield list(pattern), w


def brute_force_pmf(n: int, classes) -> list[float]:
    """Exact pmf of unresolved users by enumerating every activation pattern."""
    pmf = [0.0] * (n + 1)
    cache = {}
    for pattern, w in _patterns(n, classes):
        key = tuple(sorted(pattern))
        if key not in cache:
            cache[key] = bin(naive_resolved(pattern)).count("1")
        pmf[n - cache[key]] += w
    return pmf


def brute_force_stages(n: int, classes):
    """Stagewise state distributions under uniformly random ripple picks.

    Returns ``{u: {(cloud_sizes, ripple): prob}}`` for non-terminated paths.
    """
    slot_class = [h for h, (m, _) in enumerate(classes) for _ in range(m)]
    k = len(classes)
    stages = defaultdict(lambda: defaultdict(float))

    def state_of(pattern, unresolved):
        cloud = [0] * k
        ripple = 0
        for h, s in zip(slot_class, pattern):
            deg = bin(s & unresolved).count("1")
            if deg == 1:
                ripple += 1
            elif deg > 1:
                cloud[h] += 1
        return tuple(cloud), ripple

    def walk(pattern, unresolved, u, w):
        cloud, ripple = state_of(pattern, unresolved)
        stages[u][(cloud, ripple)] += w
        if ripple == 0 or u == 0:
            return
        ripple_slots = [s for s in pattern if bin(s & unresolved).count("1") == 1]
        for s in ripple_slots:
            walk(pattern, unresolved & ~s, u - 1, w / len(ripple_slots))

    full = (1 << n) - 1
    for pattern, w in _patterns(n, classes):
        walk(pattern, full, n, w)
    return stages


def exact_hypergeometric(n: int, u: int, d: int) -> list[Fraction]:
    return [Fraction(comb(u, j) * comb(n - u, d - j), comb(n, d)) for j in range(d + 1)]
