"""Configuration types, slot degree distributions and stable combinatorics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

# Below this size math.comb is exact and cheap enough to use directly.
_EXACT_COMB_LIMIT = 1000


class ConfigError(ValueError):
    """Raised for invalid configuration values; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class SlotClass:
    slot_count: int
    mean_degree: float


@dataclass(frozen=True)
class SystemConfig:
    """``n`` contending users and an ordered tuple of slot classes."""

    n: int
    classes: tuple[SlotClass, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError("users", f"must be a positive integer, got {self.n!r}")
        if len(self.classes) < 1:
            raise ConfigError("classes", "at least one slot class is required")
        for h, cls in enumerate(self.classes):
            if cls.slot_count < 0 or int(cls.slot_count) != cls.slot_count:
                raise ConfigError(
                    "classes", f"class {h + 1} slot count must be a nonnegative integer"
                )
            if not (0.0 <= cls.mean_degree <= self.n) or math.isnan(cls.mean_degree):
                raise ConfigError(
                    "classes",
                    f"class {h + 1} mean degree {cls.mean_degree} outside [0, {self.n}]",
                )

    @property
    def k(self) -> int:
        return len(self.classes)

    @property
    def total_slots(self) -> int:
        return sum(int(c.slot_count) for c in self.classes)

    @property
    def slot_counts(self) -> tuple[int, ...]:
        return tuple(int(c.slot_count) for c in self.classes)

    @property
    def betas(self) -> tuple[float, ...]:
        return tuple(float(c.mean_degree) for c in self.classes)

    @classmethod
    def from_pairs(cls, n: int, pairs: Sequence[tuple[int, float]]) -> "SystemConfig":
        return cls(n, tuple(SlotClass(int(m), float(b)) for m, b in pairs))

    def with_slot_counts(self, counts: Sequence[int]) -> "SystemConfig":
        return SystemConfig(
            self.n,
            tuple(SlotClass(int(m), c.mean_degree) for m, c in zip(counts, self.classes)),
        )

    def to_spec(self) -> str:
        return format_classes(self.classes)


def parse_classes(text: str) -> tuple[SlotClass, ...]:
    """Parse ``SLOTS:BETA`` pairs separated by commas, e.g. ``88:2.4,12:12.94``."""
    classes = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            slots, beta = item.split(":")
            classes.append(SlotClass(int(slots), float(beta)))
        except ValueError:
            raise ConfigError("classes", f"cannot parse {item!r}, expected SLOTS:BETA") from None
    if not classes:
        raise ConfigError("classes", "empty class specification")
    return tuple(classes)


def format_classes(classes: Sequence[SlotClass]) -> str:
    return ",".join(f"{c.slot_count}:{c.mean_degree:g}" for c in classes)


def log_choose(n: int, k: int) -> float:
    """``ln C(n, k)``; ``-inf`` when ``k`` is out of range."""
    if k < 0 or k > n or n < 0:
        return -math.inf
    if n <= _EXACT_COMB_LIMIT:
        return math.log(math.comb(n, k))
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def log_choose_array(n, k) -> np.ndarray:
    """Vectorized ``ln C(n, k)`` via log-gamma, ``-inf`` outside ``0 <= k <= n``."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    valid = (k >= 0) & (k <= n) & (n >= 0)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return np.where(valid, out, -np.inf)


def slot_degree_pmf(n: int, beta: float) -> np.ndarray:
    """Initial-degree pmf of a slot whose users each transmit with probability ``beta/n``.

    Entry ``j`` is ``C(n, j) p^j (1-p)^(n-j)`` with ``p = beta/n``; the array has
    length ``n + 1``.
    """
    if n < 1:
        raise ConfigError("users", "must be a positive integer")
    if not (0.0 <= beta <= n):
        raise ConfigError("mean_degree", f"{beta} outside [0, {n}]")
    p = beta / n
    j = np.arange(n + 1)
    if p == 0.0:
        return (j == 0).astype(float)
    if p == 1.0:
        return (j == n).astype(float)
    logp = log_choose_array(n, j) + j * math.log(p) + (n - j) * math.log1p(-p)
    return np.exp(logp)


def reduced_degree_pmf(n: int, u: int, d: int) -> np.ndarray:
    """Hypergeometric pmf of the number of unresolved users in a degree-``d`` slot.

    Returns an array indexed by ``j = 0..d``: the probability that exactly ``j`` of
    the slot's ``d`` users lie among the ``u`` unresolved ones out of ``n``.
    """
    if not (0 <= d <= n and 0 <= u <= n):
        raise ValueError(f"need 0 <= d, u <= n, got n={n}, u={u}, d={d}")
    j = np.arange(d + 1)
    logp = log_choose_array(u, j) + log_choose_array(n - u, d - j) - log_choose(n, d)
    return np.exp(logp)


def hypergeometric_matrix(n: int, u: int, jmax: int) -> np.ndarray:
    """``H[d, j]`` = probability a degree-``d`` slot holds ``j`` of ``u`` unresolved users.

    Rows ``d = 0..n``, columns ``j = 0..jmax``.
    """
    d = np.arange(n + 1)[:, None]
    j = np.arange(jmax + 1)[None, :]
    logp = log_choose_array(u, j) + log_choose_array(n - u, d - j) - log_choose_array(n, d)
    return np.exp(logp)
