"""Exact finite-length analysis of the SIC receiver as a finite state machine.

The receiver state after ``n - u`` resolutions is the tuple of cloud sizes (one
per slot class) and the ripple size.  State probabilities are held in a dense
tensor with axes ``(c_1, ..., c_k, r)``; each stage applies the ripple
departure and the per-class cloud-to-ripple moves as independent binomial
kernels, one axis at a time.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import gammaln, xlog1py, xlogy

from .core import ConfigError, SystemConfig, hypergeometric_matrix, log_choose_array, slot_degree_pmf

DEFAULT_PRUNE = 1e-15


class DecoderState(NamedTuple):
    cloud_sizes: tuple[int, ...]
    ripple_size: int


@dataclass
class StatePmf:
    """Joint pmf of the receiver state at stage ``stage`` (unresolved users).

    ``probs`` has one axis per slot class followed by the ripple axis.  Mass that
    was dropped by pruning so far is accumulated in ``leaked_mass``.
    """

    stage: int
    probs: np.ndarray
    leaked_mass: float = 0.0

    @property
    def total(self) -> float:
        return float(self.probs.sum())

    def entries(self) -> dict[DecoderState, float]:
        out = {}
        for idx in zip(*np.nonzero(self.probs)):
            idx = tuple(int(i) for i in idx)
            out[DecoderState(idx[:-1], idx[-1])] = float(self.probs[idx])
        return out

    def prob(self, cloud_sizes: Sequence[int], ripple_size: int) -> float:
        idx = tuple(cloud_sizes) + (ripple_size,)
        if any(i >= s for i, s in zip(idx, self.probs.shape)):
            return 0.0
        return float(self.probs[idx])


@dataclass
class ReliabilityProfile:
    """Distribution of the number of unresolved users and the metrics derived from it."""

    config: SystemConfig
    pmf: np.ndarray
    leaked_mass: float = 0.0
    reliability: np.ndarray = field(init=False)

    def __post_init__(self):
        # reliability[t] = Pr{at least t users resolved} = sum_{u <= n - t} P_u
        cdf = np.cumsum(self.pmf)
        self.reliability = cdf[::-1].copy()

    @property
    def n(self) -> int:
        return self.config.n

    def F(self, t: int) -> float:
        if not 0 <= t <= self.n:
            raise ValueError(f"target t={t} outside [0, {self.n}]")
        return float(self.reliability[t])

    @property
    def expected_per(self) -> float:
        u = np.arange(self.n + 1)
        return float(np.dot(u / self.n, self.pmf))

    @property
    def throughput_defined(self) -> bool:
        return self.config.total_slots > 0

    @property
    def throughput(self) -> float:
        m = self.config.total_slots
        if m == 0:
            return 0.0
        return self.n * (1.0 - self.expected_per) / m

    @property
    def mean_resolved(self) -> float:
        # sum_u (n - u) P_u; equals n (1 - P) up to n * leaked_mass
        return float(np.dot(self.n - np.arange(self.n + 1), self.pmf))


@lru_cache(maxsize=8)
def _log_choose_table(size: int) -> np.ndarray:
    N = np.arange(size)[:, None]
    x = np.arange(size)[None, :]
    table = log_choose_array(N, x)
    table.flags.writeable = False
    return table


def binomial_matrix(size: int, p: float) -> np.ndarray:
    """``B[N, x] = C(N, x) p^x (1-p)^(N-x)`` for ``N, x`` in ``0..size-1``."""
    table = _log_choose_table(max(64, 1 << (size - 1).bit_length()))[:size, :size]
    N = np.arange(size)[:, None]
    x = np.arange(size)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = table + xlogy(x, p) + xlog1py(N - x, -p)
    out = np.exp(logp)
    out[~np.isfinite(logp)] = 0.0
    return out


def _trinomial(m: int, p_cloud: float, p_ripple: float, p_empty: float) -> np.ndarray:
    """``T[c, r]``: ``c`` cloud and ``r`` ripple slots among ``m`` independent slots."""
    c = np.arange(m + 1)[:, None]
    r = np.arange(m + 1)[None, :]
    e = m - c - r
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = (
            math.lgamma(m + 1)
            - log_gamma1(c)
            - log_gamma1(r)
            - log_gamma1(e)
            + xlogy(c, p_cloud)
            + xlogy(r, p_ripple)
            + xlogy(e, p_empty)
        )
    out = np.where((e >= 0) & np.isfinite(logp), np.exp(logp), 0.0)
    return out


def log_gamma1(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, gammaln(np.maximum(x, 0) + 1), np.inf)


def _prune(probs: np.ndarray, threshold: float) -> float:
    if threshold <= 0:
        return 0.0
    mask = (probs < threshold) & (probs > 0)
    leaked = float(probs[mask].sum())
    probs[mask] = 0.0
    return leaked


def _trim(probs: np.ndarray) -> np.ndarray:
    """Crop trailing all-zero hyperplanes on every axis."""
    nonzero = probs != 0
    slices = []
    for axis in range(probs.ndim):
        others = tuple(a for a in range(probs.ndim) if a != axis)
        used = np.flatnonzero(nonzero.any(axis=others))
        if used.size == 0:
            return np.zeros((1,) * probs.ndim)
        slices.append(slice(0, int(used[-1]) + 1))
    return probs[tuple(slices)]


def initial_state_pmf(config: SystemConfig, prune: float = DEFAULT_PRUNE) -> StatePmf:
    """State distribution before any user is resolved (stage ``u = n``).

    Each class contributes a trinomial over (cloud, ripple, empty) slot counts;
    per-class ripple counts are summed into the single ripple coordinate.
    """
    joint = np.ones((1,))
    for cls in config.classes:
        m = int(cls.slot_count)
        omega = slot_degree_pmf(config.n, cls.mean_degree)
        p0, p1 = float(omega[0]), float(omega[1])
        p_cloud = max(0.0, 1.0 - p0 - p1)
        tri = _trinomial(m, p_cloud, p1, p0)
        R = joint.shape[-1]
        new = np.zeros(joint.shape[:-1] + (m + 1, R + m))
        for r_h in range(m + 1):
            # new[..., c, r_h + r] += joint[..., r] * tri[c, r_h]
            new[..., :, r_h : r_h + R] += joint[..., None, :] * tri[:, r_h][
                (None,) * (joint.ndim - 1) + (slice(None), None)
            ]
        joint = new
    leaked = _prune(joint, prune)
    return StatePmf(config.n, _trim(joint), leaked)


def ripple_departure_pmf(r_u: int, u: int) -> np.ndarray:
    """Pmf of the number of slots leaving the ripple, indexed by ``a - 1`` for ``a = 1..r_u``.

    The chosen ripple slot always leaves; each of the other ``r_u - 1`` ripple
    slots holds the resolved user (and leaves) with probability ``1/u``.
    """
    if r_u < 1:
        raise ValueError("empty ripple is terminal; no departure distribution")
    if u < 1:
        raise ValueError("need at least one unresolved user")
    return binomial_matrix(r_u, 1.0 / u)[r_u - 1, :r_u]


def cloud_exit_terms(n: int, u: int, spectrum: np.ndarray) -> tuple[float, float, float]:
    """Return ``(num_direct, num_alternate, den)`` for the cloud-exit probability.

    ``num_direct`` conditions on the resolved user being in the slot and exactly one
    other unresolved user sharing it; ``num_alternate`` is the same quantity written
    as ``(2/u) Pr{reduced degree == 2}``.  ``den`` is the probability that a slot is
    in the cloud (reduced degree at least 2).
    """
    spectrum = np.asarray(spectrum, dtype=float)
    d = np.arange(n + 1)
    H = hypergeometric_matrix(n, u, min(u, n))
    den = float(np.dot(spectrum, H[:, 2:].sum(axis=1))) if u >= 2 else 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        log_direct = (
            np.log(np.maximum(u - 1, 0))
            + log_choose_array(n - u, d - 2)
            - log_choose_array(n - 1, d - 1)
        )
    direct = np.where(d >= 2, (d / n) * np.exp(log_direct), 0.0)
    num_direct = float(np.dot(spectrum, np.nan_to_num(direct)))

    num_alternate = float(np.dot(spectrum, H[:, 2] * (2.0 / u))) if u >= 2 else 0.0
    return num_direct, num_alternate, den


def cloud_exit_prob(n: int, u: int, spectrum: np.ndarray) -> float:
    """Probability that a given cloud slot drops into the ripple at stage ``u``.

    Returns 0 when the cloud is impossible at this stage (zero denominator).
    """
    if not 1 <= u <= n:
        raise ValueError(f"u={u} outside [1, {n}]")
    num, _, den = cloud_exit_terms(n, u, spectrum)
    if den <= 0.0:
        return 0.0
    return min(1.0, max(0.0, num / den))


@lru_cache(maxsize=4096)
def _cloud_exit_column(n: int, beta: float) -> np.ndarray:
    omega = slot_degree_pmf(n, beta)
    col = np.zeros(n + 1)
    for u in range(1, n + 1):
        col[u] = cloud_exit_prob(n, u, omega)
    col.flags.writeable = False
    return col


def cloud_exit_table(config: SystemConfig) -> np.ndarray:
    """``q[h, u]`` for every class and ``u = 0..n`` (column 0 unused)."""
    q = np.zeros((config.k, config.n + 1))
    for h, cls in enumerate(config.classes):
        if cls.slot_count > 0:
            q[h] = _cloud_exit_column(config.n, float(cls.mean_degree))
    return q


def _diagonal_view(a: np.ndarray, cols: int) -> np.ndarray:
    """View ``v[..., i, j] = a[..., i, i + j]`` over the last two axes."""
    strides = a.strides[:-2] + (a.strides[-2] + a.strides[-1], a.strides[-1])
    return as_strided(a, shape=a.shape[:-1] + (cols,), strides=strides, writeable=True)


def _apply_cloud_moves(probs: np.ndarray, axis: int, q: float) -> np.ndarray:
    """Move ``Binom(c, q)`` slots from cloud ``axis`` into the ripple (last axis)."""
    C = probs.shape[axis]
    if C == 1 or q == 0.0:
        return probs
    Y = np.moveaxis(probs, axis, -2)
    R = Y.shape[-1]
    S = C + R - 1
    # skew to (c, s = c + r); the move keeps s fixed and thins c
    Z = np.zeros(Y.shape[:-1] + (S,))
    _diagonal_view(Z, R)[...] = Y
    keep = binomial_matrix(C, 1.0 - q)
    W = np.zeros(Y.shape[:-1] + (S + C,))
    W[..., :S] = np.swapaxes(np.swapaxes(Z, -1, -2) @ keep, -1, -2)
    out = _diagonal_view(W, S).copy()
    return np.moveaxis(out, -2, axis)


def transition(
    state: StatePmf,
    config: SystemConfig,
    prune: float = DEFAULT_PRUNE,
    q_table: np.ndarray | None = None,
) -> tuple[StatePmf, float]:
    """Advance from stage ``u`` to ``u - 1``.

    Returns the next state pmf and the mass that terminated at stage ``u``
    because the ripple was empty.
    """
    u = state.stage
    if u < 1:
        raise ValueError("no transition out of stage 0")
    if q_table is None:
        q_table = cloud_exit_table(config)
    X = state.probs.copy()
    terminal = float(X[..., 0].sum())
    X[..., 0] = 0.0
    leaked = state.leaked_mass

    R = X.shape[-1]
    if R < 2 or not X.any():
        empty = np.zeros((1,) * X.ndim)
        return StatePmf(u - 1, empty, leaked), terminal

    # ripple departure: r' = Binom(r - 1, 1 - 1/u)
    stay = binomial_matrix(R, 1.0 - 1.0 / u)
    depart = np.zeros((R, R - 1))
    depart[1:, :] = stay[: R - 1, : R - 1]
    X = X @ depart

    for h in range(config.k):
        X = _apply_cloud_moves(X, h, float(q_table[h, u]))

    leaked += _prune(X, prune)
    return StatePmf(u - 1, _trim(X), leaked), terminal


def iter_stages(config: SystemConfig, prune: float = DEFAULT_PRUNE) -> Iterator[tuple[StatePmf, float]]:
    """Yield ``(state_pmf, terminal_mass)`` for stages ``u = n, n-1, ..., 0``.

    ``terminal_mass`` is the probability that decoding stops with exactly ``u``
    unresolved users; at stage 0 it is all remaining mass.
    """
    q_table = cloud_exit_table(config)
    state = initial_state_pmf(config, prune)
    while state.stage > 0:
        nxt, terminal = transition(state, config, prune, q_table)
        yield state, terminal
        state = nxt
    yield state, state.total


def unresolved_pmf(config: SystemConfig, prune: float = DEFAULT_PRUNE) -> ReliabilityProfile:
    """Pmf of the number of users left unresolved after all ``m`` slots."""
    n = config.n
    pmf = np.zeros(n + 1)
    leaked = 0.0
    for state, terminal in iter_stages(config, prune):
        pmf[state.stage] = terminal
        leaked = state.leaked_mass
    return ReliabilityProfile(config, pmf, leaked)


def batched_order(config: SystemConfig) -> list[int]:
    """Slot order with classes in declaration order, each as a contiguous batch."""
    return [h for h, cls in enumerate(config.classes) for _ in range(cls.slot_count)]


def interleaved_order(config: SystemConfig) -> list[int]:
    """Spread each class evenly over the period (largest-deficit first)."""
    m = config.total_slots
    counts = np.array(config.slot_counts, dtype=float)
    placed = np.zeros(config.k)
    order = []
    for ell in range(1, m + 1):
        deficit = counts * ell / m - placed
        deficit[placed >= counts] = -np.inf
        h = int(np.argmax(deficit))
        placed[h] += 1
        order.append(h)
    return order


def intermediate_profile(
    config: SystemConfig,
    slot_order: Sequence[int] | None = None,
    prune: float = DEFAULT_PRUNE,
) -> np.ndarray:
    """Mean number of resolved users after each slot prefix.

    Returns ``n_r`` for prefix lengths ``0..m``; entry ``l`` is ``n (1 - P)``
    evaluated on the configuration formed by the first ``l`` slots.
    """
    if slot_order is None:
        slot_order = batched_order(config)
    slot_order = [int(h) for h in slot_order]
    if len(slot_order) != config.total_slots:
        raise ConfigError("order", f"has {len(slot_order)} slots, config has {config.total_slots}")
    if any(not 0 <= h < config.k for h in slot_order):
        raise ConfigError("order", "class index out of range")
    counts = np.bincount(slot_order, minlength=config.k)
    if tuple(int(c) for c in counts) != config.slot_counts:
        raise ConfigError("order", f"per-class counts {tuple(counts)} != {config.slot_counts}")

    n_r = np.zeros(len(slot_order) + 1)
    prefix = [0] * config.k
    for ell, h in enumerate(slot_order, start=1):
        prefix[h] += 1
        profile = unresolved_pmf(config.with_slot_counts(prefix), prune)
        n_r[ell] = profile.mean_resolved
    return n_r
