import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frameless_aloha.analysis import unresolved_pmf
from frameless_aloha.core import ConfigError, SystemConfig
from frameless_aloha.optimizer import (
    OptimizationProblem,
    ReliabilityObjective,
    decode,
    encode,
    grid_search_single_class,
    largest_remainder,
    multistart_optimize,
    nelder_mead,
    start_points,
)


def test_largest_remainder():
    assert largest_remainder([33.4, 33.3, 33.3], 100) == [34, 33, 33]
    assert largest_remainder([0.5, 0.5], 1) == [1, 0]
    assert largest_remainder([100.0], 100) == [100]


def test_single_class_has_only_beta_free():
    x = encode([100], [2.9])
    assert x.shape == (1,)
    counts, betas = decode(x, 50, 100)
    assert counts == [100] and betas == pytest.approx([2.9])


def test_round_trip_two_classes():
    counts, betas = decode(encode([88, 12], [2.4, 12.94]), 50, 100)
    assert counts == [88, 12]
    assert betas == pytest.approx([2.4, 12.94], rel=1e-12)


def test_round_trip_sampled_compositions():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        cuts = np.sort(rng.integers(0, 101, 2))
        counts = [int(cuts[0]), int(cuts[1] - cuts[0]), int(100 - cuts[1])]
        assert decode(encode(counts, [1.0, 2.0, 3.0]), 50, 100)[0] == counts


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=5, max_size=5))
def test_decoded_points_are_feasible(x):
    counts, betas = decode(np.array(x), 50, 100)
    assert sum(counts) == 100 and min(counts) >= 0
    assert all(0 <= b <= 50 for b in betas)


def test_nelder_mead_quadratic():
    target = np.array([1.5, -2.0, 0.25])
    res = nelder_mead(lambda x: float(np.sum((x - target) ** 2)), np.zeros(3), step=0.5,
                      xtol=1e-6, ftol=1e-12, max_evals=2000)
    assert res.converged
    np.testing.assert_allclose(res.x, target, atol=1e-3)


def test_nelder_mead_budget_flag():
    res = nelder_mead(lambda x: float(np.sum(x**2)), np.full(4, 10.0), max_evals=20)
    assert not res.converged
    assert res.evaluations <= 25
    assert res.fun < 400.0


def test_objective_is_cached_and_pure():
    obj = ReliabilityObjective(20, 30, 19)
    x = encode([30], [2.5])
    assert obj(x) == obj(x)
    assert len(obj.cache) == 1
    direct = unresolved_pmf(SystemConfig.from_pairs(20, [(30, 2.5)]), 1e-13).F(19)
    assert obj(x) == -direct


def test_problem_validation():
    with pytest.raises(ConfigError):
        OptimizationProblem(n=10, m=20, k=1, t=11)
    with pytest.raises(ConfigError):
        OptimizationProblem(n=10, m=20, k=0, t=5)


def test_start_points_seeded():
    p = OptimizationProblem(n=50, m=100, k=3, t=48, starts=5, seed=9)
    a, b = start_points(p), start_points(p)
    assert a == b
    for counts, betas in a:
        assert sum(counts) == 100
        assert all(1.0 <= beta <= 25.0 for beta in betas)


def test_single_class_matches_grid_search():
    n, m, t = 20, 30, 19
    result = multistart_optimize(OptimizationProblem(n=n, m=m, k=1, t=t, starts=4, seed=2))
    beta, F = grid_search_single_class(n, m, t, step=0.01, lo=0.5, hi=8.0)
    assert abs(result.F - F) < 1e-4
    assert result.F >= F - 1e-4


def test_two_classes_at_least_as_good_as_one():
    n, m, t = 20, 30, 20
    one = multistart_optimize(OptimizationProblem(n=n, m=m, k=1, t=t, starts=3, seed=1))
    two = multistart_optimize(OptimizationProblem(
        n=n, m=m, k=2, t=t, starts=3, seed=1,
        initial=(((m - 1, 1), (one.betas[0], one.betas[0])),),
    ))
    assert two.F >= one.F - 1e-12
    assert sum(two.counts) == m


def test_reproducible_best():
    p = OptimizationProblem(n=15, m=20, k=2, t=15, starts=2, seed=4, max_evals=60)
    a, b = multistart_optimize(p), multistart_optimize(p)
    assert (a.counts, a.betas, a.F) == (b.counts, b.betas, b.F)
    assert a.F == max(s.F for s in a.starts)
