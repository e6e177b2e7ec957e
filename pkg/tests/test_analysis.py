import itertools

import numpy as np
import pytest

from frameless_aloha.analysis import (
    StatePmf,
    batched_order,
    cloud_exit_prob,
    cloud_exit_terms,
    initial_state_pmf,
    intermediate_profile,
    interleaved_order,
    iter_stages,
    ripple_departure_pmf,
    transition,
    unresolved_pmf,
)
from frameless_aloha.core import ConfigError, SystemConfig, slot_degree_pmf
from oracles import brute_force_pmf, brute_force_stages


def cfg(n, *pairs):
    return SystemConfig.from_pairs(n, pairs)


class TestInitialState:
    def test_single_user_single_slot(self):
        state = initial_state_pmf(cfg(1, (1, 0.5)))
        assert state.stage == 1
        assert state.entries() == {((0,), 1): 0.5, ((0,), 0): 0.5}

    def test_one_slot_trinomial(self):
        # n=2, beta=1: Omega = (0.25, 0.5, 0.25) -> cloud 0.25, ripple 0.5, empty 0.25
        state = initial_state_pmf(cfg(2, (1, 1.0)))
        assert state.prob((0,), 1) == pytest.approx(0.5, abs=1e-15)
        assert state.prob((1,), 0) == pytest.approx(0.25, abs=1e-15)
        assert state.prob((0,), 0) == pytest.approx(0.25, abs=1e-15)

    def test_marginal_moments_two_classes(self):
        config = cfg(50, (50, 3.0), (10, 5.0))
        state = initial_state_pmf(config, prune=0.0)
        P = state.probs
        assert P.sum() == pytest.approx(1.0, abs=1e-12)
        om1, om2 = slot_degree_pmf(50, 3.0), slot_degree_pmf(50, 5.0)
        c1 = np.arange(P.shape[0])
        c2 = np.arange(P.shape[1])
        r = np.arange(P.shape[2])
        assert np.einsum("ijk,i->", P, c1) == pytest.approx(50 * (1 - om1[0] - om1[1]), rel=1e-12)
        assert np.einsum("ijk,j->", P, c2) == pytest.approx(10 * (1 - om2[0] - om2[1]), rel=1e-12)
        assert np.einsum("ijk,k->", P, r) == pytest.approx(50 * om1[1] + 10 * om2[1], rel=1e-12)

    def test_matches_brute_force_stage_n(self):
        stages = brute_force_stages(3, [(2, 1.5), (1, 2.5)])
        state = initial_state_pmf(cfg(3, (2, 1.5), (1, 2.5)), prune=0.0)
        got = {(s.cloud_sizes, s.ripple_size): p for s, p in state.entries().items()}
        assert got.keys() == {k for k, v in stages[3].items() if v > 0}
        for key, p in stages[3].items():
            assert got[key] == pytest.approx(p, abs=1e-14)


class TestRippleDeparture:
    def test_single_slot(self):
        np.testing.assert_allclose(ripple_departure_pmf(1, 7), [1.0])

    def test_by_hand(self):
        np.testing.assert_allclose(ripple_departure_pmf(3, 2), [0.25, 0.5, 0.25], atol=1e-15)

    def test_last_user_clears_ripple(self):
        np.testing.assert_allclose(ripple_departure_pmf(4, 1), [0, 0, 0, 1], atol=1e-15)

    def test_empty_ripple_rejected(self):
        with pytest.raises(ValueError):
            ripple_departure_pmf(0, 3)


class TestCloudExit:
    def test_all_degree_two(self):
        n = 6
        spectrum = np.zeros(n + 1)
        spectrum[2] = 1.0
        assert cloud_exit_prob(n, n, spectrum) == pytest.approx(2 / n, abs=1e-15)
        assert cloud_exit_prob(n, 2, spectrum) == pytest.approx(1.0, abs=1e-15)

    def test_empty_cloud_convention(self):
        spectrum = np.array([0.3, 0.7, 0, 0, 0])
        num, _, den = cloud_exit_terms(4, 3, spectrum)
        assert den == 0.0
        assert cloud_exit_prob(4, 3, spectrum) == 0.0

    def test_single_unresolved_user_has_no_cloud(self):
        assert cloud_exit_prob(10, 1, slot_degree_pmf(10, 3.0)) == 0.0

    def test_exhaustive_small(self):
        # n=4, u=3: enumerate every degree-d slot content and resolved user
        n, u = 4, 3
        omega = slot_degree_pmf(n, 1.7)
        unresolved = set(range(u))
        num = den = 0.0
        for d in range(n + 1):
            subsets = list(itertools.combinations(range(n), d))
            for s in subsets:
                live = unresolved.intersection(s)
                if len(live) < 2:
                    continue
                w = omega[d] / len(subsets)
                den += w
                for x in unresolved:
                    if x in live and len(live) == 2:
                        num += w / u
        assert cloud_exit_prob(n, u, omega) == pytest.approx(num / den, abs=1e-14)

    def test_two_forms_agree(self):
        worst = 0.0
        for n in (2, 3, 5, 10, 25, 50, 75, 100):
            for beta in np.linspace(0, n, 9):
                omega = slot_degree_pmf(n, float(beta))
                for u in range(1, n + 1):
                    a, b, _ = cloud_exit_terms(n, u, omega)
                    worst = max(worst, abs(a - b))
        assert worst < 1e-12


class TestTransition:
    def test_forced_last_resolution(self):
        config = cfg(3, (3, 1.0))
        state = StatePmf(1, np.array([[0.0, 1.0]]))
        nxt, terminal = transition(state, config)
        assert terminal == 0.0
        assert nxt.stage == 0
        assert nxt.total == pytest.approx(1.0)

    def test_empty_ripple_is_absorbing(self):
        config = cfg(5, (4, 2.0))
        probs = np.zeros((2, 1))
        probs[1, 0] = 1.0
        nxt, terminal = transition(StatePmf(4, probs), config)
        assert terminal == 1.0
        assert nxt.total == 0.0

    @pytest.mark.parametrize(
        "n,classes",
        [
            (3, [(3, 1.5)]),
            (3, [(2, 1.0), (2, 2.5)]),
            (4, [(3, 2.0)]),
        ],
    )
    def test_stagewise_matches_enumeration(self, n, classes):
        oracle = brute_force_stages(n, classes)
        config = SystemConfig.from_pairs(n, classes)
        for state, _ in iter_stages(config, prune=0.0):
            got = {(s.cloud_sizes, s.ripple_size): p for s, p in state.entries().items()}
            expected = {k: v for k, v in oracle[state.stage].items() if v > 1e-300}
            if state.stage == 0:
                assert state.total == pytest.approx(sum(expected.values()), abs=1e-12)
                continue
            for key in set(got) | set(expected):
                assert got.get(key, 0.0) == pytest.approx(expected.get(key, 0.0), abs=1e-12), (
                    state.stage,
                    key,
                )


class TestUnresolvedPmf:
    def test_single_user(self):
        profile = unresolved_pmf(cfg(1, (1, 0.5)))
        np.testing.assert_allclose(profile.pmf, [0.5, 0.5], atol=1e-15)
        assert profile.expected_per == pytest.approx(0.5)
        assert profile.throughput == pytest.approx(0.5)

    def test_no_slots(self):
        profile = unresolved_pmf(cfg(4, (0, 2.0)))
        assert profile.pmf[4] == 1.0
        assert not profile.throughput_defined
        assert profile.throughput == 0.0

    def test_zero_size_class_is_inert(self):
        a = unresolved_pmf(cfg(5, (6, 2.0)))
        b = unresolved_pmf(cfg(5, (6, 2.0), (0, 4.0)))
        np.testing.assert_allclose(a.pmf, b.pmf, atol=1e-15)

    @pytest.mark.parametrize(
        "n,classes",
        [
            (2, [(3, 1.0)]),
            (3, [(3, 1.5)]),
            (4, [(4, 2.0)]),
            (4, [(2, 1.2), (2, 3.1)]),
            (3, [(1, 3.0), (3, 0.7)]),
        ],
    )
    def test_matches_brute_force(self, n, classes):
        exact = brute_force_pmf(n, classes)
        profile = unresolved_pmf(SystemConfig.from_pairs(n, classes), prune=0.0)
        np.testing.assert_allclose(profile.pmf, exact, atol=1e-10, rtol=0)

    def test_mass_conservation_without_pruning(self):
        profile = unresolved_pmf(cfg(50, (50, 3.0), (10, 5.0)), prune=0.0)
        assert abs(profile.pmf.sum() - 1) < 1e-12
        assert profile.leaked_mass == 0.0

    def test_mass_conservation_with_pruning(self):
        profile = unresolved_pmf(cfg(50, (88, 2.4), (12, 12.94)), prune=1e-13)
        assert abs(profile.pmf.sum() + profile.leaked_mass - 1) < 1e-9
        assert profile.leaked_mass > 0

    def test_reliability_definition(self):
        profile = unresolved_pmf(cfg(20, (25, 2.5)))
        for t in range(21):
            assert profile.F(t) == pytest.approx(profile.pmf[: 20 - t + 1].sum(), abs=1e-15)
        assert np.all(np.diff(profile.reliability) <= 1e-15)
        assert profile.throughput == pytest.approx(20 * (1 - profile.expected_per) / 25)

    def test_more_slots_never_hurt(self):
        for beta in (1.5, 2.5, 4.0):
            for t in (15, 18, 20):
                values = [unresolved_pmf(cfg(20, (m, beta))).F(t) for m in range(0, 40, 3)]
                assert np.all(np.diff(values) >= -1e-12), (beta, t)
        base = unresolved_pmf(cfg(20, (20, 2.5), (3, 8.0))).F(20)
        more = unresolved_pmf(cfg(20, (20, 2.5), (4, 8.0))).F(20)
        assert more >= base


class TestIntermediateProfile:
    def test_empty_prefix_and_final_consistency(self):
        config = cfg(10, (8, 2.0), (3, 5.0))
        curve = intermediate_profile(config)
        assert curve[0] == 0.0
        assert len(curve) == 12
        assert curve[-1] == pytest.approx(unresolved_pmf(config).mean_resolved, abs=1e-12)

    def test_permutation_invariance_of_final_point(self):
        config = cfg(10, (6, 2.0), (4, 6.0))
        rng = np.random.default_rng(3)
        finals = []
        for order in (batched_order(config), interleaved_order(config), list(rng.permutation(batched_order(config)))):
            finals.append(intermediate_profile(config, order)[-1])
        assert max(finals) - min(finals) < 1e-12

    def test_zero_beta_is_flat(self):
        curve = intermediate_profile(cfg(5, (6, 0.0)))
        np.testing.assert_array_equal(curve, np.zeros(7))

    def test_bad_order(self):
        config = cfg(10, (6, 2.0), (4, 6.0))
        with pytest.raises(ConfigError):
            intermediate_profile(config, [0] * 10)
        with pytest.raises(ConfigError):
            intermediate_profile(config, [0] * 9)
