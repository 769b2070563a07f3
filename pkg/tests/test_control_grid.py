import itertools

import numpy as np
import pytest

from app.core.control_grid import (
    BudgetRule, ControlWord, PiecewiseControl, average_control, count_words, enumerate_words, feasible,
    magnitude_sequences, word_lp_norm,
)
from app.core.errors import CapacityError, InputValidationError
from app.core.param_derivation import DiscretizationPlan
from app.core.sphere_net import build_sigma_net
from app.core.system_model import ProblemInstance


def brute_force_words(plan, net):
    """Canonical words from every raw (j, l) combination"""
    words = set()
    for magnitudes in itertools.product(range(plan.q + 1), repeat=plan.N):
        for directions in itertools.product(range(net.size), repeat=plan.N):
            canonical = tuple(l if j > 0 else 0 for j, l in zip(magnitudes, directions))
            word = ControlWord(magnitudes, canonical)
            if feasible(word, plan):
                words.add(word)
    return words


class TestControlWord:
    def test_zero_magnitude_needs_direction_zero(self):
        with pytest.raises(InputValidationError):
            ControlWord((0, 1), (1, 0))

    def test_length_mismatch(self):
        with pytest.raises(InputValidationError):
            ControlWord((1, 1), (0,))

    def test_values(self, nine_word_plan, line_net):
        values = ControlWord((2, 1), (1, 0)).values(nine_word_plan, line_net)
        np.testing.assert_array_equal(values, [[-2.0], [1.0]])

    def test_word_must_fit_plan(self, nine_word_plan):
        with pytest.raises(InputValidationError):
            feasible(ControlWord((1,), (0,)), nine_word_plan)
        with pytest.raises(InputValidationError):
            feasible(ControlWord((3, 0), (0, 0)), nine_word_plan)


class TestBudget:
    def test_equality_is_admissible(self, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=1.0, N=1, q=1, sigma=1.0)
        assert feasible(ControlWord((1,), (0,)), plan)

    def test_integral_exponent_uses_exact_sums(self, nine_word_plan):
        rule = BudgetRule(nine_word_plan)
        assert rule.integral
        assert rule.total((1, 2)) == 5
        assert not rule.admits(5)
        assert rule.admits(2)

    def test_fractional_exponent(self):
        instance = ProblemInstance(0.0, 1.0, np.zeros(1), 1.5, 1.0)
        plan = DiscretizationPlan.direct(instance, beta=1.0, N=2, q=2, sigma=1.0)
        rule = BudgetRule(plan)
        assert not rule.integral
        assert rule.total((1, 2)) == pytest.approx(1.0 + 2.0 ** 1.5)

    def test_norm_at_equality_matches_budget(self, nine_word_plan):
        word = ControlWord((1, 1), (0, 0))
        assert feasible(word, nine_word_plan)
        assert word_lp_norm(word, nine_word_plan) == 1.0

    def test_norm_uses_magnitude_steps(self, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=0.7, N=3, q=7, sigma=1.0)
        word = ControlWord((7, 3, 0), (0, 1, 0))
        expected = (plan.delta_t * ((7 * plan.delta) ** 2 + (3 * plan.delta) ** 2)) ** 0.5
        assert word_lp_norm(word, plan) == pytest.approx(expected, rel=1e-13)
        assert word_lp_norm(word, plan, p=3.0) == pytest.approx(
            (plan.delta_t * ((7 * plan.delta) ** 3 + (3 * plan.delta) ** 3)) ** (1.0 / 3.0), rel=1e-13)

    @pytest.mark.parametrize("p", [1.5, 2.0, 2.5, 3.0])
    @pytest.mark.parametrize("r", [0.5, 0.75, 1.0, 1.25])
    def test_feasible_matches_direct_sum(self, p, r):
        instance = ProblemInstance(0.0, 1.0, np.zeros(1), p, r)
        plan = DiscretizationPlan.direct(instance, beta=2.0, N=4, q=4, sigma=1.0)
        rng = np.random.default_rng(int(100 * p + 10 * r))
        for _ in range(300):
            magnitudes = tuple(rng.integers(0, plan.q + 1, size=plan.N))
            word = ControlWord(magnitudes, (0,) * plan.N)
            direct = plan.delta_t * sum((j * plan.delta) ** p for j in magnitudes)
            # Fractional sums can land within rounding of r^p
            if abs(direct - r ** p) <= 1e-9 * r ** p:
                continue
            assert feasible(word, plan) == (direct <= r ** p)
            if feasible(word, plan) and r == 1.0:
                assert word_lp_norm(word, plan) <= 1.0


class TestEnumeration:
    def test_nine_words(self, nine_word_plan, line_net):
        words = list(enumerate_words(nine_word_plan, line_net))
        assert len(words) == 9
        assert set(words) == brute_force_words(nine_word_plan, line_net)
        assert count_words(nine_word_plan, line_net) == 9

    def test_lexicographic_order(self, nine_word_plan, line_net):
        words = list(enumerate_words(nine_word_plan, line_net))
        keys = [(w.magnitude_indices, w.direction_indices) for w in words]
        assert keys == sorted(keys)
        assert words[0] == ControlWord((0, 0), (0, 0))
        assert list(magnitude_sequences(nine_word_plan)) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    @pytest.mark.parametrize("p, r, N, q, m, sigma", [
        (2.0, 1.0, 3, 3, 1, 1.0),
        (2.0, 1.5, 4, 2, 2, 1.0),
        (1.5, 1.0, 3, 3, 2, 1.5),
        (3.0, 0.8, 2, 3, 3, 2.0),
    ])
    def test_count_matches_enumeration_and_brute_force(self, p, r, N, q, m, sigma):
        instance = ProblemInstance(0.0, 1.0, np.zeros(m), p, r)
        plan = DiscretizationPlan.direct(instance, beta=2.0, N=N, q=q, sigma=sigma)
        net = build_sigma_net(m, sigma)
        words = list(enumerate_words(plan, net))
        assert len(words) == count_words(plan, net)
        assert len(set(words)) == len(words)
        if net.size ** N * (q + 1) ** N <= 50_000:
            assert set(words) == brute_force_words(plan, net)

    @pytest.mark.parametrize("m", [1, 2])
    def test_every_word_respects_budget(self, m):
        instance = ProblemInstance(0.0, 1.0, np.zeros(m), 2.0, 1.0)
        for N in (1, 2, 3, 4):
            for q in (1, 2, 3):
                plan = DiscretizationPlan.direct(instance, beta=2.0, N=N, q=q, sigma=1.0)
                net = build_sigma_net(m, 1.0)
                for word in enumerate_words(plan, net):
                    assert word_lp_norm(word, plan) <= instance.r + 1e-12

    def test_zero_budget_single_word(self, line_net):
        instance = ProblemInstance(0.0, 1.0, np.zeros(1), 2.0, 0.0)
        plan = DiscretizationPlan.direct(instance, beta=1.0, N=3, q=2, sigma=1.0)
        assert list(enumerate_words(plan, line_net)) == [ControlWord((0, 0, 0), (0, 0, 0))]

    def test_only_zero_magnitude_fits(self, line_net, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=2.0, N=2, q=1, sigma=1.0)
        assert count_words(plan, line_net) == 1

    def test_cap(self, nine_word_plan, line_net):
        with pytest.raises(CapacityError) as info:
            list(enumerate_words(nine_word_plan, line_net, cap=5))
        assert info.value.details["found"] == 5
        assert info.value.details["lower_bound"] == 9

    def test_streaming_stops_early(self, line_net, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=4.0, N=12, q=8, sigma=1.0)
        first = list(itertools.islice(enumerate_words(plan, line_net), 3))
        assert len(first) == 3

    @pytest.mark.parametrize("N_factor", [1, 2])
    def test_halving_delta_keeps_every_control(self, unit_instance, line_net, N_factor):
        coarse = DiscretizationPlan.direct(unit_instance, beta=2.0, N=2, q=2, sigma=1.0)
        fine = DiscretizationPlan.direct(unit_instance, beta=2.0, N=2 * N_factor, q=4, sigma=1.0)
        fine_values = {tuple(word.values(fine, line_net).ravel()) for word in enumerate_words(fine, line_net)}
        for word in enumerate_words(coarse, line_net):
            values = np.repeat(word.values(coarse, line_net), N_factor, axis=0)
            assert tuple(values.ravel()) in fine_values
        assert len(fine_values) > count_words(coarse, line_net)


class TestPiecewiseControl:
    def test_norms_match_word(self, nine_word_plan, line_net):
        word = ControlWord((1, 1), (0, 1))
        control = PiecewiseControl.from_word(word, nine_word_plan, line_net)
        assert control.lp_norm(2.0) == pytest.approx(word_lp_norm(word, nine_word_plan))
        assert control.sup_norm() == 1.0
        np.testing.assert_array_equal(control(0.75), [-1.0])
        np.testing.assert_array_equal(control(1.0), [-1.0])

    def test_integral(self):
        control = PiecewiseControl(np.array([0.0, 1.0, 3.0]), np.array([[2.0], [-1.0]]))
        np.testing.assert_allclose(control.integral(0.5, 2.0), [0.0])
        np.testing.assert_allclose(control.integral(0.0, 3.0), [0.0])

    def test_invalid_grid(self):
        with pytest.raises(InputValidationError):
            PiecewiseControl(np.array([0.0, 0.0]), np.array([[1.0]]))


class TestAverageControl:
    def test_step_function_is_averaged_exactly(self, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=2.0, N=2, q=2, sigma=1.0)
        fine = PiecewiseControl(np.array([0.0, 0.25, 0.5, 0.75, 1.0]), np.array([[1.0], [0.0], [2.0], [-2.0]]))
        averaged = average_control(fine, plan)
        np.testing.assert_allclose(averaged.values, [[0.5], [0.0]])

    def test_callable_uses_quadrature(self, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=2.0, N=2, q=2, sigma=1.0)
        averaged = average_control(lambda t: np.array([t, 1.0 - t]), plan)
        np.testing.assert_allclose(averaged.values, [[0.25, 0.75], [0.75, 0.25]], atol=1e-14)

    def test_averaging_does_not_raise_the_norm(self, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=2.0, N=4, q=2, sigma=1.0)
        rng = np.random.default_rng(0)
        fine = PiecewiseControl(np.linspace(0.0, 1.0, 17), rng.uniform(-1.0, 1.0, (16, 1)))
        assert average_control(fine, plan).lp_norm(2.0) <= fine.lp_norm(2.0) + 1e-12

    def test_cap_violation(self, unit_instance):
        plan = DiscretizationPlan.direct(unit_instance, beta=2.0, N=2, q=2, sigma=1.0)
        with pytest.raises(InputValidationError, match="beta"):
            average_control(lambda t: np.array([5.0]), plan)
