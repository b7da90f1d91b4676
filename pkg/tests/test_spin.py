import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvsim.spin import (Axis, BornTable, EprState, PathSample, SpinOutcome, born_table,
                        ensemble_weight, make_epr_state, phase_integral, singlet_joint,
                        singlet_state, transition_probability)

R = 1 / math.sqrt(2)
angles = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)


# independent oracle: explicit two-qubit vectors in the z basis
def up_along(theta):
    return np.array([math.cos(theta / 2), math.sin(theta / 2)])


def down_along(theta):
    return np.array([-math.sin(theta / 2), math.cos(theta / 2)])


SINGLET_VEC = np.array([0, R, -R, 0])


def hilbert_joint(theta_a, theta_b):
    kets = {"p": up_along, "m": down_along}
    return [abs(np.kron(kets[x](theta_a), kets[y](theta_b)) @ SINGLET_VEC) ** 2
            for x, y in ("pp", "pm", "mp", "mm")]


class TestAxis:
    def test_normalizes_into_range(self):
        assert Axis(-math.pi / 2).theta == pytest.approx(3 * math.pi / 2)
        assert Axis(2 * math.pi).theta == 0.0
        assert Axis.from_degrees(480).degrees == pytest.approx(120)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Axis(float("nan"))

    @given(angles)
    def test_range_property(self, theta):
        a = Axis(theta)
        assert 0.0 <= a.theta < 2 * math.pi
        assert Axis(a.theta) == a


def test_spin_negation_is_involution():
    for s in SpinOutcome:
        assert -(-s) is s
        assert -s is not s
    assert int(SpinOutcome.UP) == 1 and int(SpinOutcome.DOWN) == -1


class TestStates:
    def test_singlet_amplitudes(self):
        s = singlet_state()
        assert s.amp_pm == pytest.approx(R)
        assert s.amp_mp == pytest.approx(-R)
        assert s.amp_pp == 0 and s.amp_mm == 0
        assert np.linalg.norm(s.as_array()) == pytest.approx(1.0, abs=1e-15)

    def test_singlet_equals_vartheta_zero(self):
        np.testing.assert_allclose(make_epr_state(0.0).as_array(), singlet_state().as_array(), atol=1e-12)

    def test_vartheta_pi(self):
        s = make_epr_state(math.pi)
        assert abs(s.amp_pp) ** 2 == pytest.approx(0.5, abs=1e-12)
        assert abs(s.amp_mm) ** 2 == pytest.approx(0.5, abs=1e-12)
        assert abs(s.amp_pm) == pytest.approx(0, abs=1e-12)
        assert abs(s.amp_mp) == pytest.approx(0, abs=1e-12)

    def test_vartheta_half_pi(self):
        np.testing.assert_allclose(np.abs(make_epr_state(math.pi / 2).as_array()) ** 2, 0.25, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            make_epr_state(float("inf"))

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            EprState(1, 1, 0, 0)

    @pytest.mark.parametrize("vartheta, expected", [
        (None, (0, 0.5, 0.5, 0)),
        (math.pi / 2, (0.25, 0.25, 0.25, 0.25)),
        (math.pi, (0.5, 0, 0, 0.5)),
    ])
    def test_born_tables(self, vartheta, expected):
        state = singlet_state() if vartheta is None else make_epr_state(vartheta)
        np.testing.assert_allclose(born_table(state).as_tuple(), expected, atol=1e-12)

    @given(angles)
    def test_epr_state_matches_singlet_with_rotated_b(self, vartheta):
        # the vartheta state's Born table is the singlet table at settings (0, vartheta)
        np.testing.assert_allclose(born_table(make_epr_state(vartheta)).as_tuple(),
                                   hilbert_joint(0.0, vartheta), atol=1e-12)


class TestSingletJoint:
    def test_same_axis(self):
        assert singlet_joint(0.7, 0.7).as_tuple() == (0.0, 0.5, 0.5, 0.0)

    def test_opposite_axes(self):
        np.testing.assert_allclose(singlet_joint(0, math.pi).as_tuple(), (0.5, 0, 0, 0.5), atol=1e-15)

    def test_120_degrees(self):
        assert singlet_joint(0, 2 * math.pi / 3).p_pp == pytest.approx(3 / 8, abs=1e-15)

    @settings(max_examples=200)
    @given(angles, angles)
    def test_matches_hilbert_space(self, a, b):
        np.testing.assert_allclose(singlet_joint(a, b).as_tuple(), hilbert_joint(a, b), atol=1e-12)

    def test_normalization_and_no_signaling_on_random_angles(self):
        rng = np.random.default_rng(1)
        for a, b in rng.uniform(-10, 10, size=(10_000, 2)):
            t = singlet_joint(a, b)
            assert abs(sum(t.as_tuple()) - 1) <= 1e-12
            assert abs(t.marginal_a() - 0.5) <= 1e-12
            assert abs(t.marginal_b() - 0.5) <= 1e-12

    def test_marginal_independent_of_remote_setting_on_grid(self):
        grid = np.linspace(0, 2 * math.pi, 49)
        for a in grid:
            for b in grid:
                assert abs(singlet_joint(a, b).p_pp + singlet_joint(a, b).p_pm - 0.5) <= 1e-12


def test_born_table_validation():
    with pytest.raises(ValueError):
        BornTable(0.5, 0.5, 0.5, 0.0)
    with pytest.raises(ValueError):
        BornTable(1.5, -0.5, 0.0, 0.0)


class TestTransition:
    def test_values(self):
        assert transition_probability(SpinOutcome.UP, 0.0) == 1.0
        assert transition_probability(SpinOutcome.UP, math.pi / 2) == pytest.approx(0.5)
        assert transition_probability(SpinOutcome.DOWN, math.pi) == 1.0

    def test_deterministic_settings(self):
        for prepared in SpinOutcome:
            for theta in (0.0, math.pi):
                assert transition_probability(prepared, theta) in (0.0, 1.0)

    def test_sums_to_one_on_grid(self):
        for theta in np.linspace(-7, 7, 1001):
            total = transition_probability(SpinOutcome.UP, theta) + transition_probability(SpinOutcome.DOWN, theta)
            assert abs(total - 1) <= 1e-12

    @given(angles)
    def test_matches_overlap(self, theta):
        up_z, down_z = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert transition_probability(SpinOutcome.UP, theta) == pytest.approx((up_along(theta) @ up_z) ** 2, abs=1e-12)
        assert transition_probability(SpinOutcome.DOWN, theta) == pytest.approx((up_along(theta) @ down_z) ** 2, abs=1e-12)


class TestEnsembleWeight:
    @pytest.mark.parametrize("args, expected", [((1, 1, 2), 0.5), ((1, 3, 4), 0.75), ((2, 1, 2), 0.25)])
    def test_examples(self, args, expected):
        assert ensemble_weight(*args) == expected

    @pytest.mark.parametrize("args", [(0, 1, 2), (-1, 1, 2), (1, 1, 0), (1, 3, 2), (1, -1, 2)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            ensemble_weight(*args)


def zero_beta(t):
    return 0.0


class TestPhaseIntegral:
    def test_constant_velocity(self):
        m, hbar, v0, length = 2.5, 0.7, 1.3, 4.0
        path = PathSample.straight([0.0, 0.0, 0.0], [length, 0.0, 0.0], 0.0, length / v0, 1000, m, hbar)
        phase = phase_integral(path, lambda x, t: [v0, 0.0, 0.0], zero_beta)
        assert phase == pytest.approx(m * v0 * length / hbar, rel=1e-9)

    def test_constant_beta(self):
        m, hbar, c, T = 1.5, 0.5, 0.8, 3.0
        path = PathSample.straight([0.0], [0.0], 0.0, T, 100, m, hbar)
        phase = phase_integral(path, lambda x, t: [0.0], lambda t: c)
        assert phase == pytest.approx(-m * c * T / hbar, rel=1e-12)

    def test_linear_field_1d(self):
        m, hbar, k, length = 1.0, 1.0, 0.6, 2.0
        path = PathSample.straight([0.0], [length], 0.0, 1.0, 10_000, m, hbar)
        phase = phase_integral(path, lambda x, t: k * x, zero_beta)
        assert phase == pytest.approx(m * k * length ** 2 / (2 * hbar), rel=1e-6)

    def test_rejects_degenerate_path(self):
        with pytest.raises(ValueError):
            PathSample(np.zeros((1, 3)), np.zeros(1))
        with pytest.raises(ValueError):
            PathSample(np.zeros((3, 1)), np.array([0.0, 1.0, 1.0]))

    def test_rejects_non_finite_field(self):
        path = PathSample.straight([0.0], [1.0], 0.0, 1.0, 10)
        with pytest.raises(ValueError):
            phase_integral(path, lambda x, t: [math.inf], zero_beta)

    @pytest.mark.parametrize("field, beta, exact", [
        # cos field along [0, 2]: integral sin(2)
        (lambda x, t: np.cos(x), zero_beta, math.sin(2.0)),
        # zero field, beta(t) = t^2 over [0, 2]: -8/3
        (lambda x, t: [0.0], lambda t: t * t, -8.0 / 3.0),
    ])
    def test_step_halving_reduces_error(self, field, beta, exact):
        errors = []
        for steps in (100, 200, 400):
            path = PathSample.straight([0.0], [2.0], 0.0, 2.0, steps)
            errors.append(abs(phase_integral(path, field, beta) - exact))
        assert errors[0] / errors[1] >= 3
        assert errors[1] / errors[2] >= 3
