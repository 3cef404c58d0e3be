"""
Tests for the two-car dynamics, the speed gate and the RK4 integrator
"""

import pytest
import numpy as np
import sys
import os
from hypothesis import given, settings, strategies as st

# Add project root to Python path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.controller import ControllerParams, State
from modules.dynamics import (
    AccelBounds,
    VehicleModel,
    clip_speeds,
    closed_loop_accel,
    closed_loop_rates,
    lambda_gate,
    rk4_step,
    vector_field,
)


class TestParameters:
    """AccelBounds and VehicleModel validation"""

    def test_default_bounds(self):
        """Symmetric 3 m/s^2 bounds by default"""
        bounds = AccelBounds()
        assert bounds.to_config() == {'u_min': -3.0, 'u_max': 3.0, 'd_min': -3.0, 'd_max': 3.0}

    @pytest.mark.parametrize('args', [
        (0.0, 3.0, -3.0, 3.0),
        (-3.0, -1.0, -3.0, 3.0),
        (-3.0, 3.0, 1.0, 3.0),
        (-3.0, 3.0, -3.0, 0.0),
    ])
    def test_bounds_must_straddle_zero(self, args):
        """Each interval must contain zero strictly inside"""
        with pytest.raises(ValueError):
            AccelBounds(*args)

    def test_tau_positive(self):
        """A zero time constant is refused"""
        with pytest.raises(ValueError):
            VehicleModel(tau=0.0)

    def test_from_intervals_widens(self):
        """Widening scales every endpoint away from zero"""
        wide = AccelBounds.from_intervals((-2.0, 1.0), (-4.0, 2.0), widen=0.05)
        assert wide.to_config() == pytest.approx({'u_min': -2.1, 'u_max': 1.05, 'd_min': -4.2, 'd_max': 2.1})

    def test_from_intervals_floor(self):
        """The floor keeps tiny intervals away from zero"""
        wide = AccelBounds.from_intervals((-1e-6, 1e-6), (-1e-6, 1e-6), widen=0.05, floor=1e-3)
        assert wide.u_min == -1e-3 and wide.d_max == 1e-3

    def test_from_intervals_one_sided(self):
        """An interval that never crosses zero gets the floor on the missing side"""
        bounds = AccelBounds.from_intervals((-1.0, -0.2), (0.0, 0.0), widen=0.1, floor=1e-3)
        assert bounds.to_config() == pytest.approx({'u_min': -1.1, 'u_max': 1e-3, 'd_min': -1e-3, 'd_max': 1e-3})

    def test_from_intervals_rejects_negative_widen(self):
        """Widening cannot shrink the bounds"""
        with pytest.raises(ValueError):
            AccelBounds.from_intervals((-1.0, 1.0), (-1.0, 1.0), widen=-0.1)


class TestLambdaGate:
    """Strict positivity gate"""

    @pytest.mark.parametrize('speed, expected', [(5.0, 1), (0.0, 0), (-2.0, 0)])
    def test_scalar(self, speed, expected):
        assert lambda_gate(speed) == expected

    def test_array(self):
        np.testing.assert_array_equal(lambda_gate(np.array([1.0, 0.0, -1.0])), [1.0, 0.0, 0.0])


class TestClosedLoopAccel:
    """Command speed through the first-order lag, clipped to the input bounds"""

    def test_zero_tracking_error(self, params, model, bounds):
        """Ego already at the command speed: no acceleration"""
        state = State(5.25, 0.0, 10.0)  # second knot, command equals lead speed
        assert closed_loop_accel(state, params, model, bounds) == pytest.approx(0.0)

    def test_hard_brake_clipped(self, params, model, bounds):
        """Stop command at 30 m/s saturates at u_min"""
        assert closed_loop_accel(State(2.0, 0.0, 30.0), params, model, bounds) == -3.0

    def test_inside_bounds(self, params, model, bounds):
        """Free flow at 29.5 m/s: (30 - 29.5) / 0.5 = 1"""
        assert closed_loop_accel(State(45.0, 0.0, 29.5), params, model, bounds) == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(x_rel=st.floats(0.0, 60.0), v_rel=st.floats(-15.0, 15.0), v_av=st.floats(0.0, 30.0))
    def test_always_within_bounds(self, x_rel, v_rel, v_av):
        """Clipping keeps the closed-loop input inside [u_min, u_max]"""
        bounds = AccelBounds(-2.0, 1.5, -3.0, 3.0)
        u = closed_loop_accel(State(x_rel, v_rel, v_av), ControllerParams(), VehicleModel(), bounds)
        assert bounds.u_min <= u <= bounds.u_max


class TestVectorField:
    """Gated three-state dynamics"""

    def test_both_at_rest(self):
        """Nothing moves when both cars are stopped"""
        np.testing.assert_array_equal(vector_field(State(10.0, 0.0, 0.0), 2.0, 0.0), [0.0, 0.0, 0.0])

    def test_both_moving(self):
        """Ungated rates when both cars are moving"""
        np.testing.assert_allclose(vector_field(State(20.0, -5.0, 15.0), -1.0, -2.0), [-5.0, -1.0, -1.0])

    def test_ego_stopped(self):
        """A stopped ego ignores its input"""
        np.testing.assert_allclose(vector_field(State(20.0, 5.0, 0.0), -1.0, 1.0), [5.0, 1.0, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(v_rel=st.floats(-10.0, 10.0), v_av=st.floats(0.1, 30.0),
           u=st.floats(-3.0, 3.0), d=st.floats(-3.0, 3.0))
    def test_linear_in_inputs(self, v_rel, v_av, u, d):
        """Inside a fixed gate regime the field is affine in (u, d)"""
        state = State(10.0, v_rel, v_av)
        base = vector_field(state, 0.0, 0.0)
        combined = vector_field(state, u, d)
        separate = vector_field(state, u, 0.0) + vector_field(state, 0.0, d) - base
        np.testing.assert_allclose(combined, separate, atol=1e-12)


class TestIntegration:
    """RK4 step and speed clipping"""

    def test_clip_speeds(self):
        """Ego speed floors at zero and lead speed follows"""
        v_rel, v_av = clip_speeds(np.array([-5.0, 2.0]), np.array([-0.5, 3.0]))
        np.testing.assert_array_equal(v_av, [0.0, 3.0])
        np.testing.assert_array_equal(v_rel, [0.0, 2.0])

    def test_constant_acceleration_exact(self):
        """RK4 reproduces uniform motion exactly"""
        rates = lambda x, v, w: (v, -1.0 + 0.0 * v, 1.0 + 0.0 * w)
        x, v, w = rk4_step(rates, np.array([10.0]), np.array([2.0]), np.array([5.0]), 0.5)
        assert x[0] == pytest.approx(10.0 + 2.0 * 0.5 - 0.5 * 0.25)
        assert v[0] == pytest.approx(1.5)
        assert w[0] == pytest.approx(5.5)

    @settings(max_examples=50, deadline=None)
    @given(x_rel=st.floats(1.0, 50.0), v_rel=st.floats(-15.0, 15.0), v_av=st.floats(0.0, 30.0),
           d=st.sampled_from([-3.0, 3.0]))
    def test_speeds_stay_non_negative(self, x_rel, v_rel, v_av, d, params, model, bounds):
        """Closed-loop integration never produces negative ego or lead speeds"""
        v_rel = max(v_rel, -v_av)
        rates = closed_loop_rates(params, model, bounds, d)
        x, v, w = np.array([x_rel]), np.array([v_rel]), np.array([v_av])
        for _ in range(100):
            x, v, w = rk4_step(rates, x, v, w, 0.05)
            assert w[0] >= 0.0
            assert v[0] + w[0] >= -1e-12


@pytest.fixture(scope='module')
def params():
    return ControllerParams()


@pytest.fixture(scope='module')
def model():
    return VehicleModel(tau=0.5)


@pytest.fixture(scope='module')
def bounds():
    return AccelBounds()


if __name__ == '__main__':
    # Run tests directly
    pytest.main([__file__, '-v'])
