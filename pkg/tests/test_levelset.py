"""
Tests for the level-set solver, value-field queries, slicing and contours
Solver tests run on coarse grids; full-size runs live in test_acceptance.py
"""

import math
import pytest
import numpy as np
import sys
import os

# Add project root to Python path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.contours import marching_squares
from modules.controller import ControllerParams, State
from modules.dynamics import AccelBounds, VehicleModel, closed_loop_accel, vector_field
from modules.levelset import (
    CriterionKind,
    GridSpec,
    SafetyCriterion,
    SafetyVerdict,
    ValueField,
    dissipation_bounds,
    extract_slice,
    hamiltonian,
    initial_payoff,
    is_safe,
    safe_set_difference,
    slice_hausdorff,
    solve,
    worst_case_disturbance,
)
from modules.simulator import brute_force_worst_payoff, worst_case_replay

HEADWAY = SafetyCriterion(CriterionKind.TIME_HEADWAY, h=0.4)
DISTANCE = SafetyCriterion(CriterionKind.DISTANCE)


class TestGridSpec:
    """Grid construction and geometry"""

    def test_default_domain(self):
        """Default bounds and spacing of the 51^3 grid"""
        grid = GridSpec()
        assert grid.lower == (0.0, -15.0, 0.0)
        assert grid.upper == (50.0, 15.0, 30.0)
        np.testing.assert_allclose(grid.spacing, [1.0, 0.6, 0.6])

    @pytest.mark.parametrize('kwargs', [
        {'lower': (10.0, -15.0, 0.0), 'upper': (5.0, 15.0, 30.0)},
        {'shape': (2, 51, 51)},
        {'shape': (51, 51)},
    ])
    def test_invalid_grid(self, kwargs):
        """Bad grid bounds or shapes fail at construction"""
        with pytest.raises(ValueError):
            GridSpec(**kwargs)

    def test_contains(self):
        grid = GridSpec()
        inside = grid.contains([[0.0, -15.0, 0.0], [50.0, 15.0, 30.0], [50.1, 0.0, 0.0], [10.0, 0.0, -0.5]])
        assert inside.tolist() == [True, True, False, False]

    def test_config_round_trip(self):
        """to_config output rebuilds the same grid"""
        grid = GridSpec(lower=(0, -10, 0), upper=(40, 10, 20), shape=(21, 11, 11))
        assert GridSpec.from_config(grid.to_config()) == grid


class TestPayoff:
    """Initial payoff l(z) for both criteria"""

    def test_distance_payoff(self, node_grid):
        """Distance payoff is x_rel itself"""
        field = initial_payoff(node_grid, DISTANCE)
        assert field.values[2, 3, 4] == pytest.approx(10.0)   # x_rel = 10

    def test_headway_boundary(self, node_grid):
        """Exactly at the headway gap the payoff is zero"""
        field = initial_payoff(node_grid, HEADWAY)
        assert field.values[2, 3, 5] == pytest.approx(0.0)    # (10, ., 25)

    def test_headway_inside_target(self, node_grid):
        """Closer than the headway gives a negative payoff"""
        field = initial_payoff(node_grid, HEADWAY)
        assert field.values[1, 3, 4] == pytest.approx(-3.0)   # (5, ., 20)

    def test_headway_requires_positive_h(self):
        """The headway criterion needs h > 0"""
        with pytest.raises(ValueError):
            SafetyCriterion('headway', h=0.0)


class TestHamiltonian:
    """Pointwise Hamiltonian with worst-case lead acceleration"""

    @pytest.mark.parametrize('p_vrel, expected', [(1.0, -3.0), (-1.0, 3.0)])
    def test_worst_case_disturbance(self, p_vrel, expected):
        """The lead brakes when p_v is positive and accelerates otherwise"""
        assert worst_case_disturbance(p_vrel, State(20.0, 0.0, 10.0), AccelBounds()) == expected

    def test_disturbance_irrelevant_when_lead_stopped(self):
        """Either endpoint is fine; the Hamiltonian contribution vanishes"""
        state = State(20.0, -10.0, 10.0)
        d = worst_case_disturbance(1.0, state, AccelBounds())
        assert d in (-3.0, 3.0)

    def test_zero_costate(self, defaults):
        """Zero costate, zero Hamiltonian"""
        assert hamiltonian(State(20.0, -5.0, 15.0), (0.0, 0.0, 0.0), *defaults) == 0.0

    def test_rest_state(self, defaults):
        """Every rate vanishes at rest"""
        assert hamiltonian(State(10.0, 0.0, 0.0), (1.3, -0.7, 2.1), *defaults) == 0.0

    def test_spot_value(self, defaults):
        """Closing at 5 m/s in the blend zone: u clips to -3, lead brakes at -3"""
        assert hamiltonian(State(20.0, -5.0, 15.0), (1.0, 1.0, 0.0), *defaults) == pytest.approx(-5.0)

    def test_dissipation_bounds_non_negative(self, small_grid, defaults):
        """Rate bounds are magnitudes on every axis"""
        for alpha in dissipation_bounds(small_grid, *defaults):
            assert alpha.shape == small_grid.shape
            assert (alpha >= 0).all()

    @pytest.mark.parametrize('criterion', [DISTANCE, HEADWAY], ids=['distance', 'headway'])
    def test_matches_directional_derivative_of_payoff(self, node_grid, defaults, criterion):
        """H(z, grad l) equals the central difference of l along the worst-case flow"""
        params, model, bounds = defaults
        holder = ValueField(node_grid, np.ones(node_grid.shape), criterion=criterion)
        replay = worst_case_replay(holder, State(30.0, -2.0, 15.0), params, model, bounds)
        starts = [State(20.0, -5.0, 15.0), State(12.0, -1.0, 8.0), State(40.0, -8.0, 25.0)]
        starts += [State(row.x_rel, row.v_rel, row.v_av) for row in replay.series.iloc[::40].itertuples()]

        h = criterion.h if criterion.kind is CriterionKind.TIME_HEADWAY else 0.0
        grad = np.array([1.0, 0.0, -h])
        eps = 1e-4
        for state in starts:
            d = worst_case_disturbance(grad[1], state, bounds)
            flow = vector_field(state, closed_loop_accel(state, params, model, bounds), d)
            z = state.as_array()
            ahead = float(criterion.payoff((z + eps * flow)[0], (z + eps * flow)[2]))
            behind = float(criterion.payoff((z - eps * flow)[0], (z - eps * flow)[2]))
            central = (ahead - behind) / (2 * eps)
            assert hamiltonian(state, grad, params, model, bounds) == pytest.approx(central, abs=1e-6)

    @pytest.mark.parametrize('costate', [(1.0, 0.5, -0.2), (0.3, -1.0, 0.4), (0.0, 2.0, 1.0)])
    def test_lead_minimises_over_endpoints(self, defaults, costate):
        """The chosen disturbance gives the smaller of the two bang-bang Hamiltonians"""
        params, model, bounds = defaults
        for state in (State(20.0, -5.0, 15.0), State(30.0, 2.0, 10.0), State(8.0, 0.0, 4.0)):
            u = closed_loop_accel(state, params, model, bounds)
            candidates = [float(np.dot(costate, vector_field(state, u, d))) for d in (bounds.d_min, bounds.d_max)]
            assert hamiltonian(state, costate, params, model, bounds) == pytest.approx(min(candidates))


class TestValueFieldQueries:
    """Interpolation, classification and boundary proximity"""

    def test_node_value_exact(self, node_grid):
        """A query on a node returns the node value"""
        values = np.full(node_grid.shape, 3.2)
        field = ValueField(node_grid, values)
        assert is_safe(field, State(10.0, 0.0, 5.0)) is SafetyVerdict.SAFE
        assert field.interpolate([[10.0, 0.0, 5.0]])[0] == pytest.approx(3.2)

    def test_negative_value_unsafe(self, node_grid):
        """Negative values classify as unsafe"""
        field = ValueField(node_grid, np.full(node_grid.shape, -0.1))
        assert is_safe(field, State(10.0, 0.0, 5.0)) is SafetyVerdict.UNSAFE

    def test_midpoint_interpolation(self, node_grid):
        """Halfway between nodes valued 1 and 3 gives 2"""
        values = np.ones(node_grid.shape)
        values[3:] = 3.0   # x_rel >= 15
        field = ValueField(node_grid, values)
        assert field.interpolate([[12.5, 0.0, 5.0]])[0] == pytest.approx(2.0)
        assert is_safe(field, State(12.5, 0.0, 5.0), margin=1.9) is SafetyVerdict.SAFE
        assert is_safe(field, State(12.5, 0.0, 5.0), margin=2.5) is SafetyVerdict.UNSAFE

    def test_out_of_domain(self, node_grid):
        """Queries outside the grid are neither safe nor unsafe"""
        field = ValueField(node_grid, np.ones(node_grid.shape))
        assert is_safe(field, State(60.0, 0.0, 5.0)) is SafetyVerdict.OUT_OF_DOMAIN
        assert math.isnan(field.interpolate([[0.0, 20.0, 0.0]])[0])

    def test_shape_mismatch(self, node_grid):
        """Values must have the grid's shape"""
        with pytest.raises(ValueError):
            ValueField(node_grid, np.ones((3, 3, 3)))

    def test_near_boundary(self, node_grid):
        """Flags only samples within one cell of the zero level"""
        x_rel, _, _ = node_grid.mesh()
        field = ValueField(node_grid, x_rel - 22.0)
        flags = field.near_boundary([[21.0, 0.0, 5.0], [45.0, 0.0, 5.0], [2.0, 0.0, 5.0]], cells=1)
        assert flags.tolist() == [True, False, False]


class TestSolve:
    """Solver invariants on a coarse grid"""

    def test_monotone_descent_every_sweep(self, small_grid, defaults):
        """No sweep raises any node value"""
        violations = []

        def check(iteration, old, new):
            if not (new <= old).all():
                violations.append(iteration)

        solve(small_grid, DISTANCE, *defaults, t_max=10.0, sweep_callback=check)
        assert violations == []

    def test_target_containment(self, small_distance_field):
        """The safe set stays inside the target set"""
        payoff = initial_payoff(small_distance_field.grid, DISTANCE).values
        assert (small_distance_field.values <= payoff).all()
        assert (small_distance_field.values[payoff <= 0] <= 0).all()

    def test_criterion_ordering(self, small_distance_field, small_headway_field):
        """Headway safe set lies inside the distance safe set"""
        assert (small_headway_field.values <= small_distance_field.values).all()

    def test_far_gap_at_rest_is_safe(self, small_distance_field):
        """Both cars stopped 49 m apart stays safe"""
        assert is_safe(small_distance_field, State(49.0, 0.0, 0.0)) is SafetyVerdict.SAFE

    def test_close_fast_approach_is_unsafe(self, small_distance_field):
        """Closing at 15 m/s from 5 m cannot be stopped with 3 m/s^2"""
        assert is_safe(small_distance_field, State(5.0, -15.0, 15.0)) is SafetyVerdict.UNSAFE

    def test_safe_set_monotone_in_gap(self, small_distance_field):
        """Along x_rel, once safe stays safe (one-cell tolerance)"""
        grid = small_distance_field.grid
        _, v_rel, v_av = grid.mesh()
        safe = small_distance_field.values > 0
        physical = (v_rel + v_av) >= 0
        nx = grid.shape[0]
        for j in range(grid.shape[1]):
            for k in range(grid.shape[2]):
                if not physical[0, j, k]:
                    continue
                column = safe[:, j, k]
                for i in range(nx):
                    if column[i]:
                        assert column[min(i + 2, nx - 1):].all()
                        break

    def test_thread_count_does_not_change_result(self, small_grid, defaults):
        """Threads split the sweep without changing a bit of the result"""
        single = solve(small_grid, HEADWAY, *defaults, t_max=5.0)
        threaded = solve(small_grid, HEADWAY, *defaults, t_max=5.0, threads=3)
        assert np.array_equal(single.values, threaded.values)
        assert single.iterations == threaded.iterations

    def test_unconverged_flag(self, small_grid, defaults):
        """Hitting t_max before tol leaves converged False"""
        field = solve(small_grid, DISTANCE, *defaults, tol=1e-12, t_max=0.2)
        assert not field.converged
        assert field.horizon == pytest.approx(0.2)
        assert field.iterations >= 1

    def test_metadata_and_callbacks(self, small_grid, defaults):
        """Progress and status callbacks fire and metadata is filled in"""
        progress, status = [], []
        field = solve(small_grid, DISTANCE, *defaults, t_max=1.0,
                      progress_callback=lambda done, total: progress.append((done, total)),
                      status_callback=status.append)
        assert field.metadata['cfl'] == 0.5
        assert field.metadata['param.variant'] == 'original'
        assert progress[-1][0] == pytest.approx(1.0)
        assert len(status) == 2

    @pytest.mark.parametrize('kwargs', [{'tol': 0.0}, {'t_max': -1.0}, {'cfl': 1.5}])
    def test_invalid_settings(self, small_grid, defaults, kwargs):
        """Non-positive solver settings are rejected"""
        with pytest.raises(ValueError):
            solve(small_grid, DISTANCE, *defaults, **kwargs)

    def test_values_finite(self, small_headway_field):
        """No node blows up"""
        assert np.isfinite(small_headway_field.values).all()

    def test_converges_within_default_horizon(self, small_distance_field, small_headway_field):
        """Both criteria settle well before the pseudo-time cap"""
        for field in (small_distance_field, small_headway_field):
            assert field.converged
            assert field.residual < 1e-3
            assert field.horizon < 60.0

    def test_values_bounded_by_lowest_payoff(self, small_distance_field, small_headway_field):
        """Every update averages existing values, so nothing drops below min l, even at the faces"""
        for field in (small_distance_field, small_headway_field):
            payoff = initial_payoff(field.grid, field.criterion).values
            assert field.values.min() >= payoff.min()

    def test_verdicts_match_brute_force_on_clear_states(self, defaults):
        """Where the bang-bang search is decisive by several metres, the field agrees with it"""
        grid = GridSpec(shape=(26, 21, 21))
        field = solve(grid, DISTANCE, *defaults, t_max=120.0)
        assert field.converged

        # stopped ego behind a stopped or receding lead; then three fast approaches
        states = np.array([[45.0, 0.0, 0.0], [30.0, 3.0, 0.0],
                           [5.0, -10.5, 15.0], [12.0, -12.0, 24.0], [2.0, -6.0, 12.0]])
        worst = brute_force_worst_payoff(states, DISTANCE, *defaults, horizon=15.0, dt=0.01)
        assert (np.abs(worst) > 5.0).all()
        predicted_safe = field.interpolate(states) > 0.0
        assert predicted_safe.tolist() == (worst > 0.0).tolist()
        assert predicted_safe.tolist() == [True, True, False, False, False]


class TestSlices:
    """Zero-level slices of value fields"""

    def test_vertical_line(self, node_grid):
        """A field linear in x_rel slices to one vertical line"""
        x_rel, _, _ = node_grid.mesh()
        field = ValueField(node_grid, x_rel - 22.0)
        polylines = extract_slice(field, 10.0)
        assert len(polylines) == 1
        np.testing.assert_allclose(polylines[0][:, 0], 22.0)
        assert sorted(polylines[0][[0, -1], 1].tolist()) == [-15.0, 15.0]

    def test_interpolates_between_speed_nodes(self, node_grid):
        """Slices between speed nodes interpolate along v_AV"""
        x_rel, _, v_av = node_grid.mesh()
        field = ValueField(node_grid, x_rel - v_av)
        polylines = extract_slice(field, 12.5)
        np.testing.assert_allclose(polylines[0][:, 0], 12.5)

    def test_all_safe_slice_is_empty(self, node_grid):
        """An all-safe slice has no contour"""
        field = ValueField(node_grid, np.ones(node_grid.shape))
        assert extract_slice(field, 5.0) == []

    def test_speed_outside_grid(self, node_grid):
        """Speeds above the grid cannot be sliced"""
        field = ValueField(node_grid, np.ones(node_grid.shape))
        with pytest.raises(ValueError):
            extract_slice(field, 31.0)

    def test_hausdorff(self):
        """Distance between two parallel segments"""
        a = [np.array([[0.0, 0.0], [1.0, 0.0]])]
        b = [np.array([[0.0, 0.5], [1.0, 0.5]])]
        assert slice_hausdorff(a, b) == pytest.approx(0.5)
        assert slice_hausdorff([], []) == 0.0
        assert slice_hausdorff(a, []) == math.inf


class TestSafeSetDifference:
    """States unsafe in one field and safe in another"""

    def test_difference_region(self, node_grid):
        """Difference states satisfy the gap and speed filters"""
        x_rel, _, v_av = node_grid.mesh()
        unsafe_in = ValueField(node_grid, x_rel - 0.4 * v_av - 10.0)
        safe_in = ValueField(node_grid, x_rel - 10.0)
        states = safe_set_difference(unsafe_in, safe_in, min_x_rel=5.0, min_v_av=10.0)
        assert len(states) > 0
        assert (states[:, 0] >= 5.0).all() and (states[:, 2] >= 10.0).all()
        assert (states[:, 1] + states[:, 2] >= 0).all()

    def test_grids_must_match(self, node_grid, small_grid):
        """Fields on different grids cannot be compared"""
        with pytest.raises(ValueError):
            safe_set_difference(ValueField(node_grid, np.ones(node_grid.shape)),
                                ValueField(small_grid, np.ones(small_grid.shape)))


class TestMarchingSquares:
    """Contour extraction on analytic fields"""

    def test_circle_is_closed(self):
        """A circle comes back as one closed loop"""
        axis = np.linspace(-2.0, 2.0, 41)
        xs, ys = np.meshgrid(axis, axis, indexing='ij')
        loops = marching_squares(xs ** 2 + ys ** 2 - 1.0, axis, axis)
        assert len(loops) == 1
        np.testing.assert_allclose(loops[0][0], loops[0][-1])
        radii = np.hypot(loops[0][:, 0], loops[0][:, 1])
        assert np.abs(radii - 1.0).max() < 0.02

    def test_two_separate_lines(self):
        """Two level lines stay separate"""
        axis = np.linspace(0.0, 10.0, 11)
        xs, _ = np.meshgrid(axis, axis, indexing='ij')
        lines = marching_squares(np.abs(xs - 5.0) - 2.5, axis, axis)
        assert len(lines) == 2
        assert sorted(round(float(line[0, 0]), 6) for line in lines) == [2.5, 7.5]

    def test_saddle_cell(self):
        """A saddle cell gives two segments"""
        values = np.array([[1.0, -1.0], [-1.0, 1.0]])
        lines = marching_squares(values, np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        assert len(lines) == 2
        assert all(len(line) == 2 for line in lines)


@pytest.fixture(scope='module')
def defaults():
    return ControllerParams(), VehicleModel(), AccelBounds()


@pytest.fixture(scope='module')
def node_grid():
    """5 m x 5 m/s x 5 m/s nodes over the default domain"""
    return GridSpec(lower=(0.0, -15.0, 0.0), upper=(50.0, 15.0, 30.0), shape=(11, 7, 7))


@pytest.fixture(scope='module')
def small_grid():
    return GridSpec(lower=(0.0, -15.0, 0.0), upper=(50.0, 15.0, 30.0), shape=(21, 11, 11))


@pytest.fixture(scope='module')
def small_distance_field(small_grid, defaults):
    return solve(small_grid, DISTANCE, *defaults, t_max=120.0)


@pytest.fixture(scope='module')
def small_headway_field(small_grid, defaults):
    return solve(small_grid, HEADWAY, *defaults, t_max=120.0)


if __name__ == '__main__':
    # Run tests directly
    pytest.main([__file__, '-v'])
