"""
Level-set reachability for the closed-loop car-following system
Solves the frozen (min{0, .}) Hamilton-Jacobi-Isaacs equation on a rectilinear
3-D grid with first-order upwind differences (the worst lead acceleration is
picked per upwinded candidate), then answers safety queries on the resulting field
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial.distance import directed_hausdorff

from modules.contours import marching_squares
from modules.controller import ControllerParams, State
from modules.dynamics import (
    AccelBounds,
    VehicleModel,
    closed_loop_accel,
    closed_loop_accel_array,
    lambda_gate,
    vector_field,
)

logger = logging.getLogger(__name__)

AXIS_NAMES = ('x_rel', 'v_rel', 'v_av')


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectilinear grid over (x_rel, v_rel, v_AV)"""

    lower: Tuple[float, float, float] = (0.0, -15.0, 0.0)
    upper: Tuple[float, float, float] = (50.0, 15.0, 30.0)
    shape: Tuple[int, int, int] = (51, 51, 51)

    def __post_init__(self):
        object.__setattr__(self, 'lower', tuple(float(v) for v in self.lower))
        object.__setattr__(self, 'upper', tuple(float(v) for v in self.upper))
        object.__setattr__(self, 'shape', tuple(int(n) for n in self.shape))
        if not (len(self.lower) == len(self.upper) == len(self.shape) == 3):
            raise ValueError("grid needs bounds and node counts for exactly three axes")
        for name, lo, hi, n in zip(AXIS_NAMES, self.lower, self.upper, self.shape):
            if not lo < hi:
                raise ValueError(f"grid axis {name}: lower bound {lo} must be below upper bound {hi}")
            if n < 3:
                raise ValueError(f"grid axis {name}: need at least 3 nodes, got {n}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'GridSpec':
        return cls(
            lower=(config['x_rel_min'], config['v_rel_min'], config['v_av_min']),
            upper=(config['x_rel_max'], config['v_rel_max'], config['v_av_max']),
            shape=(config['nx'], config['nv'], config['nw']),
        )

    def to_config(self) -> Dict[str, Any]:
        return {
            'x_rel_min': self.lower[0], 'x_rel_max': self.upper[0],
            'v_rel_min': self.lower[1], 'v_rel_max': self.upper[1],
            'v_av_min': self.lower[2], 'v_av_max': self.upper[2],
            'nx': self.shape[0], 'nv': self.shape[1], 'nw': self.shape[2],
        }

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for lo, hi, n in zip(self.lower, self.upper, self.shape)])

    def mesh(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(*self.axes, indexing='ij')

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tol = 1e-9 * self.spacing
        lower = np.array(self.lower) - tol
        upper = np.array(self.upper) + tol
        return np.all((pts >= lower) & (pts <= upper), axis=1)


class CriterionKind(str, Enum):
    DISTANCE = 'distance'
    TIME_HEADWAY = 'headway'


@dataclass(frozen=True)
class SafetyCriterion:
    kind: CriterionKind = CriterionKind.DISTANCE
    h: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, 'kind', CriterionKind(self.kind))
        object.__setattr__(self, 'h', float(self.h))
        if self.kind is CriterionKind.TIME_HEADWAY and self.h <= 0:
            raise ValueError(f"time-headway criterion needs h > 0, got {self.h}")

    def payoff(self, x_rel, v_av):
        """l(z): negative inside the target set"""
        if self.kind is CriterionKind.TIME_HEADWAY:
            return np.asarray(x_rel, dtype=float) - self.h * np.asarray(v_av, dtype=float)
        return np.asarray(x_rel, dtype=float) + 0.0 * np.asarray(v_av, dtype=float)

    def describe(self) -> str:
        if self.kind is CriterionKind.TIME_HEADWAY:
            return f"headway(h={self.h!r})"
        return "distance"


class SafetyVerdict(str, Enum):
    SAFE = 'safe'
    UNSAFE = 'unsafe'
    OUT_OF_DOMAIN = 'out_of_domain'


@dataclass
class ValueField:
    """Value function sampled on a grid; V <= 0 is the unsafe (reachable) set"""

    grid: GridSpec
    values: np.ndarray
    criterion: SafetyCriterion = field(default_factory=SafetyCriterion)
    iterations: int = 0
    converged: bool = False
    residual: float = math.inf
    horizon: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.grid.axes, self.values, method='linear',
                                       bounds_error=False, fill_value=np.nan)

    def interpolate(self, points) -> np.ndarray:
        """Trilinear values at (n, 3) points; NaN outside the grid"""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.grid.contains(pts)
        result = np.full(len(pts), np.nan)
        if inside.any():
            clipped = np.clip(pts[inside], self.grid.lower, self.grid.upper)
            result[inside] = self._interpolator(clipped)
        return result

    def near_boundary(self, points, cells: int = 1) -> np.ndarray:
        """True where the enclosing cell, grown by `cells` nodes per side, straddles V = 0"""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lower = np.array(self.grid.lower)
        spacing = self.grid.spacing
        shape = np.array(self.grid.shape)
        flags = np.zeros(len(pts), dtype=bool)
        for n, p in enumerate(pts):
            base = np.clip(np.floor((p - lower) / spacing).astype(int), 0, shape - 2)
            lo = np.maximum(base - cells, 0)
            hi = np.minimum(base + 1 + cells, shape - 1)
            block = self.values[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
            flags[n] = bool(block.min() <= 0.0 < block.max())
        return flags

    def classify(self, points, margin: float = 0.0) -> List[SafetyVerdict]:
        values = self.interpolate(points)
        verdicts = []
        for value in values:
            if np.isnan(value):
                verdicts.append(SafetyVerdict.OUT_OF_DOMAIN)
            elif value > margin:
                verdicts.append(SafetyVerdict.SAFE)
            else:
                verdicts.append(SafetyVerdict.UNSAFE)
        return verdicts


def initial_payoff(grid: GridSpec, criterion: SafetyCriterion) -> ValueField:
    """Field holding l(z) at every node"""
    x_rel, _, v_av = grid.mesh()
    values = criterion.payoff(x_rel, v_av)
    return ValueField(grid=grid, values=values, criterion=criterion, converged=False, residual=math.inf)


def worst_case_disturbance(p_vrel: float, state: State, bounds: AccelBounds) -> float:
    """Bang-bang lead acceleration minimising p_vrel * lambda(v_lead) * d"""
    coefficient = p_vrel * lambda_gate(state.v_lead)
    return bounds.d_min if coefficient > 0 else bounds.d_max


def hamiltonian(state: State, costate: Sequence[float], params: ControllerParams,
                model: VehicleModel, bounds: AccelBounds) -> float:
    """H(z, p) with u pinned to the closed-loop law and d at its worst case"""
    p = np.asarray(costate, dtype=float)
    u = closed_loop_accel(state, params, model, bounds)
    d = worst_case_disturbance(p[1], state, bounds)
    return float(np.dot(p, vector_field(state, u, d)))


@dataclass
class _NodeDynamics:
    """Per-node quantities that do not change between sweeps"""

    x_rate: np.ndarray
    lead_gate: np.ndarray
    ego_accel: np.ndarray
    dissipation: Tuple[np.ndarray, np.ndarray, np.ndarray]
    physical: np.ndarray


def _node_dynamics(grid: GridSpec, params: ControllerParams, model: VehicleModel,
                   bounds: AccelBounds) -> _NodeDynamics:
    x_rel, v_rel, v_av = grid.mesh()
    lead_gate = np.where(v_rel + v_av > 0.0, 1.0, 0.0)
    ego_gate = np.where(v_av > 0.0, 1.0, 0.0)
    ego_accel = ego_gate * closed_loop_accel_array(params, model, bounds, x_rel, v_rel, v_av)
    alpha_x = np.abs(v_rel)
    alpha_v = np.maximum(np.abs(lead_gate * bounds.d_min - ego_accel),
                         np.abs(lead_gate * bounds.d_max - ego_accel))
    alpha_w = np.abs(ego_accel)
    return _NodeDynamics(
        x_rate=v_rel,
        lead_gate=lead_gate,
        ego_accel=ego_accel,
        dissipation=(alpha_x, alpha_v, alpha_w),
        physical=(v_rel + v_av) >= 0.0,
    )


def dissipation_bounds(grid: GridSpec, params: ControllerParams, model: VehicleModel,
                       bounds: AccelBounds) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-node max |dH/dp_i| over the disturbance box"""
    return _node_dynamics(grid, params, model, bounds).dissipation


def _one_sided_differences(values: np.ndarray, axis: int, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """Backward and forward differences; ghost nodes copy the face (zero gradient)"""
    v = np.moveaxis(values, axis, 0)
    padded = np.concatenate([v[:1], v, v[-1:]], axis=0)
    diffs = np.diff(padded, axis=0) / step
    return np.moveaxis(diffs[:-1], 0, axis), np.moveaxis(diffs[1:], 0, axis)


def _upwind(rate: np.ndarray, backward: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """rate * dV taken from the side the flow points to"""
    return np.maximum(rate, 0.0) * forward + np.minimum(rate, 0.0) * backward


def _upwind_hamiltonian(nodes: _NodeDynamics, backward, forward, bounds: AccelBounds, sl: tuple) -> np.ndarray:
    """
    Numerical Hamiltonian: every axis upwinded by the sign of its rate, for
    each bang-bang lead acceleration, then the smaller of the two

    Only the v_rel rate depends on d, so the x_rel and v_AV terms are shared.
    """
    ego_accel = nodes.ego_accel[sl]
    lead_gate = nodes.lead_gate[sl]
    shared = (_upwind(nodes.x_rate[sl], backward[0][sl], forward[0][sl])
              + _upwind(ego_accel, backward[2][sl], forward[2][sl]))
    braking = _upwind(lead_gate * bounds.d_min - ego_accel, backward[1][sl], forward[1][sl])
    pulling = _upwind(lead_gate * bounds.d_max - ego_accel, backward[1][sl], forward[1][sl])
    return shared + np.minimum(braking, pulling)


def _project_unphysical(values: np.ndarray, grid: GridSpec, nodes: _NodeDynamics) -> None:
    """Nodes with negative lead speed copy the first physical node along v_rel"""
    for k in range(grid.shape[2]):
        mask = ~nodes.physical[0, :, k]
        if not mask.any():
            continue
        first = int(np.argmax(~mask))
        values[:, mask, k] = values[:, first, k][:, None]


def solve(grid: GridSpec, criterion: SafetyCriterion, params: ControllerParams, model: VehicleModel,
          bounds: AccelBounds, tol: float = 1e-3, t_max: float = 60.0, cfl: float = 0.5,
          threads: int = 1,
          progress_callback: Optional[Callable[[float, float], None]] = None,
          status_callback: Optional[Callable[[str], None]] = None,
          sweep_callback: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None) -> ValueField:
    """
    Iterate V <- V + dt * min{0, H_up} backward in pseudo-time

    The upwind update is monotone for cfl <= 1: each new value is a
    non-negative combination of the node and its downstream neighbours.
    Stops when one sweep changes no node by more than `tol` (converged) or the
    accumulated horizon reaches `t_max` (returned with converged=False).
    """
    if tol <= 0 or t_max <= 0 or not (0 < cfl <= 1):
        raise ValueError(f"invalid solver settings tol={tol}, t_max={t_max}, cfl={cfl}")
    params.check_domain((grid.lower[1], grid.upper[1]), (grid.lower[2], grid.upper[2]))

    nodes = _node_dynamics(grid, params, model, bounds)
    spacing = grid.spacing
    rate = sum(nodes.dissipation[i][nodes.physical] / spacing[i] for i in range(3))
    peak = float(rate.max()) if rate.size else 0.0
    dt = cfl / peak if peak > 0 else t_max

    values = initial_payoff(grid, criterion).values.copy()
    chunks = [slice(lo, hi) for lo, hi in _chunk_bounds(grid.shape[0], max(1, threads))]
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 and len(chunks) > 1 else None

    logger.info("solving %s criterion on %s grid, dt=%.4g s, t_max=%.4g s",
                criterion.describe(), 'x'.join(map(str, grid.shape)), dt, t_max)
    if status_callback:
        status_callback(f"Solving {criterion.describe()} safe set, dt={dt:.4g}s")

    horizon = 0.0
    iterations = 0
    residual = math.inf
    converged = False
    try:
        while t_max - horizon > 1e-9 * t_max:
            step = min(dt, t_max - horizon)
            derivatives = [_one_sided_differences(values, axis, spacing[axis]) for axis in range(3)]
            backward = [d[0] for d in derivatives]
            forward = [d[1] for d in derivatives]

            if executor is not None:
                parts = list(executor.map(
                    lambda sl: _upwind_hamiltonian(nodes, backward, forward, bounds, (sl,)), chunks))
                ham = np.concatenate(parts, axis=0)
            else:
                ham = _upwind_hamiltonian(nodes, backward, forward, bounds, (slice(None),))

            delta = step * np.minimum(0.0, ham)
            delta[~nodes.physical] = 0.0
            updated = values + delta
            _project_unphysical(updated, grid, nodes)

            residual = float(np.max(np.abs(updated - values)))
            if sweep_callback:
                sweep_callback(iterations, values, updated)
            values = updated
            horizon += step
            iterations += 1

            if progress_callback:
                progress_callback(min(horizon, t_max), t_max)
            if iterations % 200 == 0:
                logger.debug("sweep %d horizon %.3f residual %.3e", iterations, horizon, residual)
            if residual < tol:
                converged = True
                break
    finally:
        if executor is not None:
            executor.shutdown()

    if converged:
        logger.info("converged after %d sweeps (horizon %.3f s, residual %.2e)", iterations, horizon, residual)
    else:
        logger.warning("not converged within t_max=%.3g s (residual %.2e)", t_max, residual)
    if status_callback:
        status_callback(f"{'Converged' if converged else 'Stopped'} after {iterations} sweeps, residual {residual:.2e}")

    metadata = {
        'dt': dt,
        'cfl': cfl,
        'tol': tol,
        't_max': t_max,
        **{f'param.{k}': v for k, v in params.to_config().items()},
        'tau': model.tau,
        **bounds.to_config(),
    }
    return ValueField(grid=grid, values=values, criterion=criterion, iterations=iterations,
                      converged=converged, residual=residual, horizon=horizon, metadata=metadata)


def _chunk_bounds(n: int, parts: int) -> List[Tuple[int, int]]:
    parts = min(parts, n)
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def is_safe(value_field: ValueField, state: State, margin: float = 0.0) -> SafetyVerdict:
    """Safe iff the interpolated value exceeds `margin`; out-of-domain states are reported as such"""
    return value_field.classify([state.as_array()], margin)[0]


def extract_slice(value_field: ValueField, v_av: float) -> List[np.ndarray]:
    """Zero-level polylines of V in the (x_rel, v_rel) plane at ego speed v_av"""
    grid = value_field.grid
    lo, hi = grid.lower[2], grid.upper[2]
    tol = 1e-9 * grid.spacing[2]
    if not (lo - tol <= v_av <= hi + tol):
        raise ValueError(f"v_av={v_av} outside grid range [{lo}, {hi}]")

    w_axis = grid.axes[2]
    position = (min(max(v_av, lo), hi) - lo) / grid.spacing[2]
    k = min(int(np.floor(position)), grid.shape[2] - 2)
    theta = position - k
    plane = (1 - theta) * value_field.values[:, :, k] + theta * value_field.values[:, :, k + 1]
    logger.debug("slice at v_av=%.3f between nodes %.3f and %.3f", v_av, w_axis[k], w_axis[k + 1])

    x_axis, v_axis, _ = grid.axes
    return marching_squares(plane, x_axis, v_axis, level=0.0)


def safe_set_difference(unsafe_in: ValueField, safe_in: ValueField, min_x_rel: float = -math.inf,
                        min_v_av: float = -math.inf) -> np.ndarray:
    """Physical grid states with V <= 0 in the first field and V > 0 in the second"""
    if unsafe_in.grid != safe_in.grid:
        raise ValueError("fields must share the same grid")
    x_rel, v_rel, v_av = unsafe_in.grid.mesh()
    mask = ((unsafe_in.values <= 0.0) & (safe_in.values > 0.0)
            & (v_rel + v_av >= 0.0) & (x_rel >= min_x_rel) & (v_av >= min_v_av))
    return np.column_stack([x_rel[mask], v_rel[mask], v_av[mask]])


def slice_hausdorff(polylines_a: List[np.ndarray], polylines_b: List[np.ndarray]) -> float:
    """Symmetric Hausdorff distance between the vertex sets of two slices"""
    if not polylines_a and not polylines_b:
        return 0.0
    if not polylines_a or not polylines_b:
        return math.inf
    a = np.vstack(polylines_a)
    b = np.vstack(polylines_b)
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])
