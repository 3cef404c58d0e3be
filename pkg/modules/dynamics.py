"""
Closed-loop two-car dynamics
Three-state relative model with speed-constraint gates, first-order speed
response of the ego vehicle, and the fixed-step integrator shared by the
simulator and the adversarial oracle
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Tuple

import numpy as np

from modules.controller import ControllerParams, State, command_speed_array


@dataclass(frozen=True)
class AccelBounds:
    """Ego input interval [u_min, u_max] and lead disturbance interval [d_min, d_max]"""

    u_min: float = -3.0
    u_max: float = 3.0
    d_min: float = -3.0
    d_max: float = 3.0

    def __post_init__(self):
        for name in ('u_min', 'u_max', 'd_min', 'd_max'):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.u_min < 0 < self.u_max):
            raise ValueError(f"need u_min < 0 < u_max, got ({self.u_min}, {self.u_max})")
        if not (self.d_min < 0 < self.d_max):
            raise ValueError(f"need d_min < 0 < d_max, got ({self.d_min}, {self.d_max})")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'AccelBounds':
        return cls(config['u_min'], config['u_max'], config['d_min'], config['d_max'])

    def to_config(self) -> Dict[str, float]:
        return {'u_min': self.u_min, 'u_max': self.u_max, 'd_min': self.d_min, 'd_max': self.d_max}

    @classmethod
    def from_intervals(cls, u_interval: Tuple[float, float], d_interval: Tuple[float, float],
                       widen: float = 0.0, floor: float = 0.0) -> 'AccelBounds':
        """
        Bounds from raw (lo, hi) intervals that need not straddle zero

        Each endpoint is scaled away from zero by `widen`; `floor` keeps each
        side at least that far from zero.
        """
        if widen < 0 or floor < 0:
            raise ValueError(f"widen and floor must be non-negative, got {widen}, {floor}")
        scale = 1.0 + widen
        (u_lo, u_hi), (d_lo, d_hi) = u_interval, d_interval
        return cls(
            u_min=min(u_lo * scale, -floor),
            u_max=max(u_hi * scale, floor),
            d_min=min(d_lo * scale, -floor),
            d_max=max(d_hi * scale, floor),
        )


@dataclass(frozen=True)
class VehicleModel:
    """First-order speed response with time constant tau"""

    tau: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, 'tau', float(self.tau))
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def lambda_gate(y):
    """1 where y > 0, else 0 (strict)"""
    gate = np.where(np.asarray(y, dtype=float) > 0.0, 1.0, 0.0)
    if gate.ndim == 0:
        return int(gate)
    return gate


def closed_loop_accel_array(params: ControllerParams, model: VehicleModel, bounds: AccelBounds,
                            x_rel, v_rel, v_av) -> np.ndarray:
    v_cmd = command_speed_array(params, x_rel, v_rel, v_av)
    return np.clip((v_cmd - np.asarray(v_av, dtype=float)) / model.tau, bounds.u_min, bounds.u_max)


def closed_loop_accel(state: State, params: ControllerParams, model: VehicleModel, bounds: AccelBounds) -> float:
    """Ego acceleration produced by the controller through the speed lag, clipped to [u_min, u_max]"""
    return float(closed_loop_accel_array(params, model, bounds, state.x_rel, state.v_rel, state.v_av))


def vector_field_array(x_rel, v_rel, v_av, u, d) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    v_rel = np.asarray(v_rel, dtype=float)
    v_av = np.asarray(v_av, dtype=float)
    lead_gate = np.where(v_rel + v_av > 0.0, 1.0, 0.0)
    ego_gate = np.where(v_av > 0.0, 1.0, 0.0)
    ego_accel = ego_gate * u
    x_dot = v_rel + 0.0 * np.asarray(x_rel, dtype=float)
    return x_dot, lead_gate * d - ego_accel, ego_accel


def vector_field(state: State, u: float, d: float) -> np.ndarray:
    """Time derivative (x_rel', v_rel', v_AV') of the two-car system"""
    return np.array([float(c) for c in vector_field_array(state.x_rel, state.v_rel, state.v_av, u, d)])


def clip_speeds(v_rel, v_av):
    """Project onto non-negative ego and lead speeds"""
    v_av = np.maximum(v_av, 0.0)
    v_rel = np.maximum(v_rel, -v_av)
    return v_rel, v_av


RatesFn = Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]


def rk4_step(rates: RatesFn, x_rel, v_rel, v_av, dt: float):
    """
    One classical Runge-Kutta step of z' = rates(z) followed by speed clipping

    The rates callable re-evaluates the controller at every stage.
    """
    k1 = rates(x_rel, v_rel, v_av)
    k2 = rates(x_rel + 0.5 * dt * k1[0], v_rel + 0.5 * dt * k1[1], v_av + 0.5 * dt * k1[2])
    k3 = rates(x_rel + 0.5 * dt * k2[0], v_rel + 0.5 * dt * k2[1], v_av + 0.5 * dt * k2[2])
    k4 = rates(x_rel + dt * k3[0], v_rel + dt * k3[1], v_av + dt * k3[2])

    x_next = x_rel + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v_next = v_rel + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    w_next = v_av + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    v_next, w_next = clip_speeds(v_next, w_next)
    return x_next, v_next, w_next


def closed_loop_rates(params: ControllerParams, model: VehicleModel, bounds: AccelBounds, d) -> RatesFn:
    """Rates of the closed loop with the lead applying acceleration d (scalar or per-trajectory array)"""

    def rates(x_rel, v_rel, v_av):
        # intermediate stages may dip below zero speed; the gates handle it
        w = np.maximum(v_av, 0.0)
        u = closed_loop_accel_array(params, model, bounds, x_rel, v_rel, w)
        return vector_field_array(x_rel, v_rel, v_av, u, d)

    return rates
