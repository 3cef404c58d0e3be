"""
FollowerStopper command-speed law
Four zones separated by quadratic boundaries in relative distance, with an
optional time-headway term that widens every zone with ego speed
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Mapping, Tuple

import numpy as np


class Variant(str, Enum):
    ORIGINAL = 'original'
    MODIFIED = 'modified'


def _triple(values, name: str) -> Tuple[float, float, float]:
    values = tuple(float(v) for v in values)
    if len(values) != 3:
        raise ValueError(f"{name} needs exactly three values, got {len(values)}")
    return values


@dataclass(frozen=True)
class ControllerParams:
    """Design parameters of the FollowerStopper (defaults are overridable via config)"""

    omega: Tuple[float, float, float] = (4.5, 5.25, 6.0)
    alpha: Tuple[float, float, float] = (1.5, 1.0, 0.5)
    headways: Tuple[float, float, float] = (0.4, 1.2, 1.8)
    r: float = 30.0
    variant: Variant = Variant.ORIGINAL

    def __post_init__(self):
        object.__setattr__(self, 'omega', _triple(self.omega, 'omega'))
        object.__setattr__(self, 'alpha', _triple(self.alpha, 'alpha'))
        object.__setattr__(self, 'headways', _triple(self.headways, 'headways'))
        object.__setattr__(self, 'r', float(self.r))
        object.__setattr__(self, 'variant', Variant(self.variant))

        w1, w2, w3 = self.omega
        a1, a2, a3 = self.alpha
        if min(self.alpha) <= 0:
            raise ValueError(f"alpha values must be positive, got {self.alpha}")
        if not (w1 < w2 < w3):
            raise ValueError(f"omega must be strictly increasing, got {self.omega}")
        if not (a1 >= a2 >= a3):
            raise ValueError(f"alpha must be non-increasing, got {self.alpha}")
        if self.r <= 0:
            raise ValueError(f"r must be positive, got {self.r}")
        if self.variant is Variant.MODIFIED:
            h1, h2, h3 = self.headways
            if min(self.headways) < 0:
                raise ValueError(f"headways must be non-negative, got {self.headways}")
            if not (h1 <= h2 <= h3):
                raise ValueError(f"headways must be non-decreasing, got {self.headways}")

    @property
    def uses_headway(self) -> bool:
        return self.variant is Variant.MODIFIED

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'ControllerParams':
        """Build parameters from flat config keys (omega1..3, alpha1..3, h1..3, r, variant)"""
        return cls(
            omega=(config['omega1'], config['omega2'], config['omega3']),
            alpha=(config['alpha1'], config['alpha2'], config['alpha3']),
            headways=(config['h1'], config['h2'], config['h3']),
            r=config['r'],
            variant=str(config['variant']).strip().lower(),
        )

    def to_config(self) -> Dict[str, Any]:
        config = {}
        for j in range(3):
            config[f'omega{j + 1}'] = self.omega[j]
        for j in range(3):
            config[f'alpha{j + 1}'] = self.alpha[j]
        for j in range(3):
            config[f'h{j + 1}'] = self.headways[j]
        config['r'] = self.r
        config['variant'] = self.variant.value
        return config

    def check_domain(self, v_rel_range: Tuple[float, float], v_av_range: Tuple[float, float]) -> None:
        """Verify strictly increasing boundaries on the corners of an operating domain"""
        for v_rel in v_rel_range:
            for v_av in v_av_range:
                if v_av < 0:
                    raise ValueError(f"ego speed range must be non-negative, got {v_av_range}")
                x1, x2, x3 = zone_boundaries(self, v_rel, v_av)
                if not (x1 < x2 < x3):
                    raise ValueError(
                        f"zone boundaries not increasing at v_rel={v_rel}, v_av={v_av}: {(x1, x2, x3)}"
                    )


@dataclass(frozen=True)
class State:
    """Two-car state z = (x_rel, v_rel, v_AV)"""

    x_rel: float
    v_rel: float
    v_av: float

    def __post_init__(self):
        for name in ('x_rel', 'v_rel', 'v_av'):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.v_av < 0:
            raise ValueError(f"ego speed must be non-negative, got {self.v_av}")

    @property
    def v_lead(self) -> float:
        return self.v_rel + self.v_av

    def as_array(self) -> np.ndarray:
        return np.array([self.x_rel, self.v_rel, self.v_av], dtype=float)


def zone_boundaries(params: ControllerParams, v_rel, v_av):
    """
    Relative-distance thresholds separating the four controller zones

    Accepts scalars or numpy arrays; returns a triple of the same shape.
    """
    v_rel_arr = np.asarray(v_rel, dtype=float)
    v_av_arr = np.asarray(v_av, dtype=float)
    closing_sq = np.minimum(v_rel_arr, 0.0) ** 2

    bounds = []
    for j in range(3):
        x_j = params.omega[j] + closing_sq / (2.0 * params.alpha[j])
        if params.uses_headway:
            x_j = x_j + params.headways[j] * v_av_arr
        else:
            x_j = x_j + 0.0 * v_av_arr
        bounds.append(x_j)

    if np.ndim(bounds[0]) == 0:
        return tuple(float(b) for b in bounds)
    return tuple(bounds)


def command_speed_array(params: ControllerParams, x_rel, v_rel, v_av) -> np.ndarray:
    """Vectorized command-speed law over arrays of states"""
    x_rel = np.asarray(x_rel, dtype=float)
    v_rel = np.asarray(v_rel, dtype=float)
    v_av = np.asarray(v_av, dtype=float)
    x1, x2, x3 = zone_boundaries(params, v_rel, v_av)
    r = params.r
    v = np.minimum(np.maximum(v_rel + v_av, 0.0), r)

    ramp_low = v * (x_rel - x1) / (x2 - x1)
    # measured back from x3 so rounding cannot carry the command past r
    ramp_high = np.clip(r - (r - v) * (x3 - x_rel) / (x3 - x2), v, r)
    return np.select(
        [x_rel <= x1, x_rel <= x2, x_rel <= x3],
        [np.zeros_like(ramp_low), ramp_low, ramp_high],
        default=r,
    )


def command_speed(params: ControllerParams, state: State) -> float:
    """Commanded ego speed for a single state"""
    return float(command_speed_array(params, state.x_rel, state.v_rel, state.v_av))
