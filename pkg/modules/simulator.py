"""
Closed-loop replay of the FollowerStopper behind a lead vehicle
Covers recorded or synthetic lead profiles, the worst-case braking replay used
to spot-check safe states, and a brute-force adversarial oracle
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from modules.controller import ControllerParams, State, command_speed_array
from modules.driving_data import DriveTrace
from modules.dynamics import (
    AccelBounds,
    VehicleModel,
    closed_loop_accel_array,
    closed_loop_rates,
    lambda_gate,
    rk4_step,
)
from modules.levelset import SafetyCriterion, ValueField

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ['t', 'x_rel', 'v_rel', 'v_av', 'v_cmd', 'u']
PathLike = Union[str, Path]


@dataclass
class LeadProfile:
    """Piecewise-linear lead speed over time, starting at t = 0"""

    times: np.ndarray
    speeds: np.ndarray
    plateaus: List[Tuple[float, float, float]] = field(default_factory=list)
    reference: Optional[pd.DataFrame] = None
    name: str = 'lead'

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.speeds = np.maximum(np.asarray(self.speeds, dtype=float), 0.0)
        if self.times.ndim != 1 or self.times.shape != self.speeds.shape or len(self.times) < 2:
            raise ValueError("lead profile needs matching 1-D times and speeds with at least two samples")
        if (np.diff(self.times) < 0).any():
            raise ValueError("lead profile times must be non-decreasing")

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def speed_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.speeds)

    @classmethod
    def from_trace(cls, trace: DriveTrace) -> 'LeadProfile':
        frame = trace.frame
        t = frame['t'].to_numpy() - frame['t'].iloc[0]
        reference = pd.DataFrame({
            't': t,
            'x_rel': frame['x_rel'].to_numpy(),
            'v_rel': frame['v_rel'].to_numpy(),
            'v_av': frame['v_av'].to_numpy(),
        })
        return cls(times=t, speeds=trace.lead_speed, reference=reference, name=trace.source)

    @classmethod
    def constant(cls, speed: float, duration: float) -> 'LeadProfile':
        if duration <= 0:
            raise ValueError(f"duration must be positive, got {duration}")
        return cls(times=[0.0, duration], speeds=[speed, speed],
                   plateaus=[(0.0, float(duration), float(speed))], name=f"constant:{speed!r}")

    @classmethod
    def steps(cls, speeds: Sequence[float], plateau: float = 60.0, ramp: float = 2.0) -> 'LeadProfile':
        """Constant-speed plateaus joined by linear ramps of `ramp` seconds"""
        if not speeds:
            raise ValueError("need at least one plateau speed")
        if not 0 <= ramp < plateau:
            raise ValueError(f"ramp must be in [0, plateau), got ramp={ramp}, plateau={plateau}")
        times, values, plateaus = [0.0], [float(speeds[0])], []
        for i, speed in enumerate(speeds):
            start = i * plateau
            if i > 0:
                times += [start, start + ramp]
                values += [float(speeds[i - 1]), float(speed)]
                start += ramp
            plateaus.append((start, (i + 1) * plateau, float(speed)))
        times.append(len(speeds) * plateau)
        values.append(float(speeds[-1]))
        return cls(times=times, speeds=values, plateaus=plateaus,
                   name='steps:' + ','.join(f"{s:g}" for s in speeds))


@dataclass
class SimResult:
    """Simulated time series plus summary metrics"""

    series: pd.DataFrame
    metrics: Dict[str, float]
    plateau_gaps: List[Tuple[float, float]] = field(default_factory=list)
    reference: Optional[pd.DataFrame] = None

    @property
    def collision(self) -> bool:
        return bool(self.metrics['collision'])

    def to_csv(self, path: PathLike, header_lines: Iterable[str] = ()) -> Path:
        path = Path(path)
        lines = ''.join(f"# {line}\n" for line in header_lines)
        body = self.series[SERIES_COLUMNS].to_csv(index=False, float_format='%.6f', lineterminator='\n')
        path.write_text(lines + body)
        return path

    def metrics_text(self) -> str:
        lines = [
            f"min_gap: {self.metrics['min_gap']:.6f}",
            f"min_time_headway: {self.metrics['min_headway']:.6f}",
            f"collision: {'true' if self.collision else 'false'}",
        ]
        if 'min_payoff' in self.metrics:
            lines.append(f"min_payoff: {self.metrics['min_payoff']:.6f}")
        for speed, gap in self.plateau_gaps:
            lines.append(f"steady_gap@{speed:g}: {gap:.6f}")
        return '\n'.join(lines)


def _series_length(duration: float, dt: float) -> int:
    return int(math.ceil(duration / dt - 1e-9)) + 1


def _summarize(series: pd.DataFrame, plateaus, criterion: Optional[SafetyCriterion],
               v_floor: float = 1.0) -> Tuple[Dict[str, float], List[Tuple[float, float]]]:
    gaps = series['x_rel'].to_numpy()
    speeds = series['v_av'].to_numpy()
    moving = speeds > v_floor
    metrics = {
        'min_gap': float(gaps.min()),
        'min_headway': float((gaps[moving] / speeds[moving]).min()) if moving.any() else math.inf,
    }
    metrics['collision'] = metrics['min_gap'] <= 0.0
    if criterion is not None:
        metrics['min_payoff'] = float(np.min(criterion.payoff(gaps, speeds)))

    t = series['t'].to_numpy()
    steady = []
    for start, end, speed in plateaus:
        window = (t >= end - 0.2 * (end - start)) & (t <= end + 1e-9)
        if window.any():
            steady.append((speed, float(gaps[window].mean())))
    return metrics, steady


def simulate(lead: Union[LeadProfile, DriveTrace], params: ControllerParams, model: VehicleModel,
             bounds: AccelBounds, initial_gap: float, dt: float = 0.05,
             initial_speed: Optional[float] = None,
             criterion: Optional[SafetyCriterion] = None) -> SimResult:
    """
    Replay the controller behind a prescribed lead speed profile

    The lead speed is interpolated linearly; each RK4 step holds the lead
    acceleration at its mean over the step and v_rel is re-synced to the
    profile afterwards. The ego starts at the lead's initial speed unless
    `initial_speed` is given.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if initial_gap <= 0:
        raise ValueError(f"initial gap must be positive, got {initial_gap}")
    if isinstance(lead, DriveTrace):
        lead = LeadProfile.from_trace(lead)

    n = _series_length(lead.duration, dt)
    t = np.arange(n) * dt
    v_lead = lead.speed_at(t)

    x_rel = float(initial_gap)
    v_av = float(v_lead[0] if initial_speed is None else initial_speed)
    if v_av < 0:
        raise ValueError(f"initial speed must be non-negative, got {v_av}")
    v_rel = float(v_lead[0]) - v_av

    rows = np.empty((n, len(SERIES_COLUMNS)))
    for k in range(n):
        v_cmd = float(command_speed_array(params, x_rel, v_rel, v_av))
        u = lambda_gate(v_av) * float(closed_loop_accel_array(params, model, bounds, x_rel, v_rel, v_av))
        rows[k] = (t[k], x_rel, v_rel, v_av, v_cmd, u)
        if k == n - 1:
            break
        d = (v_lead[k + 1] - v_lead[k]) / dt
        rates = closed_loop_rates(params, model, bounds, d)
        x_next, _, w_next = rk4_step(rates, np.float64(x_rel), np.float64(v_rel), np.float64(v_av), dt)
        x_rel, v_av = float(x_next), float(w_next)
        v_rel = float(v_lead[k + 1]) - v_av

    series = pd.DataFrame(rows, columns=SERIES_COLUMNS)
    metrics, steady = _summarize(series, lead.plateaus, criterion)
    if metrics['collision']:
        logger.warning("collision in replay of %s (min gap %.3f m)", lead.name, metrics['min_gap'])
    return SimResult(series=series, metrics=metrics, plateau_gaps=steady, reference=lead.reference)


def worst_case_replay(value_field: ValueField, start: State, params: ControllerParams, model: VehicleModel,
                      bounds: AccelBounds, horizon: float = 15.0, dt: float = 0.05) -> SimResult:
    """Lead brakes at d_min until it stops, then holds; metrics carry the field's criterion payoff"""
    if not value_field.grid.contains([start.as_array()])[0]:
        raise ValueError(f"start state {start} lies outside the field's grid")

    n = _series_length(horizon, dt)
    x_rel = np.array([start.x_rel])
    v_rel = np.array([start.v_rel])
    v_av = np.array([start.v_av])
    rates = closed_loop_rates(params, model, bounds, bounds.d_min)

    rows = np.empty((n, len(SERIES_COLUMNS)))
    for k in range(n):
        v_cmd = command_speed_array(params, x_rel, v_rel, v_av)[0]
        u = (lambda_gate(v_av) * closed_loop_accel_array(params, model, bounds, x_rel, v_rel, v_av))[0]
        rows[k] = (k * dt, x_rel[0], v_rel[0], v_av[0], v_cmd, u)
        if k < n - 1:
            x_rel, v_rel, v_av = rk4_step(rates, x_rel, v_rel, v_av, dt)

    series = pd.DataFrame(rows, columns=SERIES_COLUMNS)
    metrics, _ = _summarize(series, [], value_field.criterion)
    return SimResult(series=series, metrics=metrics)


def disturbance_schedules(horizon: float, switch_period: float, max_switches: int,
                          bounds: AccelBounds) -> List[Tuple[float, Tuple[float, ...]]]:
    """Bang-bang schedules as (initial value, switch times) with up to `max_switches` switches"""
    slots = int(round(horizon / switch_period))
    candidates = [k * switch_period for k in range(1, slots)]
    schedules = []
    for first in (bounds.d_min, bounds.d_max):
        for count in range(max_switches + 1):
            for times in itertools.combinations(candidates, count):
                schedules.append((first, times))
    return schedules


def _schedule_table(schedules, n_steps: int, dt: float, bounds: AccelBounds) -> np.ndarray:
    step_times = np.arange(n_steps) * dt
    table = np.empty((len(schedules), n_steps))
    other = {bounds.d_min: bounds.d_max, bounds.d_max: bounds.d_min}
    for row, (first, times) in enumerate(schedules):
        flips = np.searchsorted(np.asarray(times), step_times + 0.5 * dt, side='right') if times else 0
        table[row] = np.where(np.asarray(flips) % 2 == 0, first, other[first])
    return table


def brute_force_worst_payoff(states, criterion: SafetyCriterion, params: ControllerParams,
                             model: VehicleModel, bounds: AccelBounds, horizon: float = 15.0,
                             dt: float = 0.01, switch_period: float = 0.5, max_switches: int = 2,
                             threads: int = 1, chunk_size: int = 50,
                             progress_callback: Optional[Callable[[int, int], None]] = None) -> np.ndarray:
    """
    Worst (lowest) running-minimum payoff over every enumerated lead schedule

    A state counts as unsafe when the returned value is <= 0.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n_steps = int(round(horizon / dt))
    schedules = disturbance_schedules(horizon, switch_period, max_switches, bounds)
    table = _schedule_table(schedules, n_steps, dt, bounds)
    logger.info("oracle: %d states x %d schedules over %.3g s", len(states), len(schedules), horizon)

    def run(chunk: np.ndarray) -> np.ndarray:
        shape = (len(schedules), len(chunk))
        x_rel = np.broadcast_to(chunk[:, 0], shape).copy()
        v_rel = np.broadcast_to(chunk[:, 1], shape).copy()
        v_av = np.broadcast_to(chunk[:, 2], shape).copy()
        worst = criterion.payoff(x_rel, v_av)
        for k in range(n_steps):
            rates = closed_loop_rates(params, model, bounds, table[:, k][:, None])
            x_rel, v_rel, v_av = rk4_step(rates, x_rel, v_rel, v_av, dt)
            worst = np.minimum(worst, criterion.payoff(x_rel, v_av))
        return worst.min(axis=0)

    chunks = [states[i:i + chunk_size] for i in range(0, len(states), chunk_size)]
    results = []
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for done, part in enumerate(pool.map(run, chunks), start=1):
                results.append(part)
                if progress_callback:
                    progress_callback(done, len(chunks))
    else:
        for done, chunk in enumerate(chunks, start=1):
            results.append(run(chunk))
            if progress_callback:
                progress_callback(done, len(chunks))
    return np.concatenate(results) if results else np.empty(0)
