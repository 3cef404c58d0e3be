"""
Driving trace ingestion, bound estimation and safe-set coverage
Also generates synthetic traces that stand in for recorded drives
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from modules.dynamics import AccelBounds
from modules.levelset import SafetyVerdict, ValueField

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['t', 'x_rel', 'v_rel', 'v_av', 'a_av']
UNITS_LINE = 'units: s,m,m/s,m/s,m/s^2'
PathLike = Union[str, Path]


class TraceFormatError(ValueError):
    """Raised when a trace file or frame violates the documented format"""


class InsufficientDataError(ValueError):
    """Raised when there is not enough data for an estimate"""


@dataclass
class DriveTrace:
    """Time-stamped car-following samples from one drive"""

    frame: pd.DataFrame
    source: str = 'unnamed'

    def __post_init__(self):
        self.frame = validate_trace_frame(self.frame, self.source)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def lead_speed(self) -> np.ndarray:
        return (self.frame['v_rel'] + self.frame['v_av']).to_numpy()

    def states(self) -> np.ndarray:
        return self.frame[['x_rel', 'v_rel', 'v_av']].to_numpy(dtype=float)

    def to_csv(self, path: PathLike, header_lines: Iterable[str] = ()) -> Path:
        path = Path(path)
        lines = [f"# {UNITS_LINE}\n"] + [f"# {line}\n" for line in header_lines]
        body = self.frame[TRACE_COLUMNS].to_csv(index=False, float_format='%.6f', lineterminator='\n')
        path.write_text(''.join(lines) + body)
        return path


def validate_trace_frame(frame: pd.DataFrame, source: str = 'trace') -> pd.DataFrame:
    """Check columns and invariants; returns a float copy with a clean index"""
    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise TraceFormatError(f"{source}: missing columns {missing}; expected header {','.join(TRACE_COLUMNS)}")
    if len(frame) == 0:
        raise TraceFormatError(f"{source}: trace has no samples")

    frame = frame[TRACE_COLUMNS].reset_index(drop=True)
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna().any(axis=1) | ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
        raise TraceFormatError(f"{source}: malformed value in data row {row}")

    t = numeric['t'].to_numpy()
    steps = np.diff(t)
    if (steps <= 0).any():
        row = int(np.flatnonzero(steps <= 0)[0]) + 2
        raise TraceFormatError(f"{source}: time not strictly increasing at data row {row}")
    if (numeric['v_av'] < 0).any():
        row = int(np.flatnonzero(numeric['v_av'].to_numpy() < 0)[0]) + 1
        raise TraceFormatError(f"{source}: negative ego speed at data row {row}")
    if (numeric['x_rel'] <= 0).any():
        row = int(np.flatnonzero(numeric['x_rel'].to_numpy() <= 0)[0]) + 1
        raise TraceFormatError(f"{source}: non-positive relative distance at data row {row}")
    return numeric.astype(float)


def parse_trace(path: PathLike) -> DriveTrace:
    """Read a trace CSV (`t,x_rel,v_rel,v_av,a_av`, `#` comment lines allowed)"""
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"{path}: file not found")
    try:
        frame = pd.read_csv(path, comment='#', skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise TraceFormatError(f"{path}: empty file") from e
    except pd.errors.ParserError as e:
        raise TraceFormatError(f"{path}: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    if list(frame.columns) != TRACE_COLUMNS:
        raise TraceFormatError(f"{path}: header {list(frame.columns)} != {TRACE_COLUMNS}")
    trace = DriveTrace(frame=frame, source=str(path))
    logger.debug("parsed %d samples from %s", len(trace), path)
    return trace


def parse_traces(paths: Sequence[PathLike], threads: int = 1) -> List[DriveTrace]:
    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(parse_trace, paths))
    return [parse_trace(p) for p in paths]


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; edge samples without a full window are dropped (NaN)"""
    return pd.Series(values).rolling(window, center=True).mean().to_numpy()


def _trace_accelerations(trace: DriveTrace, smooth_window: int) -> Tuple[np.ndarray, np.ndarray]:
    if len(trace) < smooth_window + 2:
        raise InsufficientDataError(
            f"{trace.source}: need at least {smooth_window + 2} samples, got {len(trace)}")
    t = trace.frame['t'].to_numpy()
    lead = _smooth(trace.lead_speed, smooth_window)
    # centered difference over neighbours i-1, i+1
    lead_accel = (lead[2:] - lead[:-2]) / (t[2:] - t[:-2])
    ego_accel = _smooth(trace.frame['a_av'].to_numpy(), smooth_window)
    return lead_accel[np.isfinite(lead_accel)], ego_accel[np.isfinite(ego_accel)]


def _interval(samples: np.ndarray, quantile: float) -> Tuple[float, float]:
    if quantile == 0:
        return float(samples.min()), float(samples.max())
    return float(np.quantile(samples, quantile)), float(np.quantile(samples, 1.0 - quantile))


def estimate_accel_bounds(traces: Sequence[DriveTrace], quantile: float = 0.0, smooth_window: int = 5,
                          widen: float = 0.05, floor: float = 1e-3) -> AccelBounds:
    """
    Acceleration bounds from driving data

    Lead acceleration comes from the centered difference of the smoothed lead
    speed (v_rel + v_AV); ego bounds from the smoothed recorded acceleration.
    Samples of all traces are pooled before taking quantiles.
    """
    if not traces:
        raise InsufficientDataError("need at least one trace to estimate bounds")
    if not (0 <= quantile < 0.5):
        raise ValueError(f"quantile must be in [0, 0.5), got {quantile}")
    if smooth_window < 1:
        raise ValueError(f"smooth_window must be >= 1, got {smooth_window}")

    lead_parts, ego_parts = zip(*(_trace_accelerations(tr, smooth_window) for tr in traces))
    lead = np.concatenate(lead_parts)
    ego = np.concatenate(ego_parts)
    if lead.size == 0 or ego.size == 0:
        raise InsufficientDataError("no acceleration samples left after smoothing")

    d_lo, d_hi = _interval(lead, quantile)
    u_lo, u_hi = _interval(ego, quantile)
    logger.info("raw bounds: d in [%.3f, %.3f], u in [%.3f, %.3f] from %d samples",
                d_lo, d_hi, u_lo, u_hi, lead.size)

    return AccelBounds.from_intervals((u_lo, u_hi), (d_lo, d_hi), widen=widen, floor=floor)


def min_time_headway(traces: Sequence[DriveTrace], v_floor: float = 1.0) -> float:
    """Smallest x_rel / v_AV over samples moving faster than v_floor"""
    ratios = []
    for trace in traces:
        moving = trace.frame[trace.frame['v_av'] > v_floor]
        if len(moving):
            ratios.append((moving['x_rel'] / moving['v_av']).min())
    if not ratios:
        raise InsufficientDataError(f"no samples with ego speed above {v_floor} m/s")
    return float(min(ratios))


@dataclass
class CoverageReport:
    """How many trace samples fall inside the safe set"""

    total: int
    in_domain: int
    safe: int
    violations: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(
        columns=['source', 'index', 'x_rel', 'v_rel', 'v_av', 'value']))
    margin: float = 0.0

    @property
    def out_of_domain(self) -> int:
        return self.total - self.in_domain

    @property
    def fully_covered(self) -> bool:
        return len(self.violations) == 0

    def to_text(self) -> str:
        pct = (self.safe / self.in_domain * 100) if self.in_domain else 0.0
        lines = [
            f"samples total: {self.total}",
            f"samples in domain: {self.in_domain}",
            f"samples out of domain: {self.out_of_domain}",
            f"samples safe: {self.safe} ({pct:.1f}% of in-domain)",
            f"violations: {len(self.violations)}",
            f"margin: {self.margin!r}",
        ]
        for row in self.violations.head(20).to_dict('records'):
            lines.append(f"  {row['source']}[{row['index']}] x_rel={row['x_rel']:.3f} v_rel={row['v_rel']:.3f} "
                         f"v_av={row['v_av']:.3f} V={row['value']:.4f}")
        if len(self.violations) > 20:
            lines.append(f"  ... {len(self.violations) - 20} more")
        return '\n'.join(lines)

    def to_csv(self, path: PathLike, header_lines: Iterable[str] = ()) -> Path:
        path = Path(path)
        lines = ''.join(f"# {line}\n" for line in header_lines)
        path.write_text(lines + self.violations.to_csv(index=False, float_format='%.6f', lineterminator='\n'))
        return path


def coverage(value_field: ValueField, traces: Sequence[DriveTrace], margin: float = 0.0) -> CoverageReport:
    """Classify every sample; out-of-domain samples are counted but never classified"""
    total = in_domain = safe = 0
    rows = []
    for trace in traces:
        states = trace.states()
        values = value_field.interpolate(states)
        verdicts = value_field.classify(states, margin)
        total += len(states)
        for idx, (verdict, value) in enumerate(zip(verdicts, values)):
            if verdict is SafetyVerdict.OUT_OF_DOMAIN:
                continue
            in_domain += 1
            if verdict is SafetyVerdict.SAFE:
                safe += 1
            else:
                x_rel, v_rel, v_av = states[idx]
                rows.append({'source': trace.source, 'index': idx, 'x_rel': x_rel,
                             'v_rel': v_rel, 'v_av': v_av, 'value': float(value)})
    violations = pd.DataFrame(rows, columns=['source', 'index', 'x_rel', 'v_rel', 'v_av', 'value'])
    logger.info("coverage: %d/%d in-domain samples safe, %d violations", safe, in_domain, len(violations))
    return CoverageReport(total=total, in_domain=in_domain, safe=safe, violations=violations, margin=margin)


class Scenario(str, Enum):
    STOP_AND_GO = 'stop_and_go'
    CRUISE = 'cruise'
    HARD_BRAKE = 'hard_brake'
    RAMP_UP = 'ramp_up'


# human-follower tracker used for synthetic traces
FOLLOWER_HEADWAY = 1.5
FOLLOWER_GAIN = 0.5
FOLLOWER_STANDSTILL_GAP = 2.0
FOLLOWER_MIN_HEADWAY = 0.5
# cruise lead swell amplitude; the follower joins that much faster than the lead
CRUISE_SWELL = 0.5
CRUISE_JOIN_SPEED = 2.0


def _lead_profile(scenario: Scenario, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    duration = float(t[-1]) if len(t) else 0.0
    if scenario is Scenario.CRUISE:
        cruise = rng.uniform(20.0, 27.0)
        period = rng.uniform(40.0, 60.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        return cruise + CRUISE_SWELL * np.sin(2 * np.pi * t / period + phase)
    if scenario is Scenario.STOP_AND_GO:
        period = rng.uniform(30.0, 50.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        return 8.0 + 6.0 * np.sin(2 * np.pi * t / period + phase)
    if scenario is Scenario.HARD_BRAKE:
        cruise = rng.uniform(18.0, 26.0)
        low = rng.uniform(3.0, 8.0)
        brake_at = duration / 3.0
        speed = np.full_like(t, cruise)
        braking = np.clip(cruise - 3.0 * (t - brake_at), low, cruise)
        speed = np.where(t >= brake_at, braking, speed)
        recover_at = brake_at + (cruise - low) / 3.0 + 10.0
        recovering = np.clip(low + 1.0 * (t - recover_at), low, cruise)
        return np.where(t >= recover_at, recovering, speed)
    if scenario is Scenario.RAMP_UP:
        start = rng.uniform(1.0, 3.0)
        rate = rng.uniform(0.3, 0.6)
        return np.minimum(start + rate * t, 28.0)
    raise ValueError(f"unknown scenario {scenario}")


def synth_trace(scenario: Union[Scenario, str], duration: float = 120.0, dt: float = 0.1,
                seed: int = 0) -> DriveTrace:
    """
    Deterministic synthetic drive: a lead speed profile and a human-like
    follower (time-headway tracker) behind it
    """
    scenario = Scenario(scenario)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")

    rng = np.random.default_rng(seed)
    n = int(np.ceil(duration / dt - 1e-9)) + 1
    t = np.arange(n) * dt
    lead = np.maximum(_lead_profile(scenario, t, rng), 0.0)

    substeps = max(1, int(np.ceil(dt / 0.05)))
    h = dt / substeps
    v = float(lead[0]) + (CRUISE_JOIN_SPEED if scenario is Scenario.CRUISE else 0.0)
    gap = FOLLOWER_STANDSTILL_GAP + FOLLOWER_HEADWAY * float(lead[0])
    gaps = np.empty(n)
    speeds = np.empty(n)
    accels = np.empty(n)
    for i in range(n):
        gaps[i], speeds[i] = gap, v
        v_before = v
        if i == n - 1:
            accels[i] = accels[i - 1] if i else 0.0
            break
        for s in range(substeps):
            lead_now = np.interp(t[i] + s * h, t, lead)
            target = max(0.0, (gap - FOLLOWER_STANDSTILL_GAP) / FOLLOWER_HEADWAY)
            v = max(0.0, v + h * FOLLOWER_GAIN * (target - v))
            v = min(v, gap / FOLLOWER_MIN_HEADWAY)
            gap = gap + h * (lead_now - v)
        accels[i] = (v - v_before) / dt

    frame = pd.DataFrame({
        't': t,
        'x_rel': gaps,
        'v_rel': lead - speeds,
        'v_av': speeds,
        'a_av': accels,
    })
    return DriveTrace(frame=frame, source=f"synthetic:{scenario.value}:seed={seed}")
