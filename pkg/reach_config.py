"""
ReachGuard Configuration
Default controller, vehicle, grid, solver, data and simulation settings plus
the config-file / environment layer the CLI resolves runs from
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from dotenv import dotenv_values, load_dotenv

from modules.controller import ControllerParams
from modules.dynamics import AccelBounds, VehicleModel
from modules.levelset import GridSpec, SafetyCriterion

load_dotenv()


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or unresolvable paths in a run configuration"""


# FollowerStopper design parameters
CONTROLLER_CONFIG = {
    'omega1': 4.5,
    'omega2': 5.25,
    'omega3': 6.0,
    'alpha1': 1.5,
    'alpha2': 1.0,
    'alpha3': 0.5,
    'h1': 0.4,            # headway terms, only used by the modified variant
    'h2': 1.2,
    'h3': 1.8,
    'r': 30.0,            # free-flow command speed (m/s)
    'variant': 'original',
}

# Vehicle response and acceleration bounds
VEHICLE_CONFIG = {
    'tau': 0.5,
    'bounds': 'explicit',  # 'explicit' or 'from-data'
    'u_min': -3.0,
    'u_max': 3.0,
    'd_min': -3.0,
    'd_max': 3.0,
}

GRID_CONFIG = {
    'x_rel_min': 0.0,
    'x_rel_max': 50.0,
    'v_rel_min': -15.0,
    'v_rel_max': 15.0,
    'v_av_min': 0.0,
    'v_av_max': 30.0,
    'nx': 51,
    'nv': 51,
    'nw': 51,
}

SOLVER_CONFIG = {
    'criterion': 'distance',  # 'distance' or 'headway'
    'headway': 0.4,
    'tol': 1e-3,
    't_max': 60.0,
    'cfl': 0.5,
    'margin': 0.0,
}

# Bound estimation from driving traces
DATA_CONFIG = {
    'quantile': 0.0,
    'smooth_window': 5,
    'widen': 0.05,
    'v_floor': 1.0,
}

SIM_CONFIG = {
    'dt': 0.05,
    'seed': 0,
}

CONFIG_SECTIONS = {
    'controller': CONTROLLER_CONFIG,
    'vehicle': VEHICLE_CONFIG,
    'grid': GRID_CONFIG,
    'solver': SOLVER_CONFIG,
    'data': DATA_CONFIG,
    'sim': SIM_CONFIG,
}


def get_env_var(key: str, default: Optional[str] = None) -> Optional[str]:
    """Get an environment variable (.env already loaded) with a fallback"""
    value = os.getenv(key)
    if value:
        return value
    return default


def get_default_config() -> Dict[str, Any]:
    """Flat copy of every default setting"""
    config: Dict[str, Any] = {}
    for section in CONFIG_SECTIONS.values():
        config.update(section)
    return config


def get_config_summary(config: Optional[Mapping[str, Any]] = None) -> str:
    """One-line summary of the settings that matter most for a run"""
    config = config or get_default_config()
    return (f"Variant: {config['variant']} | Criterion: {config['criterion']} | "
            f"Grid: {config['nx']}x{config['nv']}x{config['nw']} | "
            f"Bounds: {config['bounds']} | tau: {config['tau']}")


def _coerce(key: str, raw: Any) -> Any:
    default = get_default_config()[key]
    if raw is None:
        raise ConfigError(f"config key '{key}' has no value")
    if isinstance(raw, type(default)) and not isinstance(raw, bool):
        return raw
    try:
        if isinstance(default, int):
            return int(str(raw).strip())
        if isinstance(default, float):
            return float(str(raw).strip())
    except ValueError as e:
        raise ConfigError(f"config key '{key}': cannot parse {raw!r} as {type(default).__name__}") from e
    return str(raw).strip()


def load_config_file(path) -> Dict[str, Any]:
    """Parse a `key=value` config file; unknown keys are rejected"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    known = get_default_config()
    values = {}
    for key, raw in dotenv_values(path).items():
        if key not in known:
            raise ConfigError(f"unknown config key '{key}' in {path}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Defaults < config file < explicit overrides (None overrides are ignored)"""
    config = get_default_config()
    if path is not None:
        config.update(load_config_file(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in config:
            raise ConfigError(f"unknown config key '{key}'")
        config[key] = _coerce(key, value)
    return config


def resolve_threads(flag: Optional[int] = None) -> int:
    """--threads wins, then REACHGUARD_THREADS, then 1"""
    raw = flag if flag is not None else get_env_var('REACHGUARD_THREADS', '1')
    try:
        threads = int(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"thread count must be an integer, got {raw!r}") from e
    if threads < 1:
        raise ConfigError(f"thread count must be at least 1, got {threads}")
    return threads


def config_header_lines(values: Mapping[str, Any], trace_paths: Sequence = ()) -> List[str]:
    """Resolved settings as artifact header lines, sorted by key"""
    lines = ['reachguard run config']
    for key in sorted(values):
        value = values[key]
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    for path in trace_paths:
        lines.append(f"trace={path}")
    return lines


@dataclass
class RunConfig:
    """Fully resolved, validated settings for one command"""

    params: ControllerParams
    model: VehicleModel
    bounds: Optional[AccelBounds]
    grid: GridSpec
    criterion: SafetyCriterion
    values: Dict[str, Any]
    trace_paths: List[Path] = field(default_factory=list)
    threads: int = 1

    @property
    def bounds_from_data(self) -> bool:
        return self.values['bounds'] == 'from-data'

    @property
    def seed(self) -> int:
        return int(self.values['seed'])

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], trace_paths: Sequence = (),
                     threads: int = 1) -> 'RunConfig':
        values = dict(values)
        paths = [Path(p) for p in trace_paths]
        missing = [str(p) for p in paths if not p.is_file()]
        if missing:
            raise ConfigError(f"trace files not found: {', '.join(missing)}")
        if values['bounds'] not in ('explicit', 'from-data'):
            raise ConfigError(f"bounds must be 'explicit' or 'from-data', got {values['bounds']!r}")
        if values['bounds'] == 'from-data' and not paths:
            raise ConfigError("bounds=from-data needs at least one trace")

        try:
            params = ControllerParams.from_config(values)
            model = VehicleModel(tau=values['tau'])
            bounds = None if values['bounds'] == 'from-data' else AccelBounds.from_config(values)
            grid = GridSpec.from_config(values)
            criterion = SafetyCriterion(kind=values['criterion'], h=values['headway'])
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not 0 <= values['quantile'] < 0.5:
            raise ConfigError(f"quantile must be in [0, 0.5), got {values['quantile']}")
        if values['dt'] <= 0:
            raise ConfigError(f"dt must be positive, got {values['dt']}")

        return cls(params=params, model=model, bounds=bounds, grid=grid, criterion=criterion,
                   values=values, trace_paths=paths, threads=threads)

    def with_bounds(self, bounds: AccelBounds) -> 'RunConfig':
        values = dict(self.values)
        values.update(bounds.to_config())
        return RunConfig(params=self.params, model=self.model, bounds=bounds, grid=self.grid,
                         criterion=self.criterion, values=values, trace_paths=self.trace_paths,
                         threads=self.threads)

    def to_header_lines(self) -> List[str]:
        """Resolved settings echoed into artifact headers; thread count is left out"""
        return config_header_lines(self.values, self.trace_paths)


if __name__ == "__main__":
    print("Current ReachGuard Configuration:")
    print(f"Summary: {get_config_summary()}")
