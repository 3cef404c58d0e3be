"""
ReachGuard command line
Safe-set synthesis, slicing, data coverage checks, bound estimation,
closed-loop simulation and synthetic trace generation
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from modules.controller import ControllerParams, Variant
from modules.driving_data import (
    InsufficientDataError,
    Scenario,
    TraceFormatError,
    coverage,
    estimate_accel_bounds,
    min_time_headway,
    parse_traces,
    synth_trace,
)
from modules.field_io import FieldFormatError, field_header, read_value_field, write_slice_csv, write_value_field
from modules.levelset import extract_slice, solve
from modules.simulator import LeadProfile, simulate
from reach_config import (
    ConfigError,
    RunConfig,
    config_header_lines,
    get_config_summary,
    get_default_config,
    resolve_config,
    resolve_threads,
)

logger = logging.getLogger('reachguard')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_UNCONVERGED = 3

CONTROLLER_KEYS = ['variant', 'omega1', 'omega2', 'omega3', 'alpha1', 'alpha2', 'alpha3', 'h1', 'h2', 'h3', 'r']
VEHICLE_KEYS = ['tau', 'bounds', 'u_min', 'u_max', 'd_min', 'd_max']
GRID_KEYS = ['x_rel_min', 'x_rel_max', 'v_rel_min', 'v_rel_max', 'v_av_min', 'v_av_max', 'nx', 'nv', 'nw']
SOLVER_KEYS = ['criterion', 'headway', 'tol', 't_max', 'cfl']
DATA_KEYS = ['quantile', 'smooth_window', 'widen', 'v_floor']


class UsageError(Exception):
    pass


class ReachGuardParser(argparse.ArgumentParser):
    """argparse with usage errors routed to exit code 1"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_overrides(parser: argparse.ArgumentParser, keys: Iterable[str]) -> None:
    defaults = get_default_config()
    group = parser.add_argument_group('config overrides')
    for key in keys:
        default = defaults[key]
        kind = type(default) if isinstance(default, (int, float)) else str
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, type=kind, default=None,
                           help=f"(default {default})")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = ReachGuardParser(prog='reachguard', description='Safety verification for FollowerStopper car following')
    parser.add_argument('--config', help='key=value config file')
    parser.add_argument('--threads', type=int, default=None, help='worker threads (env REACHGUARD_THREADS)')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=ReachGuardParser)

    p = sub.add_parser('safeset', help='solve the value field and write a .vfield file')
    p.add_argument('--out', required=True)
    p.add_argument('--trace', action='append', default=[], help='trace CSV for bounds=from-data')
    p.add_argument('--allow-unconverged', action='store_true')
    p.add_argument('--html', help='also write a 3-D plotly view of the safe set')
    _add_overrides(p, CONTROLLER_KEYS + VEHICLE_KEYS + GRID_KEYS + SOLVER_KEYS + DATA_KEYS)

    p = sub.add_parser('slice', help='zero-level contours at given ego speeds')
    p.add_argument('field')
    p.add_argument('--v-av', required=True, type=_float_list, help='comma-separated ego speeds')
    p.add_argument('--out-dir', default='.')
    p.add_argument('--html', help='also write a plotly figure')
    p.add_argument('--trace', action='append', default=[], help='traces to overlay in the figure')

    p = sub.add_parser('check', help='coverage of driving traces by a safe set')
    p.add_argument('field')
    p.add_argument('traces', nargs='+')
    p.add_argument('--csv', help='violations CSV (default: FIELD with a .violations.csv suffix)')
    _add_overrides(p, ['margin'])

    p = sub.add_parser('estimate', help='acceleration bounds and minimum headway from traces')
    p.add_argument('traces', nargs='+')
    _add_overrides(p, DATA_KEYS)

    p = sub.add_parser('simulate', help='closed-loop replay behind a lead vehicle')
    lead = p.add_mutually_exclusive_group(required=True)
    lead.add_argument('--lead', help='trace CSV whose lead vehicle is replayed')
    lead.add_argument('--scenario', choices=[s.value for s in Scenario])
    lead.add_argument('--steps', type=_float_list, help='plateau lead speeds, e.g. 5,10,15')
    p.add_argument('--plateau', type=float, default=60.0, help='seconds per step plateau')
    p.add_argument('--duration', type=float, default=120.0, help='synthetic scenario length (s)')
    p.add_argument('--gap', type=float, default=None, help='initial gap (m)')
    p.add_argument('--trace', action='append', default=[], help='trace CSV for bounds=from-data')
    p.add_argument('--out', required=True)
    p.add_argument('--html')
    p.add_argument('--zones-html', help='zone boundaries of both variants at the initial lead speed')
    _add_overrides(p, CONTROLLER_KEYS + VEHICLE_KEYS + DATA_KEYS + ['dt', 'seed'])

    p = sub.add_parser('synth', help='write a synthetic driving trace')
    p.add_argument('--scenario', required=True, choices=[s.value for s in Scenario])
    p.add_argument('--duration', type=float, default=120.0)
    p.add_argument('--sample-dt', type=float, default=0.1)
    p.add_argument('--out', required=True)
    _add_overrides(p, ['seed'])
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    known = get_default_config()
    return {k: v for k, v in vars(args).items() if k in known and v is not None}


def _resolve(args: argparse.Namespace, trace_paths: Sequence = ()) -> RunConfig:
    values = resolve_config(args.config, _overrides(args))
    logger.debug("resolved config: %s", values)
    return RunConfig.from_mapping(values, trace_paths=trace_paths, threads=resolve_threads(args.threads))


def _with_data_bounds(run: RunConfig) -> RunConfig:
    if not run.bounds_from_data:
        return run
    traces = parse_traces(run.trace_paths, threads=run.threads)
    bounds = estimate_accel_bounds(traces, quantile=run.values['quantile'],
                                   smooth_window=run.values['smooth_window'],
                                   widen=run.values['widen'])
    print(f"📊 Bounds from {len(traces)} trace(s): u in [{bounds.u_min:.3f}, {bounds.u_max:.3f}], "
          f"d in [{bounds.d_min:.3f}, {bounds.d_max:.3f}]")
    return run.with_bounds(bounds)


def cmd_safeset(args: argparse.Namespace) -> int:
    run = _with_data_bounds(_resolve(args, args.trace))
    print(f"🔧 {get_config_summary(run.values)}")
    value_field = solve(
        run.grid, run.criterion, run.params, run.model, run.bounds,
        tol=run.values['tol'], t_max=run.values['t_max'], cfl=run.values['cfl'], threads=run.threads,
        status_callback=lambda message: print(f"🔄 {message}"),
    )
    path = write_value_field(value_field, args.out, extra=run.values)
    if args.html:
        from safeset_plots import safe_set_surface_figure, write_figure

        write_figure(safe_set_surface_figure(value_field), args.html)
    if not value_field.converged:
        print(f"⚠️ Not converged (residual {value_field.residual:.2e} after {value_field.horizon:.1f} s); "
              f"field written to {path}")
        return EXIT_OK if args.allow_unconverged else EXIT_UNCONVERGED
    print(f"✅ Safe set written to {path}")
    return EXIT_OK


def cmd_slice(args: argparse.Namespace) -> int:
    value_field = read_value_field(args.field)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = [f"field={args.field}"] + field_header(value_field)
    for v_av in args.v_av:
        polylines = extract_slice(value_field, v_av)
        path = write_slice_csv(polylines, out_dir / f"slice_vav{v_av:g}.csv", header + [f"v_av={v_av!r}"])
        print(f"✅ {len(polylines)} contour(s) at v_AV={v_av:g} m/s -> {path}")
    if args.html:
        from safeset_plots import slice_figure, write_figure

        traces = parse_traces(args.trace)
        write_figure(slice_figure(value_field, args.v_av, traces), args.html)
        print(f"✅ Figure written to {args.html}")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    run = _resolve(args, args.traces)
    value_field = read_value_field(args.field)
    traces = parse_traces(run.trace_paths, threads=run.threads)
    report = coverage(value_field, traces, margin=run.values['margin'])
    print(report.to_text())
    csv_path = args.csv or Path(args.field).with_suffix('.violations.csv')
    report.to_csv(csv_path, [f"field={args.field}"] + run.to_header_lines())
    print(f"📄 Violations written to {csv_path}")
    if report.fully_covered:
        print("✅ All in-domain samples lie inside the safe set")
    else:
        print(f"❌ {len(report.violations)} sample(s) outside the safe set")
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    run = _resolve(args, args.traces)
    traces = parse_traces(run.trace_paths, threads=run.threads)
    bounds = estimate_accel_bounds(traces, quantile=run.values['quantile'],
                                   smooth_window=run.values['smooth_window'], widen=run.values['widen'])
    for key, value in bounds.to_config().items():
        print(f"{key}={value!r}")
    try:
        print(f"min_time_headway={min_time_headway(traces, v_floor=run.values['v_floor'])!r}")
    except InsufficientDataError as e:
        print(f"⚠️ {e}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    run = _with_data_bounds(_resolve(args, args.trace))
    gap = args.gap
    if args.lead:
        trace = parse_traces([args.lead])[0]
        lead = LeadProfile.from_trace(trace)
        gap = gap if gap is not None else float(trace.frame['x_rel'].iloc[0])
    elif args.scenario:
        trace = synth_trace(args.scenario, duration=args.duration, seed=run.seed)
        lead = LeadProfile.from_trace(trace)
        gap = gap if gap is not None else float(trace.frame['x_rel'].iloc[0])
    else:
        lead = LeadProfile.steps(args.steps, plateau=args.plateau)
    if gap is None:
        raise UsageError("simulate: --gap is required for a step profile")

    result = simulate(lead, run.params, run.model, run.bounds, initial_gap=gap, dt=run.values['dt'])
    header = run.to_header_lines() + [f"lead={lead.name}", f"initial_gap={gap!r}"]
    path = result.to_csv(args.out, header)
    metrics_path = Path(args.out).with_suffix('.metrics.txt')
    metrics_path.write_text(result.metrics_text() + '\n')
    print(result.metrics_text())
    if args.html:
        from safeset_plots import simulation_figure, write_figure

        write_figure(simulation_figure(result, title=lead.name), args.html)
    if args.zones_html:
        from safeset_plots import write_figure, zone_boundary_figure

        original, modified = (ControllerParams.from_config({**run.values, 'variant': variant.value})
                              for variant in (Variant.ORIGINAL, Variant.MODIFIED))
        write_figure(zone_boundary_figure(original, modified, v_av=float(lead.speeds[0])), args.zones_html)
        print(f"✅ Zone boundaries written to {args.zones_html}")
    status = '❌ Collision' if result.collision else '✅ No collision'
    print(f"{status}; series written to {path}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    # no RunConfig here: synth takes no traces, so bounds=from-data could not resolve
    values = resolve_config(args.config, _overrides(args))
    trace = synth_trace(args.scenario, duration=args.duration, dt=args.sample_dt, seed=values['seed'])
    header = config_header_lines(values) + [f"scenario={args.scenario}",
                                            f"duration={args.duration!r}", f"sample_dt={args.sample_dt!r}"]
    path = trace.to_csv(args.out, header)
    print(f"✅ {len(trace)} samples written to {path}")
    return EXIT_OK


COMMANDS = {
    'safeset': cmd_safeset,
    'slice': cmd_slice,
    'check': cmd_check,
    'estimate': cmd_estimate,
    'simulate': cmd_simulate,
    'synth': cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return COMMANDS[args.command](args)
    except (TraceFormatError, FieldFormatError, InsufficientDataError, FileNotFoundError) as e:
        print(f"❌ Data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ConfigError, ValueError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
