"""
Readers and writers for value fields (.vfield) and slice contours (CSV)
"""

import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from modules.levelset import GridSpec, SafetyCriterion, ValueField

FIELD_FORMAT = 'reachguard-vfield-1'
PathLike = Union[str, Path]


class FieldFormatError(ValueError):
    """Raised when a .vfield file cannot be decoded"""


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ','.join(_fmt(v) for v in value)
    return str(value)


def field_header(value_field: ValueField, extra: Optional[Dict[str, Any]] = None) -> List[str]:
    grid = value_field.grid
    lines = {
        'format': FIELD_FORMAT,
        'x_rel_bounds': (grid.lower[0], grid.upper[0]),
        'v_rel_bounds': (grid.lower[1], grid.upper[1]),
        'v_av_bounds': (grid.lower[2], grid.upper[2]),
        'shape': grid.shape,
        'criterion': value_field.criterion.kind.value,
        'headway': value_field.criterion.h,
        'iterations': value_field.iterations,
        'converged': 'true' if value_field.converged else 'false',
        'residual': float(value_field.residual),
        'horizon': float(value_field.horizon),
    }
    for key, value in sorted(value_field.metadata.items()):
        lines[f'meta.{key}'] = value
    for key, value in sorted((extra or {}).items()):
        lines[f'config.{key}'] = value
    return [f"{key}: {_fmt(value)}" for key, value in lines.items()]


def write_value_field(value_field: ValueField, path: PathLike, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Text header, blank line, then row-major little-endian float64 node values"""
    path = Path(path)
    header = '\n'.join(field_header(value_field, extra)) + '\n\n'
    payload = np.ascontiguousarray(value_field.values, dtype='<f8').tobytes(order='C')
    path.write_bytes(header.encode('utf-8') + payload)
    return path


def _parse_pair(text: str):
    parts = [p.strip() for p in text.split(',')]
    return tuple(float(p) for p in parts)


def _parse_scalar(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_value_field(path: PathLike) -> ValueField:
    path = Path(path)
    raw = path.read_bytes()
    split = raw.find(b'\n\n')
    if split < 0:
        raise FieldFormatError(f"{path}: missing blank line after header")

    header: Dict[str, str] = {}
    for line in raw[:split].decode('utf-8').splitlines():
        key, sep, value = line.partition(':')
        if not sep:
            raise FieldFormatError(f"{path}: malformed header line {line!r}")
        header[key.strip()] = value.strip()
    if header.get('format') != FIELD_FORMAT:
        raise FieldFormatError(f"{path}: unsupported format {header.get('format')!r}")

    try:
        xb, vb, wb = (_parse_pair(header[k]) for k in ('x_rel_bounds', 'v_rel_bounds', 'v_av_bounds'))
        shape = tuple(int(n) for n in header['shape'].split(','))
        grid = GridSpec(lower=(xb[0], vb[0], wb[0]), upper=(xb[1], vb[1], wb[1]), shape=shape)
        criterion = SafetyCriterion(kind=header['criterion'], h=float(header['headway']))
    except (KeyError, ValueError) as e:
        raise FieldFormatError(f"{path}: bad header ({e})") from e

    payload = raw[split + 2:]
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise FieldFormatError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype='<f8').reshape(shape).astype(float)

    metadata = {k[len('meta.'):]: _parse_scalar(v) for k, v in header.items() if k.startswith('meta.')}
    return ValueField(
        grid=grid,
        values=values,
        criterion=criterion,
        iterations=int(header.get('iterations', 0)),
        converged=header.get('converged') == 'true',
        residual=float(header.get('residual', math.inf)),
        horizon=float(header.get('horizon', 0.0)),
        metadata=metadata,
    )


def write_slice_csv(polylines: Iterable[np.ndarray], path: PathLike,
                    header_lines: Iterable[str] = ()) -> Path:
    """`x_rel,v_rel` vertices, one blank line between polylines, `#` provenance lines first"""
    path = Path(path)
    parts = [f"# {line}\n" for line in header_lines]
    parts.append('x_rel,v_rel\n')
    blocks = []
    for poly in polylines:
        frame = pd.DataFrame(np.asarray(poly, dtype=float), columns=['x_rel', 'v_rel'])
        blocks.append(frame.to_csv(index=False, header=False, float_format='%.6f', lineterminator='\n'))
    parts.append('\n'.join(blocks))
    path.write_text(''.join(parts))
    return path


def read_slice_csv(path: PathLike) -> List[np.ndarray]:
    polylines: List[np.ndarray] = []
    current: List[List[float]] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line.startswith('#') or line == 'x_rel,v_rel':
            continue
        if not line:
            if current:
                polylines.append(np.array(current))
                current = []
            continue
        x, v = line.split(',')
        current.append([float(x), float(v)])
    if current:
        polylines.append(np.array(current))
    return polylines
