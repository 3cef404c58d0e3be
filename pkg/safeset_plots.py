"""
Plotly figures for safe sets, driving data and simulations
"""

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from modules.controller import ControllerParams, zone_boundaries
from modules.driving_data import DriveTrace
from modules.levelset import ValueField, extract_slice
from modules.simulator import SimResult

SLICE_COLORS = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b']


def slice_figure(value_field: ValueField, v_av_list: Sequence[float],
                 traces: Sequence[DriveTrace] = (), speed_window: float = 1.0) -> go.Figure:
    """Zero-level contours in the (x_rel, v_rel) plane, driving samples near each speed overlaid"""
    fig = go.Figure()
    for n, v_av in enumerate(v_av_list):
        color = SLICE_COLORS[n % len(SLICE_COLORS)]
        for k, poly in enumerate(extract_slice(value_field, v_av)):
            fig.add_trace(go.Scatter(
                x=poly[:, 0], y=poly[:, 1], mode='lines', line=dict(color=color, width=2),
                name=f"V=0 at v_AV={v_av:g} m/s", legendgroup=f"slice{n}", showlegend=k == 0,
            ))
        for trace in traces:
            frame = trace.frame
            near = frame[(frame['v_av'] - v_av).abs() <= speed_window]
            if len(near):
                fig.add_trace(go.Scatter(
                    x=near['x_rel'], y=near['v_rel'], mode='markers',
                    marker=dict(color=color, size=4, opacity=0.5),
                    name=f"{trace.source} (v_AV≈{v_av:g})", legendgroup=f"slice{n}",
                ))
    fig.update_layout(
        title=f"Safe set boundary, {value_field.criterion.describe()} criterion",
        xaxis_title='Relative distance x_rel (m)',
        yaxis_title='Relative speed v_rel (m/s)',
        template='plotly_white',
    )
    return fig


def simulation_figure(result: SimResult, title: str = 'Closed-loop replay') -> go.Figure:
    """Gap and speeds over time; recorded human data shown when available"""
    series = result.series
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True,
                        subplot_titles=('Gap (m)', 'Speed (m/s)'))
    lead_speed = series['v_rel'] + series['v_av']
    fig.add_trace(go.Scatter(x=series['t'], y=series['x_rel'], name='FollowerStopper gap',
                             line=dict(color='#d62728')), row=1, col=1)
    fig.add_trace(go.Scatter(x=series['t'], y=series['v_av'], name='FollowerStopper speed',
                             line=dict(color='#d62728')), row=2, col=1)
    fig.add_trace(go.Scatter(x=series['t'], y=lead_speed, name='Lead speed',
                             line=dict(color='black', dash='dot')), row=2, col=1)
    if result.reference is not None:
        ref = result.reference
        fig.add_trace(go.Scatter(x=ref['t'], y=ref['x_rel'], name='Recorded gap',
                                 line=dict(color='#1f77b4')), row=1, col=1)
        fig.add_trace(go.Scatter(x=ref['t'], y=ref['v_av'], name='Recorded speed',
                                 line=dict(color='#1f77b4')), row=2, col=1)
    fig.update_xaxes(title_text='Time (s)', row=2, col=1)
    fig.update_layout(title=title, template='plotly_white')
    return fig


def zone_boundary_figure(params_a: ControllerParams, params_b: ControllerParams, v_av: float,
                         v_rel_range=(-15.0, 5.0)) -> go.Figure:
    """Switching curves x_1..x_3 of two controller designs at one ego speed"""
    v_rel = np.linspace(v_rel_range[0], v_rel_range[1], 200)
    fig = go.Figure()
    for params, dash in ((params_a, 'solid'), (params_b, 'dash')):
        curves = zone_boundaries(params, v_rel, np.full_like(v_rel, v_av))
        for j, x_j in enumerate(curves, start=1):
            fig.add_trace(go.Scatter(x=x_j, y=v_rel, mode='lines', line=dict(dash=dash),
                                     name=f"{params.variant.value} x_{j}"))
    fig.update_layout(
        title=f"Zone boundaries at v_AV={v_av:g} m/s",
        xaxis_title='Relative distance x_rel (m)',
        yaxis_title='Relative speed v_rel (m/s)',
        template='plotly_white',
    )
    return fig


def safe_set_surface_figure(value_field: ValueField) -> go.Figure:
    x_rel, v_rel, v_av = value_field.grid.mesh()
    fig = go.Figure(go.Isosurface(
        x=x_rel.ravel(), y=v_rel.ravel(), z=v_av.ravel(), value=value_field.values.ravel(),
        isomin=0.0, isomax=0.0, surface_count=1, caps=dict(x_show=False, y_show=False, z_show=False),
        colorscale='Reds', showscale=False,
    ))
    fig.update_layout(
        title='Zero level set of V',
        scene=dict(xaxis_title='x_rel (m)', yaxis_title='v_rel (m/s)', zaxis_title='v_AV (m/s)'),
    )
    return fig


def write_figure(fig: go.Figure, path, div_id: Optional[str] = 'reachguard') -> Path:
    path = Path(path)
    fig.write_html(path, include_plotlyjs='cdn', div_id=div_id)
    return path
