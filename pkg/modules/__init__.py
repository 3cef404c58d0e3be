"""
ReachGuard core modules: controller, dynamics, level-set solver, data and simulation
"""

# Make modules importable
from . import controller, contours, driving_data, dynamics, field_io, levelset, simulator

__all__ = [
    'controller',
    'contours',
    'driving_data',
    'dynamics',
    'field_io',
    'levelset',
    'simulator',
]
