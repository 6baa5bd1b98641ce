from .grid import (
    ContourGrid,
    GridError,
    alpha_sweep,
    check_ranges,
    evaluate_grid,
    grid_argmin,
    pw_dominance,
)
