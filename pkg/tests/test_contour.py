import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from contour.grid import (
    DEFAULT_PL_RANGE,
    FIGURE2_ALPHAS,
    ContourGrid,
    GridError,
    alpha_sweep,
    evaluate_grid,
    grid_argmin,
    pw_dominance,
)
from losses import ALL_KINDS, LossKind, LossSpec, PairPoint, loss
from plotters import plot_contour

REF = (0.4, 0.1)
RES = (40, 30)


def grid_for(kind, **kwargs):
    spec_kwargs = {"alpha": 0.0} if LossKind(kind) is LossKind.DPO_NLL else {}
    return evaluate_grid(LossSpec(LossKind(kind), **spec_kwargs), REF, resolution=RES, **kwargs)


def test_reference_cell_is_ln2():
    for kind in ALL_KINDS:
        grid = grid_for(kind)
        assert 0.4 in grid.pw_axis and 0.1 in grid.pl_axis
        assert grid.value_at(0.4, 0.1) == pytest.approx(math.log(2.0), abs=1e-12)


def test_axes_include_reference():
    grid = grid_for("dpo")
    assert grid.shape == (RES[1] + 1, RES[0] + 1)
    plain = evaluate_grid(LossSpec(LossKind.DPO), REF, resolution=RES, include_ref=False)
    assert plain.shape == (RES[1], RES[0])


@pytest.mark.parametrize("kind", ["dpo", "dpop"])
def test_grid_monotone_in_both_directions(kind):
    values = grid_for(kind).values.data
    assert np.all(np.diff(values, axis=0) > 0.0)
    assert np.all(np.diff(values, axis=1) < 0.0)


def test_default_grid():
    grid = evaluate_grid(LossSpec(LossKind.DPO))
    assert grid.shape == (201, 201)
    assert grid.value_at(*REF) == pytest.approx(math.log(2.0), abs=1e-12)
    assert np.all(np.diff(grid.values.data, axis=0) > 0.0)
    assert np.all(np.diff(grid.values.data, axis=1) < 0.0)
    with pytest.raises(GridError):
        grid.value_at(0.5, 0.123)


def test_package_exports():
    import contour

    assert contour.GridError is GridError
    assert contour.evaluate_grid is evaluate_grid
    assert contour.pw_dominance is pw_dominance


def test_bdpo_grid_monotone_and_minimised_at_corner():
    spec = LossSpec(LossKind.BDPO)
    grid = evaluate_grid(spec, REF, pw_range=(0.005, 1.0), pl_range=(0.0, 0.5), resolution=RES)
    assert np.all(np.isfinite(grid.values.data))
    assert np.all(np.diff(grid.values.data, axis=0) > 0.0)
    assert np.all(np.diff(grid.values.data, axis=1) < 0.0)

    masked = evaluate_grid(
        spec, REF, pw_range=(0.005, 1.0), pl_range=(0.0, 0.5), resolution=RES, mask_simplex=True
    )
    pw, pl, value = grid_argmin(masked)
    assert (pw, pl) == (1.0, 0.0)
    assert value == loss(PairPoint(1.0, 0.0, *REF), spec)


def test_simplex_mask():
    grid = evaluate_grid(LossSpec(LossKind.DPO), REF, resolution=RES, mask_simplex=True)
    pw, pl = np.meshgrid(grid.pw_axis, grid.pl_axis)
    assert_array_equal(grid.values.mask, pw + pl > 1.0)
    frame = grid.to_frame()
    assert frame.loss.isna().sum() == grid.values.mask.sum()
    i, j = np.argwhere(grid.values.mask)[0]
    with pytest.raises(GridError):
        grid.value_at(grid.pw_axis[j], grid.pl_axis[i])


def test_dpop_matches_dpo_above_reference_chosen():
    dpo, dpop = grid_for("dpo"), grid_for("dpop")
    above = dpo.pw_axis >= REF[0]
    assert_array_equal(dpop.values.data[:, above], dpo.values.data[:, above])
    assert np.all(dpop.values.data[:, ~above] > dpo.values.data[:, ~above])


def test_grid_cells_match_pointwise_evaluation():
    rng = np.random.default_rng(0)
    for kind in ALL_KINDS:
        grid = grid_for(kind)
        for _ in range(25):
            i = rng.integers(grid.pl_axis.size)
            j = rng.integers(grid.pw_axis.size)
            point = PairPoint(float(grid.pw_axis[j]), float(grid.pl_axis[i]), *REF)
            assert loss(point, grid.spec) == grid.values.data[i, j]


def test_argmin_tie_break():
    pw_axis = np.linspace(0.1, 0.9, 5)
    pl_axis = np.linspace(0.1, 0.5, 4)
    values = np.ma.MaskedArray(np.zeros((4, 5)), mask=np.zeros((4, 5), dtype=bool), shrink=False)
    grid = ContourGrid(LossSpec(LossKind.DPO), REF, pw_axis, pl_axis, values)
    pw, pl, value = grid_argmin(grid)
    assert (pw, pl, value) == (0.9, 0.1, 0.0)


def test_zero_alpha_grid_equals_dpo():
    (nll_grid,) = alpha_sweep(REF, [0.0], pl_range=DEFAULT_PL_RANGE, resolution=RES)
    assert_array_equal(nll_grid.values.data, grid_for("dpo").values.data)


def test_alpha_sweep_is_linear_in_alpha():
    low, high = alpha_sweep(REF, [1.0, 10.0], resolution=RES)
    expected = np.broadcast_to(9.0 * -np.log(low.pw_axis), low.shape)
    assert_allclose(high.values.data - low.values.data, expected, rtol=1e-10, atol=1e-12)


def test_alpha_sweep_shifts_minimum_towards_chosen():
    grids = alpha_sweep(REF, FIGURE2_ALPHAS, resolution=RES)
    argmin_pw = [grid_argmin(grid)[0] for grid in grids]
    assert all(a <= b for a, b in zip(argmin_pw, argmin_pw[1:]))
    dominance = [pw_dominance(grid) for grid in grids]
    assert all(a < b for a, b in zip(dominance, dominance[1:]))
    with pytest.raises(GridError):
        alpha_sweep(REF, [])


def test_domain_errors():
    with pytest.raises(GridError, match="pl > 0"):
        evaluate_grid(LossSpec(LossKind.DPO), REF, pl_range=(0.0, 0.5), resolution=RES)
    with pytest.raises(GridError):
        evaluate_grid(LossSpec(LossKind.BDPO), REF, pw_range=(0.0, 1.0), resolution=RES)
    with pytest.raises(GridError):
        evaluate_grid(LossSpec(LossKind.DPO), REF, resolution=(1, 10))
    with pytest.raises(GridError):
        evaluate_grid(LossSpec(LossKind.DPO), (0.4, 0.0), resolution=RES)


def test_plot_contour_writes_svg(tmp_path):
    grid = grid_for("bdpo", mask_simplex=True)
    path = plot_contour(grid, str(tmp_path / "bdpo.svg"))
    with open(path) as f:
        assert f.read().lstrip().startswith("<?xml")
