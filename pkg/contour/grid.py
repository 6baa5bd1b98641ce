"""
Loss landscapes over (p_w, p_l) with the reference held fixed.
Every cell is evaluated with the same scalar `losses.loss` call a caller would
make, so a grid value re-evaluated pointwise matches it bit for bit.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from losses import LossDomainError, LossKind, LossSpec, PairPoint, loss

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]

DEFAULT_PW_RANGE = (0.005, 0.995)
DEFAULT_PL_RANGE = (0.005, 0.5)
DEFAULT_RESOLUTION = (200, 200)
DEFAULT_REF = (0.4, 0.1)
FIGURE2_PL_RANGE = (0.005, 0.25)
FIGURE2_ALPHAS = (0.01, 0.1, 1.0, 10.0)


class GridError(ValueError):
    """Grid ranges conflict with a loss's domain, or no cell can be evaluated."""


@dataclass(frozen=True)
class ContourGrid:
    """values[i, j] is the loss at (pw_axis[j], pl_axis[i]); masked cells lie off the simplex."""

    spec: LossSpec
    ref: Tuple[float, float]
    pw_axis: np.ndarray
    pl_axis: np.ndarray
    values: np.ma.MaskedArray
    mask_simplex: bool = False

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def value_at(self, pw: float, pl: float) -> float:
        cols, rows = np.flatnonzero(self.pw_axis == pw), np.flatnonzero(self.pl_axis == pl)
        if cols.size == 0 or rows.size == 0:
            raise GridError(f"({pw}, {pl}) is not a grid point")
        i, j = int(rows[0]), int(cols[0])
        if self.values.mask[i, j]:
            raise GridError(f"cell ({pw}, {pl}) is masked")
        return float(self.values.data[i, j])

    def to_frame(self) -> pd.DataFrame:
        pw, pl = np.meshgrid(self.pw_axis, self.pl_axis)
        values = self.values.data.astype(np.float64).copy()
        values[self.values.mask] = np.nan
        return pd.DataFrame({"pw": pw.ravel(), "pl": pl.ravel(), "loss": values.ravel()})

    def metadata(self) -> Dict:
        return {
            "spec": self.spec.to_dict(),
            "ref": list(self.ref),
            "pw_axis": self.pw_axis.tolist(),
            "pl_axis": self.pl_axis.tolist(),
            "mask_simplex": self.mask_simplex,
            "shape": list(self.shape),
        }


def check_ranges(spec: LossSpec, pw_range: Interval, pl_range: Interval) -> None:
    """Raise GridError when a range leaves [0, 1] or reaches a probability the loss takes log of."""
    for name, (lo, hi) in (("pw", pw_range), ("pl", pl_range)):
        if not 0.0 <= lo < hi <= 1.0:
            raise GridError(f"{name} range [{lo}, {hi}] must satisfy 0 <= min < max <= 1")
    if pw_range[0] <= 0.0:
        raise GridError(f"{spec.kind.value} needs pw > 0 everywhere, got pw min {pw_range[0]}")
    if spec.kind is not LossKind.BDPO and pl_range[0] <= 0.0:
        raise GridError(
            f"{spec.kind.value} needs pl > 0 everywhere (log pl is unbounded at 0), "
            f"got pl min {pl_range[0]}; only bdpo is defined at pl = 0"
        )


def _axis(bounds: Interval, size: int, anchor: Optional[float]) -> np.ndarray:
    axis = np.linspace(bounds[0], bounds[1], size)
    if anchor is not None and bounds[0] <= anchor <= bounds[1] and anchor not in axis:
        axis = np.sort(np.append(axis, anchor))
    return axis


def evaluate_grid(
    spec: LossSpec,
    ref: Tuple[float, float] = DEFAULT_REF,
    pw_range: Interval = DEFAULT_PW_RANGE,
    pl_range: Interval = DEFAULT_PL_RANGE,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
    mask_simplex: bool = False,
    include_ref: bool = True,
) -> ContourGrid:
    """
    :param resolution: (number of pw samples, number of pl samples), each >= 2
    :param include_ref: add ref's coordinates to the axes when they fall inside the ranges
    """
    check_ranges(spec, pw_range, pl_range)
    if min(resolution) < 2:
        raise GridError(f"resolution must be at least 2 per axis, got {resolution}")
    r_w, r_l = float(ref[0]), float(ref[1])
    try:
        PairPoint(r_w, r_l, r_w, r_l)
    except LossDomainError as e:
        raise GridError(f"invalid reference {ref}: {e}") from e

    pw_axis = _axis(pw_range, resolution[0], r_w if include_ref else None)
    pl_axis = _axis(pl_range, resolution[1], r_l if include_ref else None)

    data = np.zeros((pl_axis.size, pw_axis.size))
    mask = np.zeros_like(data, dtype=bool)
    for i, pl in enumerate(pl_axis.tolist()):
        for j, pw in enumerate(pw_axis.tolist()):
            if mask_simplex and pw + pl > 1.0:
                mask[i, j] = True
                continue
            data[i, j] = loss(PairPoint(pw, pl, r_w, r_l), spec)

    if mask.all():
        raise GridError("every cell of the grid is masked")
    logger.debug("evaluated %s grid of shape %s", spec.kind.value, data.shape)
    return ContourGrid(
        spec=spec,
        ref=(r_w, r_l),
        pw_axis=pw_axis,
        pl_axis=pl_axis,
        values=np.ma.MaskedArray(data, mask=mask, shrink=False),
        mask_simplex=mask_simplex,
    )


def grid_argmin(grid: ContourGrid) -> Tuple[float, float, float]:
    """Minimum over unmasked cells; ties go to the largest pw, then the smallest pl."""
    values = grid.values
    if values.mask.all():
        raise GridError("every cell of the grid is masked")
    best = values.min()
    rows, cols = np.nonzero((values.data == best) & ~values.mask)
    candidates = sorted(zip(cols, rows), key=lambda c: (-grid.pw_axis[c[0]], grid.pl_axis[c[1]]))
    j, i = candidates[0]
    return float(grid.pw_axis[j]), float(grid.pl_axis[i]), float(values.data[i, j])


def alpha_sweep(
    ref: Tuple[float, float],
    alphas: Sequence[float] = FIGURE2_ALPHAS,
    beta: float = 0.1,
    pw_range: Interval = DEFAULT_PW_RANGE,
    pl_range: Interval = FIGURE2_PL_RANGE,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
    mask_simplex: bool = False,
) -> List[ContourGrid]:
    """One DPO+NLL grid per alpha, in input order."""
    if len(alphas) == 0:
        raise GridError("alpha sweep needs at least one alpha")
    try:
        specs = [LossSpec(LossKind.DPO_NLL, beta=beta, alpha=alpha) for alpha in alphas]
    except LossDomainError as e:
        raise GridError(str(e)) from e
    return [
        evaluate_grid(spec, ref, pw_range, pl_range, resolution, mask_simplex) for spec in specs
    ]


def pw_dominance(grid: ContourGrid) -> float:
    """
    Loss variation along pw (at pl = ref pl) over the variation along pl
    (at pw = ref pw). Grows with the NLL weight, which moves along pw only.
    """
    r_w, r_l = grid.ref
    row = np.flatnonzero(grid.pl_axis == r_l)
    col = np.flatnonzero(grid.pw_axis == r_w)
    if row.size == 0 or col.size == 0:
        raise GridError("pw_dominance needs the reference coordinates on the grid axes")
    along_pw = grid.values[row[0], :].compressed()
    along_pl = grid.values[:, col[0]].compressed()
    return float(np.ptp(along_pw) / np.ptp(along_pl))
