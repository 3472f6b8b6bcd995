"""Points ``(t, w)`` of the path space and the metric on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .fraccalc import AcPath, FracCalcError, Grid, SampledPath


class PathSpaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PathPoint:
    """A time node together with the path observed up to it.

    ``generator`` optionally carries the Caputo generator of the path on
    ``[0, t]`` when it is known exactly (paths built from an :class:`AcPath`
    or produced by the solvers).
    """

    path: SampledPath
    generator: Optional[SampledPath] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        g = self.generator
        if g is not None:
            if g.last_index != self.path.last_index or g.dim != self.path.dim:
                raise PathSpaceError("generator does not match the path")
            if self.alpha is None:
                raise PathSpaceError("a generator needs its order")

    @property
    def t_index(self) -> int:
        return self.path.last_index

    @property
    def grid(self) -> Grid:
        return self.path.grid

    @property
    def t(self) -> float:
        return self.path.t

    @property
    def dim(self) -> int:
        return self.path.dim

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def current(self) -> np.ndarray:
        return self.path.values[-1]

    @property
    def before_horizon(self) -> bool:
        return self.t_index < self.grid.N


def as_point(x) -> PathPoint:
    if isinstance(x, PathPoint):
        return x
    return restrict(x, x.last_index)


def restrict(x, t_index: int) -> PathPoint:
    """Truncate a path (sampled, AC^alpha, or an existing point) to ``[0, t_{t_index}]``."""
    if isinstance(x, PathPoint):
        if not 0 <= t_index <= x.t_index:
            raise PathSpaceError(f"t_index {t_index} outside 0..{x.t_index}")
        gen = None if x.generator is None else x.generator.truncate(t_index)
        return PathPoint(x.path.truncate(t_index), gen, x.alpha)
    if isinstance(x, AcPath):
        if not 0 <= t_index <= x.last_index:
            raise PathSpaceError(f"t_index {t_index} outside 0..{x.last_index}")
        return PathPoint(x.realize().truncate(t_index), x.generator.truncate(t_index), x.alpha)
    if isinstance(x, SampledPath):
        if not 0 <= t_index <= x.last_index:
            raise PathSpaceError(f"t_index {t_index} outside 0..{x.last_index}")
        return PathPoint(x.truncate(t_index))
    raise TypeError(f"cannot restrict {type(x).__name__}")


def _same_dim(p: PathPoint, q: PathPoint):
    if p.dim != q.dim:
        raise PathSpaceError(f"dimension mismatch: {p.dim} vs {q.dim}")


def dist_star(p: PathPoint, q: PathPoint, refine: bool = False) -> float:
    """One-sided distance: worst node of ``p`` against its nearest point of ``q``.

    The inner minimum runs over the nodes of ``q``; with ``refine=True`` it
    runs over the segments of the piecewise-linear graph of ``q`` instead,
    which can only lower the value.
    """
    _same_dim(p, q)
    return kernels.dist_star(p.path.times, p.values, q.path.times, q.values, segments=refine)


def dist(p: PathPoint, q: PathPoint, refine: bool = False) -> float:
    return max(dist_star(p, q, refine), dist_star(q, p, refine))


def modulus_of_continuity(p, delta: float) -> float:
    """Largest value change over node pairs at most ``delta`` apart."""
    if delta < 0:
        raise PathSpaceError("delta must be nonnegative")
    p = as_point(p)
    lag = int(math.floor(delta / p.grid.h + 1e-9))
    return kernels.modulus(p.values, lag)


class DistBounds(NamedTuple):
    upper: bool
    time_gap: bool
    value_gap: bool
    slack: tuple


def check_dist_bounds(p: PathPoint, q: PathPoint, tol: Optional[float] = None) -> DistBounds:
    """Evaluate the three standard bounds relating ``dist`` to time and value gaps.

    With ``t = t_p >= t_q = t'``, ``k`` the modulus of continuity of ``p`` and
    ``m = max_{tau <= t'} |w_p(tau) - w_q(tau)|``:

    * ``dist <= (t - t') + k(t - t') + m``
    * ``t - t' <= dist``
    * ``m <= dist + k(dist)``

    Each is tested with tolerance ``tol`` (default ``10 h``).  ``slack``
    holds right side minus left side for each.
    """
    _same_dim(p, q)
    if p.grid.h != q.grid.h:
        raise PathSpaceError("points must live on grids with the same step")
    if p.t_index < q.t_index:
        raise PathSpaceError("need t_p >= t_q")
    h = p.grid.h
    tol = 10.0 * h if tol is None else tol
    d = dist(p, q)
    dt = p.t - q.t
    j = q.t_index
    m = float(np.max(np.linalg.norm(p.values[: j + 1] - q.values, axis=1)))
    s1 = dt + modulus_of_continuity(p, dt) + m - d
    s2 = d - dt
    s3 = d + modulus_of_continuity(p, d) - m
    return DistBounds(s1 >= -tol, s2 >= -tol, s3 >= -tol, (s1, s2, s3))


def sampled(values, grid: Grid) -> PathPoint:
    """Shortcut: a :class:`PathPoint` from raw nodal values."""
    try:
        return PathPoint(SampledPath(grid, values))
    except FracCalcError as exc:
        raise PathSpaceError(str(exc)) from exc
