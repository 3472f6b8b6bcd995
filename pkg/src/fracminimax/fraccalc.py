"""Riemann-Liouville integrals, Caputo derivatives and AC^alpha paths on uniform grids.

Everything here works on nodal data.  A :class:`SampledPath` holds values at
the nodes ``t_0 .. t_j`` of a :class:`Grid` and is read as the piecewise-linear
interpolant of those values.  Integrals are product-trapezoidal: the
interpolant is integrated exactly against the weakly singular kernel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np

from . import kernels


class FracCalcError(ValueError):
    """Raised on invalid input to a fractional-calculus operation."""


# ---------------------------------------------------------------------------
# grids and paths


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_j = j * T / N`` for ``j = 0..N``."""

    T: float
    N: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise FracCalcError(f"horizon must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise FracCalcError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def h(self) -> float:
        return self.T / self.N

    def nodes(self, last_index: Optional[int] = None) -> np.ndarray:
        j = self.N if last_index is None else last_index
        return np.arange(j + 1) * self.h

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the node at time ``t``; raises if ``t`` is not a node."""
        j = int(round(t / self.h))
        if j < 0 or j > self.N or abs(j * self.h - t) > tol * max(1.0, self.T):
            raise FracCalcError(f"time {t} is not a grid node")
        return j


@dataclass(frozen=True, eq=False)
class SampledPath:
    """Nodal values ``v_0 .. v_j`` of a path on ``[0, t_j]``.

    ``values`` always has shape ``(j + 1, n)``; scalar paths have ``n == 1``.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise FracCalcError(f"values must have shape (j+1, n), got {v.shape}")
        if v.shape[0] > self.grid.N + 1:
            raise FracCalcError("path is longer than its grid")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def last_index(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes(self.last_index)

    @property
    def t(self) -> float:
        return self.last_index * self.grid.h

    def truncate(self, j: int) -> "SampledPath":
        if not 0 <= j <= self.last_index:
            raise FracCalcError(f"index {j} outside 0..{self.last_index}")
        return SampledPath(self.grid, self.values[: j + 1])

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class AcPath:
    """Path ``x(t) = x0 + (I^alpha psi)(t)`` stored through its generator.

    ``nodes`` optionally holds nodal values known more accurately than the
    quadrature of the sampled generator (closed forms, solver output); when
    absent they are computed on first use.
    """

    x0: np.ndarray
    generator: SampledPath
    alpha: float
    nodes: Optional[SampledPath] = None
    _realized: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64)).copy()
        if x0.ndim != 1:
            raise FracCalcError("x0 must be a vector")
        if x0.shape[0] != self.generator.dim:
            raise FracCalcError(
                f"x0 has dimension {x0.shape[0]} but generator has {self.generator.dim}"
            )
        if not 0.0 < self.alpha < 1.0:
            raise FracCalcError(f"order must lie in (0, 1), got {self.alpha}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        nd = self.nodes
        if nd is not None:
            if nd.values.shape != self.generator.values.shape:
                raise FracCalcError("nodes and generator have different shapes")
            if np.max(np.abs(nd.values[0] - x0)) > 1e-12 * (1.0 + np.max(np.abs(x0))):
                raise FracCalcError("first node must equal x0")

    @property
    def grid(self) -> Grid:
        return self.generator.grid

    @property
    def last_index(self) -> int:
        return self.generator.last_index

    @property
    def dim(self) -> int:
        return self.generator.dim

    def realize(self) -> SampledPath:
        if self.nodes is not None:
            return self.nodes
        if "path" not in self._realized:
            self._realized["path"] = eval_ac_path(self)
        return self._realized["path"]


PathLike = Union[SampledPath, AcPath]


# ---------------------------------------------------------------------------
# special functions


def gamma_fn(x: float) -> float:
    """Gamma function for ``x > 0`` (delegates to :func:`math.gamma`)."""
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise FracCalcError(f"gamma_fn needs x > 0, got {x}")
    return math.gamma(x)


# ---------------------------------------------------------------------------
# product-integration weights


@lru_cache(maxsize=64)
def _power_weights(alpha: float, M: int, h: float):
    """Hat-function moments of ``s^(alpha-1)/Gamma(alpha)`` on cells ``[(m-1)h, mh]``."""
    m = np.arange(M + 1, dtype=np.float64)
    mm1 = np.maximum(m - 1.0, 0.0)
    scale = h**alpha / math.gamma(alpha + 2.0)
    # zeroth and first kernel moments, in units of h and scaled by Gamma(alpha+2)
    k0 = (m**alpha - mm1**alpha) * (alpha + 1.0)
    k1 = (m ** (alpha + 1.0) - mm1 ** (alpha + 1.0)) * alpha
    A = scale * (k1 - mm1 * k0)
    B = scale * (m * k0 - k1)
    A[0] = B[0] = 0.0
    A.setflags(write=False)
    B.setflags(write=False)
    return A, B


def power_weights(alpha: float, M: int, h: float):
    """Product-trapezoid weights ``(A, B)`` for ``I^alpha`` on ``M`` cells of width ``h``."""
    return _power_weights(float(alpha), int(M), float(h))


@lru_cache(maxsize=64)
def _rectangle_weights(alpha: float, M: int, h: float):
    m = np.arange(M + 1, dtype=np.float64)
    P = h**alpha / math.gamma(alpha + 1.0) * (m**alpha - np.maximum(m - 1.0, 0.0) ** alpha)
    P[0] = 0.0
    P.setflags(write=False)
    return P


def rectangle_weights(alpha: float, M: int, h: float) -> np.ndarray:
    """Product-rectangle (left endpoint) weights used by the PECE predictor."""
    return _rectangle_weights(float(alpha), int(M), float(h))


# ---------------------------------------------------------------------------
# operators


def _check_finite(path: SampledPath, what: str):
    if not np.all(np.isfinite(path.values)):
        raise FracCalcError(f"{what} contains non-finite values")


def _check_order(alpha: float, lo_open: bool, hi_open: bool):
    a = float(alpha)
    ok = math.isfinite(a) and (a > 0 if lo_open else a >= 0) and (a < 1 if hi_open else a <= 1)
    if not ok:
        raise FracCalcError(f"order {alpha} outside the admissible range")


def rl_integral(psi: SampledPath, alpha: float) -> SampledPath:
    """Riemann-Liouville integral ``I^alpha psi`` at every node of ``psi``.

    ``alpha = 0`` returns ``psi`` itself and ``alpha = 1`` is the running
    trapezoidal integral.
    """
    _check_order(alpha, lo_open=False, hi_open=False)
    _check_finite(psi, "integrand")
    if alpha == 0.0:
        return psi
    A, B = power_weights(alpha, psi.last_index, psi.grid.h)
    return SampledPath(psi.grid, kernels.product_apply(A, B, psi.values))


@lru_cache(maxsize=64)
def _l1_data(alpha: float, M: int, h: float):
    m = np.arange(M + 1, dtype=np.float64)
    c = (m ** (1.0 - alpha) - np.maximum(m - 1.0, 0.0) ** (1.0 - alpha)) / (
        h**alpha * math.gamma(2.0 - alpha)
    )
    c[0] = 0.0
    # L1 applied to t^alpha/Gamma(alpha+1); its exact derivative is 1
    base = (m * h) ** alpha / math.gamma(alpha + 1.0)
    diffs = np.zeros((M + 1, 1))
    diffs[:M, 0] = np.diff(base)
    e = kernels.product_apply(c, np.zeros(M + 1), diffs)[:, 0]
    c.setflags(write=False)
    e.setflags(write=False)
    return c, e


def _l1(values: np.ndarray, alpha: float, h: float) -> np.ndarray:
    M = values.shape[0] - 1
    c, e = _l1_data(float(alpha), M, float(h))
    diffs = np.zeros_like(values)
    diffs[:M] = np.diff(values, axis=0)
    out = kernels.product_apply(c, np.zeros(M + 1), diffs)
    # leading-order correction for the t^alpha onset of an AC^alpha path
    lead = (values[1] - values[0]) * math.gamma(alpha + 1.0) / h**alpha
    out[1:] += np.outer(1.0 - e[1:], lead)
    out[0] = out[1]
    return out


def caputo_derivative(x: PathLike, alpha: float) -> SampledPath:
    """Caputo derivative of order ``alpha`` at every node.

    For an :class:`AcPath` of the same order the stored generator is returned.
    Sampled input goes through the L1 scheme (exact Caputo derivative of the
    piecewise-linear interpolant) with a correction that makes it exact for
    ``c * t^alpha``, the generic onset of an AC^alpha path.  The value at
    node 0 is copied from node 1.
    """
    _check_order(alpha, lo_open=True, hi_open=True)
    if isinstance(x, AcPath):
        if abs(x.alpha - alpha) < 1e-15:
            return x.generator
        x = x.realize()
    if x.last_index < 1:
        raise FracCalcError("need at least 2 nodes")
    _check_finite(x, "path")
    return SampledPath(x.grid, _l1(x.values, alpha, x.grid.h))


def make_ac_path(x0, psi: SampledPath, alpha: float, nodes: Optional[SampledPath] = None) -> AcPath:
    _check_finite(psi, "generator")
    return AcPath(x0, psi, alpha, nodes)


def eval_ac_path(x: AcPath) -> SampledPath:
    """Nodal values ``x0 + I^alpha psi``."""
    vals = rl_integral(x.generator, x.alpha).values + x.x0[None, :]
    return SampledPath(x.grid, vals)


def check_semigroup(psi: SampledPath, alpha: float, beta: float) -> float:
    """Max nodal gap between ``I^alpha(I^beta psi)`` and ``I^(alpha+beta) psi``."""
    _check_order(alpha, False, False)
    _check_order(beta, False, False)
    if alpha + beta > 1.0:
        raise FracCalcError("alpha + beta must not exceed 1")
    lhs = rl_integral(rl_integral(psi, beta), alpha).values
    rhs = rl_integral(psi, alpha + beta).values
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# construction helpers


def sample_function(grid: Grid, fn: Callable[[np.ndarray], np.ndarray], last_index=None) -> SampledPath:
    """Evaluate ``fn`` on the grid nodes.  ``fn`` maps times of shape (m,) to (m,) or (m, n)."""
    t = grid.nodes(last_index)
    return SampledPath(grid, np.asarray(fn(t), dtype=np.float64))


def constant_path(grid: Grid, value, last_index=None) -> SampledPath:
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    j = grid.N if last_index is None else last_index
    return SampledPath(grid, np.tile(value, (j + 1, 1)))


# ---------------------------------------------------------------------------
# CSV


def write_path_csv(path: SampledPath, file, columns=None) -> None:
    """Write ``t,x1..xn`` rows at full double precision."""
    names = columns or [f"x{i + 1}" for i in range(path.dim)]
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", newline="") if own else file
    try:
        w = csv.writer(fh)
        w.writerow(["t", *names])
        for t, row in zip(path.times, path.values):
            w.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in row)])
    finally:
        if own:
            fh.close()


def read_path_csv(file, grid: Optional[Grid] = None) -> SampledPath:
    """Read a path written by :func:`write_path_csv`.

    Without ``grid`` the grid is inferred with ``T`` equal to the last time.
    Non-uniform time columns are rejected.
    """
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, newline="") if own else file
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if len(rows) < 2 or not rows[0] or rows[0][0] != "t":
        raise FracCalcError("CSV must start with a header row beginning with 't'")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=np.float64)
    t, vals = data[:, 0], data[:, 1:]
    if vals.shape[1] < 1:
        raise FracCalcError("CSV has no value columns")
    if t[0] != 0.0:
        raise FracCalcError("paths start at t = 0")
    if len(t) > 1:
        steps = np.diff(t)
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, t[-1]):
            raise FracCalcError("non-uniform grid")
    if grid is None:
        if len(t) < 2:
            raise FracCalcError("cannot infer a grid from a single node")
        grid = Grid(float(t[-1]), len(t) - 1)
    elif len(t) > 1 and abs((t[1] - t[0]) - grid.h) > 1e-9 * grid.h:
        raise FracCalcError("CSV step does not match the supplied grid")
    return SampledPath(grid, vals)
