"""Densities tabulated on regular 1-D/2-D grids and the slicing transform.

The slicing transform maps a density ``f`` to ``max(beta * f - alpha, 0)``,
with the level ``alpha`` chosen so the result integrates to one.  It is the
large-sample limit of the scaled and projected KDE, and with
``beta = 1 / (1 - eps)`` it removes contamination that is flat over the
target's support (see :func:`check_assumption_a`).

Integrals use the midpoint rule: a grid stores one value per cell, taken at
the cell centre ``origin + (index + 1/2) * cell_size``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .kernels import KernelFamily, WeightedDensityEstimate, estimate_eval
from .qp import NumericError

__all__ = [
    "GridDensity",
    "SliceResult",
    "AssumptionCheck",
    "GridMismatchError",
    "make_grid",
    "slice_mass",
    "slice_transform",
    "decontaminate",
    "mix",
    "check_assumption_a",
    "grid_from_estimate",
    "lp_distance",
]

# mass deficit beyond which a tabulated estimate is flagged
MASS_WARNING_TOL = 1e-4


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Nonnegative values on a regular grid of ``values.shape`` cells.

    ``warning`` is set by producers that know the tabulation is lossy (for
    example a heavy-tailed estimate truncated to a finite window).
    """

    origin: Tuple[float, ...]
    cell_size: Tuple[float, ...]
    values: np.ndarray
    warning: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        dim = vals.ndim
        if dim not in (1, 2):
            raise ValueError(f"grid densities are 1-D or 2-D, got {dim}-D values")
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        h = tuple(float(c) for c in np.atleast_1d(self.cell_size))
        if len(origin) != dim or len(h) != dim:
            raise ValueError("origin and cell_size must have one entry per axis")
        if any(not (c > 0) for c in h):
            raise ValueError("cell sizes must be positive")
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("grid values must be finite and nonnegative")
        vals.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", h)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    def axes(self) -> Tuple[np.ndarray, ...]:
        """Cell-centre coordinates along each axis."""
        return tuple(
            o + (np.arange(m) + 0.5) * h
            for o, h, m in zip(self.origin, self.cell_size, self.shape)
        )

    def centers(self) -> np.ndarray:
        """All cell centres as an ``(cells, dim)`` array in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def __eq__(self, other):
        if not isinstance(other, GridDensity):
            return NotImplemented
        return self.same_grid(other) and bool(np.array_equal(self.values, other.values))

    __hash__ = None

    def same_grid(self, other: "GridDensity") -> bool:
        return (
            self.shape == other.shape
            and self.origin == other.origin
            and self.cell_size == other.cell_size
        )

    def with_values(self, values) -> "GridDensity":
        return replace(self, values=values, warning=None)

    def normalized(self) -> "GridDensity":
        m = self.mass()
        if m <= 0:
            raise ValueError("cannot normalize a density with zero mass")
        return self.with_values(self.values / m)

    # plot-ready CSV: one row per cell, index columns then coordinates then value
    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        buf.write(
            "# origin=" + " ".join(repr(o) for o in self.origin)
            + " cell_size=" + " ".join(repr(h) for h in self.cell_size) + "\n"
        )
        w = csv.writer(buf, lineterminator="\n")
        idx_names = ["i", "j"][: self.dim]
        coord_names = ["x", "y"][: self.dim]
        w.writerow(idx_names + coord_names + ["value"])
        axes = self.axes()
        for index in np.ndindex(*self.shape):
            coords = [axes[k][index[k]] for k in range(self.dim)]
            w.writerow(list(index) + [repr(float(c)) for c in coords] + [repr(float(self.values[index]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "GridDensity":
        return cls.parse_csv(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def parse_csv(cls, text: str) -> "GridDensity":
        """Inverse of :meth:`to_csv`."""
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError("grid CSV must start with a '# origin=... cell_size=...' line")
        meta = lines[0].lstrip("# ").split("cell_size=")
        origin = [float(v) for v in meta[0].replace("origin=", "").split()]
        h = [float(v) for v in meta[1].split()]
        dim = len(origin)
        rows = list(csv.reader(lines[1:]))
        header, body = rows[0], rows[1:]
        if len(header) != 2 * dim + 1:
            raise ValueError(f"expected {2 * dim + 1} columns, got {len(header)}")
        idx = np.array([[int(r[k]) for k in range(dim)] for r in body])
        vals = np.array([float(r[-1]) for r in body])
        shape = tuple(int(m) for m in idx.max(axis=0) + 1)
        out = np.zeros(shape)
        out[tuple(idx.T)] = vals
        return cls(tuple(origin), tuple(h), out)


def make_grid(lo: Sequence[float], hi: Sequence[float], h: float) -> GridDensity:
    """Zero density on the box ``[lo, hi]`` with cells of side ``h``."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    counts = tuple(int(round((b - a) / h)) for a, b in zip(lo, hi))
    if any(c < 1 for c in counts):
        raise ValueError("grid box must span at least one cell per axis")
    return GridDensity(tuple(lo), (float(h),) * len(lo), np.zeros(counts))


def _check_same(f: GridDensity, g: GridDensity):
    if not f.same_grid(g):
        raise GridMismatchError("densities live on different grids")


@dataclass(frozen=True)
class SliceResult:
    alpha: float
    density: GridDensity
    mass_error: float
    beta: float = 1.0
    iterations: int = 0


def slice_mass(f: GridDensity, beta: float, alpha: float) -> float:
    """``m(alpha) = integral of max(beta * f - alpha, 0)``."""
    return float(np.maximum(beta * f.values - alpha, 0.0).sum() * f.cell_volume)


def slice_transform(f: GridDensity, beta: float, tol: float = 1e-10, max_steps: int = 200) -> SliceResult:
    """Find the level ``alpha`` with ``max(beta f - alpha, 0)`` of unit mass.

    The mass is continuous and nonincreasing in ``alpha``, equal to ``beta``
    at 0 and to 0 at ``beta * max f``, so bisection on that bracket finds the
    level.  Iteration stops once ``|m(alpha) - 1| <= tol``; the linear piece
    of ``m`` containing that point is then solved exactly, which typically
    leaves a mass error at rounding level.

    Raises
    ------
    ValueError
        For ``beta <= 1`` or a density that does not carry unit mass.
    NumericError
        If ``tol`` is not met within ``max_steps`` bisections.
    """
    if not beta > 1.0:
        raise ValueError(f"beta must exceed 1, got {beta!r}")
    total = f.mass()
    if abs(total - 1.0) > max(tol, 1e-8):
        raise ValueError(f"input density has mass {total!r}, expected 1")
    lo, hi = 0.0, beta * float(f.values.max())
    if not (slice_mass(f, beta, lo) > 1.0 >= slice_mass(f, beta, hi)):
        raise NumericError("mass function does not bracket 1")
    alpha, m = lo, slice_mass(f, beta, lo)
    steps = 0
    while abs(m - 1.0) > tol:
        if steps >= max_steps:
            raise NumericError(f"bisection did not reach |mass - 1| <= {tol} in {max_steps} steps")
        steps += 1
        alpha = 0.5 * (lo + hi)
        m = slice_mass(f, beta, alpha)
        if m > 1.0:
            lo = alpha
        else:
            hi = alpha
    # m is linear in alpha while the set {beta f > alpha} is fixed, so solve
    # that linear piece exactly and keep the result if it is closer
    active = beta * f.values > alpha
    if active.any():
        exact = (beta * float(f.values[active].sum()) - 1.0 / f.cell_volume) / int(active.sum())
        m_exact = slice_mass(f, beta, exact)
        if 0.0 <= exact and abs(m_exact - 1.0) < abs(m - 1.0):
            alpha, m = exact, m_exact
    dens = f.with_values(np.maximum(beta * f.values - alpha, 0.0))
    return SliceResult(alpha, dens, abs(m - 1.0), float(beta), steps)


def decontaminate(f_obs: GridDensity, eps: float, tol: float = 1e-10) -> SliceResult:
    """Apply the slicing transform with ``beta = 1 / (1 - eps)``."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps!r}")
    if eps == 0.0:
        return SliceResult(0.0, f_obs, abs(f_obs.mass() - 1.0), 1.0, 0)
    return slice_transform(f_obs, 1.0 / (1.0 - eps), tol=tol)


def mix(f_tar: GridDensity, f_con: GridDensity, eps: float) -> GridDensity:
    """``(1 - eps) f_tar + eps f_con`` cell by cell."""
    _check_same(f_tar, f_con)
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps!r}")
    return f_tar.with_values((1.0 - eps) * f_tar.values + eps * f_con.values)


@dataclass(frozen=True)
class AssumptionCheck:
    """Witness for the flat-contamination condition.

    ``level`` is the contamination value over the target's support and
    ``violations`` lists offending cell indices (rows of an int array).
    """

    holds: bool
    level: float
    spread: float
    violations: np.ndarray

    def __bool__(self):
        return self.holds


def check_assumption_a(f_tar: GridDensity, f_con: GridDensity, tol: float = 1e-9) -> AssumptionCheck:
    """Check that ``f_con`` is flat at some level ``u`` on ``{f_tar > tol}`` and
    at most ``u + tol`` elsewhere.
    """
    _check_same(f_tar, f_con)
    support = f_tar.values > tol
    if not support.any():
        return AssumptionCheck(False, math.nan, math.nan, np.empty((0, f_tar.dim), dtype=int))
    on = f_con.values[support]
    lo, hi = float(on.min()), float(on.max())
    u = 0.5 * (lo + hi)
    bad = np.zeros(f_tar.shape, dtype=bool)
    bad[support] = np.abs(f_con.values[support] - u) > tol
    bad[~support] = f_con.values[~support] > u + tol
    violations = np.argwhere(bad)
    return AssumptionCheck(violations.shape[0] == 0, u, hi - lo, violations)


def grid_from_estimate(
    est: WeightedDensityEstimate,
    origin: Sequence[float],
    extent: Sequence[float],
    h: float,
    renormalize: bool = False,
) -> GridDensity:
    """Tabulate a weighted estimate on the box ``origin + [0, extent]``.

    The result carries a ``warning`` (and a :class:`UserWarning` is issued)
    when the tabulated mass falls short of one by more than ``1e-4``, as it
    does for Cauchy kernels or windows that cut into the estimate's tails.
    """
    if est.dim > 2:
        raise ValueError("grid tabulation supports at most two dimensions")
    origin = np.broadcast_to(np.asarray(origin, dtype=float), (est.dim,))
    extent = np.broadcast_to(np.asarray(extent, dtype=float), (est.dim,))
    grid = make_grid(origin, origin + extent, h)
    vals = estimate_eval(est, grid.centers()).reshape(grid.shape)
    out = grid.with_values(vals)
    m = out.mass()
    if renormalize:
        out = out.normalized()
    if m < 1.0 - MASS_WARNING_TOL:
        msg = f"tabulated mass {m:.6f} < 1: window truncates the estimate"
        if est.kernel.family is KernelFamily.CAUCHY:
            msg += " (heavy Cauchy tails)"
        warnings.warn(msg, stacklevel=2)
        out = replace(out, warning=msg)
    return out


def lp_distance(f: GridDensity, g: GridDensity, p: int = 1) -> float:
    """``(sum |f - g|^p h^d)^(1/p)`` for ``p`` in {1, 2}."""
    _check_same(f, g)
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    diff = np.abs(f.values - g.values)
    if p == 1:
        return float(diff.sum() * f.cell_volume)
    return float(math.sqrt((diff * diff).sum() * f.cell_volume))
