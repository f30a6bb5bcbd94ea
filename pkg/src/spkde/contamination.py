"""Contaminated samples, grid ground truth, preprocessing and rejection KDE."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .kernels import KernelSpec, WeightedDensityEstimate, estimate_eval
from .oracle import GridDensity, make_grid, mix
from .qp import fit_kde

__all__ = [
    "GaussianMixture",
    "UniformBox",
    "ContaminationSpec",
    "Source",
    "LabeledSample",
    "MixtureSample",
    "UnitCubeTransform",
    "Dataset",
    "DatasetError",
    "sample_mixture",
    "fig4_experiment_spec",
    "grid_scenario",
    "grid_truth",
    "scale_to_unit_cube",
    "fit_rejkde",
    "load_dataset",
    "FIG4_TRUTH_BOX",
]

# grid window used for Fig.-4 ground truth; wide enough for KDE tails at sigma <= 0.3
FIG4_TRUTH_BOX = (-4.0, 4.0)


# -- distributions --------------------------------------------------------

def _interval_fraction(lo: float, hi: float, edges: np.ndarray) -> np.ndarray:
    """Fraction of each cell ``[edges[k], edges[k+1]]`` covered by ``[lo, hi]``."""
    h = edges[1:] - edges[:-1]
    frac = (np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1])) / h
    frac = np.clip(frac, 0.0, 1.0)
    # cells lying inside the interval must come out exactly covered
    frac[(edges[:-1] >= lo) & (edges[1:] <= hi)] = 1.0
    return frac


def _cell_edges(grid: GridDensity) -> List[np.ndarray]:
    return [o + np.arange(m + 1) * h for o, h, m in zip(grid.origin, grid.cell_size, grid.shape)]


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussians ``sum_k w_k N(mu_k, s_k^2 I)``."""

    weights: Tuple[float, ...]
    means: Tuple[Tuple[float, ...], ...]
    stds: Tuple[float, ...]
    name: str = "gaussian_mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        s = np.asarray(self.stds, dtype=float)
        if not (w.shape == s.shape == mu.shape[:1]):
            raise ValueError("weights, means and stds need one entry per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 or np.any(s <= 0):
            raise ValueError("invalid mixture parameters")
        object.__setattr__(self, "weights", tuple(w.tolist()))
        object.__setattr__(self, "means", tuple(map(tuple, mu.tolist())))
        object.__setattr__(self, "stds", tuple(s.tolist()))

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        mu = np.asarray(self.means)
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return mu[comp] + np.asarray(self.stds)[comp, None] * z

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        out = np.zeros(x.shape[0])
        for w, m, s in zip(self.weights, self.means, self.stds):
            r2 = ((x - np.asarray(m)) ** 2).sum(axis=1)
            out += w * (2 * math.pi * s * s) ** (-0.5 * self.dim) * np.exp(-0.5 * r2 / (s * s))
        return out

    def cdf(self, x) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("cdf is only defined for 1-D mixtures")
        x = np.asarray(x, dtype=float)
        return sum(w * special.ndtr((x - m[0]) / s) for w, m, s in zip(self.weights, self.means, self.stds))

    def on_grid(self, grid: GridDensity) -> GridDensity:
        """Exact cell averages of the density (axis-wise CDF differences)."""
        edges = _cell_edges(grid)
        vals = np.zeros(grid.shape)
        for w, m, s in zip(self.weights, self.means, self.stds):
            per_axis = [np.diff(special.ndtr((e - mk) / s)) for e, mk in zip(edges, m)]
            vals += w * _outer(per_axis)
        return grid.with_values(vals / grid.cell_volume)

    def to_dict(self) -> dict:
        return {"kind": "gaussian_mixture", "name": self.name, "weights": list(self.weights),
                "means": [list(m) for m in self.means], "stds": list(self.stds)}


@dataclass(frozen=True)
class UniformBox:
    low: Tuple[float, ...]
    high: Tuple[float, ...]
    name: str = "uniform"

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.low))
        hi = tuple(float(v) for v in np.atleast_1d(self.high))
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("uniform box needs low < high on every axis")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.high, self.low)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        inside = np.all((x >= self.low) & (x <= self.high), axis=1)
        return inside / self.volume

    def cdf(self, x) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("cdf is only defined for 1-D boxes")
        return np.clip((np.asarray(x, dtype=float) - self.low[0]) / (self.high[0] - self.low[0]), 0.0, 1.0)

    def on_grid(self, grid: GridDensity) -> GridDensity:
        edges = _cell_edges(grid)
        frac = _outer([_interval_fraction(a, b, e) for a, b, e in zip(self.low, self.high, edges)])
        return grid.with_values(frac / self.volume)

    def to_dict(self) -> dict:
        return {"kind": "uniform", "name": self.name, "low": list(self.low), "high": list(self.high)}


def _outer(per_axis: Sequence[np.ndarray]) -> np.ndarray:
    out = per_axis[0]
    for v in per_axis[1:]:
        out = np.multiply.outer(out, v)
    return out


def distribution_from_dict(d: dict):
    if d["kind"] == "gaussian_mixture":
        return GaussianMixture(d["weights"], d["means"], d["stds"], d.get("name", "gaussian_mixture"))
    if d["kind"] == "uniform":
        return UniformBox(d["low"], d["high"], d.get("name", "uniform"))
    raise ValueError(f"unknown distribution kind {d['kind']!r}")


# -- contaminated samples -------------------------------------------------

@dataclass(frozen=True)
class ContaminationSpec:
    """Observed density ``(1 - eps) target + eps contaminant`` and a draw plan.

    ``beta`` is the companion robustness scale, ``1 / (1 - eps)`` unless given.
    """

    target: object
    contaminant: object
    eps: float
    n: int
    seed: int = 0
    beta: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise ValueError(f"eps must lie in [0, 1), got {self.eps!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.target.dim != self.contaminant.dim:
            raise ValueError("target and contaminant dimensions differ")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 / (1.0 - self.eps))

    @property
    def dim(self) -> int:
        return self.target.dim

    def to_dict(self) -> dict:
        return {"name": self.name, "target": self.target.to_dict(),
                "contaminant": self.contaminant.to_dict(), "eps": self.eps,
                "n": self.n, "seed": self.seed, "beta": self.beta}


class Source(enum.IntEnum):
    TARGET = 0
    CONTAMINANT = 1


class LabeledSample(NamedTuple):
    point: np.ndarray
    source: Source


@dataclass(frozen=True)
class MixtureSample:
    """Draws with their generating component; labels are for evaluation only."""

    points: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.points.shape[0]

    def __iter__(self) -> Iterator[LabeledSample]:
        for p, s in zip(self.points, self.labels):
            yield LabeledSample(p, Source(int(s)))

    @property
    def contaminant_fraction(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0


def sample_mixture(spec: ContaminationSpec) -> MixtureSample:
    """Draw ``spec.n`` points, each from the contaminant with probability ``eps``."""
    rng = np.random.default_rng(spec.seed)
    labels = (rng.random(spec.n) < spec.eps).astype(np.int8)
    n_con = int(labels.sum())
    points = np.empty((spec.n, spec.dim))
    points[labels == 0] = spec.target.sample(spec.n - n_con, rng)
    points[labels == 1] = spec.contaminant.sample(n_con, rng)
    return MixtureSample(points, labels)


def fig4_target() -> GaussianMixture:
    # main mode plus a smaller bump on the right, essentially inside [-2, 2]
    return GaussianMixture((0.7, 0.3), ((-0.7,), (0.9,)), (0.25, 0.2), name="fig4_target")


def fig4_experiment_spec(seed: int = 0, n: int = 500) -> ContaminationSpec:
    """Uniform[-2, 2] contamination at ``eps = 0.2`` of a bimodal target, n = 500."""
    return ContaminationSpec(
        target=fig4_target(),
        contaminant=UniformBox((-2.0,), (2.0,), name="uniform[-2,2]"),
        eps=0.2,
        n=n,
        seed=seed,
        beta=1.25,
        name="fig4",
    )


def grid_truth(
    spec: ContaminationSpec,
    lo: Sequence[float] = (FIG4_TRUTH_BOX[0],),
    hi: Sequence[float] = (FIG4_TRUTH_BOX[1],),
    h: float = 1e-3,
) -> Tuple[GridDensity, GridDensity, GridDensity]:
    """Tabulated ``(f_tar, f_con, f_obs)`` on the box ``[lo, hi]``."""
    if spec.dim > 2:
        raise ValueError("grid ground truth supports at most two dimensions")
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (spec.dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (spec.dim,))
    grid = make_grid(lo, hi, h)
    f_tar = spec.target.on_grid(grid)
    f_con = spec.contaminant.on_grid(grid)
    return f_tar, f_con, mix(f_tar, f_con, spec.eps)


def grid_scenario(name: str, h: float = 1e-3) -> Tuple[GridDensity, GridDensity, float]:
    """Named ``(f_tar, f_con, eps)`` grid pairs.

    ``uniform``
        Uniform density on [0, 1] for both parts, eps = 0.
    ``piecewise``
        ``f_tar = 2`` on [0, 0.5], ``f_con = 1`` on [0, 1], eps = 0.2, giving
        ``f_obs = 1.8`` then ``0.2``; the flat-contamination condition holds
        with level 1.
    ``fig4``
        The Fig.-4 target and Uniform[-2, 2] contamination on [-4, 4].
    """
    if name == "uniform":
        grid = make_grid([0.0], [1.0], h)
        u = UniformBox((0.0,), (1.0,)).on_grid(grid)
        return u, u, 0.0
    if name == "piecewise":
        grid = make_grid([0.0], [1.0], h)
        return UniformBox((0.0,), (0.5,)).on_grid(grid), UniformBox((0.0,), (1.0,)).on_grid(grid), 0.2
    if name == "fig4":
        f_tar, f_con, _ = grid_truth(fig4_experiment_spec(), h=h)
        return f_tar, f_con, 0.2
    raise KeyError(f"unknown scenario {name!r}")


# -- preprocessing --------------------------------------------------------

@dataclass(frozen=True)
class UnitCubeTransform:
    """Per-axis affine map ``x -> (x - low) / span``; degenerate axes map to 0.5."""

    low: np.ndarray
    span: np.ndarray
    degenerate: np.ndarray

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = np.where(self.degenerate, 1.0, self.span)
        out = (x - self.low) / span
        return np.where(self.degenerate, 0.5, out)

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.where(self.degenerate, self.low, y * self.span + self.low)


def scale_to_unit_cube(data) -> Tuple[np.ndarray, UnitCubeTransform]:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need an (n, d) matrix with n >= 2")
    low = x.min(axis=0)
    span = x.max(axis=0) - low
    t = UnitCubeTransform(low, span, span == 0)
    return t.forward(x), t


# -- rejection KDE --------------------------------------------------------

def fit_rejkde(points, spec: KernelSpec, reject_fraction: float = 0.1) -> WeightedDensityEstimate:
    """KDE rebuilt after dropping the ``floor(fraction * n)`` lowest-density points.

    Points are scored by the pilot KDE on all points; ties go to the lower
    index.  The survivors keep the pilot bandwidth.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if not 0.0 <= reject_fraction < 1.0:
        raise ValueError("reject_fraction must lie in [0, 1)")
    if n < 2:
        raise ValueError("rejection KDE needs at least two points")
    n_drop = int(math.floor(reject_fraction * n))
    if n_drop >= n:
        raise ValueError("every point would be rejected")
    if n_drop == 0:
        return fit_kde(pts, spec)
    scores = estimate_eval(fit_kde(pts, spec), pts)
    order = np.lexsort((np.arange(n), scores))
    keep = np.sort(order[n_drop:])
    return fit_kde(pts[keep], spec)


# -- datasets -------------------------------------------------------------

class DatasetError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix and optional binary labels (0 = target class)."""

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    columns: Tuple[str, ...] = ()
    name: str = "dataset"

    def split(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.labels is None:
            raise DatasetError(f"{self.name}: no 'label' column")
        return self.features[self.labels == 0], self.features[self.labels == 1]


def load_dataset(path: Union[str, Path], require_labels: bool = False) -> Dataset:
    """Read a CSV with a header, real feature columns and optional ``label``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file", 1)
    header = [c.strip() for c in rows[0]]
    has_label = header[-1].lower() == "label"
    n_feat = len(header) - int(has_label)
    if n_feat < 1:
        raise DatasetError("no feature columns", 1)
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            vals = [float(c) for c in row[:n_feat]]
        except ValueError as exc:
            raise DatasetError(f"non-numeric feature ({exc})", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError("non-finite feature value", lineno)
        feats.append(vals)
        if has_label:
            lab = row[-1].strip()
            if lab not in ("0", "1"):
                raise DatasetError(f"label must be 0 or 1, got {lab!r}", lineno)
            labels.append(int(lab))
    if not feats:
        raise DatasetError(f"{path}: no data rows", 2)
    if require_labels and not has_label:
        raise DatasetError(f"{path}: no 'label' column")
    return Dataset(
        np.asarray(feats, dtype=float),
        np.asarray(labels, dtype=np.int8) if has_label else None,
        tuple(header[:n_feat]),
        path.stem,
    )
