"""Radial smoothing kernels and weighted kernel density estimates.

Two kernel families are supported, both with closed-form L2 inner products
between translated copies:

* Gaussian, ``k_s(x, y) = (2 pi s^2)^(-d/2) exp(-|x - y|^2 / (2 s^2))``,
  for which ``<k_s(., x), k_s(., y)> = k_{sqrt(2) s}(x, y)``.
* Cauchy (multivariate t with one degree of freedom),
  ``k_s(x, y) = Gamma((1+d)/2) / (pi^((d+1)/2) s^d) (1 + |x-y|^2/s^2)^(-(1+d)/2)``,
  for which ``<k_s(., x), k_s(., y)> = k_{2 s}(x, y)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "UnsupportedKernelError",
    "WeightedDensityEstimate",
    "kernel_eval",
    "kernel_matrix",
    "gram_matrix",
    "estimate_eval",
    "estimate_sample",
    "sq_distances",
]

# query rows per block when forming kernel matrices; bounds peak memory
_BLOCK_ELEMS = 4_000_000


class UnsupportedKernelError(ValueError):
    """Raised when a kernel family lacks a required capability."""


class KernelFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    CAUCHY = "cauchy"

    @property
    def closed_form_gram(self) -> bool:
        return self in _GRAM_SCALE

    @property
    def gram_scale(self) -> float:
        """Bandwidth multiplier such that G_ij = k_{c*sigma}(X_i, X_j)."""
        try:
            return _GRAM_SCALE[self]
        except KeyError:
            raise UnsupportedKernelError(
                f"no closed-form Gram entries for kernel family {self.value!r}"
            ) from None


_GRAM_SCALE = {KernelFamily.GAUSSIAN: math.sqrt(2.0), KernelFamily.CAUCHY: 2.0}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, ambient dimension and bandwidth."""

    family: KernelFamily
    dim: int
    bandwidth: float

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "dim", int(self.dim))
        bw = float(self.bandwidth)
        if not (bw > 0 and math.isfinite(bw)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", bw)

    def with_bandwidth(self, bandwidth: float) -> "KernelSpec":
        return KernelSpec(self.family, self.dim, bandwidth)

    def gram_spec(self) -> "KernelSpec":
        """The kernel whose values are the L2 inner products of this one."""
        return self.with_bandwidth(self.family.gram_scale * self.bandwidth)

    @property
    def peak(self) -> float:
        """k(x, x), the kernel's maximum value."""
        return float(_profile(self, np.zeros(1))[0])

    def to_dict(self) -> dict:
        return {"family": self.family.value, "dim": self.dim, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(KernelFamily(d["family"]), int(d["dim"]), float(d["bandwidth"]))


def _profile(spec: KernelSpec, sq_dist: np.ndarray) -> np.ndarray:
    """Kernel value as a function of squared distance."""
    d, s = spec.dim, spec.bandwidth
    if spec.family is KernelFamily.GAUSSIAN:
        norm = (2.0 * math.pi * s * s) ** (-0.5 * d)
        return norm * np.exp(sq_dist * (-0.5 / (s * s)))
    if spec.family is KernelFamily.CAUCHY:
        log_norm = math.lgamma(0.5 * (d + 1)) - 0.5 * (d + 1) * math.log(math.pi) - d * math.log(s)
        return math.exp(log_norm) * (1.0 + sq_dist / (s * s)) ** (-0.5 * (d + 1))
    raise UnsupportedKernelError(f"unknown kernel family {spec.family!r}")


def _as_points(x, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1 and dim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {np.shape(x)}")
    return arr


def sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, summed per axis in fixed order.

    Differences are formed explicitly rather than through the
    ``|a|^2 + |b|^2 - 2ab`` expansion, which loses precision for close points.
    """
    out = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        diff = a[:, j, None] - b[None, :, j]
        out += diff * diff
    return out


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate ``k_sigma(x, y)`` for two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (spec.dim,) or y.shape != (spec.dim,):
        raise ValueError(
            f"points must have dimension {spec.dim}, got {x.shape} and {y.shape}"
        )
    diff = x - y
    return float(_profile(spec, np.array([diff @ diff]))[0])


def kernel_matrix(spec: KernelSpec, queries, points) -> np.ndarray:
    """Matrix ``K[i, j] = k_sigma(queries[i], points[j])``."""
    q = _as_points(queries, spec.dim, "queries")
    p = _as_points(points, spec.dim, "points")
    return _profile(spec, sq_distances(q, p))


def gram_matrix(points, spec: KernelSpec) -> np.ndarray:
    """L2 Gram matrix of the kernels centred at ``points``.

    Only the upper triangle is computed; the lower one is a mirror copy, so the
    result is exactly symmetric.
    """
    gspec = spec.gram_spec()  # raises for families without a closed form
    p = _as_points(points, spec.dim, "points")
    n = p.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    g = _profile(gspec, sq_distances(p, p))
    iu = np.triu_indices(n, 1)
    g.T[iu] = g[iu]
    return g


@dataclass(frozen=True, eq=False)
class WeightedDensityEstimate:
    """The density ``sum_i a_i k_sigma(., X_i)`` with ``a`` on the simplex.

    ``report`` carries the solver diagnostics when the weights came from a
    quadratic program; it is ``None`` for plain and rejection KDEs.
    """

    points: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec
    report: Optional[object] = field(default=None, compare=False)

    def __post_init__(self):
        pts = _as_points(self.points, self.kernel.dim, "points")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] < 1:
            raise ValueError("an estimate needs at least one point")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")
        pts = pts.copy()
        w = w.copy()
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __eq__(self, other):
        if not isinstance(other, WeightedDensityEstimate):
            return NotImplemented
        return (
            self.kernel == other.kernel
            and bool(np.array_equal(self.points, other.points))
            and bool(np.array_equal(self.weights, other.weights))
        )

    __hash__ = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def __call__(self, queries) -> np.ndarray:
        return estimate_eval(self, queries)

    def sample(self, m: int, seed) -> np.ndarray:
        return estimate_sample(self, m, seed)


def estimate_eval(est: WeightedDensityEstimate, queries) -> np.ndarray:
    """Evaluate the weighted estimate at each row of ``queries``."""
    q = _as_points(queries, est.dim, "queries")
    out = np.empty(q.shape[0])
    step = max(1, _BLOCK_ELEMS // est.n)
    for start in range(0, q.shape[0], step):
        block = q[start:start + step]
        out[start:start + step] = _profile(est.kernel, sq_distances(block, est.points)) @ est.weights
    return out


def estimate_sample(est: WeightedDensityEstimate, m: int, seed) -> np.ndarray:
    """Draw ``m`` i.i.d. points from the kernel mixture.

    A component is chosen with probability ``a_i`` and a kernel draw is added to
    its centre.  Cauchy draws use the elliptical representation
    ``sigma * Z / sqrt(W)`` with ``Z`` standard normal and ``W ~ chi^2_1``.
    """
    if m < 0:
        raise ValueError("sample count must be nonnegative")
    rng = np.random.default_rng(seed)
    d = est.dim
    if m == 0:
        return np.empty((0, d))
    comp = rng.choice(est.n, size=m, p=est.weights)
    z = rng.standard_normal((m, d))
    if est.kernel.family is KernelFamily.CAUCHY:
        z /= np.sqrt(rng.chisquare(1.0, size=m))[:, None]
    return est.points[comp] + est.kernel.bandwidth * z
