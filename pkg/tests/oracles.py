"""Independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np
from scipy import integrate

from spkde.kernels import KernelFamily, kernel_eval


def simplex_projection_by_enumeration(v):
    """Euclidean projection onto the simplex by trying every support set.

    On a support S the equality-constrained minimiser is ``w_S = v_S - t`` with
    ``t = (sum v_S - 1) / |S|``; keep the nonnegative candidate nearest ``v``.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    best, best_d = None, np.inf
    for k in range(1, n + 1):
        for support in itertools.combinations(range(n), k):
            s = list(support)
            t = (v[s].sum() - 1.0) / k
            w = np.zeros(n)
            w[s] = v[s] - t
            if w.min() < -1e-15:
                continue
            d = float(((w - v) ** 2).sum())
            if d < best_d:
                best, best_d = np.maximum(w, 0.0), d
    return best


def signed_rank_p_by_enumeration(ranks, stat):
    """Two-sided signed-rank p-value by listing all 2^n sign assignments."""
    ranks = np.asarray(ranks, dtype=float)
    total = ranks.sum()
    hits = 0
    count = 0
    for signs in itertools.product((0, 1), repeat=ranks.size):
        r1 = float(np.dot(signs, ranks))
        if min(r1, total - r1) <= stat + 1e-9:
            hits += 1
        count += 1
    return hits / count


def barycentric_grid(n_parts):
    """All points of the 3-simplex with coordinates in multiples of 1/n_parts."""
    i, j = np.meshgrid(np.arange(n_parts + 1), np.arange(n_parts + 1), indexing="ij")
    keep = i + j <= n_parts
    i, j = i[keep], j[keep]
    return np.stack([i, j, n_parts - i - j], axis=1) / n_parts


def quad_inner_product(spec, x, y):
    """L2 inner product of two kernels by adaptive quadrature (d = 1 or 2)."""
    x, y = np.atleast_1d(x), np.atleast_1d(y)
    s = spec.bandwidth
    if spec.dim == 1:
        f = lambda t: kernel_eval(spec, [t], x) * kernel_eval(spec, [t], y)
        # split at the centres so the quadrature sees both peaks
        pts = sorted({float(x[0]), float(y[0])})
        val = 0.0
        edges = [-np.inf] + pts + [np.inf]
        for a, b in zip(edges[:-1], edges[1:]):
            if a != b:
                val += integrate.quad(f, a, b, epsabs=0, epsrel=1e-10, limit=400)[0]
        return val
    # 2-D: polar coordinates around the midpoint keep the integrand smooth
    c = 0.5 * (x + y)

    def inner(r, th):
        p = c + r * np.array([math.cos(th), math.sin(th)])
        return kernel_eval(spec, p, x) * kernel_eval(spec, p, y) * r

    reach = np.inf if spec.family is KernelFamily.CAUCHY else 12 * s + np.linalg.norm(x - y)
    val, _ = integrate.dblquad(inner, 0, 2 * math.pi, 0, reach, epsabs=0, epsrel=1e-9)
    return val
