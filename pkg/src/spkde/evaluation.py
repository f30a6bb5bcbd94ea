"""Performance criteria, bandwidth selection and method comparison.

* KL divergences between an estimate and held-out target data, in both
  directions (Monte Carlo against a reference KDE, and cross-entropy).
* Leave-one-out likelihood bandwidth search.
* Exact Wilcoxon signed-rank test on paired per-dataset means.
* The benchmark pipeline over contamination levels and seeds, plus the
  synthetic Fig.-4 trial with grid ground truth.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from .contamination import (
    ContaminationSpec,
    Dataset,
    fig4_experiment_spec,
    fit_rejkde,
    grid_truth,
    sample_mixture,
    scale_to_unit_cube,
)
from .kernels import (
    KernelFamily,
    KernelSpec,
    WeightedDensityEstimate,
    _profile,
    estimate_eval,
    sq_distances,
)
from .oracle import grid_from_estimate, lp_distance
from .qp import DEFAULT_MAX_ITER, DEFAULT_TOL, fit_kde, fit_spkde

__all__ = [
    "DENSITY_FLOOR",
    "KlDirection",
    "KlEstimate",
    "WilcoxonResult",
    "ExperimentReport",
    "default_sigma_grid",
    "parse_sigma_grid",
    "loo_log_likelihood",
    "loocv_bandwidth",
    "kl_fhat_to_f0",
    "kl_f0_to_fhat",
    "wilcoxon_signed_rank",
    "fit_method",
    "benchmark_run",
    "compare_methods",
    "contaminated_training_set",
    "fig4_trial",
]

# densities below this are clamped before taking logs
DENSITY_FLOOR = 1e-300
# largest effective sample size for exact Wilcoxon enumeration
EXACT_WILCOXON_MAX = 25
METHODS = ("kde", "spkde", "rejkde")
METRICS = ("kl_fhat_f0", "kl_f0_fhat")


def default_sigma_grid(lo: float = 0.01, hi: float = 3.0, count: int = 30) -> np.ndarray:
    return np.geomspace(lo, hi, count)


def parse_sigma_grid(text: str) -> np.ndarray:
    """``"lo:hi:count"`` to a log-spaced grid."""
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise ValueError(f"sigma grid must look like lo:hi:count, got {text!r}") from None
    if not (0 < lo <= hi < np.inf) or count < 1:
        raise ValueError(f"sigma grid needs 0 < lo <= hi and count >= 1, got {text!r}")
    return default_sigma_grid(lo, hi, count)


# -- bandwidth selection --------------------------------------------------

def loo_log_likelihood(points, sigma_grid, family=KernelFamily.GAUSSIAN) -> np.ndarray:
    """Mean leave-one-out log-likelihood of the KDE for each bandwidth.

    A bandwidth at which some left-out density falls below ``DENSITY_FLOOR``
    scores ``-inf``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if n < 2:
        raise ValueError("leave-one-out needs at least two points")
    sigmas = np.asarray(sigma_grid, dtype=float).reshape(-1)
    if sigmas.size == 0 or np.any(sigmas <= 0):
        raise ValueError("sigma grid must be nonempty and positive")
    specs = [KernelSpec(family, d, s) for s in sigmas]
    loo = np.zeros((sigmas.size, n))
    step = max(1, 2_000_000 // n)
    for start in range(0, n, step):
        stop = min(n, start + step)
        d2 = sq_distances(pts[start:stop], pts)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf  # drop self terms
        for k, spec in enumerate(specs):
            loo[k, start:stop] = _profile(spec, d2).sum(axis=1) / (n - 1)
    with np.errstate(divide="ignore"):
        scores = np.log(loo).mean(axis=1)
    scores[np.any(loo < DENSITY_FLOOR, axis=1)] = -np.inf
    return scores


def loocv_bandwidth(points, sigma_grid=None, family=KernelFamily.GAUSSIAN) -> float:
    """Bandwidth maximising the leave-one-out log-likelihood over ``sigma_grid``.

    Maximising that likelihood minimises the KL divergence from the sampling
    density to the KDE up to a bandwidth-independent entropy term.  Ties go
    to the smaller bandwidth.
    """
    sigmas = default_sigma_grid() if sigma_grid is None else np.asarray(sigma_grid, dtype=float).reshape(-1)
    order = np.argsort(sigmas, kind="stable")
    sigmas = sigmas[order]
    scores = loo_log_likelihood(points, sigmas, family)
    if np.all(scores == -np.inf):
        # every bandwidth underflows somewhere; the widest is the least bad
        return float(sigmas[-1])
    return float(sigmas[int(np.argmax(scores))])


# -- KL criteria ----------------------------------------------------------

class KlDirection(str, enum.Enum):
    FHAT_TO_F0 = "fhat_to_f0"
    F0_TO_FHAT = "f0_to_fhat"


@dataclass(frozen=True)
class KlEstimate:
    """A KL criterion value.

    For ``F0_TO_FHAT`` the value is the cross-entropy ``-mean log fhat`` over
    the test points, i.e. the divergence up to the (unknown) entropy of f0.
    """

    value: float
    direction: KlDirection
    n_eval: int
    clamped: int = 0
    reference_bandwidth: Optional[float] = None


def _safe_log(values: np.ndarray) -> Tuple[np.ndarray, int]:
    low = values < DENSITY_FLOOR
    return np.log(np.where(low, DENSITY_FLOOR, values)), int(low.sum())


def reference_kde(test_points, sigma_grid=None) -> WeightedDensityEstimate:
    """KDE of the test sample with its own leave-one-out bandwidth."""
    pts = np.asarray(test_points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    sigma = loocv_bandwidth(pts, sigma_grid)
    return fit_kde(pts, KernelSpec(KernelFamily.GAUSSIAN, pts.shape[1], sigma))


def kl_fhat_to_f0(
    fhat: WeightedDensityEstimate,
    test_points,
    seed,
    sigma_grid=None,
    reference: Optional[WeightedDensityEstimate] = None,
    n_train: Optional[int] = None,
) -> KlEstimate:
    """Monte Carlo estimate of ``KL(fhat || f0)``.

    ``f0`` is replaced by a KDE of the test points (``reference``, built here
    when not supplied) and the integral by a mean over ``2 * n_train`` draws
    from ``fhat``; ``n_train`` defaults to the number of kernels in ``fhat``.
    """
    pts = np.asarray(test_points, dtype=float)
    if pts.size == 0:
        raise ValueError("need at least one test point")
    if reference is None:
        reference = reference_kde(pts, sigma_grid)
    m = 2 * (fhat.n if n_train is None else int(n_train))
    draws = fhat.sample(m, seed)
    log_fhat, c1 = _safe_log(estimate_eval(fhat, draws))
    log_ref, c2 = _safe_log(estimate_eval(reference, draws))
    return KlEstimate(
        float(np.mean(log_fhat - log_ref)),
        KlDirection.FHAT_TO_F0,
        m,
        c1 + c2,
        reference.kernel.bandwidth,
    )


def kl_f0_to_fhat(fhat: WeightedDensityEstimate, test_points) -> KlEstimate:
    """Cross-entropy ``-mean log fhat(x)`` over held-out target points."""
    pts = np.asarray(test_points, dtype=float)
    if pts.size == 0:
        raise ValueError("need at least one test point")
    logs, clamped = _safe_log(estimate_eval(fhat, pts))
    return KlEstimate(float(-np.mean(logs)), KlDirection.F0_TO_FHAT, logs.size, clamped)


# -- Wilcoxon signed-rank -------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    """Rank sums of positive (``r1``: a > b) and negative differences.

    Ranks are midranks, so ``r1``/``r2`` are half-integers when absolute
    differences tie.  ``method`` is ``"exact"`` or ``"normal"``.
    """

    r1: float
    r2: float
    p_value: float
    n_effective: int
    method: str = "exact"

    def to_dict(self) -> dict:
        return {"r1": self.r1, "r2": self.r2, "p_value": self.p_value,
                "n_effective": self.n_effective, "method": self.method}


def _signed_rank_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each doubled positive rank sum."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r else counts
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided signed-rank test of paired samples ``a`` and ``b``.

    Zero differences are dropped, ``|a - b|`` is ranked with midranks, and
    the p-value is ``P(min(R1*, R2*) <= min(R1, R2))`` under random signs,
    counted exactly over all ``2^n`` assignments for ``n <= 25`` and by the
    tie-corrected normal approximation (continuity corrected) beyond that.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape or a.size < 1:
        raise ValueError("need two nonempty sequences of equal length")
    diff = a - b
    diff = diff[diff != 0]
    n = diff.size
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 1.0, 0)
    ranks = stats.rankdata(np.abs(diff))
    r1 = float(ranks[diff > 0].sum())
    r2 = float(ranks[diff < 0].sum())
    stat = min(r1, r2)
    if n <= EXACT_WILCOXON_MAX:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_null_counts(doubled)
        total = counts.size - 1
        s = np.arange(total + 1)
        extreme = np.minimum(s, total - s) <= int(round(2 * stat))
        p = float(counts[extreme].sum()) / float(2 ** n)
        return WilcoxonResult(r1, r2, min(1.0, p), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts ** 3) - tie_counts).sum()) / 48.0
    z = (stat - mean + 0.5) / math.sqrt(var)
    p = 2.0 * float(special.ndtr(z))
    return WilcoxonResult(r1, r2, min(1.0, p), n, "normal")


# -- benchmark pipeline ---------------------------------------------------

def fit_method(
    method: str,
    points,
    spec: KernelSpec,
    beta: float = 2.0,
    reject_fraction: float = 0.1,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> WeightedDensityEstimate:
    if method == "kde":
        return fit_kde(points, spec)
    if method == "spkde":
        return fit_spkde(points, spec, beta, tol=tol, max_iter=max_iter)
    if method == "rejkde":
        return fit_rejkde(points, spec, reject_fraction)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def contaminant_count(eps: float, n0: int) -> int:
    """``eps / (1 - eps) * n0`` label-1 points give an ``eps`` fraction."""
    return int(round(eps / (1.0 - eps) * n0))


def contaminated_training_set(
    x0: np.ndarray, x1: np.ndarray, eps: float, n0: int, rng: np.random.Generator
) -> Optional[np.ndarray]:
    """``n0`` label-0 rows plus ``eps/(1-eps) n0`` random label-1 rows, or None."""
    n1 = contaminant_count(eps, n0)
    if n1 > x1.shape[0]:
        return None
    pick = rng.choice(x1.shape[0], size=n1, replace=False) if n1 else np.empty(0, dtype=int)
    return np.concatenate([x0[:n0], x1[pick]], axis=0)


@dataclass
class ExperimentReport:
    """Per-seed metric values for each (eps, method) cell of one dataset.

    ``values[eps][method][metric]`` is a list aligned with ``seeds``; an
    unavailable cell holds ``None`` entries.
    """

    dataset: str
    eps_list: List[float]
    methods: List[str]
    seeds: List[int]
    values: Dict[float, Dict[str, Dict[str, list]]] = field(default_factory=dict)
    bandwidths: Dict[float, list] = field(default_factory=dict)
    settings: Dict[str, object] = field(default_factory=dict)

    def summary(self, eps: float, method: str, metric: str) -> dict:
        vals = [v for v in self.values[eps][method][metric] if v is not None]
        if not vals:
            return {"mean": None, "std": None, "values": self.values[eps][method][metric]}
        arr = np.asarray(vals)
        return {
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "values": self.values[eps][method][metric],
        }

    def mean(self, eps: float, method: str, metric: str) -> Optional[float]:
        return self.summary(eps, method, metric)["mean"]

    def to_dict(self) -> dict:
        body = {}
        for eps in self.eps_list:
            body[_eps_key(eps)] = {
                m: {metric: self.summary(eps, m, metric) for metric in METRICS}
                for m in self.methods
            }
        return {
            self.dataset: body,
            "_meta": {
                "seeds": list(self.seeds),
                "methods": list(self.methods),
                "eps": list(self.eps_list),
                "bandwidths": {_eps_key(e): self.bandwidths.get(e, []) for e in self.eps_list},
                "settings": self.settings,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "eps", "method", "metric", "seed", "value"])
        for eps in self.eps_list:
            for m in self.methods:
                for metric in METRICS:
                    for seed, v in zip(self.seeds, self.values[eps][m][metric]):
                        w.writerow([self.dataset, _eps_key(eps), m, metric, seed, "" if v is None else repr(v)])
        return buf.getvalue()


def _eps_key(eps: float) -> str:
    return repr(float(eps))


def benchmark_run(
    dataset: Dataset,
    eps_list: Sequence[float],
    methods: Sequence[str] = METHODS,
    seeds: Sequence[int] = tuple(range(15)),
    beta: float = 2.0,
    sigma_grid=None,
    train_fraction: float = 0.5,
    reject_fraction: float = 0.1,
    master_seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ExperimentReport:
    """Run every method on contaminated versions of ``dataset``.

    For each seed the label-0 rows are permuted and split into a training
    block of ``n0 = floor(train_fraction * N0)`` rows and a held-out test
    block.  For each ``eps`` the training block is topped up with
    ``eps/(1-eps) n0`` random label-1 rows, both blocks are mapped by the
    training set's unit-cube scaling, the bandwidth is chosen by leave-one-out
    likelihood on the contaminated training data, and both KL criteria are
    computed against the test block.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    x0, x1 = dataset.split()
    if x0.shape[0] < 4:
        raise ValueError("need at least four label-0 rows")
    n0 = int(math.floor(train_fraction * x0.shape[0]))
    report = ExperimentReport(
        dataset.name, [float(e) for e in eps_list], list(methods), [int(s) for s in seeds],
        settings={"beta": beta, "train_fraction": train_fraction, "reject_fraction": reject_fraction,
                  "master_seed": master_seed, "n0": n0, "tol": tol},
    )
    for eps in report.eps_list:
        report.values[eps] = {m: {k: [] for k in METRICS} for m in methods}
        report.bandwidths[eps] = []
    for si, seed in enumerate(report.seeds):
        perm = np.random.default_rng(np.random.SeedSequence([master_seed, seed])).permutation(x0.shape[0])
        x0p = x0[perm]
        test_raw = x0p[n0:]
        for ei, eps in enumerate(report.eps_list):
            # one stream per (seed, eps) cell
            rng = np.random.default_rng(np.random.SeedSequence([master_seed, seed, ei]))
            train_raw = contaminated_training_set(x0p, x1, eps, n0, rng)
            if train_raw is None:
                for m in methods:
                    for k in METRICS:
                        report.values[eps][m][k].append(None)
                report.bandwidths[eps].append(None)
                continue
            train, transform = scale_to_unit_cube(train_raw)
            test = transform.forward(test_raw)
            sigma = loocv_bandwidth(train, sigma_grid)
            report.bandwidths[eps].append(sigma)
            spec = KernelSpec(KernelFamily.GAUSSIAN, train.shape[1], sigma)
            reference = reference_kde(test, sigma_grid)
            kl_seed = int(rng.integers(2 ** 63))
            for m in methods:
                est = fit_method(m, train, spec, beta, reject_fraction, tol, max_iter)
                fwd = kl_fhat_to_f0(est, test, kl_seed, reference=reference, n_train=train.shape[0])
                bwd = kl_f0_to_fhat(est, test)
                report.values[eps][m]["kl_fhat_f0"].append(fwd.value)
                report.values[eps][m]["kl_f0_fhat"].append(bwd.value)
    return report


def compare_methods(
    means: Mapping[str, Mapping[float, Mapping[str, float]]],
    method_a: str,
    method_b: str,
) -> Dict[float, WilcoxonResult]:
    """Signed-rank test per eps over datasets.

    ``means[dataset][eps][method]`` is the mean metric of a method.  Datasets
    lacking either method at some eps are skipped for that eps.
    """
    eps_values = sorted({e for per_ds in means.values() for e in per_ds})
    out = {}
    for eps in eps_values:
        a, b = [], []
        for per_ds in means.values():
            cell = per_ds.get(eps, {})
            if cell.get(method_a) is not None and cell.get(method_b) is not None:
                a.append(cell[method_a])
                b.append(cell[method_b])
        if a:
            out[eps] = wilcoxon_signed_rank(a, b)
    return out


def report_means(reports: Iterable[ExperimentReport], metric: str) -> Dict[str, Dict[float, Dict[str, float]]]:
    return {
        r.dataset: {eps: {m: r.mean(eps, m, metric) for m in r.methods} for eps in r.eps_list}
        for r in reports
    }


def wilcoxon_table_csv(results: Mapping[float, WilcoxonResult], method_a: str, method_b: str) -> str:
    """Table layout: one column per eps, rows ``R_a``, ``R_b`` and ``p-value``."""
    eps_values = sorted(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + [_eps_key(e) for e in eps_values])
    w.writerow([method_a] + [repr(results[e].r1) for e in eps_values])
    w.writerow([method_b] + [repr(results[e].r2) for e in eps_values])
    w.writerow(["p-value"] + [repr(results[e].p_value) for e in eps_values])
    return buf.getvalue()


# -- synthetic Fig.-4 trial -----------------------------------------------

def fig4_trial(
    seed: int,
    n: int = 500,
    beta: float = 1.25,
    sigma: Optional[float] = None,
    methods: Sequence[str] = ("kde", "spkde"),
    spec: Optional[ContaminationSpec] = None,
    h: float = 2e-3,
    n_test: Optional[int] = None,
    kl: bool = False,
    tol: float = DEFAULT_TOL,
) -> Dict[str, Dict[str, float]]:
    """Fit each method to one contaminated Fig.-4 sample and score it.

    Returns ``{method: {"l1", "l2", "sigma", ...}}`` with grid L1/L2 errors to
    the target density; with ``kl=True`` also both KL criteria against
    ``n_test`` fresh target draws (default ``n``).
    """
    if spec is None:
        spec = fig4_experiment_spec(seed=seed, n=n)
    sample = sample_mixture(spec)
    if sigma is None:
        sigma = loocv_bandwidth(sample.points)
    kspec = KernelSpec(KernelFamily.GAUSSIAN, spec.dim, sigma)
    f_tar, _, _ = grid_truth(spec, h=h)
    lo = np.asarray(f_tar.origin)
    extent = np.asarray(f_tar.shape) * np.asarray(f_tar.cell_size)
    test = reference = None
    if kl:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        test = spec.target.sample(n if n_test is None else n_test, rng)
        reference = reference_kde(test)
    out = {}
    for m in methods:
        est = fit_method(m, sample.points, kspec, beta, tol=tol)
        grid = grid_from_estimate(est, lo, extent, h)
        row = {"l1": lp_distance(grid, f_tar, 1), "l2": lp_distance(grid, f_tar, 2), "sigma": sigma}
        if est.report is not None:
            row["converged"] = est.report.converged
            row["kkt_residual"] = est.report.kkt_residual
        if kl:
            row["kl_fhat_f0"] = kl_fhat_to_f0(
                est, test, np.random.SeedSequence([seed, 2]), reference=reference, n_train=n
            ).value
            row["kl_f0_fhat"] = kl_f0_to_fhat(est, test).value
        out[m] = row
    return out
