"""Command-line front end: ``fit``, ``synth``, ``eval`` and ``oracle``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .contamination import (
    ContaminationSpec,
    Dataset,
    DatasetError,
    GaussianMixture,
    UniformBox,
    fig4_experiment_spec,
    grid_scenario,
    grid_truth,
    load_dataset,
    sample_mixture,
)
from .evaluation import (
    METHODS,
    METRICS,
    benchmark_run,
    compare_methods,
    fit_method,
    loocv_bandwidth,
    parse_sigma_grid,
    report_means,
    wilcoxon_table_csv,
)
from .kernels import KernelFamily, KernelSpec
from .oracle import GridDensity, decontaminate, lp_distance, mix, slice_transform
from .qp import DEFAULT_MAX_ITER, DEFAULT_TOL, NumericError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

log = logging.getLogger("spkde")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """A parsed command and its parameters, serialisable to JSON."""

    command: str
    params: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> "RunConfig":
        params = {k: v for k, v in sorted(vars(ns).items()) if k not in ("command", "func")}
        return cls(ns.command, json.loads(json.dumps(params, default=str)))

    def recorded(self) -> Dict[str, object]:
        """Parameters as embedded in output files; the output directory is left out."""
        return {k: v for k, v in self.params.items() if k != "out"}

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "params": self.params}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        d = json.loads(text)
        return cls(d["command"], d["params"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8", newline="\n")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _add_shared(p: argparse.ArgumentParser, sigma: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--kernel", choices=[f.value for f in KernelFamily], default="gaussian")
    if sigma:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--sigma", type=float, help="fixed bandwidth")
        g.add_argument("--sigma-grid", default="0.01:3:30",
                       help="log-spaced LOOCV grid lo:hi:count (default %(default)s)")
    p.add_argument("--beta", type=float, default=None, help="robustness scale (>= 1)")
    p.add_argument("--eps", type=_float_list, default=None, help="contamination level(s), comma separated")
    p.add_argument("--grid-h", type=float, default=1e-3, help="grid cell size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spkde", description="Scaled and projected kernel density estimation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a density estimate to a CSV sample")
    _add_shared(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--method", choices=METHODS, default="spkde")
    p.add_argument("--reject-fraction", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("synth", help="draw a contaminated sample with grid ground truth")
    _add_shared(p, sigma=False)
    p.add_argument("--scenario", default="fig4", help="named scenario (fig4) or 'custom'")
    p.add_argument("--n", type=int, default=None, help="sample size (fig4: 500)")
    p.add_argument("--target", default=None,
                   help="custom 1-D target mixture 'w:mean:std,w:mean:std,...'")
    p.add_argument("--contaminant", default=None, help="custom uniform contaminant, e.g. --contaminant=-2:2")
    p.add_argument("--grid", default="-4:4", help="ground-truth window, e.g. --grid=-4:4 (default %(default)s)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="benchmark methods on labelled datasets")
    _add_shared(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", type=Path, nargs="+", help="labelled CSV file(s)")
    src.add_argument("--scenario", help="synthetic scenario (fig4)")
    src.add_argument("--means", type=Path, help="CSV of per-dataset means: dataset,eps,method,metric,value")
    p.add_argument("--methods", default="kde,spkde,rejkde")
    p.add_argument("--seeds", type=int, default=15, help="number of permutations")
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--reject-fraction", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--wilcoxon", default=None, help="compare two methods across datasets: A,B")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="apply the slicing transform to a grid density")
    _add_shared(p, sigma=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--grid", type=Path, help="grid CSV")
    src.add_argument("--scenario", choices=["uniform", "piecewise", "fig4"])
    p.add_argument("--truth", type=Path, default=None, help="target grid CSV for an L1 report")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_oracle)
    return parser


# -- fit ------------------------------------------------------------------

def _load_points(path: Path) -> np.ndarray:
    if not path.exists():
        raise UsageError(f"input file not found: {path}")
    return load_dataset(path).features


def cmd_fit(args, config: RunConfig) -> int:
    points = _load_points(args.input)
    if args.sigma is not None:
        sigma = args.sigma
    else:
        sigma = loocv_bandwidth(points, parse_sigma_grid(args.sigma_grid), KernelFamily(args.kernel))
    beta = 2.0 if args.beta is None else args.beta
    if args.method == "spkde" and beta < 1.0:
        raise UsageError("--beta must be >= 1")
    spec = KernelSpec(KernelFamily(args.kernel), points.shape[1], sigma)
    est = fit_method(args.method, points, spec, beta, args.reject_fraction, args.tol, args.max_iter)
    model = {
        "method": args.method,
        "kernel": spec.to_dict(),
        "beta": beta if args.method == "spkde" else None,
        "points": est.points.tolist(),
        "weights": est.weights.tolist(),
        "config": config.recorded(),
    }
    if est.report is not None:
        model["solve"] = est.report.to_dict()
        model["converged"] = est.report.converged
        if not est.report.converged:
            print(
                f"warning: solver did not converge (KKT residual {est.report.kkt_residual:.3g})",
                file=sys.stderr,
            )
    else:
        model["converged"] = True
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "model.json", model)
    return EXIT_OK


def load_model(path: Path):
    """Rebuild the estimate stored by ``fit``."""
    from .kernels import WeightedDensityEstimate

    d = json.loads(Path(path).read_text(encoding="utf-8"))
    w = np.asarray(d["weights"])
    return WeightedDensityEstimate(np.asarray(d["points"]), w, KernelSpec.from_dict(d["kernel"])), d


# -- synth ----------------------------------------------------------------

def _parse_target(text: str) -> GaussianMixture:
    try:
        parts = [tuple(float(v) for v in comp.split(":")) for comp in text.split(",")]
        w, mu, sd = zip(*parts)
    except ValueError:
        raise UsageError(f"target must look like 'w:mean:std,...', got {text!r}") from None
    return GaussianMixture(w, [(m,) for m in mu], sd, name="custom_target")


def _parse_interval(text: str, what: str):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"{what} must look like 'lo:hi', got {text!r}") from None
    return lo, hi


def _synth_spec(args) -> ContaminationSpec:
    eps = args.eps[0] if args.eps else None
    if args.scenario == "fig4":
        spec = fig4_experiment_spec(seed=args.seed, n=args.n or 500)
        if eps is not None and eps != spec.eps:
            spec = ContaminationSpec(spec.target, spec.contaminant, eps, spec.n, spec.seed, None, "fig4")
        return spec
    if args.scenario == "custom":
        if not args.target or not args.contaminant:
            raise UsageError("custom scenario needs --target and --contaminant")
        lo, hi = _parse_interval(args.contaminant, "--contaminant")
        return ContaminationSpec(
            _parse_target(args.target), UniformBox((lo,), (hi,)), 0.2 if eps is None else eps,
            args.n or 500, args.seed, args.beta, "custom",
        )
    raise UsageError(f"unknown scenario {args.scenario!r}")


def cmd_synth(args, config: RunConfig) -> int:
    spec = _synth_spec(args)
    sample = sample_mixture(spec)
    lo, hi = _parse_interval(args.grid, "--grid")
    f_tar, f_con, f_obs = grid_truth(spec, (lo,), (hi,), args.grid_h)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k}" for k in range(spec.dim)] + ["label"])
    for p, lab in zip(sample.points, sample.labels):
        w.writerow([repr(float(v)) for v in p] + [int(lab)])
    _write_text(out / "samples.csv", buf.getvalue())
    f_tar.to_csv(out / "f_tar.csv")
    f_con.to_csv(out / "f_con.csv")
    f_obs.to_csv(out / "f_obs.csv")
    _write_json(out / "metadata.json", {"seed": args.seed, "spec": spec.to_dict(), "config": config.recorded(),
                                       "contaminant_fraction": sample.contaminant_fraction})
    return EXIT_OK


# -- eval -----------------------------------------------------------------

def _synthetic_dataset(name: str, seed: int) -> Dataset:
    if name != "fig4":
        raise UsageError(f"unknown scenario {name!r}")
    spec = fig4_experiment_spec()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    x0 = spec.target.sample(2 * spec.n, rng)
    x1 = spec.contaminant.sample(spec.n, rng)
    labels = np.r_[np.zeros(len(x0), dtype=np.int8), np.ones(len(x1), dtype=np.int8)]
    return Dataset(np.vstack([x0, x1]), labels, ("x0",), "fig4")


def _read_means(path: Path):
    """``{metric: {dataset: {eps: {method: value}}}}`` from a long-format CSV."""
    if not path.exists():
        raise UsageError(f"means file not found: {path}")
    out: Dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"dataset", "eps", "method", "metric", "value"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DatasetError(f"means CSV needs columns {sorted(need)}", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                eps, val = float(row["eps"]), float(row["value"])
            except ValueError:
                raise DatasetError("non-numeric eps or value", lineno) from None
            out.setdefault(row["metric"], {}).setdefault(row["dataset"], {}).setdefault(eps, {})[row["method"]] = val
    return out


def _wilcoxon_outputs(means_by_metric, pair: str, out: Path) -> dict:
    try:
        a, b = [m.strip() for m in pair.split(",")]
    except ValueError:
        raise UsageError(f"--wilcoxon expects two methods 'A,B', got {pair!r}") from None
    block = {}
    for metric in sorted(means_by_metric):
        results = compare_methods(means_by_metric[metric], a, b)
        block[metric] = {repr(e): r.to_dict() for e, r in results.items()}
        _write_text(out / f"wilcoxon_{metric}.csv", wilcoxon_table_csv(results, a, b))
    doc = {"method_a": a, "method_b": b, "tests": block}
    _write_json(out / "wilcoxon.json", doc)
    return doc


def cmd_eval(args, config: RunConfig) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.means is not None:
        if not args.wilcoxon:
            raise UsageError("--means requires --wilcoxon A,B")
        _wilcoxon_outputs(_read_means(args.means), args.wilcoxon, out)
        return EXIT_OK

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}")
    if args.dataset:
        datasets = []
        for path in args.dataset:
            if not path.exists():
                raise UsageError(f"dataset not found: {path}")
            datasets.append(load_dataset(path, require_labels=True))
    else:
        datasets = [_synthetic_dataset(args.scenario, args.seed)]
    eps_list = args.eps if args.eps else [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
    if any(not 0.0 <= e < 1.0 for e in eps_list):
        raise UsageError("--eps values must lie in [0, 1)")
    beta = 2.0 if args.beta is None else args.beta
    if beta < 1.0:
        raise UsageError("--beta must be >= 1")
    grid = [args.sigma] if args.sigma is not None else parse_sigma_grid(args.sigma_grid)
    reports = [
        benchmark_run(ds, eps_list, methods, list(range(args.seeds)), beta=beta, sigma_grid=grid,
                      train_fraction=args.train_fraction, reject_fraction=args.reject_fraction,
                      master_seed=args.seed, tol=args.tol)
        for ds in datasets
    ]
    merged = {}
    meta = {}
    csv_parts = []
    for i, r in enumerate(reports):
        d = r.to_dict()
        meta[r.dataset] = d.pop("_meta")
        merged.update(d)
        text = r.to_csv()
        csv_parts.append(text if i == 0 else text.split("\n", 1)[1])
    _write_json(out / "report.json", {"datasets": merged, "meta": meta, "config": config.recorded()})
    _write_text(out / "report.csv", "".join(csv_parts))
    if args.wilcoxon:
        _wilcoxon_outputs({m: report_means(reports, m) for m in METRICS}, args.wilcoxon, out)
    return EXIT_OK


# -- oracle ---------------------------------------------------------------

def cmd_oracle(args, config: RunConfig) -> int:
    truth = None
    if args.scenario:
        f_tar, f_con, eps0 = grid_scenario(args.scenario, args.grid_h)
        eps_mix = eps0
        f_obs = mix(f_tar, f_con, eps_mix)
        truth = f_tar
    else:
        if not args.grid.exists():
            raise UsageError(f"grid file not found: {args.grid}")
        f_obs = GridDensity.from_csv(args.grid)
        eps0 = None
    if args.truth is not None:
        if not args.truth.exists():
            raise UsageError(f"truth file not found: {args.truth}")
        truth = GridDensity.from_csv(args.truth)
    if args.beta is not None and args.eps:
        raise UsageError("give either --beta or --eps, not both")
    if args.beta is not None:
        if not args.beta > 1.0:
            raise UsageError("--beta must exceed 1")
        res = slice_transform(f_obs, args.beta, tol=args.tol)
    else:
        eps = args.eps[0] if args.eps else eps0
        if eps is None:
            raise UsageError("need --beta or --eps")
        if not 0.0 <= eps < 1.0:
            raise UsageError("--eps must lie in [0, 1)")
        if args.scenario == "uniform" and args.eps is None:
            raise UsageError("scenario 'uniform' needs --beta or --eps")
        res = decontaminate(f_obs, eps, tol=args.tol)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    res.density.to_csv(out / "sliced.csv")
    summary = {"alpha": res.alpha, "beta": res.beta, "mass_error": res.mass_error,
               "bisection_steps": res.iterations, "config": config.recorded()}
    if truth is not None:
        summary["l1_to_truth"] = lp_distance(res.density, truth, 1)
    _write_json(out / "oracle.json", summary)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    config = RunConfig.from_namespace(args)
    try:
        return args.func(args, config)
    except (UsageError, DatasetError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
