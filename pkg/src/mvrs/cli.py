"""Command-line entry point: ``mvrs estimate | simulate | partition``.

Every report is validated against the JSON schema shipped in
``mvrs/schemas`` before it is written; the exit status is 0 only when the
report was written and validates.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .data import Dataset, load_csv
from .errors import InvalidInput, MVRSError
from .model import Family
from .pipeline import METHODS, prepare_pilot, run_full, run_method
from .pipeline import build_strata
from .simgen import SimConfig, generate_dataset, run_experiment, time_methods
from .stratify import PARTITION_METHODS

logger = logging.getLogger("mvrs")

EXIT_OK, EXIT_ERROR, EXIT_INVALID = 0, 1, 3


@dataclass
class CliConfig:
    command: str
    input_path: str | None
    family: str
    method: str = "mvrs-u"
    n: int | None = None
    n0: int = 200
    k: int = 10
    seed: int = 0
    output_path: str | None = None
    output_format: str = "json"
    min_prob_floor: float = 0.0
    partition_method: str = "histogram"

    def check(self, N: int) -> None:
        """Per-command required fields and ``n0 < n < N``."""
        if self.method == "full":
            return
        if self.n is None:
            raise InvalidInput(f"--n is required for method {self.method}")
        if self.n0 >= N:
            raise InvalidInput(f"pilot larger than dataset (n0={self.n0}, N={N})")
        if not self.n0 < self.n < N:
            raise InvalidInput(f"need n0 < n < N, got n0={self.n0}, n={self.n}, N={N}")
        if self.method.startswith("mvrs") and not 1 <= self.k <= N:
            raise InvalidInput(f"need 1 <= k <= N, got k={self.k}")


def load_schema(name: str) -> dict:
    text = resources.files("mvrs").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate(report: dict, name: str) -> None:
    jsonschema.validate(report, load_schema(name))


def dumps(obj) -> str:
    """Stable JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# estimate


def estimate_report(cfg: CliConfig, dataset: Dataset) -> dict:
    cfg.check(dataset.N)
    family = Family.parse(cfg.family)
    if cfg.method == "full":
        res = run_full(dataset, family)
        pilot = None
    else:
        ctx = prepare_pilot(dataset, family, cfg.n0, cfg.seed, 0, cfg.min_prob_floor, cfg.partition_method)
        res = run_method(ctx, cfg.method, cfg.n, cfg.k, with_variance=True)
        # optimal probabilities use the pilot influence function, not the full-data one
        probs = "pilot-based" if ctx.plan_for(cfg.method).pilot_based else "uniform"
        pilot = {"n0": cfg.n0, "theta": _floats(ctx.pilot_theta), "probabilities": probs}
    report = {
        "config": {**asdict(cfg), "input": cfg.input_path},
        "data": {"N": dataset.N, "p": dataset.p},
        "pilot": pilot,
        "estimate": {
            "theta": _floats(res.theta),
            "converged": bool(res.fit.converged),
            "iterations": int(res.fit.iterations),
        },
        "variance": None,
        "strata": None,
        "timing_ms": {k: float(v) for k, v in res.timing_ms.items()},
    }
    if res.cov is not None:
        report["variance"] = {"v_hat": _floats(res.cov.v_hat), "mse_hat": float(res.cov.mse_hat),
                              "singleton_strata": int(res.cov.singleton_strata)}
    elif cfg.method != "full":
        logger.warning("variance estimate unavailable (fit not converged or degenerate strata)")
    if res.strat is not None:
        st = res.strat
        report["strata"] = {"k": int(st.k), "mode": st.mode, "masses": _floats(st.masses),
                            "alloc": [int(a) for a in st.alloc], "empty_count": st.empty_count}
    if not res.fit.converged:
        logger.warning("fit did not converge in %d iterations", res.fit.iterations)
    return report


def estimate_csv(report: dict) -> str:
    theta = report["estimate"]["theta"]
    var = report["variance"]
    n = report["config"]["n"]
    rows = []
    for j, t in enumerate(theta):
        se = float(np.sqrt(var["v_hat"][j][j] / n)) if var else ""
        rows.append([f"theta{j}", repr(t), repr(se) if se != "" else ""])
    return _csv_text(["term", "estimate", "se"], rows)


# --------------------------------------------------------------------------
# partition


def partition_report(cfg: CliConfig, dataset: Dataset) -> dict:
    if cfg.method == "full":
        raise InvalidInput("partition needs a subsampling method")
    cfg.check(dataset.N)
    ctx = prepare_pilot(dataset, cfg.family, cfg.n0, cfg.seed, 0, cfg.min_prob_floor, cfg.partition_method)
    st = build_strata(ctx, cfg.method, cfg.n, cfg.k)
    return {
        "config": {**asdict(cfg), "input": cfg.input_path},
        "k": int(st.k),
        "mode": st.mode,
        "boundaries": _floats(st.boundaries),
        "sizes": [int(s) for s in st.sizes],
        "masses": _floats(st.masses),
        "alloc": [int(a) for a in st.alloc],
        "empty_count": st.empty_count,
    }


def partition_csv(report: dict) -> str:
    k = report["k"]
    bounds = report["boundaries"] + [None]
    rows = [[j, report["sizes"][j], repr(report["masses"][j]), report["alloc"][j],
             "" if bounds[j] is None else repr(bounds[j])] for j in range(k)]
    return _csv_text(["stratum", "size", "mass", "alloc", "upper_score"], rows)


# --------------------------------------------------------------------------
# simulate


def simulate_csv(report: dict) -> str:
    rows = []
    for c in report["cells"]:
        rows.append([c["method"], c["n"], "" if c["k"] is None else c["k"],
                     "" if c["mse"] is None else repr(c["mse"]),
                     "" if c["mean_mse_hat"] is None else repr(c["mean_mse_hat"]),
                     c["n_ok"], c["n_failed"], c["valid"],
                     ";".join(repr(v) for v in c["se"]), ";".join(repr(v) for v in c["bias"])])
    return _csv_text(["method", "n", "k", "mse", "mean_mse_hat", "n_ok", "n_failed", "valid", "se", "bias"], rows)


def _sim_config(args) -> SimConfig:
    raw: dict = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise InvalidInput("simulation config must be a JSON object")
    overrides = {"family": args.family, "seed": args.seed, "n0": args.n0, "R": args.R,
                 "min_prob_floor": args.min_prob_floor, "partition_method": args.partition_method}
    if args.n is not None:
        overrides["n"] = args.n
    if args.k is not None:
        overrides["k"] = args.k
    if args.method:
        overrides["methods"] = args.method
    raw.update({key: v for key, v in overrides.items() if v is not None})
    return SimConfig.from_dict(raw)


def _timing_path(args) -> str | None:
    if args.no_timing:
        return None
    if args.timing_out:
        return args.timing_out
    if args.out in (None, "-"):
        return None
    p = Path(args.out)
    return str(p.with_name(p.stem + ".timing.json"))


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    dataset = load_csv(args.input, cfg.family) if args.input else None
    if dataset is not None and dataset.N != cfg.N:
        logger.info("using %d rows from %s (config N=%d ignored)", dataset.N, args.input, cfg.N)
        cfg.N = dataset.N
        cfg.validate()
    report = run_experiment(cfg, n_jobs=args.n_jobs, dataset=dataset).to_dict()
    validate(report, "simulate")
    _write(args.out, dumps(report) if args.format == "json" else simulate_csv(report))

    tpath = _timing_path(args)
    if tpath is not None:
        if dataset is None:
            dataset = generate_dataset(cfg.family, cfg.case, cfg.N, cfg.theta_true, cfg.seed)
        timing = {"N": dataset.N, "n": max(cfg.n), "repeats": args.timing_repeats,
                  "methods": {label: {k: v for k, v in row.items() if k != "n"}
                              for label, row in time_methods(dataset, cfg, args.timing_repeats).items()}}
        validate(timing, "timing")
        _write(tpath, dumps(timing))
    if not report["valid"]:
        logger.warning("some cells exceed the failure budget; see 'valid' flags")
    return EXIT_OK


def _cli_config(args) -> CliConfig:
    if not args.input:
        raise InvalidInput(f"--input is required for {args.command}")
    if not args.family:
        raise InvalidInput(f"--family is required for {args.command}")
    method = args.method[0] if args.method else ("full" if args.command == "estimate" else "mvrs-u")
    return CliConfig(
        command=args.command,
        input_path=args.input,
        family=args.family,
        method=method,
        n=args.n[0] if args.n else None,
        n0=args.n0 if args.n0 is not None else 200,
        k=args.k[0] if args.k else 10,
        seed=args.seed if args.seed is not None else 0,
        output_path=args.out,
        output_format=args.format,
        min_prob_floor=args.min_prob_floor or 0.0,
        partition_method=args.partition_method or "histogram",
    )


def cmd_estimate(args) -> int:
    cfg = _cli_config(args)
    dataset = load_csv(cfg.input_path, cfg.family)
    logger.info("loaded %d rows, %d covariates", dataset.N, dataset.p)
    report = estimate_report(cfg, dataset)
    validate(report, "estimate")
    _write(cfg.output_path, dumps(report) if cfg.output_format == "json" else estimate_csv(report))
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _cli_config(args)
    if args.method is None:
        cfg.method = "mvrs-u"
    dataset = load_csv(cfg.input_path, cfg.family)
    report = partition_report(cfg, dataset)
    validate(report, "partition")
    _write(cfg.output_path, dumps(report) if cfg.output_format == "json" else partition_csv(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="CSV with header y,x1,...,xp")
    common.add_argument("--family", choices=[f.value for f in Family])
    common.add_argument("--method", choices=METHODS, action="append",
                        help="subsampling method (repeatable for simulate)")
    common.add_argument("--n", type=int, action="append", help="subsample size (repeatable for simulate)")
    common.add_argument("--n0", type=int, help="pilot size (default 200)")
    common.add_argument("--k", type=int, action="append", help="number of strata for mvrs-* (repeatable for simulate)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path; '-' or omitted writes to stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--min-prob-floor", type=float, help="mix probabilities with uniform: (1-a) pi + a/N")
    common.add_argument("--partition-method", choices=PARTITION_METHODS)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="mvrs", description="Stratified subsampling for GLM M-estimation.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("estimate", parents=[common], help="fit a model on a CSV dataset")
    sub.add_parser("partition", parents=[common], help="summarise the strata built for a CSV dataset")
    sim = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo experiment")
    sim.add_argument("--config", help="SimConfig JSON file; flags override its fields")
    sim.add_argument("--R", type=int, help="number of replicates")
    sim.add_argument("--n-jobs", type=int, default=1)
    sim.add_argument("--timing-out", help="timing JSON path (default: <out>.timing.json)")
    sim.add_argument("--timing-repeats", type=int, default=3)
    sim.add_argument("--no-timing", action="store_true")
    return ap


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "partition": cmd_partition}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "simulate":
        for flag in ("n", "k", "method"):
            vals = getattr(args, flag)
            if vals and len(vals) > 1:
                print(f"mvrs: error: --{flag} given more than once", file=sys.stderr)
                return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except jsonschema.ValidationError as exc:
        print(f"mvrs: error: report failed schema validation: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    except (MVRSError, OSError, ValueError) as exc:
        print(f"mvrs: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
