"""Reproducible experiment runner.

Every operation is exposed as a subcommand; runs emit JSON or CSV
artifacts plus a manifest carrying the full configuration, library
versions, and seeds.  Identical configurations produce byte-identical
artifacts except for elapsed_ms fields, which the compare mode ignores.

Exit codes: 0 success, 2 precondition failure, 3 numerical-invariant
violation detected during the run.
"""

import argparse
import json
import platform
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .finite_vn import MasaFrame, conditional_expectation, op_norm
from .free_model import (
    EnsembleSpec,
    calibrate,
    conjugation_paving_experiment,
    kesten_norm_oracle,
    make_block_paver,
    power_conjugation_growth,
    projection_paving_experiment,
    sample,
)
from .independence import build_independent_partition, check_cor37
from .matrix_io import load_matrix
from .paving import compress, dixmier_average, pave_search, paving_number_exact, roots_of_unity_tuple
from .reduction import reduce_and_pave
from .seeds import map_over_seeds

DEFAULT_EPS_GRID = (0.6, 0.5, 0.4, 0.3)


@dataclass
class RunConfig:
    subcommand: str
    dim: int = 64
    eps: float = 0.5
    n: int = 4
    seed: int = 0
    seed_count: int = 1
    strategy: str = "anneal"
    budget: int = 10_000
    input: str | None = None
    output: str | None = None
    format: str = "json"

    def validate(self):
        if self.seed_count < 1:
            raise ValueError("seed_count must be >= 1")
        if self.format not in ("json", "csv"):
            raise ValueError("format must be json or csv")


def _manifest(cfg: RunConfig, seeds) -> dict:
    return {
        "config": asdict(cfg),
        "versions": {
            "pavlab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "seeds": list(seeds),
    }


def strip_timing(obj):
    """Drop elapsed_ms fields recursively; used by artifact comparison."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "elapsed_ms"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header, rows) -> str:
    text = ",".join(header) + "\n"
    for row in rows:
        text += ",".join(_fmt(v) for v in row) + "\n"
    if path:
        Path(path).write_text(text)
    return text


def _emit(cfg: RunConfig, payload: dict, seeds, csv=None) -> None:
    manifest = _manifest(cfg, seeds)
    if cfg.output:
        out = Path(cfg.output)
        if cfg.format == "csv" and csv is not None:
            _write_csv(out, *csv)
        else:
            out.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")
        Path(str(out) + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    else:
        if cfg.format == "csv" and csv is not None:
            sys.stdout.write(_write_csv(None, *csv))
        else:
            payload = dict(payload)
            payload["manifest"] = manifest
            sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def _input_matrix(cfg: RunConfig):
    if cfg.input:
        return load_matrix(cfg.input).entries
    return sample(EnsembleSpec("zero_diag_haar", cfg.dim, cfg.seed)).entries


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_pave(cfg: RunConfig) -> int:
    x = _input_matrix(cfg)
    part, report = pave_search(x, cfg.eps, cfg.strategy, cfg.budget, cfg.seed)
    payload = {
        "report": report.to_json_dict(),
        "assignment": part.assignment.tolist(),
    }
    _emit(cfg, payload, [cfg.seed])
    return 0


def cmd_pave_exact(cfg: RunConfig) -> int:
    x = _input_matrix(cfg)
    n = paving_number_exact(x, cfg.eps, MasaFrame.identity(x.shape[0]))
    payload = {"eps": cfg.eps, "paving_number": n, "dim": int(x.shape[0])}
    _emit(cfg, payload, [cfg.seed])
    return 0


def cmd_curve(cfg: RunConfig, eps_grid) -> int:
    """Empirical paving-size curve with the ensemble paver (free strategy)."""
    eps_grid = tuple(eps_grid) if eps_grid else DEFAULT_EPS_GRID
    x = sample(EnsembleSpec("zero_diag_haar", cfg.dim, cfg.seed)).entries
    points = []
    for eps in eps_grid:
        part, report = pave_search(x, eps, "roots_of_unity", cfg.budget, cfg.seed)
        points.append({"eps": eps, "n": part.effective_blocks, "ratio": report.ratio})
    c = points[0]["n"] * eps_grid[0] ** 6
    for p in points:
        p["envelope"] = c * p["eps"] ** -6
    logs = np.log([p["n"] for p in points])
    exps = np.log([1 / p["eps"] for p in points])
    slope = float(np.polyfit(exps, logs, 1)[0]) if len(points) > 1 else float("nan")
    payload = {
        "dim": cfg.dim,
        "seed": cfg.seed,
        "points": points,
        "envelope_constant": c,
        "fitted_exponent": slope,
    }
    rows = [(p["eps"], p["n"], cfg.dim, cfg.seed, p["ratio"], p["envelope"]) for p in points]
    _emit(cfg, payload, [cfg.seed], csv=(("eps", "n", "dim", "seed", "ratio", "envelope"), rows))
    return 0


def cmd_indep(cfg: RunConfig, levels: int, alpha: float) -> int:
    frame = MasaFrame.identity(cfg.dim)
    x = sample(EnsembleSpec("zero_diag_haar", cfg.dim, cfg.seed)).entries
    part, report = build_independent_partition([x], [], levels, alpha, frame,
                                               cfg.budget, cfg.seed)
    cert = check_cor37(part, [x])
    payload = {
        "levels": levels,
        "blocks": part.n_blocks,
        "report": report.to_json_dict(),
        "certificate": cert.to_json_dict(),
    }
    _emit(cfg, payload, [cfg.seed])
    return 0 if cert.all_hold else 3


def cmd_free(cfg: RunConfig, op: str, t: float, m: int, n_max: int) -> int:
    seeds = list(range(cfg.seed, cfg.seed + cfg.seed_count))
    rows = []
    lines = []
    if op == "conj":
        reports = map_over_seeds(lambda s: conjugation_paving_experiment(cfg.n, cfg.dim, s), seeds)
        for rep in reports:
            lines.append(rep.to_json_dict())
            rows.append(("conj", rep.n, rep.dim, rep.seed, rep.measured_norm,
                         rep.paper_bound, rep.slack))
    elif op == "proj":
        reports = map_over_seeds(lambda s: projection_paving_experiment(t, cfg.n, cfg.dim, s), seeds)
        for block, half in reports:
            lines.append({"blocks": block.to_json_dict(), "half_split": half.to_json_dict()})
            rows.append(("proj_blocks", block.n, block.dim, block.seed,
                         block.measured_norm, block.paper_bound, block.slack))
            rows.append(("proj_half", half.n, half.dim, half.seed,
                         half.measured_norm, half.paper_bound, half.slack))
    elif op == "kesten":
        vals = map_over_seeds(lambda s: kesten_norm_oracle(m, cfg.dim, s), seeds)
        for s, v in zip(seeds, vals):
            paper = float(np.sqrt(m))
            free = float(2 * np.sqrt(m - 1)) if m > 1 else 1.0
            lines.append({"m": m, "dim": cfg.dim, "seed": s, "measured": v,
                          "paper_value": paper, "free_value": free})
            rows.append(("kesten", m, cfg.dim, s, v, paper, v - paper))
            rows.append(("kesten_free", m, cfg.dim, s, v, free, v - free))
    elif op == "growth":
        reports = map_over_seeds(lambda s: power_conjugation_growth(cfg.dim, n_max, s), seeds)
        for rep in reports:
            lines.append(rep.to_json_dict())
            for i, g in enumerate(rep.values, start=1):
                ref = float(np.sqrt(i))
                rows.append(("growth", i, rep.dim, rep.seed, g, ref, g - ref))
    else:
        raise ValueError(f"unknown free op {op!r}")
    payload = {"op": op, "lines": lines}
    header = ("param", "n", "dim", "seed", "measured", "bound", "slack")
    _emit(cfg, payload, seeds, csv=(header, rows))
    return 0


def cmd_reduce(cfg: RunConfig) -> int:
    x = _input_matrix(cfg)
    x = (x + x.conj().T) / 2
    nrm = op_norm(x - conditional_expectation(x, MasaFrame.identity(x.shape[0])).entries)
    if nrm > 1e-12:
        x = x / op_norm(x)
    part, trace, report = reduce_and_pave(x, cfg.eps, make_block_paver(), seed=cfg.seed)
    payload = {
        "report": report.to_json_dict(),
        "trace": trace.to_json_dict(),
        "blocks": part.n_blocks,
    }
    _emit(cfg, payload, [cfg.seed])
    return 0 if trace.all_ok else 3


def cmd_dixmier(cfg: RunConfig) -> int:
    """Averaging over the W-tuple must reproduce the block compression."""
    x = _input_matrix(cfg)
    dim = x.shape[0]
    from .free_model import equal_block_partition

    part = equal_block_partition(dim, cfg.n, cfg.seed)
    tw = dixmier_average(x, roots_of_unity_tuple(part), part.frame)
    comp = compress(x, part)
    dev = float(np.abs(tw.entries - comp.entries).max())
    payload = {"n": cfg.n, "dim": dim, "seed": cfg.seed, "max_deviation": dev}
    _emit(cfg, payload, [cfg.seed])
    return 0 if dev <= 1e-12 else 3


def cmd_calibrate(cfg: RunConfig, dims: dict) -> int:
    seeds = list(range(cfg.seed, cfg.seed + cfg.seed_count))
    manifest = calibrate(seeds, **dims)
    payload = {"calibration": manifest}
    _emit(cfg, payload, seeds)
    return 0


def cmd_compare(a: str, b: str) -> int:
    """Byte comparison of two JSON artifacts modulo timing fields."""
    da = strip_timing(json.loads(Path(a).read_text()))
    db = strip_timing(json.loads(Path(b).read_text()))
    same = json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)
    sys.stdout.write(json.dumps({"match": same}) + "\n")
    return 0 if same else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pavlab",
                                     description="matrix paving experiments")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, strategy=False):
        p.add_argument("--dim", type=int, default=64)
        p.add_argument("--eps", type=float, default=0.5)
        p.add_argument("--n", type=int, default=4)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--seeds", dest="seed_count", type=int, default=1,
                       help="sweep width: seeds seed..seed+count-1")
        p.add_argument("--budget", type=int, default=10_000)
        p.add_argument("--input", default=None, help="matrix file (JSON or PVLB binary)")
        p.add_argument("--out", dest="output", default=None)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if strategy:
            p.add_argument("--strategy", default="anneal",
                           choices=("exhaustive", "sign_split", "arc", "anneal", "roots_of_unity"))

    common(sub.add_parser("pave", help="search for a paving partition"), strategy=True)
    common(sub.add_parser("pave-exact", help="exhaustive paving number (dim <= 12)"))
    curve = sub.add_parser("curve", help="empirical paving-size curve over an eps grid")
    common(curve)
    curve.add_argument("--eps-grid", type=float, nargs="+", default=None)
    indep = sub.add_parser("indep", help="build an independent partition and certify it")
    common(indep)
    indep.add_argument("--levels", type=int, default=4)
    indep.add_argument("--alpha", type=float, default=0.01)
    free = sub.add_parser("free", help="random-matrix freeness experiments")
    common(free)
    free.add_argument("--op", choices=("conj", "proj", "kesten", "growth"), default="conj")
    free.add_argument("--t", type=float, default=0.5)
    free.add_argument("--m", type=int, default=2)
    free.add_argument("--n-max", type=int, default=16)
    common(sub.add_parser("reduce", help="reduction pipeline on a self-adjoint element"))
    common(sub.add_parser("dixmier", help="W-tuple averaging identity"))
    cal = sub.add_parser("calibrate", help="calibration run for the free-model tolerances")
    common(cal)
    cal.add_argument("--dim-conj", type=int, default=1024)
    cal.add_argument("--dim-proj", type=int, default=2048)
    cal.add_argument("--dim-kesten", type=int, default=2048)
    comp = sub.add_parser("compare", help="compare artifacts ignoring timing")
    comp.add_argument("a")
    comp.add_argument("b")
    return parser


def _config_from(args) -> RunConfig:
    cfg = RunConfig(subcommand=args.subcommand)
    for name in ("dim", "eps", "n", "seed", "seed_count", "budget", "input", "output", "format"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "strategy"):
        cfg.strategy = args.strategy
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "compare":
        return cmd_compare(args.a, args.b)
    try:
        cfg = _config_from(args)
        if args.subcommand == "pave":
            return cmd_pave(cfg)
        if args.subcommand == "pave-exact":
            return cmd_pave_exact(cfg)
        if args.subcommand == "curve":
            return cmd_curve(cfg, args.eps_grid)
        if args.subcommand == "indep":
            return cmd_indep(cfg, args.levels, args.alpha)
        if args.subcommand == "free":
            return cmd_free(cfg, args.op, args.t, args.m, args.n_max)
        if args.subcommand == "reduce":
            return cmd_reduce(cfg)
        if args.subcommand == "dixmier":
            return cmd_dixmier(cfg)
        if args.subcommand == "calibrate":
            dims = {"dim_conj": args.dim_conj, "dim_proj": args.dim_proj,
                    "dim_kesten": args.dim_kesten}
            return cmd_calibrate(cfg, dims)
        raise ValueError(f"unknown subcommand {args.subcommand!r}")
    except (ValueError, FileNotFoundError) as exc:
        sys.stdout.write(json.dumps({"error": str(exc), "code": 2}) + "\n")
        return 2
    except AssertionError as exc:
        sys.stdout.write(json.dumps({"error": str(exc), "code": 3}) + "\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
