"""Command-line interface: ``ptu-reserving <command> ...``.

Every command writes its outputs plus ``manifest.json`` into ``--out``
(default ``$PTU_RESERVING_OUT`` or ``./ptu_out``). ``replay`` re-runs a
manifest into a fresh directory and checks the outputs hash-for-hash.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .claims import aggregate, rbns_ptu, read_claims_csv, true_oll, write_claims_csv
from .errors import NumericalError, ReproducibilityError, ValidationError
from .fnn import save_models
from .pipeline import PipelineConfig, PipelineResult, evaluate, run_pipeline, with_master_seed
from .simulate import SimConfig, save_config, simulate, with_seed
from .triangle import TRIANGLE_COLUMNS, cl_summary, read_triangle_csv, write_summary

log = logging.getLogger("ptu_reserving")

OUT_ENV = "PTU_RESERVING_OUT"
MANIFEST = "manifest.json"


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_csv(df, path):
    df.to_csv(path, index=False, lineterminator="\n")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def _with_path(path, fn):
    try:
        return fn()
    except (ValidationError, TypeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _is_triangle_csv(path):
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                return tuple(c.strip() for c in line.strip().split(",")) == TRIANGLE_COLUMNS
    return False


# -- commands ----------------------------------------------------------------------


def cmd_simulate(args, out):
    cfg = SimConfig()
    if args.config:
        cfg = _with_path(args.config, lambda: SimConfig.from_dict(_load_json(args.config)))
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    portfolio = simulate(cfg)
    write_claims_csv(portfolio, out / "claims.csv", header={"seed": cfg.seed})
    save_config(cfg, out / "sim_config.json")
    log.info("simulated %d claims into %s", len(portfolio), out / "claims.csv")
    return {"config": cfg.to_dict(), "seed": cfg.seed}


def cmd_cl(args, out):
    if _is_triangle_csv(args.input):
        tri = read_triangle_csv(args.input)
    else:
        tri = aggregate(read_claims_csv(args.input).censored())
    summary = cl_summary(tri, args.method)
    write_summary(summary, out)
    print(f"total reserve {summary['total_reserve']:.4f}")
    return {"method": args.method}


def cmd_rbns(args, out):
    portfolio = read_claims_csv(args.input)
    res = rbns_ptu(portfolio)
    _write_csv(pd.DataFrame({"dev_period": np.arange(len(res.factors)), "ptu_factor": res.factors.values}),
               out / "rbns_factors.csv")
    _write_csv(pd.DataFrame({
        "claim_id": res.claim_id, "accident_period": res.accident_period,
        "paid_to_date": res.paid_to_date, "ultimate": res.ultimates,
        "reserve": res.ultimates - res.paid_to_date,
    }), out / "rbns_claims.csv")
    table = pd.DataFrame({"accident_period": np.arange(1, portfolio.n_acc + 1), "rbns_cl": res.reserves})
    try:
        table["aggregate_cl"] = [p["reserve"] for p in cl_summary(aggregate(portfolio.censored()))["periods"]]
    except ValidationError as exc:
        log.warning("aggregate CL not reported: %s", exc)
    if portfolio.evaluation_square:
        table["true_oll"] = true_oll(portfolio)[0]
    total = {c: table[c].sum() for c in table.columns if c != "accident_period"}
    table = pd.concat([table, pd.DataFrame([{"accident_period": "total", **total}])], ignore_index=True)
    _write_csv(table, out / "rbns_reserves.csv")
    print(f"RBNS reserve {res.total_reserve:.4f}")
    return {}


def _pipeline_config(args, portfolio):
    raw = {}
    if args.config:
        raw = _load_json(args.config)
    cfg = _with_path(args.config, lambda: PipelineConfig.from_dict(raw)) if args.config else PipelineConfig()
    if "use_incurred" not in raw:
        cfg = replace(cfg, use_incurred=portfolio.has_incurred)
    if args.no_incurred:
        cfg = replace(cfg, use_incurred=False)
    if args.seed is not None:
        cfg = with_master_seed(cfg, args.seed)
    return cfg


def cmd_individual(args, out):
    from .plotting import plot_reserves_by_month, plot_reserves_by_period

    portfolio = read_claims_csv(args.input)
    cfg = _pipeline_config(args, portfolio)
    result = run_pipeline(portfolio, cfg, oracle_targets=args.oracle_targets)
    _write_csv(result.predictions_frame(), out / "predictions.csv")
    _write_csv(result.reserves_frame(), out / "reserves.csv")
    _write_csv(result.steps_frame(), out / "steps.csv")
    models = {f"j{j}_k{k}": m for j, ens in result.ensembles.items() for k, m in enumerate(ens.models)}
    scales = {str(j): ens.scales.tolist() for j, ens in result.ensembles.items()}
    save_models(out / "models.json", models, extra={"balance_scales": scales, "config": cfg.to_dict()})
    truth = None
    if portfolio.evaluation_square:
        _write_csv(evaluate(result, portfolio), out / "evaluation.csv")
        truth = portfolio.ultimates()[portfolio.reported()]
    if not args.no_plots:
        plot_reserves_by_period(result, out / "reserves_by_period.svg", truth)
        plot_reserves_by_month(result, out / "reserves_by_month.svg", truth)
    print(f"FNN reserve {result.total_reserve:.4f}  RBNS CL reserve {result.rbns_cl_reserve.sum():.4f}")
    return {"config": cfg.to_dict(), "seed": cfg.master_seed}


def cmd_evaluate(args, out):
    portfolio = read_claims_csv(args.claims)
    if not portfolio.evaluation_square:
        raise ValidationError(f"{args.claims}: evaluation needs the full development square")
    pred = pd.read_csv(args.predictions, dtype={"claim_id": str}, float_precision="round_trip")
    missing = {"claim_id", "accident_period", "prediction"} - set(pred.columns)
    if missing:
        raise ValidationError(f"{args.predictions}: missing columns {sorted(missing)}")
    cen = portfolio.censored()
    idx = pd.Index(cen.claim_id).get_indexer(pred["claim_id"])
    if (idx < 0).any() or len(idx) != len(cen):
        raise ValidationError("predictions and claims file cover different claims")
    result = PipelineResult(
        claim_id=cen.claim_id[idx],
        accident_period=cen.accident_period[idx],
        prediction=pred["prediction"].to_numpy(float),
        paid_to_date=cen.paid_to_date()[idx],
        status_to_date=cen.status_to_date()[idx],
        accident_month=cen.accident_month[idx],
        rbns_cl=rbns_ptu(cen).ultimates[idx],
        steps=[], ensembles={}, n_acc=cen.n_acc, n_dev=cen.n_dev,
    )
    table = evaluate(result, portfolio)
    _write_csv(table, out / "evaluation.csv")
    print(table.to_string(index=False))
    return {}


def cmd_replay(args, out):
    manifest = _load_json(args.manifest)
    for item in manifest["inputs"]:
        if sha256(item["path"]) != item["sha256"]:
            raise ValidationError(f"input {item['path']} changed since the recorded run")
    argv = list(manifest["argv"]) + ["--out", str(out)]
    code = main(argv)
    if code:
        return {"_exit": code}
    diffs = [name for name, digest in manifest["outputs"].items()
             if not (out / name).exists() or sha256(out / name) != digest]
    if diffs:
        raise ReproducibilityError(f"replay differs in {', '.join(sorted(diffs))}")
    print(f"replay reproduced {len(manifest['outputs'])} files")
    return {"_replay": True}


COMMANDS = {
    "simulate": cmd_simulate,
    "cl": cmd_cl,
    "rbns": cmd_rbns,
    "individual": cmd_individual,
    "evaluate": cmd_evaluate,
    "replay": cmd_replay,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ptu-reserving", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default ${OUT_ENV} or ./ptu_out)")
        return p

    p = add("simulate", "draw a synthetic claims square")
    p.add_argument("--config", type=Path, help="simulation settings JSON")
    p.add_argument("--seed", type=int)

    p = add("cl", "aggregate chain-ladder with Mack RMSEP")
    p.add_argument("input", type=Path, help="triangle CSV or claims CSV")
    p.add_argument("--method", choices=("ptu", "forward"), default="ptu")

    p = add("rbns", "reported-claims projection-to-ultimate chain-ladder")
    p.add_argument("input", type=Path, help="claims CSV")

    p = add("individual", "recursive neural-network individual reserving")
    p.add_argument("input", type=Path, help="claims CSV")
    p.add_argument("--config", type=Path, help="pipeline settings JSON")
    p.add_argument("--seed", type=int, help="master seed of the ensembles")
    p.add_argument("--oracle-targets", action="store_true",
                   help="learn on true ultimates instead of appended predictions")
    p.add_argument("--no-incurred", action="store_true", help="ignore incurred data even if present")
    p.add_argument("--no-plots", action="store_true")

    p = add("evaluate", "backtest predictions against an evaluation square")
    p.add_argument("predictions", type=Path, help="predictions.csv from 'individual'")
    p.add_argument("claims", type=Path, help="claims CSV holding the full square")

    p = add("replay", "re-run a manifest and verify its outputs")
    p.add_argument("manifest", type=Path)
    return parser


def _inputs(args):
    paths = [getattr(args, name, None) for name in ("input", "predictions", "claims", "config")]
    return [{"path": str(Path(p).resolve()), "sha256": sha256(p)} for p in paths if p is not None]


def _replay_argv(args, argv):
    """The command line minus ``--out``, with input paths made absolute."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        out.append(tok)
    resolved = {str(getattr(args, n)): str(Path(getattr(args, n)).resolve())
                for n in ("input", "predictions", "claims", "config") if getattr(args, n, None)}
    return [resolved.get(tok, tok) for tok in out]


def run(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or Path(os.environ.get(OUT_ENV, "ptu_out"))
    out.mkdir(parents=True, exist_ok=True)
    for name in ("input", "predictions", "claims", "config", "manifest"):
        p = getattr(args, name, None)
        if p is not None and not Path(p).is_file():
            raise ValidationError(f"{p}: no such file")
    inputs = _inputs(args) if args.command != "replay" else []
    info = COMMANDS[args.command](args, out)
    if args.command == "replay":
        return info.get("_exit", 0)
    outputs = {p.name: sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != MANIFEST}
    manifest = {
        "tool": "ptu-reserving",
        "version": __version__,
        "subcommand": args.command,
        "argv": _replay_argv(args, argv),
        "inputs": inputs,
        "config_path": str(Path(args.config).resolve()) if getattr(args, "config", None) else None,
        "config": info.get("config"),
        "seed": info.get("seed"),
        "out": str(out.resolve()),
        "outputs": outputs,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return run(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
