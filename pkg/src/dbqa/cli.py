"""Command-line entry point: ``dbqa run | tables | depth-budget | ledger``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .ansatz import build_hea, build_hwp
from .cost import depth_equivalent, gci_depth, vqe_cost
from .errors import DbqaError
from .pipeline import RunSummary, emit_tables, load_config, run_pipeline


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seeds is not None:
        cfg = cfg.replace(seeds=args.seeds)
    if args.mode is not None:
        cfg = cfg.replace(dbqa=dataclasses.replace(cfg.dbqa, mode=args.mode))
    if args.emit_qasm:
        cfg = cfg.replace(outputs=dataclasses.replace(cfg.outputs, emit_qasm=True))
    out = Path(args.out) if args.out else Path(cfg.outputs.dir)
    summary = run_pipeline(cfg, out)
    sys.stdout.write(summary.to_csv())
    logging.getLogger(__name__).info("wrote %s", out)
    return 0


def _cmd_tables(args: argparse.Namespace) -> int:
    summaries = [RunSummary.read_csv(p) for p in args.summaries]
    sys.stdout.write(emit_tables(summaries, args.format))
    return 0


def _cmd_depth_budget(args: argparse.Namespace) -> int:
    b = depth_equivalent(args.N, args.pe, args.pe_prime)
    print(f"N,p_e,p_e_prime,success,N_prime\n{b.N},{b.p_e!r},{b.p_e_prime!r},{b.success:.6f},{b.N_prime}")
    return 0


def _cmd_ledger(args: argparse.Namespace) -> int:
    """Exact depth and training-cost arithmetic for a sweep of layer counts."""
    print("ansatz,layers,epochs,params,n_cz,depth_warm,depth_step1,depth_step2,vqe_cost")
    for layers in args.layers:
        c = build_hwp(args.L, layers) if args.ansatz == "hwp" else build_hea(args.L, layers)
        d = [gci_depth(c.depth, args.d_trotter, args.d_diag, k) for k in (0, 1, 2)]
        for e in args.epochs:
            cost = vqe_cost(c.shift_multiplier, c.n_params, e, c.n_cz)
            print(f"{args.ansatz},{layers},{e},{c.n_params},{c.n_cz},{d[0]},{d[1]},{d[2]},{cost}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbqa", description="Warm-started double-bracket refinement experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline described by a YAML config")
    r.add_argument("config")
    r.add_argument("--seeds", type=int, default=None, help="override the number of seeds")
    r.add_argument("--out", default=None, help="output directory (default: outputs.dir)")
    r.add_argument("--emit-qasm", action="store_true", help="write QASM for the best trial")
    r.add_argument("--mode", choices=("dbi", "gci"), default=None)
    r.set_defaults(func=_cmd_run)

    t = sub.add_parser("tables", help="combine summary.csv files into one table")
    t.add_argument("summaries", nargs="+")
    t.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    t.set_defaults(func=_cmd_tables)

    d = sub.add_parser("depth-budget", help="equal-success gate count at an improved error rate")
    d.add_argument("--N", type=int, required=True)
    d.add_argument("--pe", type=float, required=True)
    d.add_argument("--pe-prime", type=float, required=True)
    d.set_defaults(func=_cmd_depth_budget)

    g = sub.add_parser("ledger", help="print exact depth and training-cost arithmetic")
    g.add_argument("--L", type=int, default=10)
    g.add_argument("--ansatz", choices=("hwp", "hea"), default="hwp")
    g.add_argument("--layers", type=int, nargs="+", default=[3, 4, 5])
    g.add_argument("--epochs", type=int, nargs="+", default=[500, 2000])
    g.add_argument("--d-trotter", type=float, default=4.5, help="CZ per qubit of one H0 query")
    g.add_argument("--d-diag", type=float, default=2, help="CZ per qubit of one diagonal evolution")
    g.set_defaults(func=_cmd_ledger)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DbqaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
