"""Command-line entry point.

    mapquant compress  --in map.json --out map.mqz --alpha 0.3 [--tau 1.0 -M 8 -K 256 --seed 0]
    mapquant select    --in map.json --out sel.json --alpha 0.3
    mapquant train-pq  --in map.json --selection sel.json --out codebook.mqz
    mapquant encode    --in map.json --selection sel.json --codebook codebook.mqz --out map.mqz
    mapquant stats     --in map.mqz
    mapquant lora selftest

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
Diagnostics go to stderr; ``--json`` puts machine-readable results on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import lora_selftest
from .errors import DataError, NumericalError
from .mapio import CompressedMap, load_compressed, load_map, read_compressed, save_compressed
from .pipeline import compress_map, encode_stage, select_points, train_stage
from .selector import DEFAULT_TAU, SUPPORT_EPS, SolverOptions

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add_io(p, out=True):
    p.add_argument("--in", dest="inp", required=True, metavar="PATH")
    if out:
        p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--json", action="store_true", help="print results as JSON on stdout")


def _add_select(p, alpha_required=True):
    p.add_argument("--alpha", type=float, required=alpha_required, help="compression ratio in (0, 1]")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="distinctiveness weight (default 1.0)")
    p.add_argument("--n-starts", type=int, default=16)
    p.add_argument("--solver-iters", type=int, default=10_000, help="projected-gradient iteration cap")
    p.add_argument("--support-eps", type=float, default=SUPPORT_EPS)
    p.add_argument("--kernel", default="euclidean",
                   help="'euclidean' (default) or 'rbf:<sigma>' (similarity kernel, experimental)")
    p.add_argument("--force", action="store_true", help="allow more than 20000 points")


def _add_train(p):
    p.add_argument("-M", type=int, default=8, help="number of subspaces")
    p.add_argument("-K", type=int, default=256, help="centroids per subspace")
    p.add_argument("--max-iters", type=int, default=100, help="Lloyd iteration cap")
    p.add_argument("--train-on", choices=("selected", "all"), default="selected")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mapquant", description="Scene map point selection and product quantization.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("compress", help="select points, train codebooks, encode, write")
    _add_io(p)
    _add_select(p)
    _add_train(p)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("select", help="solve the selection problem and write the support as JSON")
    _add_io(p)
    _add_select(p)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-pq", help="train codebooks on a selection; writes an entry-less container")
    _add_io(p)
    p.add_argument("--selection", required=True, metavar="PATH")
    _add_train(p)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("encode", help="encode selected points with a trained codebook")
    _add_io(p)
    p.add_argument("--selection", required=True, metavar="PATH")
    p.add_argument("--codebook", required=True, metavar="PATH")

    p = sub.add_parser("stats", help="describe a compressed map")
    _add_io(p, out=False)

    p = sub.add_parser("lora", help="low-rank adaptation utilities")
    lsub = p.add_subparsers(dest="lora_command", parser_class=_Parser)
    lp = lsub.add_parser("selftest", help="gradient check and rank-1 recovery")
    lp.add_argument("--seed", type=int, default=0)
    lp.add_argument("--json", action="store_true")
    return parser


def _solver_opts(args) -> SolverOptions:
    return SolverOptions(
        max_iters=args.solver_iters,
        n_starts=args.n_starts,
        seed=args.seed,
        support_eps=args.support_eps,
    )


def _emit(args, payload: dict, text: str):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _cmd_compress(args):
    scene = load_map(args.inp)
    cm, stats = compress_map(
        scene, args.alpha, args.tau, args.M, args.K, args.seed,
        opts=_solver_opts(args), max_iters=args.max_iters, train_on=args.train_on,
        kernel=args.kernel, force=args.force,
    )
    save_compressed(cm, args.out)
    s = stats.as_dict()
    ratio = s["original_descriptor_bytes"] / max(s["compressed_descriptor_bytes"], 1)
    _emit(args, s, "\n".join([
        f"points:        {s['selected_points']} / {s['original_points']} kept",
        f"bytes:         {s['compressed_bytes']} (input map {s['original_bytes']})",
        f"descriptors:   {s['compressed_descriptor_bytes']} vs {s['original_descriptor_bytes']} bytes ({ratio:g}x)",
        f"mse:           {s['mean_sq_reconstruction_error']:.6g}",
        f"objective:     {s['solver_objective']:.10g} ({s['solver_iterations']} iterations)",
        "times:         " + ", ".join(f"{k} {v:.3f}s" for k, v in s["wall_times"].items()),
    ]))


def _selection_doc(scene, sol, args) -> dict:
    return {
        "alpha": args.alpha,
        "tau": args.tau,
        "kernel": args.kernel,
        "original_point_count": len(scene),
        "objective": sol.objective,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "start": sol.start,
        "support": [int(i) for i in sol.support],
        "ids": [int(scene.points[i].id) for i in sol.support],
        "v": [float(x) for x in sol.v],
    }


def _load_selection(path, scene) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        support = np.asarray(doc["support"], dtype=np.intp)
        alpha, tau, count = float(doc["alpha"]), float(doc["tau"]), int(doc["original_point_count"])
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"malformed selection file {path}: {e}") from None
    if count != len(scene) or (support.size and (support.min() < 0 or support.max() >= len(scene))):
        raise DataError(f"selection {path} does not match map {len(scene)} points")
    ids = [int(scene.points[i].id) for i in support]
    if ids != doc.get("ids", ids):
        raise DataError(f"selection {path} point ids do not match the map")
    return {"support": support, "alpha": alpha, "tau": tau}


def _cmd_select(args):
    scene = load_map(args.inp)
    sol = select_points(scene, args.alpha, args.tau, _solver_opts(args), kernel=args.kernel, force=args.force)
    doc = _selection_doc(scene, sol, args)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    summary = {k: doc[k] for k in ("alpha", "tau", "original_point_count", "objective", "iterations", "converged")}
    summary["selected_points"] = len(doc["support"])
    _emit(args, summary, f"selected {len(sol.support)} / {len(scene)} points, objective {sol.objective:.10g}")


def _cmd_train(args):
    scene = load_map(args.inp)
    sel = _load_selection(args.selection, scene)
    cb = train_stage(scene, sel["support"], args.M, args.K, seed=args.seed,
                     max_iters=args.max_iters, train_on=args.train_on)
    empty = CompressedMap(cb, [], np.zeros((0, 3)), np.zeros((0, cb.M)), sel["alpha"], sel["tau"], len(scene))
    save_compressed(empty, args.out)
    _emit(args, {"M": cb.M, "K": cb.K, "D": cb.dim}, f"trained {cb.M} codebooks of {cb.K} centroids")


def _cmd_encode(args):
    scene = load_map(args.inp)
    sel = _load_selection(args.selection, scene)
    cb = load_compressed(args.codebook).codebook
    cm = encode_stage(scene, sel["support"], cb, sel["alpha"], sel["tau"])
    save_compressed(cm, args.out)
    _emit(args, {"entries": len(cm)}, f"encoded {len(cm)} points")


def _cmd_stats(args):
    with open(args.inp, "rb") as fh:
        raw = fh.read()
    cm = read_compressed(raw)
    cb = cm.codebook
    code_bytes = 1 if cb.K <= 256 else 2
    info = {
        "M": cb.M, "K": cb.K, "D": cb.dim,
        "entries": len(cm),
        "original_point_count": cm.original_point_count,
        "alpha": cm.alpha, "tau": cm.tau,
        "file_bytes": len(raw),
        "bytes_per_entry": 32 + cb.M * code_bytes,
        "descriptor_bytes_per_entry": cb.M * code_bytes,
        "raw_descriptor_bytes_per_entry": 4 * cb.dim,
    }
    _emit(args, info, "\n".join(f"{k}: {v}" for k, v in info.items()))


def _cmd_lora(args):
    if args.lora_command != "selftest":
        raise UsageError("usage: mapquant lora selftest")
    report = lora_selftest.run(seed=args.seed)
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        for line in lora_selftest.format_report(report):
            print(line)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


COMMANDS = {
    "compress": _cmd_compress,
    "select": _cmd_select,
    "train-pq": _cmd_train,
    "encode": _cmd_encode,
    "stats": _cmd_stats,
    "lora": _cmd_lora,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        code = COMMANDS[args.command](args)
        return EXIT_OK if code is None else code
    except UsageError as e:
        print(str(e).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"mapquant: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"mapquant: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except SystemExit as e:
        # --help
        return int(e.code or 0)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
