"""Command-line front end: `hycnn <subcommand> ...`.

Every subcommand writes its artifacts below the output root (the
HYCNN_OUTPUT_ROOT environment variable, default the working directory) and
prints a JSON summary. Contract violations and bad configs exit with 2,
training divergence with 3.
"""
import argparse
import csv
import json
import os
import sys

import numpy as np

from .data import OT_MAPS, REGRESSION, SHAPE_PAIRS, SHAPES, generate
from .experiments import ExperimentConfig, resolve_output, run, summarize
from .nets import build_net, parse_gate
from .tensor import ConfigurationError, ContractViolation, DivergenceError, Rng


def _seeds(text):
    """'5' -> [0..4]; '0,3,7' -> [0, 3, 7]."""
    if "," in text:
        return [int(s) for s in text.split(",") if s]
    return list(range(int(text)))


def _ints(text):
    return [int(s) for s in text.split(",") if s]


def _emit(obj):
    print(json.dumps(obj, indent=2, default=float))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _read_cloud(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _config(args, task, overrides, fallback):
    """Precedence: explicit flags, then the JSON config file, then `fallback`."""
    doc = dict(fallback)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc.update(json.load(fh))
    doc["task"] = task
    for k, v in overrides.items():
        if v is not None:
            doc[k] = v
    return ExperimentConfig.from_dict(doc)


# ---- subcommands -----------------------------------------------------------------

def cmd_gen(args):
    out = resolve_output(args.out, f"gen-{args.generator}")
    D = generate(args.generator, args.n, Rng(args.seed).child(1, "data"), d=args.d,
                 sigma=args.sigma, m=args.m)
    path = os.path.join(out, "data.csv")
    if args.generator in REGRESSION:
        X, y = D["X"], D["y"]
        _write_csv(path, [f"x{i}" for i in range(X.shape[1])] + ["y"],
                   np.column_stack([X, y]).tolist())
    elif args.generator in OT_MAPS:
        S, T = D["source"], D["target"]
        d = S.shape[1]
        rows = [["source"] + list(r) for r in S] + [["target"] + list(r) for r in T]
        _write_csv(path, ["cloud"] + [f"x{i}" for i in range(d)], rows)
    else:
        _write_csv(path, ["x0", "x1"], D["X"].tolist())
    _emit({"generator": args.generator, "output": path})


def cmd_train_regression(args):
    train = {}
    if args.epochs is not None:
        train["epochs"] = args.epochs
    if args.lr is not None:
        train["lr"] = args.lr
    cfg = _config(args, "regression", {
        "generator": args.generator, "d": args.d, "n": args.n, "sigma": args.sigma,
        "arch": args.arch, "width": args.width, "depth": args.depth, "gate": args.gate,
        "seeds": _seeds(args.seeds) if args.seeds else None, "output": args.out,
        "train": train or None},
        {"arch": "hycnn", "width": 48, "depth": 8, "gate": "max"})
    _emit(run(cfg))


def cmd_train_ot(args):
    ot = {}
    for k in ("outer_T", "inner_S", "batch_M", "lr", "lambda_cvx", "checkpoint_every",
              "val_eps"):
        v = getattr(args, k)
        if v is not None:
            ot[k] = v
    if args.tau is not None:
        ot["tau"] = args.tau if args.tau == "cyclic" else float(args.tau)
    if args.val_sinkhorn:
        ot["val_sinkhorn"] = True
    cfg = _config(args, "ot", {
        "generator": args.generator, "d": args.d, "n": args.n, "m": args.m,
        "arch": args.arch, "width": args.width, "depth": args.depth, "gate": args.gate,
        "seeds": _seeds(args.seeds) if args.seeds else None, "output": args.out,
        "ot": ot or None},
        {"arch": "hycnn", "width": 48, "depth": 4, "gate": "lse:10", "d": 10, "sigma": 0.0,
         "generator": "phi1"})
    _emit(run(cfg))


def cmd_init_diagnostics(args):
    cfg = ExperimentConfig("init-diagnostics", d=args.d, width=args.width, depth=args.depth,
                           seeds=_seeds(args.seeds), output=args.out)
    _emit(run(cfg))


def cmd_construct(args):
    from . import theory
    out = resolve_output(args.out, f"construct-{args.kind}")
    if args.kind == "quadratic":
        net, cert = theory.build_quadratic_hycnn(_ints(args.widths))
    elif args.kind == "quadratic2":
        net, cert = theory.build_quadratic_width2(args.L)
    elif args.kind == "monomial":
        net, cert = theory.build_monomial_hycnn(args.n, args.L, args.m)
    else:
        pq = tuple(_ints(args.pq)) if args.pq else None
        net, cert = theory.build_multivariate_quadratic(args.d, args.L, args.m, pq,
                                                        rng=Rng(args.seed))
    net.to_json(os.path.join(out, "checkpoints", "net.json"))
    doc = cert.to_dict()
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    _emit(doc)
    if not cert.passed:
        return 1
    return 0


def cmd_pieces(args):
    from .theory import icnn_piece_bound, icnn_sup_floor, pwa_of_network, sup_error_vs_quadratic
    out = resolve_output(args.out, f"pieces-{args.arch}")
    widths = _ints(args.widths)
    gate = parse_gate(args.gate)
    rows = []
    for seed in _seeds(args.seeds):
        net = build_net(args.arch, widths, 1, Rng(seed).child(2, "init"), gate=gate)
        window = pwa_of_network(net, -args.window, args.window)
        unit = pwa_of_network(net, 0.0, 1.0)
        rows.append([seed, window.n_pieces, len(window.breakpoints),
                     sup_error_vs_quadratic(unit)])
    _write_csv(os.path.join(out, "data.csv"), ["seed", "pieces", "kinks", "sup_error"], rows)
    bound = icnn_piece_bound(widths) if args.arch in ("icnn", "icnnq") else None
    summary = {"arch": args.arch, "widths": widths, "gate": args.gate, "n": len(rows),
               "max_pieces": max(r[1] for r in rows), "max_kinks": max(r[2] for r in rows),
               "min_sup_error": min(r[3] for r in rows)}
    if bound is not None:
        summary.update({"bound": bound, "sup_floor": icnn_sup_floor(widths),
                        "pieces_within_bound": sum(r[1] <= bound for r in rows),
                        "kinks_within_bound": sum(r[2] <= bound for r in rows)})
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    _emit(summary)


def cmd_lower_bound(args):
    from .theory import lower_bound_search
    rows = []
    for k in _ints(args.k):
        best, bp = lower_bound_search(k, args.resolution)
        rows.append({"k": k, "found": best, "floor": 1.0 / (8 * k * k),
                     "breakpoints": list(bp)})
    _emit(rows)


def cmd_embed_check(args):
    from .theory import embedding_checks
    rep = embedding_checks(Rng(args.seed), n_inputs=args.n)
    _emit({"max_abs_diff": rep, "passed": all(v <= 1e-12 for v in rep.values())})


def cmd_sinkhorn_eval(args):
    from .ot import sinkhorn, sinkhorn_divergence
    A, B = _read_cloud(args.a), _read_cloud(args.b)
    res = sinkhorn(A, B, args.eps, args.max_iter, args.tol)
    _emit({"ot_eps": res.value, "iterations": res.iterations, "converged": res.converged,
           "divergence": sinkhorn_divergence(A, B, args.eps, args.max_iter, args.tol)})


def cmd_summarize(args):
    rows = summarize(args.dirs, args.csv)
    _emit(rows)


# ---- parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hycnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="write a synthetic dataset to data.csv")
    s.add_argument("--generator", required=True,
                   choices=list(REGRESSION) + list(OT_MAPS) + list(SHAPES))
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--m", type=int)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_gen)

    def arch_args(s, arch, width, depth, gate):
        s.add_argument("--config", help="JSON ExperimentConfig; flags override it")
        s.add_argument("--arch", help=f"default {arch}")
        s.add_argument("--width", type=int, help=f"default {width}")
        s.add_argument("--depth", type=int, help=f"default {depth}")
        s.add_argument("--gate", help=f"max | lse:TAU | relu | leaky_relu:A | softplus:TAU; default {gate}")
        s.add_argument("--d", type=int)
        s.add_argument("--n", type=int)
        s.add_argument("--seeds", help="count or comma list")
        s.add_argument("--out")

    s = sub.add_parser("train-regression", help="fit a convex regressor per seed")
    arch_args(s, "hycnn", 48, 8, "max")
    s.add_argument("--generator", choices=REGRESSION)
    s.add_argument("--sigma", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.set_defaults(fn=cmd_train_regression)

    s = sub.add_parser("train-ot", help="saddle-point OT map estimation per seed")
    arch_args(s, "hycnn", 48, 4, "lse:10")
    s.add_argument("--generator", choices=list(OT_MAPS) + list(SHAPE_PAIRS))
    s.add_argument("--m", type=int)
    s.add_argument("--outer-T", dest="outer_T", type=int)
    s.add_argument("--inner-S", dest="inner_S", type=int)
    s.add_argument("--batch-M", dest="batch_M", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--tau", help="constant value or 'cyclic'")
    s.add_argument("--lambda-cvx", dest="lambda_cvx", type=float)
    s.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    s.add_argument("--val-eps", dest="val_eps", type=float)
    s.add_argument("--val-sinkhorn", action="store_true")
    s.set_defaults(fn=cmd_train_ot)

    s = sub.add_parser("init-diagnostics", help="per-layer moments at initialization")
    s.add_argument("--depth", type=int, default=16)
    s.add_argument("--width", type=int, default=48)
    s.add_argument("--d", type=int, default=50)
    s.add_argument("--seeds", default="100")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_init_diagnostics)

    s = sub.add_parser("construct", help="build an approximation net and its certificate")
    s.add_argument("kind", choices=["quadratic", "quadratic2", "monomial", "multiquad"])
    s.add_argument("--widths", default="2,2")
    s.add_argument("--L", type=int, default=2)
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--m", type=int, default=5)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--pq", help="block split p,q for multiquad")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_construct)

    s = sub.add_parser("pieces", help="exact piece counts of random 1-D nets")
    s.add_argument("--arch", default="icnn")
    s.add_argument("--widths", default="3,2")
    s.add_argument("--gate", default="relu")
    s.add_argument("--seeds", default="50")
    s.add_argument("--window", type=float, default=1e4, help="count on [-window, window]")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_pieces)

    s = sub.add_parser("lower-bound", help="brute-force best convex k-piece fit to x^2")
    s.add_argument("--k", default="1,2,3,4")
    s.add_argument("--resolution", type=int)
    s.set_defaults(fn=cmd_lower_bound)

    s = sub.add_parser("embed-check", help="output agreement of the class embeddings")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_embed_check)

    s = sub.add_parser("sinkhorn-eval", help="entropic OT between two CSV clouds")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--max-iter", dest="max_iter", type=int, default=5000)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(fn=cmd_sinkhorn_eval)

    s = sub.add_parser("summarize", help="merge run summaries into one table")
    s.add_argument("dirs", nargs="+")
    s.add_argument("--csv")
    s.set_defaults(fn=cmd_summarize)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return int(args.fn(args) or 0)
    except (ContractViolation, ConfigurationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
