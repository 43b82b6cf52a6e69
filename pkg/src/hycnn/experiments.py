"""Experiment configs, per-seed runs and summary tables.

A run directory holds data.csv (one row per seed, or per layer for
init-diagnostics), trace.csv (training traces with a seed column),
summary.json (config plus mean and standard error of the metric) and
checkpoints/ (final networks as JSON, pushforward CSVs for OT).
"""
import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import OT_MAPS, REGRESSION, SHAPE_PAIRS, ot_data, regression_data, shape_pair
from .nets import build_net, init_hycnn, init_icnn_hoedt, parse_gate
from .ot import OTConfig, icnn_baseline_train, map_mse, saddle_train, sinkhorn_divergence, \
    write_pushforward_csv
from .tensor import ConfigurationError, DivergenceError, Rng
from .training import Constant, CyclicCosine, Cosine, TrainConfig, mse, schedule_from_dict, \
    train_regression, write_trace_csv

TASKS = ("regression", "ot", "init-diagnostics")
OUTPUT_ENV = "HYCNN_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    task: str
    generator: str = "f1"
    d: int = 5
    n: int = 5000
    m: int = 5000
    sigma: float = 1.0
    arch: str = "hycnn"
    width: int = 48
    depth: int = 8
    gate: str = "max"
    train: dict = field(default_factory=dict)
    ot: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    output: str = ""

    def validate(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.task == "regression" and self.generator not in REGRESSION:
            raise ConfigurationError(f"unknown regression generator {self.generator!r}")
        if self.task == "ot" and self.generator not in OT_MAPS and self.generator not in SHAPE_PAIRS:
            raise ConfigurationError(f"unknown OT generator {self.generator!r}")
        if self.width < 1 or self.depth < 1 or self.d < 1:
            raise ConfigurationError("width, depth and d must be positive")
        parse_gate(self.gate)
        return self

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def method(self):
        return f"{self.arch}[{self.gate}]"


def mean_se(values):
    """(mean, standard error) over finite values; SE is None for fewer than two."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=np.float64)
    if len(v) == 0:
        return None, None
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else None
    return float(v.mean()), se


def resolve_output(path, default_name):
    root = os.environ.get(OUTPUT_ENV, "")
    path = path or default_name
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    os.makedirs(os.path.join(path, "checkpoints"), exist_ok=True)
    return path


def _write_rows(path, rows):
    if not rows:
        return
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    write_trace_csv(path, rows, cols)


# ---- per-seed runners --------------------------------------------------------

def _train_config(doc):
    doc = dict(doc)
    if "lr" in doc and isinstance(doc["lr"], dict):
        doc["lr"] = schedule_from_dict(doc["lr"])
    elif "lr" in doc:
        doc["lr"] = Constant(float(doc["lr"]))
    if "betas" in doc:
        doc["betas"] = tuple(doc["betas"])
    return TrainConfig(**doc)


def run_regression_seed(cfg: ExperimentConfig, seed, out):
    rng = Rng(seed)
    D = regression_data(cfg.generator, cfg.d, cfg.n, cfg.sigma, rng.child(1, "data"))
    net = build_net(cfg.arch, [cfg.width] * cfg.depth, cfg.d, rng.child(2, "init"),
                    gate=parse_gate(cfg.gate))
    tc = _train_config(cfg.train)
    pred, trace = train_regression(net, D["X"], D["y"], tc, rng.child(3, "train"))
    net.to_json(os.path.join(out, "checkpoints", f"seed{seed}.json"),
                meta={"x_mean": pred.mean.tolist(), "x_std": pred.std.tolist(),
                      "y_mean": pred.y_mean, "y_std": pred.y_std})
    return {"test_mse": mse(pred(D["X_test"]), D["y_test"]),
            "train_mse": trace[-1]["train_mse"]}, trace


def _ot_config(doc, outer_T_default=1000):
    doc = dict(doc)
    T = int(doc.get("outer_T", outer_T_default))
    out = OTConfig(outer_T=T, inner_S=int(doc.get("inner_S", 5)),
                   batch_M=int(doc.get("batch_M", 256)),
                   lambda_cvx=float(doc.get("lambda_cvx", 1.0)),
                   checkpoint_every=int(doc.get("checkpoint_every", 0)))
    lr = doc.get("lr")
    out.lr = schedule_from_dict(lr) if isinstance(lr, dict) else Cosine(
        float(lr) if lr is not None else 1e-2, 0.01, max(T, 1))
    tau = doc.get("tau")
    if isinstance(tau, dict):
        out.tau = schedule_from_dict(tau)
    elif tau == "cyclic":
        out.tau = CyclicCosine(1.0, 100, 0.8, 0.1, 0.7, T)
    elif tau is not None:
        out.tau = Constant(float(tau))
    if "betas" in doc:
        out.betas = tuple(doc["betas"])
    return out


def _ot_nets(cfg, rng):
    widths = [cfg.width] * cfg.depth
    gate = parse_gate(cfg.gate)
    if cfg.arch == "hycnn":
        f = init_hycnn(widths, cfg.d, rng.child(2, "potential"), gate)
        g = init_hycnn(widths, cfg.d, rng.child(2, "critic"), parse_gate(cfg.gate))
        return f, g, saddle_train
    if cfg.arch in ("icnn", "icnnq"):
        q = cfg.arch == "icnnq"
        f = init_icnn_hoedt(widths, cfg.d, rng.child(2, "potential"), "lognormal", gate, q)
        g = init_icnn_hoedt(widths, cfg.d, rng.child(2, "critic"), "gaussian",
                            parse_gate(cfg.gate), q)
        return f, g, icnn_baseline_train
    raise ConfigurationError(f"OT supports hycnn, icnn and icnnq, not {cfg.arch!r}")


def run_ot_seed(cfg: ExperimentConfig, seed, out):
    rng = Rng(seed)
    eps = float(cfg.ot.get("val_eps", 0.1))
    if cfg.generator in OT_MAPS:
        D = ot_data(cfg.generator, cfg.d, cfg.n, cfg.m, rng.child(1, "data"))
        src, tgt = D["source"], D["target"]
        val = (D["val_source"], D["val_target"])
    else:
        if cfg.d != 2:
            raise ConfigurationError("shape pairs are 2-D")
        src, tgt = shape_pair(cfg.generator, cfg.n, rng.child(1, "data"))
        val = shape_pair(cfg.generator, 1000, rng.child(1, "val"))
        D = None
    f, g, trainer = _ot_nets(cfg, rng)
    oc = _ot_config(cfg.ot)
    res = trainer(f, g, src, tgt, oc, rng.child(3, "train"),
                  val=val if oc.checkpoint_every else None, val_eps=eps)
    f.to_json(os.path.join(out, "checkpoints", f"seed{seed}-potential.json"))
    g.to_json(os.path.join(out, "checkpoints", f"seed{seed}-critic.json"))
    for t, net in res.checkpoints:
        net.to_json(os.path.join(out, "checkpoints", f"seed{seed}-step{t}.json"))
    metrics = {}
    if D is not None:
        Xt = D["test_source"]
        TX = res.map(Xt)
        metrics["test_mse"] = map_mse(TX, D["map"](Xt))
        write_pushforward_csv(os.path.join(out, "checkpoints", f"seed{seed}-pushforward.csv"),
                              Xt, TX)
    else:
        write_pushforward_csv(os.path.join(out, "checkpoints", f"seed{seed}-pushforward.csv"),
                              src, res.map(src))
    if cfg.ot.get("val_sinkhorn", D is None):
        metrics["val_sinkhorn"] = sinkhorn_divergence(res.map(val[0]), val[1], eps)
    return metrics, res.trace


# ---- orchestration -------------------------------------------------------------

def run(cfg: ExperimentConfig):
    """Run every seed, write the artifacts and return the summary dict."""
    cfg.validate()
    out = resolve_output(cfg.output, f"{cfg.task}-{cfg.generator}-{cfg.arch}")
    if cfg.task == "init-diagnostics":
        from .theory.moments import init_diagnostics
        rows = init_diagnostics(cfg.depth, cfg.width, cfg.d, len(cfg.seeds),
                                rng=Rng(cfg.seeds[0]))
        _write_rows(os.path.join(out, "data.csv"), rows)
        first = rows[0]["z_norm"]
        summary = {"config": cfg.to_dict(), "task": cfg.task,
                   "z_norm_ratio_min": min(r["z_norm"] / first for r in rows),
                   "z_norm_ratio_max": max(r["z_norm"] / first for r in rows)}
        _dump(out, summary)
        return summary
    runner = run_regression_seed if cfg.task == "regression" else run_ot_seed
    rows, traces = [], []
    for seed in cfg.seeds:
        try:
            metrics, trace = runner(cfg, seed, out)
            rows.append({"seed": seed, "diverged": False, **metrics})
            traces += [{"seed": seed, **r} for r in trace]
        except DivergenceError as err:
            rows.append({"seed": seed, "diverged": True, "error": str(err)})
    _write_rows(os.path.join(out, "data.csv"), rows)
    _write_rows(os.path.join(out, "trace.csv"), traces)
    keys = [k for k in rows[0] if k not in ("seed", "diverged", "error")] if rows else []
    for r in rows:
        keys += [k for k in r if k not in keys and k not in ("seed", "diverged", "error")]
    stats = {}
    for k in keys:
        mu, se = mean_se([r.get(k) for r in rows if not r["diverged"]])
        stats[k] = {"mean": mu, "se": se}
    summary = {"config": cfg.to_dict(), "task": cfg.task, "method": cfg.method,
               "width": cfg.width, "depth": cfg.depth, "d": cfg.d,
               "generator": cfg.generator, "n_seeds": len(cfg.seeds),
               "diverged": sum(r["diverged"] for r in rows), "metrics": stats}
    _dump(out, summary)
    return summary


def _dump(out, summary):
    summary["output"] = out
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)


KEY = ("method", "width", "depth", "d", "generator")


def summarize(run_dirs, out_csv=None):
    """Merge summary.json files into rows keyed by method, width, depth, d and
    generator, with one mean/SE column pair per metric. Rows are ordered by the
    first metric's mean."""
    rows = []
    for rd in run_dirs:
        path = os.path.join(rd, "summary.json")
        if not os.path.exists(path):
            raise ConfigurationError(f"{rd} has no summary.json")
        with open(path) as fh:
            s = json.load(fh)
        if "metrics" not in s or any(k not in s for k in KEY):
            raise ConfigurationError(f"{path} is not a per-seed summary")
        row = {k: s[k] for k in KEY}
        row["n_seeds"] = s["n_seeds"]
        row["diverged"] = s["diverged"]
        for name, st in s["metrics"].items():
            row[f"{name}_mean"] = st["mean"]
            row[f"{name}_se"] = st["se"]
        rows.append(row)
    first = next((k for r in rows for k in r if k.endswith("_mean")), None)
    if first:
        rows.sort(key=lambda r: (r.get(first) is None, r.get(first) or 0.0))
    if out_csv:
        _write_rows(out_csv, rows)
    return rows
