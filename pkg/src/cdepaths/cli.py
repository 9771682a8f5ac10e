"""Command-line front end.

Subcommands::

    interpolate  sample a control path built from one CSV series
    probe        measurability probe on one CSV series
    norms        sup / derivative-sup / derivative-BV norms of a path
    train        fit a Neural CDE on a manifest of CSV series
    bench        mean NFE and metric per interpolation scheme

Options come from an optional JSON ``--config`` file, overridden by flags.
Outputs go to ``--out`` (or ``--out-dir`` for train) when given, otherwise
to a timestamped directory under ``$CDEPATHS_OUTPUT_ROOT`` (default
``./runs``). Every run writes its resolved configuration next to its
outputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .control import SCHEMES, build, canonical_scheme
from .errors import CdePathsError, IoError, ParseError
from .neuralcde import (
    CdeModel,
    TrainConfig,
    evaluate,
    save_checkpoint,
    train,
    write_metric_log,
)
from .series import augment, load_manifest, normalize, read_csv, read_text, split
from .solver import SolveConfig
from .synthetic import random_dataset
from .verify import causality_probe, nfe_benchmark, path_norms

OUTPUT_ROOT_ENV = "CDEPATHS_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    """Every option any subcommand understands, with defaults."""

    input: str | None = None
    manifest: str | None = None
    scheme: str | None = None
    schemes: str = "all"
    online: str | None = None
    include_time: bool = True
    include_intensity: bool = False
    grid: int = 200
    perturb: int = 1
    epsilon: float = 1.0
    tolerance: float = 1e-9
    resolution: int = 64
    method: str | None = None
    rtol: float = 1e-3
    atol: float = 1e-5
    fixed_step: float = 1.0
    hidden: int = 16
    hidden_hidden: int = 16
    num_layers: int = 1
    activation: str = "relu"
    learning_rate: float = 5e-4
    batch_size: int = 1024
    epochs: int = 1000
    task: str = "binary_classification"
    output_mode: str = "terminal"
    ratios: tuple = (0.70, 0.15, 0.15)
    samples: int = 200
    length: int = 30
    channels: int = 2
    missing: float = 0.3
    seed: int = 0
    out: str | None = None
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParseError(f"unknown config keys {sorted(unknown)}")
        if "ratios" in doc:
            doc = dict(doc, ratios=tuple(doc["ratios"]))
        return cls(**doc)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["ratios"] = list(self.ratios)
        return out

    def solver(self, default_method="dopri5") -> SolveConfig:
        return SolveConfig(method=self.method or default_method, rtol=self.rtol, atol=self.atol,
                           fixed_step=self.fixed_step)


# ---------------------------------------------------------------------------
# report emission

def _format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _has_nan(obj) -> bool:
    if isinstance(obj, float):
        return math.isnan(obj)
    if isinstance(obj, dict):
        return any(_has_nan(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return any(_has_nan(v) for v in obj)
    return False


def _plain(obj):
    """Convert dataclasses and numpy values into JSON-compatible Python values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _plain(obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _dump_json(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_dump_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_dump_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def emit_report(result, fmt: str, path) -> Path:
    """Write ``result`` as JSON or CSV with 17 significant digits per float.

    JSON keeps the mapping's key order. CSV takes a list of rows (dicts or
    dataclasses) and uses the first row's keys as columns, or ``result`` may
    be ``{"columns": [...], "rows": [...]}`` so that an empty table still
    gets a header. NaN is written as ``NaN`` and reported on stderr.
    """
    path = Path(path)
    data = _plain(result)
    if _has_nan(data):
        print(f"warning: NaN value written to {path}", file=sys.stderr)
    if fmt == "json":
        text = _dump_json(data) + "\n"
    elif fmt == "csv":
        if isinstance(data, dict):
            columns, rows = list(data["columns"]), data["rows"]
        else:
            rows = data
            columns = list(rows[0].keys()) if rows else []
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_float(row[c]) if isinstance(row[c], float) else row[c]
                             for c in columns])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


# ---------------------------------------------------------------------------
# helpers

def _run_dir(command: str) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    return root / f"{command}-{stamp}"


def _output_path(cfg: ExperimentConfig, command: str, default_name: str) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return _run_dir(command) / default_name


def _write_config(cfg: ExperimentConfig, output: Path, command: str) -> Path:
    target = output.with_name(output.stem + ".config.json") if output.suffix else output / "config.json"
    emit_report(dict(command=command, **cfg.to_dict()), "json", target)
    return target


def choose_scheme(cfg: ExperimentConfig, has_missing: bool) -> str:
    """Explicit scheme, else rectilinear for continuous-online use or missing data, else hermite."""
    if cfg.scheme:
        return canonical_scheme(cfg.scheme)
    if cfg.online == "continuous" or has_missing:
        return "rectilinear"
    return "hermite_backward"


def _require(value, flag):
    if value is None:
        raise ParseError(f"{flag} is required")
    return value


# ---------------------------------------------------------------------------
# subcommands

def cmd_interpolate(cfg: ExperimentConfig) -> Path:
    raw = read_csv(_require(cfg.input, "--input"))
    scheme = choose_scheme(cfg, not raw.fully_observed)
    cfg.scheme = scheme
    path = build(scheme, augment(raw, cfg.include_intensity, cfg.include_time))
    s, x, dx = path.sample(cfg.grid)
    columns = ["s"] + [f"X_{c}" for c in path.channels] + [f"dX_{c}" for c in path.channels]
    rows = [dict(zip(columns, [float(si)] + [float(v) for v in xi] + [float(v) for v in di]))
            for si, xi, di in zip(s, x, dx)]
    out = emit_report({"columns": columns, "rows": rows}, "csv",
                      _output_path(cfg, "interpolate", "path.csv"))
    _write_config(cfg, out, "interpolate")
    return out


def cmd_probe(cfg: ExperimentConfig) -> Path:
    raw = read_csv(_require(cfg.input, "--input"))
    scheme = choose_scheme(cfg, not raw.fully_observed)
    cfg.scheme = scheme
    report = causality_probe(scheme, raw, cfg.perturb, cfg.epsilon, tolerance=cfg.tolerance,
                             include_intensity=cfg.include_intensity, seed=cfg.seed)
    out = emit_report(report, "json", _output_path(cfg, "probe", "report.json"))
    _write_config(cfg, out, "probe")
    return out


def cmd_norms(cfg: ExperimentConfig) -> Path:
    raw = read_csv(_require(cfg.input, "--input"))
    scheme = choose_scheme(cfg, not raw.fully_observed)
    cfg.scheme = scheme
    path = build(scheme, augment(raw, cfg.include_intensity, cfg.include_time))
    norms = path_norms(path, cfg.resolution)
    doc = dict(scheme=scheme, **norms.as_dict(), channels=list(path.channels),
               sup_by_channel=norms.sup_by_channel, deriv_sup_by_channel=norms.deriv_sup_by_channel,
               deriv_bv_by_channel=norms.deriv_bv_by_channel)
    out = emit_report(doc, "json", _output_path(cfg, "norms", "norms.json"))
    _write_config(cfg, out, "norms")
    return out


def _load_dataset(cfg: ExperimentConfig):
    if cfg.manifest:
        ds, doc = load_manifest(cfg.manifest)
        if "include_intensity" not in doc and cfg.include_intensity:
            ds = type(ds).from_raw([s.base for s in ds.samples], ds.labels, cfg.include_time,
                                   True, ds.split_assignment)
    else:
        rng = np.random.default_rng(cfg.seed)
        ds = random_dataset(rng, cfg.samples, cfg.length, cfg.channels, cfg.missing,
                            include_intensity=cfg.include_intensity)
    if not ds.split_assignment:
        ds = split(ds, cfg.ratios, seed=cfg.seed,
                   stratify_labels=cfg.task == "binary_classification")
    return normalize(ds)


def cmd_train(cfg: ExperimentConfig) -> Path:
    ds = _load_dataset(cfg)
    missing = any(not s.base.fully_observed for s in ds.samples)
    scheme = choose_scheme(cfg, missing)
    cfg.scheme = scheme
    cfg.method = cfg.method or "rk4"
    out_dir = Path(cfg.out_dir) if cfg.out_dir else _run_dir("train")
    solver = cfg.solver("rk4")
    model = CdeModel.init(ds.samples[0].out_dim, cfg.hidden, 1, cfg.hidden_hidden, cfg.num_layers,
                          seed=cfg.seed, hidden_activation=cfg.activation)
    tcfg = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                       max_epochs=cfg.epochs, task=cfg.task, output_mode=cfg.output_mode,
                       scheme=scheme, seed=cfg.seed)
    result = train(ds, model, tcfg, solver)
    test_loss, test_metric = evaluate(result.model, ds.subset("test"), tcfg, solver)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.model, out_dir / "checkpoint.json", cfg.to_dict())
        write_metric_log(result.log, out_dir / "metrics.csv")
    except OSError as exc:
        raise IoError(f"cannot write to {out_dir}: {exc.strerror or exc}") from exc
    emit_report({"best_epoch": result.best_epoch, "epochs_run": len(result.log),
                 "stopped_early": result.stopped_early, "lr_reductions": result.lr_reductions,
                 "test_loss": test_loss, "test_metric": test_metric},
                "json", out_dir / "summary.json")
    _write_config(cfg, out_dir, "train")
    return out_dir


def cmd_bench(cfg: ExperimentConfig) -> Path:
    ds = _load_dataset(cfg)
    schemes = SCHEMES if cfg.schemes == "all" else [canonical_scheme(s) for s in
                                                    cfg.schemes.split(",")]
    model = CdeModel.init(ds.samples[0].out_dim, cfg.hidden, 1, cfg.hidden_hidden,
                          cfg.num_layers, seed=cfg.seed, hidden_activation=cfg.activation)
    rows = nfe_benchmark(ds.samples, ds.labels, schemes, model, cfg.solver("dopri5"), cfg.task)
    out = emit_report({"columns": ["scheme", "mean_nfe", "metric"],
                       "rows": [dataclasses.asdict(r) for r in rows]},
                      "csv", _output_path(cfg, "bench", "bench.csv"))
    _write_config(cfg, out, "bench")
    return out


COMMANDS = {
    "interpolate": cmd_interpolate,
    "probe": cmd_probe,
    "norms": cmd_norms,
    "train": cmd_train,
    "bench": cmd_bench,
}


# ---------------------------------------------------------------------------
# argument parsing

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdepaths", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--intensity", dest="include_intensity", action="store_true", default=S,
                       help="add observation-count channels")
        p.add_argument("--no-time", dest="include_time", action="store_false", default=S)

    def series_input(p):
        p.add_argument("--input", default=S, help="CSV series: time column then channels")
        p.add_argument("--scheme", default=S, help="interpolation scheme (default: automatic)")
        p.add_argument("--online", choices=["continuous", "discrete"], default=S)
        p.add_argument("--out", default=S, help="output file")

    def model_args(p):
        p.add_argument("--manifest", default=S, help="JSON manifest of labelled CSV series")
        p.add_argument("--hidden", type=int, default=S)
        p.add_argument("--hidden-hidden", dest="hidden_hidden", type=int, default=S)
        p.add_argument("--num-layers", dest="num_layers", type=int, default=S)
        p.add_argument("--activation", choices=["relu", "softplus"], default=S,
                       help="hidden activation of the vector field")
        p.add_argument("--method", choices=["euler", "rk4", "dopri5"], default=S)
        p.add_argument("--rtol", type=float, default=S)
        p.add_argument("--atol", type=float, default=S)
        p.add_argument("--step", dest="fixed_step", type=float, default=S)
        p.add_argument("--task", choices=["binary_classification", "regression"], default=S)
        p.add_argument("--samples", type=int, default=S, help="synthetic dataset size")
        p.add_argument("--length", type=int, default=S, help="synthetic series length")
        p.add_argument("--missing", type=float, default=S, help="synthetic missing rate")

    p = sub.add_parser("interpolate", help="sample a control path")
    common(p)
    series_input(p)
    p.add_argument("--grid", type=int, default=S)

    p = sub.add_parser("probe", help="measurability probe")
    common(p)
    series_input(p)
    p.add_argument("--perturb", type=int, default=S, help="row index to perturb")
    p.add_argument("--epsilon", type=float, default=S)
    p.add_argument("--tolerance", type=float, default=S)

    p = sub.add_parser("norms", help="path norms")
    common(p)
    series_input(p)
    p.add_argument("--resolution", type=int, default=S)

    p = sub.add_parser("train", help="train a Neural CDE")
    common(p)
    model_args(p)
    p.add_argument("--scheme", default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", dest="learning_rate", type=float, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--out-dir", dest="out_dir", default=S)

    p = sub.add_parser("bench", help="NFE per interpolation scheme")
    common(p)
    model_args(p)
    p.add_argument("--schemes", default=S, help="'all' or a comma-separated list")
    p.add_argument("--out", default=S)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the --config file, then command-line flags."""
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(read_text(args.config))
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc.msg}", row=exc.lineno) from exc
        if not isinstance(doc, dict):
            raise ParseError("config must be a JSON object")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    return ExperimentConfig.from_dict({**doc, **flags})


def run(argv=None) -> int:
    """Entry point returning an exit status: 0 ok, 1 module error, 2 usage or option-value error."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        out = COMMANDS[args.command](cfg)
    except CdePathsError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # option values that parse but are out of range
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


def main() -> None:
    sys.exit(run())
