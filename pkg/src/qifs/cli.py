"""``qifs`` command line: synth, extract, select, train, report.

Each subcommand reads and writes plain files in an output directory so runs
can be chained or repeated. Settings come from an optional flat TOML file
(``--config``); command-line flags override it.

Exit codes: 0 success, 2 bad input, 3 solver precondition failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import __version__
from .errors import InvalidConfig, MaskMismatch, QifsError, SolverPreconditionError
from .features import build_matrix, read_matrix_csv, write_matrix_csv
from .forest import ForestConfig, cross_validate, fit, feature_importances, roc_curve
from .ingest import build_histories, load_labels, load_rates, load_transactions, write_labels, write_rates, write_transactions
from .qubo_select import AnnealSchedule, Solver, resolve_subset, select_features
from .synthetic import SyntheticConfig, generate_synthetic
from .txmodel import HISTORY_CAP, AddressClass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_INPUT = 2
EXIT_SOLVER = 3

REPORT_COLUMNS = ("method", "n_features", "precision", "recall", "f1", "accuracy", "auc", "train_time_seconds")


@dataclass
class PipelineConfig:
    out: Path = Path("qifs-out")
    transactions: Optional[Path] = None
    labels: Optional[Path] = None
    rates: Optional[Path] = None
    target_class: AddressClass = AddressClass.MIXER
    alpha: float = 0.5
    seed: int = 0
    threads: int = 1
    folds: int = 10
    history_cap: int = HISTORY_CAP
    solver: str = "sa"
    subset: Optional[str] = None
    max_features: Optional[int] = None
    beta_start: float = 0.1
    beta_end: float = 10.0
    sweeps: int = 1000
    restarts: int = 8
    n_trees: int = 100
    max_depth: Optional[int] = None
    features_per_split: object = "sqrt"
    addresses_per_class: int = 100
    class_separation: float = 1.5

    def __post_init__(self):
        self.out = Path(self.out)
        for name in ("transactions", "labels", "rates"):
            value = getattr(self, name)
            setattr(self, name, Path(self.out, f"{name}{_SUFFIX[name]}") if value is None else Path(value))
        self.target_class = AddressClass.parse(str(self.target_class))
        if self.folds < 2:
            raise InvalidConfig("folds must be >= 2")
        if self.threads < 1:
            raise InvalidConfig("threads must be >= 1")
        if self.solver not in _SOLVERS:
            raise InvalidConfig(f"solver must be one of {sorted(_SOLVERS)}")

    @property
    def schedule(self) -> AnnealSchedule:
        return AnnealSchedule(self.beta_start, self.beta_end, self.sweeps, self.restarts, self.seed)

    @property
    def forest(self) -> ForestConfig:
        return ForestConfig(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            features_per_split=self.features_per_split,
            seed=self.seed,
        )

    @property
    def matrix_path(self) -> Path:
        return self.out / "features.csv"


_SUFFIX = {"transactions": ".jsonl", "labels": ".csv", "rates": ".csv"}
_SOLVERS = {"sa": Solver.SA, "exhaustive": Solver.EXHAUSTIVE, "named": Solver.NAMED_SUBSET}
_CONFIG_KEYS = {f.name for f in fields(PipelineConfig)}


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise InvalidConfig(f"{path}: config must be flat, found tables {nested}")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise InvalidConfig(f"{path}: unknown config keys {unknown}")
    return data


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    values = load_config(args.config) if args.config else {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return PipelineConfig(**values)


# ---------------------------------------------------------------------------
# atomic output


def atomic_write(path, write: Callable[[Path], None]) -> Path:
    """Run ``write(tmp)`` then rename ``tmp`` over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        write(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _write_text(path, text: str) -> Path:
    return atomic_write(path, lambda p: p.write_text(text, encoding="utf-8", newline="\n"))


def _write_json(path, obj) -> Path:
    return _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header: Sequence[str], rows) -> Path:
    def write(p):
        with p.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    return atomic_write(path, write)


def _fmt(v: float) -> str:
    return format(float(v) + 0.0, ".12g")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: PipelineConfig) -> int:
    syn = SyntheticConfig(
        addresses_per_class=cfg.addresses_per_class,
        class_separation=cfg.class_separation,
        seed=cfg.seed,
        target_class=cfg.target_class,
    )
    histories, rates = generate_synthetic(syn)
    seen, txs = set(), []
    for h in histories:
        for tx in h.txs:
            if tx.txid not in seen:
                seen.add(tx.txid)
                txs.append(tx)
    txs.sort(key=lambda tx: tx.sort_key())
    atomic_write(cfg.transactions, lambda p: write_transactions(p, txs))
    atomic_write(cfg.labels, lambda p: write_labels(p, {h.address: h.label for h in histories}))
    atomic_write(cfg.rates, lambda p: write_rates(p, rates))
    print(f"wrote {len(txs)} transactions for {len(histories)} addresses to {cfg.out}")
    return 0


def cmd_extract(cfg: PipelineConfig) -> int:
    rates = load_rates(cfg.rates)
    labels = load_labels(cfg.labels)
    histories = build_histories(load_transactions(cfg.transactions), labels, cfg.history_cap)
    matrix = build_matrix(histories, rates, cfg.target_class)
    atomic_write(cfg.matrix_path, lambda p: write_matrix_csv(p, histories, matrix.X, matrix.names))
    print(f"{matrix.m} rows, {matrix.n + 2} columns -> {cfg.matrix_path}")
    return 0


def _selection_tag(cfg: PipelineConfig) -> str:
    if cfg.solver == "named":
        return Path(cfg.subset).stem if cfg.subset else "named"
    return cfg.solver


def cmd_select(cfg: PipelineConfig, matrix_path: Optional[Path] = None, tag: Optional[str] = None) -> int:
    matrix = read_matrix_csv(matrix_path or cfg.matrix_path, cfg.target_class)
    if cfg.max_features is not None:
        if cfg.max_features < 1:
            raise InvalidConfig("max_features must be positive")
        matrix = matrix.select_columns(matrix.names[: cfg.max_features])
    solver = _SOLVERS[cfg.solver]
    subset = None
    if solver is Solver.NAMED_SUBSET:
        if not cfg.subset:
            raise InvalidConfig("--solver named needs --subset")
        subset = resolve_subset(cfg.subset)
    result = select_features(matrix, cfg.alpha, solver, cfg.schedule, subset, cfg.threads)
    doc = result.to_json()
    doc["target_class"] = cfg.target_class.value
    doc["names"] = list(matrix.names)
    path = cfg.out / f"selection_{tag or _selection_tag(cfg)}.json"
    _write_json(path, doc)
    print(f"selected {result.n_selected} of {matrix.n} features, energy {result.energy:.6g} -> {path}")
    return 0


def _mask_for(selection: str, names: Sequence[str]):
    if selection == "full":
        return np.ones(len(names), dtype=np.int8), "full"
    path = Path(selection)
    doc = json.loads(path.read_text(encoding="utf-8"))
    bits = doc.get("mask", "")
    if len(bits) != len(names) or (doc.get("names") and list(doc["names"]) != list(names)):
        raise MaskMismatch(f"{path}: mask covers {len(bits)} columns, matrix has {len(names)}")
    mask = np.array([int(b) for b in bits], dtype=np.int8)
    tag = path.stem[len("selection_"):] if path.stem.startswith("selection_") else path.stem
    return mask, tag


def cmd_train(cfg: PipelineConfig, selection: str, matrix_path: Optional[Path] = None, tag: Optional[str] = None) -> int:
    matrix = read_matrix_csv(matrix_path or cfg.matrix_path, cfg.target_class)
    mask, default_tag = _mask_for(selection, matrix.names)
    tag = tag or default_tag
    forest = cfg.forest
    metrics = cross_validate(matrix, mask, forest, k=cfg.folds, threads=cfg.threads)
    doc = metrics.to_json(cfg.target_class.value, tag, int(mask.sum()))
    doc["folds"] = cfg.folds
    doc["forest"] = forest.to_dict()
    _write_json(cfg.out / f"metrics_{tag}.json", doc)

    fpr, tpr, thr = roc_curve(metrics.scores, metrics.outcomes)
    _write_rows(cfg.out / f"roc_{tag}.csv", ("fpr", "tpr", "threshold"), ((_fmt(a), _fmt(b), _fmt(c)) for a, b, c in zip(fpr, tpr, thr)))

    model = fit(matrix, mask, forest, threads=cfg.threads)
    _write_rows(cfg.out / f"importances_{tag}.csv", ("feature", "importance"), ((n, _fmt(v)) for n, v in feature_importances(model)))
    print(
        f"{tag}: f1={metrics.f1:.4f} auc={metrics.auc:.4f} "
        f"train_time={metrics.train_time_seconds:.3f}s ({int(mask.sum())} features)"
    )
    return 0


def collect_report(out: Path) -> List[dict]:
    rows = []
    for path in sorted(Path(out).glob("metrics_*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        row = {"method": path.stem[len("metrics_"):]}
        row.update({k: doc[k] for k in REPORT_COLUMNS[1:]})
        rows.append(row)
    rows.sort(key=lambda r: r["method"])
    return rows


def format_report(rows: List[dict]) -> str:
    header = list(REPORT_COLUMNS)
    body = [[r["method"], str(r["n_features"])] + [f"{r[k]:.4f}" for k in REPORT_COLUMNS[2:]] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def cmd_report(cfg: PipelineConfig) -> int:
    rows = collect_report(cfg.out)
    if not rows:
        raise QifsError(f"no metrics_*.json files in {cfg.out}")
    text = format_report(rows)
    _write_text(cfg.out / "report.txt", text)
    _write_json(cfg.out / "report.json", {"columns": list(REPORT_COLUMNS), "rows": rows})
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML file of settings")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--threads", type=_positive_int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--target-class", dest="target_class")

    parser = argparse.ArgumentParser(prog="qifs", description="Feature selection and classification of Bitcoin addresses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic dataset")
    p.add_argument("--addresses-per-class", dest="addresses_per_class", type=_positive_int)
    p.add_argument("--class-separation", dest="class_separation", type=float)

    p = sub.add_parser("extract", parents=[common], help="build the feature matrix CSV")
    p.add_argument("--transactions", type=Path)
    p.add_argument("--labels", type=Path)
    p.add_argument("--rates", type=Path)
    p.add_argument("--history-cap", dest="history_cap", type=_positive_int)

    p = sub.add_parser("select", parents=[common], help="choose a feature subset")
    p.add_argument("--matrix", type=Path)
    p.add_argument("--solver", choices=sorted(_SOLVERS))
    p.add_argument("--subset", help="built-in subset key or path to a names file")
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-features", dest="max_features", type=_positive_int, help="keep only the first N columns")
    p.add_argument("--sweeps", type=_positive_int)
    p.add_argument("--restarts", type=_positive_int)
    p.add_argument("--tag")

    p = sub.add_parser("train", parents=[common], help="cross-validate a random forest on a mask")
    p.add_argument("selection", help='selection JSON, or "full" for every feature')
    p.add_argument("--matrix", type=Path)
    p.add_argument("--folds", type=int)
    p.add_argument("--n-trees", dest="n_trees", type=_positive_int)
    p.add_argument("--tag")

    sub.add_parser("report", parents=[common], help="tabulate all metrics in the output directory")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = resolve_config(args)
    if args.command == "synth":
        return cmd_synth(cfg)
    if args.command == "extract":
        return cmd_extract(cfg)
    if args.command == "select":
        return cmd_select(cfg, args.matrix, args.tag)
    if args.command == "train":
        return cmd_train(cfg, args.selection, args.matrix, args.tag)
    return cmd_report(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return run(argv)
    except SolverPreconditionError as exc:
        print(f"qifs: error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (QifsError, OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        print(f"qifs: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
