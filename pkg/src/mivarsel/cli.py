"""Command-line surface for the selection pipeline and the benchmark.

Exit codes: 0 success, 2 bad usage or configuration, 3 data problems,
4 numerical failures. Progress goes to standard error; results go to
files (and short human-readable summaries to standard output).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import fetch_tecator, load_csv, normalize_spectra
from .errors import ConfigError, DataError, NumericalError
from .evaluation import (
    default_centroid_counts,
    default_component_counts,
    grid_csv,
    select_winner,
    sweep_folds,
)
from .methods import (
    METHOD_TABLE,
    ExperimentConfig,
    MethodResult,
    as_pipeline,
    best_methods,
    build_method_sweep,
    load_pipeline,
    reproduce,
    run_method,
    save_pipeline,
)
from .selector import individual_mis, select_variables

__all__ = ["main", "DATA_DIR_ENV"]

DATA_DIR_ENV = "MIVARSEL_DATA_DIR"

# dataset name -> (train file, test file, target column label)
_DATASETS = {
    "tecator": ("tecator_train.csv", "tecator_test.csv", "fat"),
    "juice": ("juice_train.csv", "juice_test.csv", "saccharose"),
}

_EXIT_CONFIG = 2
_EXIT_DATA = 3
_EXIT_NUMERICAL = 4


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


# ---------------------------------------------------------------------------
# Configuration assembly


_CONFIG_FIELDS = tuple(ExperimentConfig.__dataclass_fields__)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    doc: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        doc = loaded
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:  # flags override config-file fields
            doc[name] = value
    if doc.get("workers") is None:
        doc["workers"] = os.cpu_count() or 1
    return ExperimentConfig.from_dict(doc)


def _resolve_paths(cfg: ExperimentConfig, need_test: bool):
    """Train/test CSV paths plus target column for the configured data."""
    if cfg.dataset is not None:
        if cfg.dataset not in _DATASETS:
            raise ConfigError(
                f"unknown dataset {cfg.dataset!r}; choose from {sorted(_DATASETS)} "
                "or pass explicit --train/--test paths"
            )
        train_name, test_name, target = _DATASETS[cfg.dataset]
        base = data_dir()
        train_path, test_path = base / train_name, base / test_name
        missing = [p for p in (train_path, test_path) if not p.exists()]
        if missing:
            raise DataError(
                f"missing {', '.join(str(p) for p in missing)}; run `mivarsel fetch-data` "
                f"or point {DATA_DIR_ENV} at a directory holding the files"
            )
        if cfg.target_column != "target":  # explicit flag wins over the table
            target = cfg.target_column
        return train_path, test_path, target
    if cfg.train_path is None:
        raise ConfigError("no data configured: pass --dataset or --train")
    if need_test and cfg.test_path is None:
        raise ConfigError("this command needs a test set: pass --test")
    return cfg.train_path, cfg.test_path, cfg.target_column


def _load_data(cfg: ExperimentConfig, need_test: bool):
    train_path, test_path, target = _resolve_paths(cfg, need_test)
    _progress(f"loading training data from {train_path}")
    train = load_csv(train_path, target)
    test = None
    if need_test:
        _progress(f"loading test data from {test_path}")
        test = load_csv(test_path, target)
    return train, test


def _out_dir(cfg: ExperimentConfig, *parts: str) -> Path:
    root = Path(cfg.out_dir) if cfg.out_dir is not None else Path("reports")
    name = cfg.dataset if cfg.dataset is not None else "custom"
    path = root.joinpath(name, *parts)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _labels(train) -> tuple[str, ...]:
    return train.labels or tuple(f"x{j}" for j in range(train.n_variables))


def _train_only_variance(train) -> float:
    var = float(np.var(train.y, ddof=1))
    if var <= 0.0:
        raise DataError("training target is constant; scores would be undefined")
    return var


# ---------------------------------------------------------------------------
# Dry-run planning


def _grid_size_line(spec, n_train: int, n_variables: int, cfg: ExperimentConfig) -> str:
    if spec.projection is not None and spec.model == "linear":
        counts = default_component_counts(n_train, n_variables, cfg.folds)
        return f"component grid: {len(counts)} points"
    if spec.model == "rbfn":
        k_counts = default_centroid_counts(n_train, cfg.folds, cfg.max_centroids)
        return (
            f"model grid: {len(k_counts)} centroid counts x {cfg.wsf_count} "
            f"width factors = {len(k_counts) * cfg.wsf_count} points"
        )
    if spec.model == "lssvm":
        return (
            f"model grid: {cfg.sigma_count} kernel widths x {cfg.gamma_count} "
            f"regularizations = {cfg.sigma_count * cfg.gamma_count} points"
        )
    return "model grid: 1 point (ordinary least squares)"


def _plan_lines(train, cfg: ExperimentConfig, methods) -> list[str]:
    n, m = train.n_samples, train.n_variables
    lines = [f"plan: train {n}x{m}, {cfg.folds} folds, seed {cfg.seed}"]
    if any(METHOD_TABLE[i].uses_selection for i in methods):
        p = min(cfg.pool_size, m)
        lines.append(
            f"variable selection: pool of up to {p} variables, "
            f"exhaustive search over {2 ** p} subsets ({2 ** p - 1} non-empty)"
        )
    for i in methods:
        spec = METHOD_TABLE[i]
        lines.append(f"method {i} ({spec.label}): {_grid_size_line(spec, n, m, cfg)}")
    lines.append("nothing computed (dry run)")
    return lines


# ---------------------------------------------------------------------------
# Commands


def cmd_fetch_data(args: argparse.Namespace) -> int:
    dest = data_dir()
    _progress(f"fetching Tecator into {dest}")
    if args.url is not None:
        train_path, test_path = fetch_tecator(dest, url=args.url)
    else:
        train_path, test_path = fetch_tecator(dest)
    _progress(f"wrote {train_path}")
    _progress(f"wrote {test_path}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    train, _ = _load_data(cfg, need_test=False)
    if cfg.preprocessing == "spectrum-normalize":
        train = normalize_spectra(train)
    labels = _labels(train)
    _progress(f"estimating MI for {train.n_variables} variables (k={cfg.k})")
    mis = individual_mis(train, k=cfg.k, jitter_seed=cfg.seed)
    order = np.lexsort((np.arange(len(mis)), -mis))  # descending MI, index tiebreak
    out = _out_dir(cfg) / "mi.csv"
    with open(out, "w", encoding="utf-8", newline="") as handle:
        handle.write("variable,label,mi_nats\n")
        for j in order:
            handle.write(f"{int(j)},{labels[j]},{repr(float(mis[j]))}\n")
    _progress(f"wrote {out}")
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    train, _ = _load_data(cfg, need_test=False)
    if cfg.preprocessing == "spectrum-normalize":
        train = normalize_spectra(train)
    labels = _labels(train)
    _progress(
        f"selecting variables (k={cfg.k}, pool up to {cfg.pool_size}, "
        f"workers {cfg.workers})"
    )
    result = select_variables(
        train,
        k=cfg.k,
        pool_size=cfg.pool_size,
        jitter_seed=cfg.seed,
        workers=cfg.workers,
    )
    out = _out_dir(cfg)
    doc = {"config": cfg.to_dict(), "selection": result.to_dict(labels)}
    (out / "selection.json").write_text(json.dumps(doc, indent=2) + "\n")
    (out / "trace.json").write_text(json.dumps(result.trace.to_dict(), indent=2) + "\n")
    _progress(f"wrote {out / 'selection.json'}")
    _progress(f"wrote {out / 'trace.json'}")
    chosen = result.best.sorted_indices()
    print(f"{len(chosen)} variables selected: " + ", ".join(labels[j] for j in chosen))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    train, _ = _load_data(cfg, need_test=False)
    if cfg.preprocessing == "spectrum-normalize":
        train = normalize_spectra(train)
    labels = _labels(train)
    var_y = _train_only_variance(train)
    spec = METHOD_TABLE[cfg.method]
    _progress(f"training method {cfg.method} ({spec.label})")
    shared: dict = {}
    sweep, selection, _ = build_method_sweep(train, cfg, shared, var_y)
    _, _, mat_l, mat_v, _ = sweep_folds(
        train, sweep, cfg.folds, cfg.seed, var_y, workers=cfg.workers
    )
    winner = select_winner(mat_l, mat_v)
    params = sweep.grid.points()[winner]
    model = as_pipeline(sweep.fit(train, params), cfg.preprocessing)

    out = _out_dir(cfg, f"method-{cfg.method:02d}", f"seed-{cfg.seed}")
    save_pipeline(model, out / "model.json")
    summary = {
        "config": cfg.to_dict(),
        "kind": sweep.kind,
        "winner_params": params,
        "mean_nmse_l": float(np.mean(mat_l[winner])),
        "mean_nmse_v": float(np.mean(mat_v[winner])),
        "grid_points": len(sweep.grid),
    }
    (out / "train.json").write_text(json.dumps(summary, indent=2) + "\n")
    if selection is not None:
        doc = {"config": cfg.to_dict(), "selection": selection.to_dict(labels)}
        (out / "selection.json").write_text(json.dumps(doc, indent=2) + "\n")
        (out / "trace.json").write_text(
            json.dumps(selection.trace.to_dict(), indent=2) + "\n"
        )
    _progress(f"wrote {out / 'model.json'}")
    print(
        f"method {cfg.method} ({spec.label}): winner {params}, "
        f"validation NMSE {summary['mean_nmse_v']:.2E}"
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    model = load_pipeline(args.model)
    rows = _load_feature_rows(args.data, cfg.target_column)
    _progress(f"predicting {rows.shape[0]} rows with {args.model}")
    predictions = model.predict(rows)
    lines = "prediction\n" + "".join(repr(float(v)) + "\n" for v in predictions)
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(lines)
        _progress(f"wrote {args.out}")
    else:
        sys.stdout.write(lines)
    return 0


def _load_feature_rows(path: str, target_column) -> np.ndarray:
    """Feature matrix from a CSV; a target column, when present, is dropped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    if not rows:
        raise DataError(f"{path} is empty")
    header: list[str] | None = None
    try:
        for cell in rows[0]:
            float(cell)
    except ValueError:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path} has a header but no data rows")
    drop = None
    if header is not None and isinstance(target_column, str) and target_column in header:
        drop = header.index(target_column)
    try:
        matrix = np.array(
            [[float(cell) for cell in row] for row in rows], dtype=np.float64
        )
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if drop is not None:
        matrix = np.delete(matrix, drop, axis=1)
    return matrix


def _write_method_artifacts(out: Path, cfg: ExperimentConfig, result, labels) -> None:
    doc = {"config": cfg.to_dict(), "result": result.to_dict(labels)}
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    (out / "grid.csv").write_text(grid_csv(result.report))
    trace = None
    if result.selection is not None:
        trace = result.selection.trace.to_dict()
    (out / "trace.json").write_text(json.dumps({"selection": trace}, indent=2) + "\n")
    save_pipeline(result.model, out / "model.json")


def cmd_run_method(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    train, test = _load_data(cfg, need_test=True)
    if args.dry_run:
        shown = normalize_spectra(train) if cfg.preprocessing == "spectrum-normalize" else train
        print("\n".join(_plan_lines(shown, cfg, [cfg.method])))
        return 0
    spec = METHOD_TABLE[cfg.method]
    _progress(f"running method {cfg.method} ({spec.label}), workers {cfg.workers}")
    result = run_method(train, test, cfg)
    labels = _labels(
        normalize_spectra(train) if cfg.preprocessing == "spectrum-normalize" else train
    )
    out = _out_dir(cfg, f"method-{cfg.method:02d}", f"seed-{cfg.seed}")
    _write_method_artifacts(out, cfg, result, labels)
    _progress(f"wrote {out / 'report.json'}")
    print(
        f"method {cfg.method} ({spec.label}): NMSE_T = {result.nmse_t:.2E} "
        f"({result.n_inputs} inputs)"
    )
    return 0


def _benchmark_table(results, best: list[int]) -> str:
    header = f"{'':2} {'#':>2}  {'inputs':22} {'n':>3}  {'model':8} {'NMSE_T':>9}"
    lines = [header, "-" * len(header)]
    for r in results:
        spec = METHOD_TABLE[r.method]
        mark = "*" if r.method in best else ""
        if isinstance(r, MethodResult):
            lines.append(
                f"{mark:2} {r.method:>2}  {spec.input_label:22} {r.n_inputs:>3}  "
                f"{spec.model:8} {r.nmse_t:>9.2E}"
            )
        else:
            lines.append(f"{mark:2} {r.method:>2}  {spec.input_label:22} failed: {r.error}")
    return "\n".join(lines)


def cmd_reproduce(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    train, test = _load_data(cfg, need_test=True)
    methods = sorted(METHOD_TABLE)
    if args.dry_run:
        shown = normalize_spectra(train) if cfg.preprocessing == "spectrum-normalize" else train
        print("\n".join(_plan_lines(shown, cfg, methods)))
        return 0
    _progress(f"running all {len(methods)} methods, workers {cfg.workers}")
    results = reproduce(train, test, cfg)
    best = best_methods(results)
    labels = _labels(
        normalize_spectra(train) if cfg.preprocessing == "spectrum-normalize" else train
    )

    out = _out_dir(cfg, f"seed-{cfg.seed}")
    method_docs = []
    for r in results:
        if isinstance(r, MethodResult):
            sub = out / f"method-{r.method:02d}"
            sub.mkdir(parents=True, exist_ok=True)
            _write_method_artifacts(sub, cfg, r, labels)
            method_docs.append(r.to_dict(labels))
        else:
            _progress(f"method {r.method} ({r.label}) failed: {r.error}")
            method_docs.append({"method": r.method, "label": r.label, "error": r.error})
    doc = {"config": cfg.to_dict(), "best": best, "methods": method_docs}
    (out / "benchmark.json").write_text(json.dumps(doc, indent=2) + "\n")
    _progress(f"wrote {out / 'benchmark.json'}")
    print(_benchmark_table(results, best))
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_config_flags(p: argparse.ArgumentParser, *, grids: bool = False) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--dataset", help="named dataset: tecator or juice")
    p.add_argument("--train", dest="train_path", help="training CSV path")
    p.add_argument("--test", dest="test_path", help="test CSV path")
    p.add_argument("--target-column", dest="target_column", help="target column name")
    p.add_argument(
        "--preprocessing",
        choices=("none", "spectrum-normalize"),
        help="input preprocessing (default none)",
    )
    p.add_argument("--k", type=int, help="nearest-neighbor count for MI (default 6)")
    p.add_argument("--p", dest="pool_size", type=int, help="candidate pool size (default 16)")
    p.add_argument("--folds", type=int, help="cross-validation fold count (default 4)")
    p.add_argument("--seed", type=int, help="experiment seed (default 0)")
    p.add_argument(
        "--workers", type=int, help="parallel workers (default: machine parallelism)"
    )
    p.add_argument("--out", dest="out_dir", help="output root directory (default reports)")
    if grids:
        p.add_argument("--method", type=int, help="benchmark method id, 1..13")
        p.add_argument("--gamma-count", dest="gamma_count", type=int, help=argparse.SUPPRESS)
        p.add_argument("--sigma-count", dest="sigma_count", type=int, help=argparse.SUPPRESS)
        p.add_argument("--wsf-count", dest="wsf_count", type=int, help=argparse.SUPPRESS)
        p.add_argument(
            "--max-centroids", dest="max_centroids", type=int, help=argparse.SUPPRESS
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mivarsel",
        description="Mutual-information variable selection and the 13-method benchmark",
        epilog=f"Data cache directory: ${DATA_DIR_ENV} (default ./data)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch-data", help="download the Tecator archive into the cache")
    p.add_argument("--url", default=None, help="override the archive URL")
    p.set_defaults(func=cmd_fetch_data)

    p = sub.add_parser("estimate", help="write the per-variable MI table")
    _add_config_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("select", help="run the full variable-selection pipeline")
    _add_config_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="cross-validate one method and save the model")
    _add_config_flags(p, grids=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="apply a saved model to new rows")
    p.add_argument("--model", required=True, help="model.json path")
    p.add_argument("--data", required=True, help="CSV of input rows")
    p.add_argument("--out", default=None, help="predictions CSV (default: stdout)")
    p.add_argument("--target-column", dest="target_column", help="column to drop if present")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("run-method", help="train and evaluate one benchmark method")
    _add_config_flags(p, grids=True)
    p.add_argument("--dry-run", action="store_true", help="print the plan, compute nothing")
    p.set_defaults(func=cmd_run_method)

    p = sub.add_parser("reproduce", help="run all 13 benchmark methods")
    _add_config_flags(p, grids=True)
    p.add_argument("--dry-run", action="store_true", help="print the plan, compute nothing")
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _progress(f"configuration error: {exc}")
        return _EXIT_CONFIG
    except DataError as exc:
        _progress(f"data error: {exc}")
        return _EXIT_DATA
    except NumericalError as exc:
        _progress(f"numerical failure: {exc}")
        return _EXIT_NUMERICAL
    except ValueError as exc:
        _progress(f"invalid value: {exc}")
        return _EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        _progress(f"data error: {exc}")
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
