"""The thirteen benchmark pipelines over one train/test split.

Methods 1 and 2 are linear regressions on PCA/PLS scores with the
component count chosen by cross-validation. Methods 3 to 10 feed PCA or
PLS scores, optionally whitened, into an RBF network or an LS-SVM; the
component count is inherited from the matching linear method. Methods 11
to 13 replace the projection with mutual-information variable selection
and train an RBFN, an LS-SVM, or a plain linear model on the selected
columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .baselines import (
    Projection,
    fit_pca,
    fit_pls,
    project_rows,
    projection_from_dict,
    projection_to_dict,
    transform,
)
from .dataset import (
    ColumnWhitener,
    Dataset,
    fit_column_whitener,
    normalize_spectra,
    normalize_spectrum_rows,
)
from .errors import ConfigError, DataError, NumericalError
from .evaluation import (
    ComponentSweep,
    CvReport,
    LinearSweep,
    LssvmSweep,
    RbfnSweep,
    cross_validate,
    default_centroid_counts,
    default_component_counts,
    default_gamma_values,
    default_sigma_values,
    default_wsf_values,
    pooled_target_variance,
    select_winner,
    sweep_folds,
)
from .mi import DEFAULT_K
from .models import MODEL_FORMAT, MODEL_FORMAT_VERSION, model_from_dict, model_to_dict
from .selector import MAX_POOL_SIZE, SelectionResult, select_variables

__all__ = [
    "PREPROCESSINGS",
    "MethodSpec",
    "METHOD_TABLE",
    "ExperimentConfig",
    "PipelineModel",
    "PipelineSweep",
    "MethodResult",
    "MethodFailure",
    "component_count_cv",
    "build_method_sweep",
    "as_pipeline",
    "run_method",
    "reproduce",
    "best_methods",
    "pipeline_to_dict",
    "pipeline_from_dict",
    "save_pipeline",
    "load_pipeline",
]

PREPROCESSINGS = ("none", "spectrum-normalize")


@dataclass(frozen=True)
class MethodSpec:
    """One row of the benchmark: input construction plus model family."""

    number: int
    label: str
    input_step: str  # "pca" | "pls" | "mi"
    whiten: bool
    model: str  # "linear" | "rbfn" | "lssvm"
    component_source: int | None  # method whose CV fixes the component count

    @property
    def uses_selection(self) -> bool:
        return self.input_step == "mi"

    @property
    def projection(self) -> str | None:
        return self.input_step if self.input_step in ("pca", "pls") else None

    @property
    def input_label(self) -> str:
        if self.uses_selection:
            return "MI selection"
        name = self.input_step.upper()
        return f"{name} + whitening" if self.whiten else name


METHOD_TABLE: dict[int, MethodSpec] = {
    1: MethodSpec(1, "PCR", "pca", False, "linear", None),
    2: MethodSpec(2, "PLSR", "pls", False, "linear", None),
    3: MethodSpec(3, "PCA + RBFN", "pca", False, "rbfn", 1),
    4: MethodSpec(4, "PCA + whitening + RBFN", "pca", True, "rbfn", 1),
    5: MethodSpec(5, "PCA + LS-SVM", "pca", False, "lssvm", 1),
    6: MethodSpec(6, "PCA + whitening + LS-SVM", "pca", True, "lssvm", 1),
    7: MethodSpec(7, "PLS + RBFN", "pls", False, "rbfn", 2),
    8: MethodSpec(8, "PLS + whitening + RBFN", "pls", True, "rbfn", 2),
    9: MethodSpec(9, "PLS + LS-SVM", "pls", False, "lssvm", 2),
    10: MethodSpec(10, "PLS + whitening + LS-SVM", "pls", True, "lssvm", 2),
    11: MethodSpec(11, "MI + RBFN", "mi", False, "rbfn", None),
    12: MethodSpec(12, "MI + LS-SVM", "mi", False, "lssvm", None),
    13: MethodSpec(13, "MI + linear", "mi", False, "linear", None),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark run depends on besides the data itself.

    The grid-geometry fields exist so small studies and tests can shrink
    the search; their defaults reproduce the full benchmark grids.
    """

    method: int = 12
    preprocessing: str = "none"
    k: int = DEFAULT_K
    pool_size: int = 16
    folds: int = 4
    seed: int = 0
    workers: int = 1
    dataset: str | None = None
    train_path: str | None = None
    test_path: str | None = None
    target_column: str | int = "target"
    out_dir: str | None = None
    gamma_count: int = 300
    sigma_count: int = 100
    wsf_count: int = 15
    max_centroids: int = 30

    def __post_init__(self) -> None:
        if self.method not in METHOD_TABLE:
            raise ConfigError(f"method must be 1..13, got {self.method}")
        if self.preprocessing not in PREPROCESSINGS:
            raise ConfigError(
                f"preprocessing must be one of {PREPROCESSINGS}, got {self.preprocessing!r}"
            )
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if not 1 <= self.pool_size <= MAX_POOL_SIZE:
            raise ConfigError(
                f"pool size must lie in 1..{MAX_POOL_SIZE}, got {self.pool_size}"
            )
        if self.folds < 2:
            raise ConfigError(f"need at least 2 folds, got {self.folds}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        for name in ("gamma_count", "sigma_count", "wsf_count", "max_centroids"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "preprocessing": self.preprocessing,
            "k": self.k,
            "pool_size": self.pool_size,
            "folds": self.folds,
            "seed": self.seed,
            "workers": self.workers,
            "dataset": self.dataset,
            "train_path": self.train_path,
            "test_path": self.test_path,
            "target_column": self.target_column,
            "out_dir": self.out_dir,
            "gamma_count": self.gamma_count,
            "sigma_count": self.sigma_count,
            "wsf_count": self.wsf_count,
            "max_centroids": self.max_centroids,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        known = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return ExperimentConfig(**doc)


# ---------------------------------------------------------------------------
# Composite model


@dataclass(frozen=True)
class PipelineModel:
    """A fitted model bundled with every input transformation it needs.

    predict accepts rows in the space the experiment started from:
    raw spectra when the pipeline normalizes them itself, otherwise the
    training matrix's space.
    """

    model: object
    preprocessing: str = "none"
    variables: tuple[int, ...] | None = None
    projection: Projection | None = None
    whitener: ColumnWhitener | None = None

    def __post_init__(self) -> None:
        if self.preprocessing not in PREPROCESSINGS:
            raise ValueError(f"unknown preprocessing {self.preprocessing!r}")
        if self.variables is not None:
            object.__setattr__(
                self, "variables", tuple(int(j) for j in self.variables)
            )

    def transform_rows(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.preprocessing == "spectrum-normalize":
            pts = normalize_spectrum_rows(pts)
        if self.variables is not None:
            pts = pts[:, list(self.variables)]
        if self.projection is not None:
            pts = project_rows(self.projection, pts)
        if self.whitener is not None:
            pts = (pts - self.whitener.means) / self.whitener.stds
        return pts

    def predict(self, x):
        single = np.asarray(x).ndim == 1
        out = np.asarray(self.model.predict(self.transform_rows(x)))
        return float(out[0]) if single else out


def pipeline_to_dict(m: PipelineModel) -> dict:
    data = {
        "preprocessing": m.preprocessing,
        "variables": None if m.variables is None else list(m.variables),
        "projection": None if m.projection is None else projection_to_dict(m.projection),
        "whitener": None
        if m.whitener is None
        else {"means": m.whitener.means.tolist(), "stds": m.whitener.stds.tolist()},
        "model": model_to_dict(m.model),
    }
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "kind": "pipeline",
        "data": data,
    }


def pipeline_from_dict(doc: dict) -> PipelineModel:
    if doc.get("kind") != "pipeline":
        # plain single-model documents load as a pipeline with no mapping
        return PipelineModel(model=model_from_dict(doc))
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model document: format={doc.get('format')!r}")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')!r}")
    data = doc["data"]
    whitener = None
    if data["whitener"] is not None:
        means = np.array(data["whitener"]["means"], dtype=np.float64)
        stds = np.array(data["whitener"]["stds"], dtype=np.float64)
        means.flags.writeable = False
        stds.flags.writeable = False
        whitener = ColumnWhitener(means, stds)
    return PipelineModel(
        model=model_from_dict(data["model"]),
        preprocessing=data["preprocessing"],
        variables=None if data["variables"] is None else tuple(data["variables"]),
        projection=None
        if data["projection"] is None
        else projection_from_dict(data["projection"]),
        whitener=whitener,
    )


def save_pipeline(m: PipelineModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(pipeline_to_dict(m)) + "\n")


def load_pipeline(path: str | Path) -> PipelineModel:
    return pipeline_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Feature-mapping sweep wrapper


class PipelineSweep:
    """Refit the input mapping on each learning fold, then sweep the model.

    The mapping is variable subsetting, an optional projection at a fixed
    component count, and optional column whitening; fitting it inside the
    fold keeps validation rows out of every fitted statistic.
    """

    def __init__(
        self,
        inner,
        kind: str,
        variables: tuple[int, ...] | None = None,
        projection: str | None = None,
        n_components: int | None = None,
        whiten: bool = False,
    ) -> None:
        if projection is not None and n_components is None:
            raise ValueError("a projection needs an explicit component count")
        self.inner = inner
        self.kind = kind
        self.variables = None if variables is None else tuple(int(j) for j in variables)
        self.projection = projection
        self.n_components = n_components
        self.whiten = bool(whiten)
        self.grid = inner.grid

    def _fit_map(self, d: Dataset):
        if self.variables is not None:
            d = d.take_variables(list(self.variables))
        proj = None
        if self.projection is not None:
            fit = fit_pca if self.projection == "pca" else fit_pls
            proj = fit(d, self.n_components)
            d = transform(proj, d)
        whit = None
        if self.whiten:
            whit = fit_column_whitener(d)
            d = whit.apply(d)
        return d, proj, whit

    def _apply_map(self, d: Dataset, proj, whit) -> Dataset:
        if self.variables is not None:
            d = d.take_variables(list(self.variables))
        if proj is not None:
            d = transform(proj, d)
        if whit is not None:
            d = whit.apply(d)
        return d

    def evaluate_fold(self, learn, valid, var_y, trim_learn, trim_valid):
        try:
            learn_m, proj, whit = self._fit_map(learn)
            valid_m = self._apply_map(valid, proj, whit)
        except (ValueError, DataError, NumericalError) as exc:
            g = len(self.grid)
            bad = np.full(g, np.nan)
            return bad, bad.copy(), {i: str(exc) for i in range(g)}
        return self.inner.evaluate_fold(learn_m, valid_m, var_y, trim_learn, trim_valid)

    def fit(self, train: Dataset, params: dict) -> PipelineModel:
        train_m, proj, whit = self._fit_map(train)
        return PipelineModel(
            model=self.inner.fit(train_m, params),
            variables=self.variables,
            projection=proj,
            whitener=whit,
        )


# ---------------------------------------------------------------------------
# Method execution


@dataclass(frozen=True)
class MethodResult:
    """Everything one benchmark method produced."""

    method: int
    label: str
    preprocessing: str
    n_inputs: int
    components: int | None
    selection: SelectionResult | None
    report: CvReport
    model: PipelineModel

    @property
    def nmse_t(self) -> float:
        return self.report.nmse_t

    def to_dict(self, labels=None) -> dict:
        return {
            "method": self.method,
            "label": self.label,
            "preprocessing": self.preprocessing,
            "n_inputs": self.n_inputs,
            "components": self.components,
            "selection": None if self.selection is None else self.selection.to_dict(labels),
            "report": self.report.to_dict(),
            "model": pipeline_to_dict(self.model),
        }


@dataclass(frozen=True)
class MethodFailure:
    """A method that could not complete, with the reason."""

    method: int
    label: str
    error: str


def component_count_cv(
    train: Dataset, projection: str, cfg: ExperimentConfig, var_y: float
) -> int:
    """Cross-validated component count for a projection; never reads test data."""
    counts = default_component_counts(train.n_samples, train.n_variables, cfg.folds)
    sweep = ComponentSweep(projection, counts)
    _, _, mat_l, mat_v, _ = sweep_folds(
        train, sweep, cfg.folds, cfg.seed, var_y, workers=cfg.workers
    )
    winner = select_winner(mat_l, mat_v)
    return int(sweep.grid.points()[winner]["components"])


def _model_sweep(kind: str, features: np.ndarray, n_train: int, cfg: ExperimentConfig):
    if kind == "linear":
        return LinearSweep()
    if kind == "rbfn":
        return RbfnSweep(
            default_centroid_counts(n_train, cfg.folds, cfg.max_centroids),
            default_wsf_values(cfg.wsf_count),
            seed=cfg.seed,
        )
    if kind == "lssvm":
        return LssvmSweep(
            default_sigma_values(features, cfg.sigma_count),
            default_gamma_values(cfg.gamma_count),
        )
    raise ConfigError(f"unknown model kind {kind!r}")


def _shared_components(train, spec, cfg, var_y, shared: dict) -> int:
    key = ("components", spec.projection)
    if key not in shared:
        shared[key] = component_count_cv(train, spec.projection, cfg, var_y)
    return shared[key]


def _shared_selection(train, cfg, shared: dict) -> SelectionResult:
    if "selection" not in shared:
        shared["selection"] = select_variables(
            train,
            k=cfg.k,
            pool_size=cfg.pool_size,
            jitter_seed=cfg.seed,
            workers=cfg.workers,
        )
    return shared["selection"]


def build_method_sweep(
    train: Dataset, cfg: ExperimentConfig, shared: dict, var_y: float
):
    """Sweep for cfg.method over already-preprocessed training data.

    Returns (sweep, selection, components); the latter two are None for
    methods that do not use them. shared caches the selection and the
    cross-validated component counts across methods of one benchmark.
    """
    spec = METHOD_TABLE[cfg.method]
    if spec.projection is not None and spec.model == "linear":
        counts = default_component_counts(train.n_samples, train.n_variables, cfg.folds)
        return ComponentSweep(spec.projection, counts), None, None
    if spec.projection is not None:
        components = _shared_components(train, spec, cfg, var_y, shared)
        probe = fit_pca(train, components) if spec.projection == "pca" else fit_pls(
            train, components
        )
        features = transform(probe, train)
        if spec.whiten:
            features = fit_column_whitener(features).apply(features)
        inner = _model_sweep(spec.model, features.X, train.n_samples, cfg)
        kind = f"{spec.projection}{'+whiten' if spec.whiten else ''}+{spec.model}"
        sweep = PipelineSweep(
            inner,
            kind,
            projection=spec.projection,
            n_components=components,
            whiten=spec.whiten,
        )
        return sweep, None, components
    selection = _shared_selection(train, cfg, shared)
    chosen = selection.best.sorted_indices()
    inner = _model_sweep(spec.model, train.X[:, list(chosen)], train.n_samples, cfg)
    return PipelineSweep(inner, f"mi+{spec.model}", variables=chosen), selection, None


def as_pipeline(fitted, preprocessing: str) -> PipelineModel:
    """Wrap any fitted sweep output as a self-contained pipeline model."""
    if isinstance(fitted, PipelineModel):
        return replace(fitted, preprocessing=preprocessing)
    if hasattr(fitted, "projection"):  # projected linear, methods 1 and 2
        return PipelineModel(
            model=fitted.model,
            preprocessing=preprocessing,
            projection=fitted.projection,
        )
    return PipelineModel(model=fitted, preprocessing=preprocessing)


def run_method(
    train: Dataset, test: Dataset, cfg: ExperimentConfig, _shared: dict | None = None
) -> MethodResult:
    """Execute one benchmark method end to end on a train/test split."""
    spec = METHOD_TABLE[cfg.method]
    shared = {} if _shared is None else _shared
    if cfg.preprocessing == "spectrum-normalize":
        train = normalize_spectra(train)
        test = normalize_spectra(test)
    var_y = pooled_target_variance(train, test)

    sweep, selection, components = build_method_sweep(train, cfg, shared, var_y)
    report, fitted = cross_validate(
        train, test, sweep, cfg.folds, cfg.seed, var_y, workers=cfg.workers
    )
    model = as_pipeline(fitted, cfg.preprocessing)
    if spec.projection is not None and spec.model == "linear":
        components = int(report.winner_params["components"])

    if selection is not None:
        n_inputs = len(selection.best)
    else:
        n_inputs = int(components)
    return MethodResult(
        method=spec.number,
        label=spec.label,
        preprocessing=cfg.preprocessing,
        n_inputs=n_inputs,
        components=components,
        selection=selection,
        report=report,
        model=model,
    )


def reproduce(
    train: Dataset,
    test: Dataset,
    cfg: ExperimentConfig,
    methods=None,
) -> list[MethodResult | MethodFailure]:
    """Run the whole benchmark, sharing component counts and the selection.

    A failing method is recorded and the remaining methods still run.
    """
    chosen = list(methods) if methods is not None else sorted(METHOD_TABLE)
    for m in chosen:
        if m not in METHOD_TABLE:
            raise ConfigError(f"method must be 1..13, got {m}")
    shared: dict = {}
    results: list[MethodResult | MethodFailure] = []
    for m in chosen:
        mcfg = replace(cfg, method=m)
        spec = METHOD_TABLE[m]
        try:
            result = run_method(train, test, mcfg, _shared=shared)
            # methods 1 and 2 fix the count their dependents reuse
            if spec.projection is not None and spec.model == "linear":
                shared.setdefault(("components", spec.projection), result.components)
            results.append(result)
        except (ValueError, ConfigError, DataError, NumericalError) as exc:
            results.append(MethodFailure(m, spec.label, str(exc)))
    return results


def best_methods(results, count: int = 2) -> list[int]:
    """Method numbers with the lowest test scores, best first."""
    scored = [r for r in results if isinstance(r, MethodResult)]
    scored.sort(key=lambda r: (r.nmse_t, r.method))
    return [r.method for r in scored[:count]]
