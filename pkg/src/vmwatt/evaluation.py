"""Shuffle-split cross-validation and regression metrics."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _csvio
from .errors import ConfigError, FitError, ShapeError, UndefinedMetricError
from .gbrt import GbrParams, fit_gbr, mdi_importances, predict

logger = logging.getLogger(__name__)

TRUTHPRED_HEADER = ("index", "truth", "prediction")


@dataclass(frozen=True)
class ShuffleSplitPlan:
    n_splits: int = 100
    test_fraction: float = 0.2
    seed: int = 42

    def test_size(self, n: int) -> int:
        return int(round(self.test_fraction * n))


@dataclass
class FoldScore:
    r2: float
    mae: float
    rmse: float


@dataclass
class CvReport:
    per_fold: list[FoldScore]
    mean_r2: float
    mean_mae: float
    mean_rmse: float
    plan: ShuffleSplitPlan | None = None
    params: GbrParams | None = None
    importances: dict[str, float] | None = None
    exported_fold: int | None = None
    truth: np.ndarray | None = field(default=None, repr=False)
    prediction: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "per_fold": [asdict(f) for f in self.per_fold],
            "mean_r2": self.mean_r2,
            "mean_mae": self.mean_mae,
            "mean_rmse": self.mean_rmse,
        }
        if self.plan is not None:
            out["plan"] = asdict(self.plan)
        if self.params is not None:
            out["hyperparameters"] = asdict(self.params)
        if self.importances is not None:
            out["importances"] = self.importances
        if self.exported_fold is not None:
            out["exported_fold"] = self.exported_fold
        return out


def _pair(y_true, y_pred, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if len(y_true) != len(y_pred):
        raise ShapeError(f"length mismatch: {len(y_true)} truths vs {len(y_pred)} predictions")
    if len(y_true) < min_len:
        raise ShapeError(f"need at least {min_len} values, got {len(y_true)}")
    return y_true, y_pred


def r2(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred, 2)
    mean = y_true.mean()
    sst = float(np.sum((y_true - mean) ** 2))
    if sst == 0.0:
        raise UndefinedMetricError("R² undefined: y_true has zero variance")
    sse = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - sse / sst


def mae(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred, 1)
    return float(np.mean(np.abs(y_true - y_pred)))


def rmse(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred, 1)
    d = np.abs(y_true - y_pred)
    scale = d.max()
    if scale == 0.0 or not np.isfinite(scale):
        return float(scale)
    # scaled so tiny or huge residuals neither underflow nor overflow when squared
    return float(scale * np.sqrt(np.mean((d / scale) ** 2)))


def shuffle_split(n: int, plan: ShuffleSplitPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    """``plan.n_splits`` random (train, test) partitions of ``range(n)``."""
    if plan.n_splits < 1:
        raise ConfigError(f"n_splits must be >= 1, got {plan.n_splits}")
    if not 0.0 < plan.test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {plan.test_fraction}")
    if n < 2:
        raise ConfigError(f"need at least 2 rows to split, got {n}")
    n_test = plan.test_size(n)
    if not 1 <= n_test < n:
        raise ConfigError(
            f"test size round({plan.test_fraction} * {n}) = {n_test} leaves an empty split"
        )
    rng = np.random.default_rng(plan.seed)
    folds = []
    for _ in range(plan.n_splits):
        perm = rng.permutation(n)
        folds.append((perm[n_test:], perm[:n_test]))
    return folds


def _score_fold(X, y, train, test, params: GbrParams):
    model = fit_gbr(X[train], y[train], params)
    pred = predict(model, X[test])
    return FoldScore(r2(y[test], pred), mae(y[test], pred), rmse(y[test], pred)), pred, model


def cross_validate(X, y, params: GbrParams | None = None,
                   plan: ShuffleSplitPlan | None = None,
                   export_fold: int | None = 0, progress=None) -> CvReport:
    """Train and score one model per shuffle-split fold.

    The truth/prediction pairs of ``export_fold`` are kept on the report for
    plotting. Importances are averaged over the fold models.
    """
    params = params or GbrParams()
    plan = plan or ShuffleSplitPlan()
    params.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = shuffle_split(len(y), plan)
    if export_fold is not None and not 0 <= export_fold < len(folds):
        raise ConfigError(f"export fold {export_fold} outside 0..{len(folds) - 1}")

    scores: list[FoldScore] = []
    imp_sum = None
    truth = prediction = None
    for k, (train, test) in enumerate(folds):
        try:
            score, pred, model = _score_fold(X, y, train, test, params)
        except (FitError, UndefinedMetricError, ShapeError) as exc:
            raise type(exc)(f"fold {k}: {exc}") from exc
        scores.append(score)
        imp = np.array(mdi_importances(model).percentages)
        imp_sum = imp if imp_sum is None else imp_sum + imp
        if k == export_fold:
            truth, prediction = y[test], pred
        if progress is not None:
            progress(k, score)
        logger.debug("fold %d: r2=%.4f mae=%.3f rmse=%.3f", k, score.r2, score.mae, score.rmse)

    names = model.feature_names
    return CvReport(
        per_fold=scores,
        mean_r2=float(np.mean([s.r2 for s in scores])),
        mean_mae=float(np.mean([s.mae for s in scores])),
        mean_rmse=float(np.mean([s.rmse for s in scores])),
        plan=plan,
        params=params,
        importances=dict(zip(names, (float(v) for v in imp_sum / len(folds)))),
        exported_fold=export_fold,
        truth=truth,
        prediction=prediction,
    )


def write_report(report: CvReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def write_truthpred_csv(truth, prediction, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _csvio.write_header(fh, TRUTHPRED_HEADER)
        for i, (t, p) in enumerate(zip(truth, prediction)):
            _csvio.write_row(fh, (i, float(t), float(p)))


def read_truthpred_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    truth, pred = [], []
    for lineno, row, _ in _csvio.iter_rows(path, TRUTHPRED_HEADER):
        truth.append(_csvio.parse_float(row["truth"], path, lineno, "truth"))
        pred.append(_csvio.parse_float(row["prediction"], path, lineno, "prediction"))
    return np.array(truth), np.array(pred)
