"""Binned additive models trained by cyclic gradient boosting.

The classifier predicts next-week pest presence from mixed continuous and
categorical features; every prediction decomposes exactly into an intercept
plus one score per feature, which is what makes the model's advice auditable.
A squared-loss regressor sharing the same binning and boosting engine serves
as the base learner for treatment-effect estimation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.stats as sps


class EbmError(ValueError):
    """Raised for invalid training data or configuration."""


_STEP_CLIP = 4.0
_HESS_EPS = 1e-12


# ---------------------------------------------------------------------------
# Binning


@dataclass
class FeatureBins:
    name: str
    kind: str  # continuous | categorical
    cuts: tuple[float, ...] = ()
    levels: tuple[str, ...] = ()
    train_min: float = 0.0
    train_max: float = 0.0
    note: str = ""

    @property
    def n_bins(self) -> int:
        return len(self.levels) if self.kind == "categorical" else len(self.cuts) + 1


@dataclass
class BinMap:
    features: dict[str, FeatureBins]

    def bin_index(self, name: str, value) -> int:
        """Bin of a single value; -1 marks an unseen categorical level."""
        fb = self.features[name]
        if fb.kind == "categorical":
            try:
                return fb.levels.index(value)
            except ValueError:
                return -1
        return int(np.searchsorted(fb.cuts, float(value), side="right"))

    def bin_column(self, name: str, values: np.ndarray) -> np.ndarray:
        fb = self.features[name]
        if fb.kind == "categorical":
            lookup = {lvl: i for i, lvl in enumerate(fb.levels)}
            return np.array([lookup.get(v, -1) for v in values], dtype=np.int64)
        return np.searchsorted(np.asarray(fb.cuts), values.astype(np.float64), side="right")


def build_bins(frame: pd.DataFrame, features: Sequence[str],
               categorical: Sequence[str] = (), max_bins: int = 64) -> BinMap:
    """Equal-frequency cut points for continuous features, frozen level lists
    for categorical ones.

    Cut points are midpoint quantiles, de-duplicated; when a feature has no
    more distinct values than ``max_bins`` the cuts fall between consecutive
    distinct values (one bin per value).  A constant feature yields a single
    bin and a diagnostic note.
    """
    if max_bins < 2:
        raise EbmError("max_bins must be >= 2")
    categorical = set(categorical)
    out: dict[str, FeatureBins] = {}
    for name in features:
        values = frame[name].to_numpy()
        if name in categorical:
            levels = tuple(sorted({str(v) for v in values}))
            out[name] = FeatureBins(name=name, kind="categorical", levels=levels,
                                    note="constant feature" if len(levels) == 1 else "")
            continue
        values = values.astype(np.float64)
        uniq = np.unique(values)
        if len(uniq) == 1:
            out[name] = FeatureBins(name=name, kind="continuous", cuts=(),
                                    train_min=float(uniq[0]), train_max=float(uniq[0]),
                                    note="constant feature")
            continue
        if len(uniq) <= max_bins:
            cuts = (uniq[:-1] + uniq[1:]) / 2.0
        else:
            qs = np.arange(1, max_bins) / max_bins
            cuts = np.unique(np.quantile(values, qs, method="midpoint"))
        out[name] = FeatureBins(name=name, kind="continuous",
                                cuts=tuple(float(c) for c in cuts),
                                train_min=float(uniq[0]), train_max=float(uniq[-1]))
    return BinMap(features=out)


# ---------------------------------------------------------------------------
# Models


@dataclass
class EbmConfig:
    rounds: int = 500
    lr: float = 0.05
    max_bins: int = 64
    max_leaves: int = 3        # reserved for future interaction support
    bag_count: int = 8
    seed: int = 0
    interactions: int = 0      # forward-compatibility; must stay 0


@dataclass
class EbmModel:
    """Additive model: intercept plus one per-bin score vector per feature."""

    kind: str  # classifier | regressor
    intercept: float
    shapes: dict[str, np.ndarray]
    bin_map: BinMap
    bin_counts: dict[str, np.ndarray]
    feature_order: tuple[str, ...]
    config: EbmConfig
    train_loss_per_round: list[float] = field(default_factory=list)

    @property
    def feature_importance(self) -> dict[str, float]:
        """Training-distribution-weighted mean absolute contribution."""
        out = {}
        for name in self.feature_order:
            counts = self.bin_counts[name]
            total = counts.sum()
            out[name] = float(np.sum(counts * np.abs(self.shapes[name])) / total) if total else 0.0
        return out


@dataclass
class LocalExplanation:
    contributions: dict[str, float]
    intercept: float
    logit: float
    probability: float
    unseen_levels: tuple[str, ...] = ()


def _bin_matrix(model_bins: BinMap, frame: pd.DataFrame, features: Sequence[str]) -> np.ndarray:
    cols = [model_bins.bin_column(name, frame[name].to_numpy()) for name in features]
    return np.stack(cols, axis=1)


def _boost(y: np.ndarray, idx: np.ndarray, n_bins: list[int], kind: str,
           config: EbmConfig, weights: np.ndarray,
           loss_out: list[float] | None) -> tuple[float, list[np.ndarray]]:
    """One bag of cyclic boosting; returns (intercept, shapes)."""
    n, d = idx.shape
    wsum = weights.sum()
    if kind == "classifier":
        p0 = float(np.clip((weights * y).sum() / wsum, 1e-12, 1 - 1e-12))
        intercept = float(np.log(p0 / (1.0 - p0)))
    else:
        intercept = float((weights * y).sum() / wsum)
    shapes = [np.zeros(nb) for nb in n_bins]
    score = np.full(n, intercept)
    for _ in range(config.rounds):
        for j in range(d):
            if kind == "classifier":
                p = 1.0 / (1.0 + np.exp(-score))
                g = p - y
                h = p * (1.0 - p)
            else:
                g = score - y
                h = np.ones(n)
            gsum = np.bincount(idx[:, j], weights=g * weights, minlength=n_bins[j])
            hsum = np.bincount(idx[:, j], weights=h * weights, minlength=n_bins[j])
            step = np.clip(-gsum / (hsum + _HESS_EPS), -_STEP_CLIP, _STEP_CLIP)
            delta = config.lr * step
            shapes[j] += delta
            score += delta[idx[:, j]]
        if loss_out is not None:
            if kind == "classifier":
                p = np.clip(1.0 / (1.0 + np.exp(-score)), 1e-12, 1 - 1e-12)
                loss = -(weights * (y * np.log(p) + (1 - y) * np.log(1 - p))).sum() / wsum
            else:
                loss = (weights * (score - y) ** 2).sum() / wsum
            loss_out.append(float(loss))
    return intercept, shapes


def _fit(frame: pd.DataFrame, features: Sequence[str], target: str, kind: str,
         categorical: Sequence[str], config: EbmConfig) -> EbmModel:
    if not features:
        raise EbmError("at least one feature is required")
    if config.interactions:
        raise EbmError("interaction terms are not supported")
    features = list(features)
    y = frame[target].to_numpy(dtype=np.float64)
    if kind == "classifier":
        classes = np.unique(y)
        if not np.all(np.isin(classes, (0.0, 1.0))):
            raise EbmError("labels must be binary 0/1")
        if len(classes) < 2:
            raise EbmError("training labels are single-class")
    bin_map = build_bins(frame, features, categorical, config.max_bins)
    idx = _bin_matrix(bin_map, frame, features)
    n_bins = [bin_map.features[f].n_bins for f in features]
    n = len(frame)

    bag_count = max(config.bag_count, 1)
    intercepts = []
    shape_sum = [np.zeros(nb) for nb in n_bins]
    loss_track: list[float] | None = [] if bag_count == 1 else None
    for b in range(bag_count):
        if bag_count == 1:
            weights = np.ones(n)
        else:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, b]))
            weights = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        intercept_b, shapes_b = _boost(y, idx, n_bins, kind, config, weights, loss_track)
        intercepts.append(intercept_b)
        for j in range(len(features)):
            shape_sum[j] += shapes_b[j]

    intercept = float(np.mean(intercepts))
    shapes = {f: shape_sum[j] / bag_count for j, f in enumerate(features)}
    bin_counts = {f: np.bincount(idx[:, j], minlength=n_bins[j]).astype(np.float64)
                  for j, f in enumerate(features)}
    # center each shape on the training bin distribution; move mass to intercept
    for f in features:
        counts = bin_counts[f]
        mean = float(np.sum(counts * shapes[f]) / counts.sum())
        shapes[f] = shapes[f] - mean
        intercept += mean
    return EbmModel(kind=kind, intercept=intercept, shapes=shapes, bin_map=bin_map,
                    bin_counts=bin_counts, feature_order=tuple(features), config=config,
                    train_loss_per_round=loss_track or [])


def fit_ebm(frame: pd.DataFrame, features: Sequence[str], label_col: str,
            categorical: Sequence[str] = (), config: EbmConfig | None = None) -> EbmModel:
    """Cyclic-boosted additive classifier for binary labels.

    Per round, each feature in fixed order receives a piecewise-constant
    per-bin Newton update on the log-loss gradient, scaled by the learning
    rate; with ``bag_count`` > 1 the fit is averaged over bootstrap bags.
    Shapes are mean-centered over the training bin distribution, with the
    displaced mass folded into the intercept.  Deterministic given the seed.
    """
    return _fit(frame, features, label_col, "classifier", categorical, config or EbmConfig())


def fit_ebm_regressor(frame: pd.DataFrame, features: Sequence[str], target: str,
                      categorical: Sequence[str] = (),
                      config: EbmConfig | None = None) -> EbmModel:
    """Squared-loss twin of fit_ebm; per-bin updates are mean residuals."""
    return _fit(frame, features, target, "regressor", categorical, config or EbmConfig())


# ---------------------------------------------------------------------------
# Inference and explanations


def _contributions(model: EbmModel, x: Mapping[str, object]) -> tuple[dict[str, float], list[str]]:
    contribs = {}
    unseen = []
    for name in model.feature_order:
        if name not in x:
            raise EbmError(f"missing feature {name!r}")
        b = model.bin_map.bin_index(name, x[name])
        if b < 0:
            contribs[name] = 0.0
            unseen.append(name)
        else:
            contribs[name] = float(model.shapes[name][b])
    return contribs, unseen


def raw_score(model: EbmModel, x: Mapping[str, object]) -> float:
    contribs, _ = _contributions(model, x)
    return model.intercept + sum(contribs.values())


def predict_value(model: EbmModel, x: Mapping[str, object]) -> float:
    """Regression-mode prediction (additive score, no link)."""
    if model.kind != "regressor":
        raise EbmError("predict_value requires a regressor")
    return raw_score(model, x)


def predict_proba(model: EbmModel, x: Mapping[str, object]) -> float:
    """Presence probability: sigmoid of the additive logit.

    Values beyond the training range fall into the edge bins; an unseen
    categorical level contributes 0.
    """
    if model.kind != "classifier":
        raise EbmError("predict_proba requires a classifier")
    return float(1.0 / (1.0 + np.exp(-raw_score(model, x))))


def score_frame(model: EbmModel, frame: pd.DataFrame) -> np.ndarray:
    """Vectorized raw additive scores for a batch of rows."""
    missing = [f for f in model.feature_order if f not in frame.columns]
    if missing:
        raise EbmError(f"missing feature(s) {missing}")
    idx = _bin_matrix(model.bin_map, frame, model.feature_order)
    total = np.full(len(frame), model.intercept)
    for j, name in enumerate(model.feature_order):
        scores = model.shapes[name]
        col = idx[:, j]
        valid = col >= 0
        total[valid] += scores[col[valid]]
    return total


def predict_proba_frame(model: EbmModel, frame: pd.DataFrame) -> np.ndarray:
    if model.kind != "classifier":
        raise EbmError("predict_proba requires a classifier")
    return 1.0 / (1.0 + np.exp(-score_frame(model, frame)))


def explain_local(model: EbmModel, x: Mapping[str, object]) -> LocalExplanation:
    """Exact per-feature decomposition: intercept + sum(contributions) = logit."""
    contribs, unseen = _contributions(model, x)
    logit = model.intercept + sum(contribs.values())
    prob = float(1.0 / (1.0 + np.exp(-logit))) if model.kind == "classifier" else float("nan")
    return LocalExplanation(contributions=contribs, intercept=model.intercept,
                            logit=float(logit), probability=prob,
                            unseen_levels=tuple(unseen))


@dataclass
class GlobalReport:
    features: list[dict]

    def to_json(self) -> str:
        return json.dumps({"features": self.features}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["feature,bin_lo,bin_hi,score"]
        for entry in self.features:
            for lo, hi, score in entry["bins"]:
                lines.append(f"{entry['name']},{lo},{hi},{format(score, '.17g')}")
        return "\n".join(lines) + "\n"


def explain_global(model: EbmModel) -> GlobalReport:
    """Per-feature shape curves plus importances, sorted by importance."""
    importance = model.feature_importance
    entries = []
    for name in model.feature_order:
        fb = model.bin_map.features[name]
        scores = model.shapes[name]
        bins = []
        if fb.kind == "categorical":
            for lvl, s in zip(fb.levels, scores):
                bins.append((lvl, lvl, float(s)))
        else:
            edges = [fb.train_min, *fb.cuts, fb.train_max]
            for i, s in enumerate(scores):
                bins.append((edges[i], edges[i + 1], float(s)))
        entries.append({"name": name, "kind": fb.kind, "importance": importance[name],
                        "bins": bins})
    entries.sort(key=lambda e: -e["importance"])
    return GlobalReport(features=entries)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class ClassifierMetrics:
    log_loss: float
    auc: float | None
    accuracy: float
    calibration: list[dict]
    single_class: bool = False


def auc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Tie-aware AUC via the midrank statistic."""
    labels = np.asarray(labels, dtype=bool)
    ranks = sps.rankdata(scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EbmError("AUC undefined for single-class labels")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate_classifier(model: EbmModel, frame: pd.DataFrame, label_col: str) -> ClassifierMetrics:
    """Log-loss, tie-aware AUC, accuracy at 0.5, and a 10-bin reliability table."""
    if not len(frame):
        raise EbmError("empty holdout")
    y = frame[label_col].to_numpy(dtype=np.float64)
    p = np.clip(predict_proba_frame(model, frame), 1e-12, 1 - 1e-12)
    log_loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    accuracy = float(np.mean((p >= 0.5) == (y > 0.5)))
    single = len(np.unique(y)) < 2
    auc = None if single else auc_score(y, p)
    calibration = []
    edges = np.linspace(0.0, 1.0, 11)
    which = np.clip(np.digitize(p, edges[1:-1]), 0, 9)
    for b in range(10):
        mask = which == b
        calibration.append({
            "p_lo": float(edges[b]), "p_hi": float(edges[b + 1]), "n": int(mask.sum()),
            "mean_predicted": float(p[mask].mean()) if mask.any() else None,
            "observed_rate": float(y[mask].mean()) if mask.any() else None,
        })
    return ClassifierMetrics(log_loss=log_loss, auc=auc, accuracy=accuracy,
                             calibration=calibration, single_class=single)


# ---------------------------------------------------------------------------
# Serialization


def ebm_to_json(model: EbmModel) -> str:
    doc = {
        "kind": model.kind,
        "intercept": model.intercept,
        "feature_order": list(model.feature_order),
        "config": asdict(model.config),
        "features": {
            name: {
                "bins": {"kind": fb.kind, "cuts": list(fb.cuts), "levels": list(fb.levels),
                         "train_min": fb.train_min, "train_max": fb.train_max, "note": fb.note},
                "scores": list(map(float, model.shapes[name])),
                "bin_counts": list(map(float, model.bin_counts[name])),
            }
            for name, fb in ((n, model.bin_map.features[n]) for n in model.feature_order)
        },
        "train_loss_per_round": model.train_loss_per_round,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def ebm_from_json(text: str) -> EbmModel:
    doc = json.loads(text)
    features = {}
    shapes = {}
    counts = {}
    for name, entry in doc["features"].items():
        b = entry["bins"]
        features[name] = FeatureBins(name=name, kind=b["kind"], cuts=tuple(b["cuts"]),
                                     levels=tuple(b["levels"]), train_min=b["train_min"],
                                     train_max=b["train_max"], note=b["note"])
        shapes[name] = np.array(entry["scores"], dtype=np.float64)
        counts[name] = np.array(entry["bin_counts"], dtype=np.float64)
    return EbmModel(kind=doc["kind"], intercept=doc["intercept"], shapes=shapes,
                    bin_map=BinMap(features=features), bin_counts=counts,
                    feature_order=tuple(doc["feature_order"]),
                    config=EbmConfig(**doc["config"]),
                    train_loss_per_round=doc["train_loss_per_round"])
