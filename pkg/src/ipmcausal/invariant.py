"""Invariant prediction across agroclimatic zones.

Two complementary tools: Invariant Causal Prediction (exhaustive subset search
with residual-invariance tests across environments) and an IRMv1-style
penalized linear predictor.  Both operate on the numeric columns of a
supervised table, with the environment given by a zone column.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.stats as sps


class InvariantError(ValueError):
    """Raised for untestable configurations or diverging fits."""


# ---------------------------------------------------------------------------
# Residual invariance test


def _group_stats(values: np.ndarray, env_idx: np.ndarray, n_groups: int,
                 counts: np.ndarray) -> tuple[float, float]:
    """One-way ANOVA F statistic and its mean-centered Levene companion.

    Returns (F_means, F_variances); degrees of freedom are (k-1, N-k) for both.
    """
    sums = np.bincount(env_idx, weights=values, minlength=n_groups)
    means = sums / counts
    grand = values.mean()
    ssb = float(np.sum(counts * (means - grand) ** 2))
    ssw = float(np.sum(values ** 2) - np.sum(counts * means ** 2))
    k, n = n_groups, len(values)
    f_means = _safe_f(ssb, ssw, k, n)

    z = np.abs(values - means[env_idx])
    zsums = np.bincount(env_idx, weights=z, minlength=n_groups)
    zmeans = zsums / counts
    zgrand = z.mean()
    zssb = float(np.sum(counts * (zmeans - zgrand) ** 2))
    zssw = float(np.sum(z ** 2) - np.sum(counts * zmeans ** 2))
    f_var = _safe_f(zssb, zssw, k, n)
    return f_means, f_var


def _safe_f(ssb: float, ssw: float, k: int, n: int) -> float:
    if ssw <= 1e-300:
        return 0.0 if ssb <= 1e-300 else np.inf
    return (ssb / (k - 1)) / (ssw / (n - k))


def _combined_p(f_means: float, f_var: float, k: int, n: int) -> float:
    p_mean = float(sps.f.sf(f_means, k - 1, n - k))
    p_var = float(sps.f.sf(f_var, k - 1, n - k))
    return min(1.0, 2.0 * min(p_mean, p_var))


def invariance_test(residuals_by_env: Mapping[object, Sequence[float]]) -> float:
    """Combined p-value for equality of residual distributions across environments.

    Tests equality of means (one-way ANOVA F) and of spreads (Levene's test
    with mean centering); the two p-values are Bonferroni-combined as
    2 * min(p) capped at 1.  Requires at least two environments with at least
    8 residuals each.
    """
    if len(residuals_by_env) < 2:
        raise InvariantError("invariance untestable: need at least 2 environments")
    envs = sorted(residuals_by_env, key=str)
    vectors = [np.asarray(residuals_by_env[e], dtype=np.float64) for e in envs]
    for env, vec in zip(envs, vectors):
        if len(vec) < 8:
            raise InvariantError(f"invariance untestable: environment {env!r} has "
                                 f"{len(vec)} residuals, need >= 8")
    values = np.concatenate(vectors)
    env_idx = np.concatenate([np.full(len(v), i) for i, v in enumerate(vectors)])
    counts = np.array([len(v) for v in vectors], dtype=np.float64)
    f_means, f_var = _group_stats(values, env_idx, len(vectors), counts)
    return _combined_p(f_means, f_var, len(vectors), len(values))


# ---------------------------------------------------------------------------
# Invariant Causal Prediction


@dataclass
class IcpResult:
    accepted_sets: list[tuple[tuple[str, ...], float]]
    intersection: tuple[str, ...]
    alpha: float
    model_class_rejected: bool
    diagnostic: str = ""
    approximate: bool = False
    n_sets_tested: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "accepted_sets": [{"features": list(s), "p_value": p}
                              for s, p in self.accepted_sets],
            "intersection": list(self.intersection),
            "alpha": self.alpha,
            "model_class_rejected": self.model_class_rejected,
            "diagnostic": self.diagnostic,
            "approximate": self.approximate,
            "n_sets_tested": self.n_sets_tested,
        }, indent=2, sort_keys=True)


def _design(frame: pd.DataFrame, cols: Sequence[str]) -> np.ndarray:
    return frame[list(cols)].to_numpy(dtype=np.float64)


def _ols_residuals(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    gram = x.T @ x
    beta, *_ = np.linalg.lstsq(gram, x.T @ y, rcond=None)
    return y - x @ beta


def fit_icp(frame: pd.DataFrame, candidates: Sequence[str], target: str,
            env_col: str = "zone_id", alpha: float = 0.05, max_subset_size: int = 8,
            base_cols: Sequence[str] = ()) -> IcpResult:
    """Identify invariant predictor sets by exhaustive subset search.

    Every subset of ``candidates`` up to ``max_subset_size`` is fit by pooled
    least squares (always including an intercept and ``base_cols``); residuals
    are split by environment and tested for distributional invariance.  The
    returned intersection of accepted sets is the identified causal predictor
    set.  When candidates outnumber ``max_subset_size``, a greedy forward pass
    extends the search beyond that size and the result is flagged approximate.
    """
    candidates = sorted(candidates)
    if len(candidates) > 20:
        raise InvariantError("exhaustive search budget is 20 candidates")
    envs = sorted(frame[env_col].unique())
    if len(envs) < 2:
        return IcpResult(accepted_sets=[], intersection=(), alpha=alpha,
                         model_class_rejected=False, diagnostic="untestable")
    env_idx = np.searchsorted(envs, frame[env_col].to_numpy())
    counts = np.bincount(env_idx, minlength=len(envs)).astype(np.float64)
    if counts.min() < 8:
        return IcpResult(accepted_sets=[], intersection=(), alpha=alpha,
                         model_class_rejected=False, diagnostic="untestable")

    y = frame[target].to_numpy(dtype=np.float64)
    all_cols = list(base_cols) + candidates
    x_full = np.column_stack([np.ones(len(frame))] + ([_design(frame, all_cols)] if all_cols else []))
    col_pos = {c: i + 1 for i, c in enumerate(all_cols)}
    base_pos = [0] + [col_pos[c] for c in base_cols]

    gram_full = x_full.T @ x_full
    xty_full = x_full.T @ y
    k, n = len(envs), len(frame)

    def test_subset(subset: tuple[str, ...]) -> float:
        pos = base_pos + [col_pos[c] for c in subset]
        gram = gram_full[np.ix_(pos, pos)]
        beta, *_ = np.linalg.lstsq(gram, xty_full[pos], rcond=None)
        resid = y - x_full[:, pos] @ beta
        f_means, f_var = _group_stats(resid, env_idx, k, counts)
        return _combined_p(f_means, f_var, k, n)

    results: list[tuple[tuple[str, ...], float]] = []
    for size in range(0, min(max_subset_size, len(candidates)) + 1):
        for subset in itertools.combinations(candidates, size):
            results.append((subset, test_subset(subset)))

    approximate = False
    if len(candidates) > max_subset_size:
        approximate = True
        current = max((s for s, _ in results if len(s) == max_subset_size),
                      key=lambda s: dict(results)[s])
        tested = {s for s, _ in results}
        while len(current) < len(candidates):
            extensions = [tuple(sorted(current + (c,))) for c in candidates if c not in current]
            for ext in extensions:
                if ext not in tested:
                    results.append((ext, test_subset(ext)))
                    tested.add(ext)
            current = max(extensions, key=lambda s: dict(results)[s])

    accepted = [(s, p) for s, p in results if p >= alpha]
    if accepted:
        inter = set(accepted[0][0])
        for s, _ in accepted[1:]:
            inter &= set(s)
        intersection = tuple(sorted(inter))
        rejected = False
    else:
        intersection = ()
        rejected = True
    return IcpResult(accepted_sets=accepted, intersection=intersection, alpha=alpha,
                     model_class_rejected=rejected, approximate=approximate,
                     n_sets_tested=len(results))


# ---------------------------------------------------------------------------
# Linear predictors: pooled OLS and IRM


@dataclass
class LinearModel:
    """Affine predictor in raw feature space."""

    weights: dict[str, float]
    intercept: float

    def to_json(self) -> str:
        return json.dumps({"weights": dict(sorted(self.weights.items())),
                           "intercept": self.intercept}, indent=2, sort_keys=True)


@dataclass
class IrmModel(LinearModel):
    """IRMv1-penalized linear regressor with its training diagnostics."""

    penalty_schedule: list[float] = field(default_factory=list)
    risk_per_env: dict[object, list[float]] = field(default_factory=dict)
    penalty_per_epoch: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "weights": dict(sorted(self.weights.items())),
            "intercept": self.intercept,
            "penalty_schedule": self.penalty_schedule,
            "final_penalty": self.penalty_per_epoch[-1] if self.penalty_per_epoch else None,
        }, indent=2, sort_keys=True)


def predict(model: LinearModel, x: Mapping[str, float]) -> float:
    """Affine map; raises on missing features, never clips."""
    total = model.intercept
    for name, w in model.weights.items():
        if name not in x:
            raise InvariantError(f"missing feature {name!r}")
        total += w * float(x[name])
    return float(total)


def predict_frame(model: LinearModel, frame: pd.DataFrame) -> np.ndarray:
    missing = [c for c in model.weights if c not in frame.columns]
    if missing:
        raise InvariantError(f"missing feature(s) {missing}")
    cols = sorted(model.weights)
    w = np.array([model.weights[c] for c in cols])
    return frame[cols].to_numpy(dtype=np.float64) @ w + model.intercept


def fit_pooled_ols(frame: pd.DataFrame, features: Sequence[str], target: str) -> LinearModel:
    """Closed-form pooled least squares; the ERM baseline."""
    x = np.column_stack([np.ones(len(frame)), _design(frame, features)])
    y = frame[target].to_numpy(dtype=np.float64)
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    return LinearModel(weights={c: float(b) for c, b in zip(features, beta[1:])},
                       intercept=float(beta[0]))


def default_penalty_schedule(epochs: int, warmup: int = 100, lam_max: float = 1e4) -> list[float]:
    """Zero during warmup, then a geometric ramp up to lam_max."""
    sched = []
    ramp = max(epochs - warmup, 1)
    for e in range(epochs):
        if e < warmup:
            sched.append(0.0)
        else:
            sched.append(float(lam_max ** ((e - warmup + 1) / ramp)))
    return sched


def fit_irm(frame: pd.DataFrame, features: Sequence[str], target: str,
            env_col: str = "zone_id", epochs: int = 500, lr: float = 1e-2,
            penalty_schedule: Sequence[float] | None = None) -> IrmModel:
    """Full-batch gradient descent on the IRMv1 objective for a linear model.

    Features are standardized to zero mean and unit variance on the pooled
    training data; the returned weights are mapped back to raw feature space.
    The penalty is the squared gradient, at unit scale, of each environment's
    squared-error risk with respect to a scalar multiplier on the predictor.
    Deterministic: zero initialization, fixed schedule, no sampling.
    """
    features = list(features)
    envs = sorted(frame[env_col].unique())
    if len(envs) < 2:
        raise InvariantError("IRM requires at least 2 environments")
    if penalty_schedule is None:
        penalty_schedule = default_penalty_schedule(epochs)
    penalty_schedule = list(penalty_schedule)
    if len(penalty_schedule) != epochs:
        raise InvariantError("penalty schedule length must equal epoch count")

    x_raw = _design(frame, features)
    y = frame[target].to_numpy(dtype=np.float64)
    mu = x_raw.mean(axis=0)
    sd = x_raw.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    x = (x_raw - mu) / sd

    groups = [np.flatnonzero(frame[env_col].to_numpy() == e) for e in envs]
    xs = [x[g] for g in groups]
    ys = [y[g] for g in groups]

    w = np.zeros(len(features))
    b = 0.0
    risk_per_env: dict[object, list[float]] = {e: [] for e in envs}
    penalty_per_epoch: list[float] = []

    for epoch, lam in enumerate(penalty_schedule):
        grad_w = np.zeros_like(w)
        grad_b = 0.0
        penalty_val = 0.0
        for e_i, (xe, ye) in enumerate(zip(xs, ys)):
            n_e = len(ye)
            f = xe @ w + b
            err = f - ye
            risk = float(np.mean(err ** 2))
            risk_per_env[envs[e_i]].append(risk)
            if not np.isfinite(risk):
                raise InvariantError(f"IRM diverged at epoch {epoch} (lr={lr})")
            grad_w += (2.0 / n_e) * (xe.T @ err)
            grad_b += 2.0 * float(err.mean())
            d_e = (2.0 / n_e) * np.float64(f @ err)
            penalty_val += float(d_e * d_e)
            dd_w = (2.0 / n_e) * (xe.T @ (err + f))
            dd_b = (2.0 / n_e) * float(np.sum(err + f))
            grad_w += lam * 2.0 * d_e * dd_w
            grad_b += lam * 2.0 * d_e * dd_b
        penalty_per_epoch.append(penalty_val)
        scale = lam if lam > 1.0 else 1.0  # keep gradient magnitude bounded at high penalty
        w -= lr * grad_w / scale
        b -= lr * grad_b / scale

    w_raw = w / sd
    b_raw = b - float(np.sum(w * mu / sd))
    return IrmModel(weights={c: float(v) for c, v in zip(features, w_raw)},
                    intercept=float(b_raw),
                    penalty_schedule=list(penalty_schedule),
                    risk_per_env=risk_per_env,
                    penalty_per_epoch=penalty_per_epoch)


def irm_penalty_value(model: LinearModel, frame: pd.DataFrame, features: Sequence[str],
                      target: str, env_col: str = "zone_id") -> float:
    """Invariance penalty of a fitted model on given data (unit-scale gradient norm)."""
    yhat = predict_frame(model, frame[features])
    y = frame[target].to_numpy(dtype=np.float64)
    total = 0.0
    for e in sorted(frame[env_col].unique()):
        mask = (frame[env_col] == e).to_numpy()
        f, ye = yhat[mask], y[mask]
        d_e = (2.0 / mask.sum()) * float(f @ (f - ye))
        total += d_e ** 2
    return total


# ---------------------------------------------------------------------------
# Out-of-distribution evaluation


@dataclass
class RiskReport:
    per_env: dict[str, dict[object, float]]
    worst: dict[str, float]

    def to_json(self) -> str:
        return json.dumps({
            "per_env": {m: {str(e): v for e, v in d.items()} for m, d in self.per_env.items()},
            "worst": self.worst,
        }, indent=2, sort_keys=True)


def ood_evaluate(models: Mapping[str, LinearModel], frame: pd.DataFrame, target: str,
                 env_col: str = "zone_id") -> RiskReport:
    """Per-environment and worst-environment MSE for each candidate model."""
    per_env: dict[str, dict[object, float]] = {}
    worst: dict[str, float] = {}
    y = frame[target].to_numpy(dtype=np.float64)
    for name, model in models.items():
        yhat = predict_frame(model, frame)
        env_mse = {}
        for e in sorted(frame[env_col].unique()):
            mask = (frame[env_col] == e).to_numpy()
            env_mse[e] = float(np.mean((yhat[mask] - y[mask]) ** 2))
        per_env[name] = env_mse
        worst[name] = max(env_mse.values())
    return RiskReport(per_env=per_env, worst=worst)
