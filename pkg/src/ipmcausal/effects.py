"""Treatment-effect estimation: CATE meta-learners and difference-in-differences.

Long-term advice needs to know how a practice's effect varies with field
characteristics (CATE via T- or S-learners on the binned additive regressor)
and whether following the advisory actually helped (ATT via a stratified 2x2
difference-in-differences with cluster bootstrap, plus parallel-trends
diagnostics).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.stats as sps

from .datamodel import Dataset
from .ebm import EbmConfig, EbmModel, ebm_from_json, ebm_to_json, fit_ebm_regressor, score_frame


class EffectsError(ValueError):
    """Raised for degenerate designs (single arm, unbalancable panels, ...)."""


# ---------------------------------------------------------------------------
# CATE meta-learners


@dataclass
class CateModel:
    learner_kind: str                 # "t" | "s"
    treatment: str
    covariates: tuple[str, ...]
    categorical: tuple[str, ...]
    models: dict[str, EbmModel]

    def __post_init__(self) -> None:
        expected = {"mu0", "mu1"} if self.learner_kind == "t" else {"mu"}
        if set(self.models) != expected:
            raise EffectsError(f"{self.learner_kind}-learner requires models {expected}")

    def to_json(self) -> str:
        return json.dumps({
            "learner_kind": self.learner_kind,
            "treatment": self.treatment,
            "covariates": list(self.covariates),
            "categorical": list(self.categorical),
            "models": {k: json.loads(ebm_to_json(m)) for k, m in sorted(self.models.items())},
        }, indent=2, sort_keys=True)


def cate_from_json(text: str) -> CateModel:
    doc = json.loads(text)
    models = {k: ebm_from_json(json.dumps(v)) for k, v in doc["models"].items()}
    return CateModel(learner_kind=doc["learner_kind"], treatment=doc["treatment"],
                     covariates=tuple(doc["covariates"]),
                     categorical=tuple(doc["categorical"]), models=models)


def fit_cate(frame: pd.DataFrame, treatment: str, covariates: Sequence[str],
             learner_kind: str = "t", categorical: Sequence[str] = (),
             base_config: EbmConfig | None = None, target: str = "y_next") -> CateModel:
    """Meta-learner over the binned additive regressor.

    The T-learner fits one outcome regression per treatment arm; the S-learner
    fits a single regression with the treatment appended as a feature.
    """
    if learner_kind not in ("t", "s"):
        raise EffectsError(f"unknown learner kind {learner_kind!r}")
    if not covariates:
        raise EffectsError("covariates must be non-empty")
    t = frame[treatment].to_numpy(dtype=np.float64)
    if not ((t == 0) | (t == 1)).all():
        raise EffectsError("treatment column must be binary 0/1")
    if len(np.unique(t)) < 2:
        raise EffectsError("both treatment arms must be present")
    config = base_config or EbmConfig(rounds=300, lr=0.05, bag_count=4, max_bins=32)
    covariates = list(covariates)
    if learner_kind == "t":
        models = {
            "mu0": fit_ebm_regressor(frame[t == 0], covariates, target, categorical, config),
            "mu1": fit_ebm_regressor(frame[t == 1], covariates, target, categorical, config),
        }
    else:
        cols = covariates + [treatment]
        models = {"mu": fit_ebm_regressor(frame, cols, target, categorical, config)}
    return CateModel(learner_kind=learner_kind, treatment=treatment,
                     covariates=tuple(covariates), categorical=tuple(categorical),
                     models=models)


def estimate_cate(model: CateModel, x: Mapping[str, object]) -> float:
    """Effect estimate at one covariate point."""
    frame = pd.DataFrame([dict(x)])
    return float(estimate_cate_frame(model, frame)[0])


def estimate_cate_frame(model: CateModel, frame: pd.DataFrame) -> np.ndarray:
    missing = [c for c in model.covariates if c not in frame.columns]
    if missing:
        raise EffectsError(f"missing covariate(s) {missing}")
    if model.learner_kind == "t":
        return score_frame(model.models["mu1"], frame) - score_frame(model.models["mu0"], frame)
    with_t = frame.copy()
    with_t[model.treatment] = 1.0
    without_t = frame.copy()
    without_t[model.treatment] = 0.0
    mu = model.models["mu"]
    return score_frame(mu, with_t) - score_frame(mu, without_t)


# ---------------------------------------------------------------------------
# Panels


@dataclass
class Panel:
    """Balanced unit-by-event-time outcome grid around adoption."""

    units: tuple[str, ...]
    periods: tuple[int, ...]
    outcome: np.ndarray
    treated: frozenset[str]
    adoption_period: dict[str, int]
    zone: dict[str, int]
    dropped: list[str] = field(default_factory=list)

    def to_wide_csv(self) -> str:
        header = ["unit", "zone", "treated", "adoption"] + [f"y_{p}" for p in self.periods]
        lines = [",".join(header)]
        for i, unit in enumerate(self.units):
            row = [unit, str(self.zone[unit]), str(int(unit in self.treated)),
                   str(self.adoption_period.get(unit, ""))]
            row += [format(v, ".6g") for v in self.outcome[i]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def build_panel(dataset: Dataset, adoption: Mapping[str, int],
                window: tuple[int, int] = (4, 4),
                alignment: Mapping[str, int] | None = None) -> Panel:
    """Event-align weekly counts around adoption.

    Treated units align at their own adoption week.  Control units align at
    their ``alignment`` week when given (for example the week an un-followed
    advisory fired), otherwise at the rounded mean adoption week of treated
    units in their zone (global mean as fallback).  Units lacking full
    (pre, post) coverage are dropped and listed in diagnostics.
    """
    pre, post = window
    if pre < 1 or post < 1:
        raise EffectsError("window must have at least one pre and one post period")
    counts: dict[str, dict[int, float]] = {}
    zones: dict[str, int] = {}
    for rec in dataset.records:
        counts.setdefault(rec.trap_id, {})[rec.week] = float(rec.pest_count)
        zones[rec.trap_id] = rec.zone_id
    mean_by_zone: dict[int, int] = {}
    adopted_zones: dict[int, list[int]] = {}
    for unit, week in adoption.items():
        if unit in zones:
            adopted_zones.setdefault(zones[unit], []).append(week)
    global_weeks = [w for ws in adopted_zones.values() for w in ws]
    if not global_weeks:
        raise EffectsError("no treated units present in the dataset")
    for z, ws in adopted_zones.items():
        mean_by_zone[z] = int(round(float(np.mean(ws))))
    global_mean = int(round(float(np.mean(global_weeks))))

    periods = tuple(range(-pre, post))
    units, rows, dropped = [], [], []
    adoption_kept: dict[str, int] = {}
    for unit in sorted(counts):
        if unit in adoption:
            anchor = adoption[unit]
        elif alignment is not None and unit in alignment:
            anchor = alignment[unit]
        else:
            anchor = mean_by_zone.get(zones[unit], global_mean)
        weeks = [anchor + p for p in periods]
        if any(w not in counts[unit] for w in weeks):
            dropped.append(unit)
            continue
        units.append(unit)
        rows.append([counts[unit][w] for w in weeks])
        if unit in adoption:
            adoption_kept[unit] = adoption[unit]
    treated = frozenset(adoption_kept)
    controls = [u for u in units if u not in treated]
    if not treated or not controls:
        raise EffectsError("panel needs at least one treated and one control unit "
                           "after balancing")
    return Panel(units=tuple(units), periods=periods,
                 outcome=np.array(rows, dtype=np.float64), treated=treated,
                 adoption_period=adoption_kept,
                 zone={u: zones[u] for u in units}, dropped=dropped)


# ---------------------------------------------------------------------------
# Difference-in-differences


@dataclass
class DidResult:
    att: float
    se: float
    ci95: tuple[float, float]
    pretrend_stat: float | None
    pretrend_p: float | None
    n_treated: int
    n_control: int
    per_zone: dict[int, dict]
    excluded_zones: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "att": self.att, "se": self.se, "ci95": list(self.ci95),
            "pretrend_stat": self.pretrend_stat, "pretrend_p": self.pretrend_p,
            "n_treated": self.n_treated, "n_control": self.n_control,
            "per_zone": {str(z): v for z, v in sorted(self.per_zone.items())},
            "excluded_zones": self.excluded_zones,
        }, indent=2, sort_keys=True)


def _unit_diffs(panel: Panel) -> np.ndarray:
    pre_mask = np.array([p < 0 for p in panel.periods])
    pre = panel.outcome[:, pre_mask].mean(axis=1)
    post = panel.outcome[:, ~pre_mask].mean(axis=1)
    return post - pre


def _pooled_att(diffs: np.ndarray, is_treated: np.ndarray, zone_arr: np.ndarray,
                zones: Sequence[int]) -> tuple[float, dict[int, dict], list[int]]:
    per_zone: dict[int, dict] = {}
    excluded: list[int] = []
    num = 0.0
    den = 0
    for z in zones:
        in_zone = zone_arr == z
        t_mask = in_zone & is_treated
        c_mask = in_zone & ~is_treated
        if not t_mask.any() or not c_mask.any():
            excluded.append(int(z))
            continue
        att_z = float(diffs[t_mask].mean() - diffs[c_mask].mean())
        n_t = int(t_mask.sum())
        per_zone[int(z)] = {"att": att_z, "n_treated": n_t, "n_control": int(c_mask.sum())}
        num += n_t * att_z
        den += n_t
    if den == 0:
        raise EffectsError("all zones excluded: no zone has both arms")
    return num / den, per_zone, excluded


def estimate_att_did(panel: Panel, n_boot: int = 1000, seed: int = 0) -> DidResult:
    """Zone-stratified 2x2 difference-in-differences.

    Within each zone the ATT is the treated pre-to-post change minus the
    control pre-to-post change; zones pool with treated-count weights.  The
    standard error is a unit-level cluster bootstrap, stratified by zone and
    arm, with a percentile 95% interval.  Zones missing an arm are excluded
    and reported.
    """
    diffs = _unit_diffs(panel)
    is_treated = np.array([u in panel.treated for u in panel.units])
    zone_arr = np.array([panel.zone[u] for u in panel.units])
    zones = sorted(set(zone_arr.tolist()))
    att, per_zone, excluded = _pooled_att(diffs, is_treated, zone_arr, zones)

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    strata = [np.flatnonzero((zone_arr == z) & (is_treated == flag))
              for z in zones for flag in (True, False)
              if ((zone_arr == z) & (is_treated == flag)).any()
              and int(z) in per_zone]
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = np.concatenate([s[rng.integers(0, len(s), len(s))] for s in strata])
        boots[b], _, _ = _pooled_att(diffs[idx], is_treated[idx], zone_arr[idx], zones)
    se = float(boots.std(ddof=1))
    ci95 = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))

    n_pre = sum(1 for p in panel.periods if p < 0)
    if n_pre >= 3:
        pretrend = parallel_trends_check(panel)
        p_stat, p_p = pretrend.stat, pretrend.p
    else:
        p_stat = p_p = None
    return DidResult(att=att, se=se, ci95=ci95, pretrend_stat=p_stat, pretrend_p=p_p,
                     n_treated=int(is_treated.sum()), n_control=int((~is_treated).sum()),
                     per_zone=per_zone, excluded_zones=excluded)


@dataclass
class PretrendResult:
    stat: float
    p: float
    placebo_att: float | None = None
    placebo_se: float | None = None
    n_pre_periods: int = 0


def parallel_trends_check(panel: Panel) -> PretrendResult:
    """Pre-period slope comparison plus a placebo split of the pre-window.

    Per-unit OLS slopes over the pre-periods are compared between arms with a
    Welch t-test; a placebo difference-in-differences on the pre-window alone
    (first half as "pre", second half as "post") is reported as a diagnostic.
    """
    pre_idx = [i for i, p in enumerate(panel.periods) if p < 0]
    if len(pre_idx) < 3:
        raise EffectsError("pre-trend untestable: need at least 3 pre-periods")
    times = np.array([panel.periods[i] for i in pre_idx], dtype=np.float64)
    series = panel.outcome[:, pre_idx]
    slopes = np.polyfit(times, series.T, 1)[0]
    is_treated = np.array([u in panel.treated for u in panel.units])
    t_slopes, c_slopes = slopes[is_treated], slopes[~is_treated]
    if np.allclose(t_slopes.std(), 0.0) and np.allclose(c_slopes.std(), 0.0):
        stat = 0.0
        p = 1.0 if np.isclose(t_slopes.mean(), c_slopes.mean()) else 0.0
    else:
        stat, p = sps.ttest_ind(t_slopes, c_slopes, equal_var=False)
        stat, p = float(stat), float(p)

    half = len(pre_idx) // 2
    placebo_att = placebo_se = None
    if half >= 1 and len(pre_idx) - half >= 1:
        first = series[:, :half].mean(axis=1)
        second = series[:, half:].mean(axis=1)
        diffs = second - first
        zone_arr = np.array([panel.zone[u] for u in panel.units])
        zones = sorted(set(zone_arr.tolist()))
        try:
            placebo_att, _, _ = _pooled_att(diffs, is_treated, zone_arr, zones)
        except EffectsError:
            placebo_att = None
        if placebo_att is not None:
            rng = np.random.default_rng(np.random.SeedSequence([1234]))
            strata = [np.flatnonzero((zone_arr == z) & (is_treated == flag))
                      for z in zones for flag in (True, False)
                      if ((zone_arr == z) & (is_treated == flag)).any()]
            boots = []
            for _ in range(200):
                idx = np.concatenate([s[rng.integers(0, len(s), len(s))] for s in strata])
                try:
                    b, _, _ = _pooled_att(diffs[idx], is_treated[idx], zone_arr[idx], zones)
                    boots.append(b)
                except EffectsError:
                    continue
            if boots:
                placebo_se = float(np.std(boots, ddof=1))
    return PretrendResult(stat=stat, p=p, placebo_att=placebo_att,
                          placebo_se=placebo_se, n_pre_periods=len(pre_idx))
