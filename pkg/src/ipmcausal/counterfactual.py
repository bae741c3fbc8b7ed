"""Actionable counterfactual advice for the presence classifier.

Searches for small, feasible changes to a field state that flip the model's
pest-presence prediction.  Distances are MAD-weighted L1 (plus one unit per
changed categorical), candidate moves live on the model's bin grid (the
classifier is piecewise constant, so only bin jumps matter), and the search is
seeded random-restart coordinate descent with a validity-first objective.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .ebm import EbmModel, predict_proba

_INVALID_PENALTY = 1e6


class CounterfactualError(ValueError):
    """Raised for infeasible queries or invalid constraint sets."""


@dataclass
class ActionabilityConstraints:
    """What advice is allowed to change, and by how much."""

    immutable: frozenset[str] = frozenset()
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    step: dict[str, float] = field(default_factory=dict)
    categorical_allowed: dict[str, tuple[str, ...]] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for f, (lo, hi) in self.bounds.items():
            if lo > hi:
                raise CounterfactualError(f"bounds for {f}: lo {lo} > hi {hi}")


#: Features an agronomist cannot change mid-season: calendar, climate indices,
#: farm statics, biology, and the current trap count itself.
PEST_IMMUTABLE_DEFAULTS = ("S", "SOI", "V", "CS", "AC", "PGS", "LC", "P", "SG", "M", "Y")

#: Weather is forecast-conditioned, not actionable; excluded from change by
#: default but open for what-if exploration via explicit constraints.
PEST_WEATHER_FIELDS = ("T", "Pr", "RHa", "W", "T_next", "Pr_next", "RHa_next", "W_next")


def default_pest_constraints(extra_immutable: Sequence[str] = ()) -> ActionabilityConstraints:
    """In-season defaults: spraying and irrigation-adjacent soil water move,
    everything else is locked."""
    immutable = set(PEST_IMMUTABLE_DEFAULTS) | set(PEST_WEATHER_FIELDS) | set(extra_immutable)
    notes = {f: "forecast-conditioned, not actionable" for f in PEST_WEATHER_FIELDS}
    return ActionabilityConstraints(
        immutable=frozenset(immutable),
        bounds={"Sp": (0.0, 1.0), "SW": (0.0, 1.0)},
        step={"Sp": 1.0, "SW": 0.05},
        notes=notes,
    )


@dataclass
class Counterfactual:
    x_cf: dict[str, object]
    changed: tuple[str, ...]
    proximity: float
    validity: bool
    probability: float


@dataclass
class CounterfactualSet:
    query: dict[str, object]
    target_class: int
    items: list[Counterfactual]
    diversity: float
    best_effort: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "query": _plain(self.query),
            "target_class": self.target_class,
            "items": [{
                "features": _plain(cf.x_cf), "changed": list(cf.changed),
                "proximity": cf.proximity, "validity": cf.validity,
                "probability": cf.probability,
            } for cf in self.items],
            "diversity": self.diversity,
            "best_effort": self.best_effort,
        }, indent=2, sort_keys=True)


def _plain(x: Mapping[str, object]) -> dict:
    return {k: (float(v) if isinstance(v, (int, float, np.floating)) else str(v))
            for k, v in x.items()}


# ---------------------------------------------------------------------------
# Distances


def compute_scales(frame: pd.DataFrame, features: Sequence[str]) -> dict[str, float]:
    """Per-feature MAD on training data; IQR/1.349 when MAD is zero.

    Heavily skewed near-binary columns (for example a rare spray flag) can
    zero out both; those fall back to the standard deviation.  Features whose
    spread is zero every way are excluded from the distance (constant features
    carry no useful notion of closeness).
    """
    scales = {}
    for name in features:
        values = frame[name].to_numpy(dtype=np.float64)
        mad = float(np.median(np.abs(values - np.median(values))))
        if mad == 0.0:
            mad = float((np.quantile(values, 0.75) - np.quantile(values, 0.25)) / 1.349)
        if mad == 0.0:
            mad = float(values.std())
        if mad > 0.0:
            scales[name] = mad
    return scales


def proximity(x: Mapping[str, object], x_cf: Mapping[str, object],
              scales: Mapping[str, float]) -> float:
    """MAD-weighted L1 over continuous features plus 1 per changed categorical."""
    if set(x) != set(x_cf):
        raise CounterfactualError("feature keys of the two points differ")
    total = 0.0
    for name, value in x.items():
        other = x_cf[name]
        if isinstance(value, str) or isinstance(other, str):
            total += float(value != other)
        elif name in scales:
            total += abs(float(value) - float(other)) / scales[name]
    return total


def diversity(items: Sequence[Counterfactual | Mapping[str, object]],
              scales: Mapping[str, float]) -> float:
    """Determinantal diversity of a counterfactual set.

    det(K) with K_ij = 1 / (1 + d(cf_i, cf_j)); a single item scores 1 and
    duplicate items drive the determinant to 0.
    """
    if not items:
        raise CounterfactualError("diversity requires at least one item")
    points = [it.x_cf if isinstance(it, Counterfactual) else it for it in items]
    n = len(points)
    kernel = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            k = 1.0 / (1.0 + proximity(points[i], points[j], scales))
            kernel[i, j] = kernel[j, i] = k
    return float(np.linalg.det(kernel))


# ---------------------------------------------------------------------------
# Search


@dataclass
class CfConfig:
    lambda_prox: float = 1.0
    lambda_div: float = 0.5
    restarts: int = 16
    iters: int = 50
    seed: int = 0
    margin: float = 1e-9


def candidate_values(model: EbmModel, x: Mapping[str, object],
                     constraints: ActionabilityConstraints) -> dict[str, list]:
    """Per-feature admissible move targets (the current value always included).

    Continuous features move on the model's bin grid (bin midpoints within
    bounds) or on the constraint's step grid when one is given; categoricals
    move among their allowed levels.
    """
    grids: dict[str, list] = {}
    for name in model.feature_order:
        if name in constraints.immutable:
            continue
        fb = model.bin_map.features[name]
        if fb.kind == "categorical":
            allowed = constraints.categorical_allowed.get(name, fb.levels)
            levels = [lvl for lvl in allowed if lvl in fb.levels]
            grids[name] = sorted(set(levels) | {x[name]}, key=str)
            continue
        cur = float(x[name])
        lo, hi = constraints.bounds.get(name, (fb.train_min, fb.train_max))
        if name in constraints.step:
            step = constraints.step[name]
            down = np.arange(cur, lo - 1e-12, -step)
            up = np.arange(cur, hi + 1e-12, step)
            values = np.concatenate([down[::-1], up[1:]])
        else:
            edges = np.array([fb.train_min, *fb.cuts, fb.train_max])
            values = (edges[:-1] + edges[1:]) / 2.0
            values = np.concatenate([values, [cur]])
        values = np.clip(values, lo, hi)
        grids[name] = sorted(set(round(float(v), 12) for v in values) | {cur})
    if not grids:
        raise CounterfactualError("no mutable features under these constraints")
    return grids


def _changed_features(x: Mapping[str, object], cf: Mapping[str, object]) -> tuple[str, ...]:
    return tuple(sorted(name for name in x if cf[name] != x[name]))


def generate_counterfactuals(model: EbmModel, x: Mapping[str, object], k: int,
                             constraints: ActionabilityConstraints,
                             scales: Mapping[str, float],
                             config: CfConfig | None = None,
                             threshold: float = 0.5,
                             target_class: int | None = None) -> CounterfactualSet:
    """Diverse, near-minimal feature changes that flip the presence prediction.

    Validity comes first (a hinge on the logit crossing the decision
    threshold), proximity second; diversity enters when assembling the final
    set from the candidate pool.  Deterministic given the seed.  If fewer than
    k valid counterfactuals are found the set is flagged best_effort.

    ``target_class`` defaults to the flip of the model's current prediction;
    passing it explicitly (0 = absence advice) errors when the query already
    sits in the target class.
    """
    config = config or CfConfig()
    if k < 1:
        raise CounterfactualError("k must be >= 1")
    current = predict_proba(model, x)
    current_class = int(current >= threshold)
    if target_class is None:
        target_class = 1 - current_class
    elif target_class == current_class:
        raise CounterfactualError("no counterfactual needed: already in target class")

    grids = candidate_values(model, x, constraints)
    names = sorted(grids)
    thr_logit = math.log(threshold / (1.0 - threshold))

    # per-candidate contributions: the classifier is additive and piecewise
    # constant, so each feature's candidate list maps to a score list
    contrib: dict[str, np.ndarray] = {}
    prox_cost: dict[str, np.ndarray] = {}
    base_logit = model.intercept
    for name in model.feature_order:
        b = model.bin_map.bin_index(name, x[name])
        if name not in grids:
            base_logit += float(model.shapes[name][b]) if b >= 0 else 0.0
    for name in names:
        vals = grids[name]
        scores = np.empty(len(vals))
        costs = np.empty(len(vals))
        for i, v in enumerate(vals):
            b = model.bin_map.bin_index(name, v)
            scores[i] = model.shapes[name][b] if b >= 0 else 0.0
            if isinstance(v, str) or isinstance(x[name], str):
                costs[i] = float(v != x[name])
            else:
                costs[i] = (abs(float(v) - float(x[name])) / scales[name]
                            if name in scales else 0.0)
        contrib[name] = scores
        prox_cost[name] = costs

    def logit_of(state: dict[str, int]) -> float:
        return base_logit + sum(contrib[n][i] for n, i in state.items())

    def prox_of(state: dict[str, int]) -> float:
        return sum(prox_cost[n][i] for n, i in state.items())

    def loss_of(state: dict[str, int]) -> float:
        logit = logit_of(state)
        hinge = (max(0.0, logit - thr_logit + config.margin) if target_class == 0
                 else max(0.0, thr_logit - logit + config.margin))
        if hinge > 0.0:
            return _INVALID_PENALTY * (1.0 + hinge)
        return config.lambda_prox * prox_of(state)

    start_state = {n: grids[n].index(x[n]) if x[n] in grids[n] else 0 for n in names}
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    pool: dict[tuple[int, ...], dict[str, int]] = {}
    for restart in range(max(config.restarts, 1)):
        if restart == 0:
            state = dict(start_state)
        elif restart % 2 == 1:
            # near-query restart: perturb a single random coordinate
            state = dict(start_state)
            n = names[int(rng.integers(0, len(names)))]
            state[n] = int(rng.integers(0, len(grids[n])))
        else:
            state = {n: int(rng.integers(0, len(grids[n]))) for n in names}
        order = list(names)
        rng.shuffle(order)
        best = loss_of(state)
        for _ in range(config.iters):
            improved = False
            for n in order:
                cur_i = state[n]
                best_i, best_loss = cur_i, best
                for i in range(len(grids[n])):
                    if i == cur_i:
                        continue
                    state[n] = i
                    loss = loss_of(state)
                    if loss < best_loss - 1e-15:
                        best_i, best_loss = i, loss
                state[n] = best_i
                if best_i != cur_i:
                    improved = True
                    best = best_loss
            if not improved:
                break
        if loss_of(state) < _INVALID_PENALTY:
            pool[tuple(state[n] for n in names)] = dict(state)

    candidates: list[Counterfactual] = []
    for state in pool.values():
        x_cf = dict(x)
        for n, i in state.items():
            x_cf[n] = grids[n][i]
        prob = predict_proba(model, x_cf)
        valid = int(prob >= threshold) == target_class
        if not valid:
            continue
        candidates.append(Counterfactual(
            x_cf=x_cf, changed=_changed_features(x, x_cf),
            proximity=proximity(x, x_cf, scales), validity=True, probability=prob))

    def rank_key(cf: Counterfactual):
        return (cf.proximity, len(cf.changed), cf.changed)

    candidates.sort(key=rank_key)
    selected: list[Counterfactual] = []
    remaining = list(candidates)
    while remaining and len(selected) < k:
        if not selected:
            pick = remaining[0]
        else:
            def gain(cf: Counterfactual) -> float:
                d_now = diversity(selected + [cf], scales)
                d_was = diversity(selected, scales)
                return config.lambda_div * (d_now - d_was) - config.lambda_prox * cf.proximity
            pick = max(remaining, key=lambda cf: (gain(cf), [-v for v in rank_key(cf)[:2]]))
        selected.append(pick)
        remaining.remove(pick)
    selected.sort(key=rank_key)

    div = diversity(selected, scales) if selected else 0.0
    return CounterfactualSet(query=dict(x), target_class=target_class, items=selected,
                             diversity=div, best_effort=len(selected) < k)


def validate_counterfactual(model: EbmModel, query: Mapping[str, object],
                            cf: Counterfactual, threshold: float = 0.5) -> bool:
    """Fresh validity check: does the model flip class at this point?

    Never trusts the probability stored during the search.
    """
    query_class = int(predict_proba(model, query) >= threshold)
    cf_class = int(predict_proba(model, cf.x_cf) >= threshold)
    return cf_class == 1 - query_class


def exhaustive_optimum(model: EbmModel, x: Mapping[str, object],
                       constraints: ActionabilityConstraints,
                       scales: Mapping[str, float], threshold: float = 0.5,
                       limit: int = 200_000) -> float | None:
    """Brute-force best proximity over the full candidate grid (oracle use).

    Returns None when no grid point flips the class.
    """
    grids = candidate_values(model, x, constraints)
    names = sorted(grids)
    sizes = [len(grids[n]) for n in names]
    if int(np.prod(sizes)) > limit:
        raise CounterfactualError("grid too large for exhaustive search")
    current_class = int(predict_proba(model, x) >= threshold)
    best = None
    for combo in itertools.product(*(grids[n] for n in names)):
        x_cf = dict(x)
        x_cf.update(dict(zip(names, combo)))
        if int(predict_proba(model, x_cf) >= threshold) == current_class:
            continue
        d = proximity(x, x_cf, scales)
        if best is None or d < best:
            best = d
    return best
