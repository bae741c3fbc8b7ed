"""Structural causal model of the cotton bollworm pest-farm ecosystem.

A 17-node DAG over weather, soil, biology, and farm-practice variables drives
weekly trap-count trajectories.  The simulator supports do-interventions,
twin-world counterfactuals (identical noise, different actions), and exact
ground-truth treatment effects, so that every estimator in this package can be
checked against a known mechanism.

Each trap owns a counter-based random stream keyed by (seed, trap index), so
results are identical regardless of execution order or parallelism.  All noise
is drawn up-front onto a "tape" of standard draws; the forward pass is a
deterministic function of the tape, which is what makes twin worlds exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datamodel import (
    CATEGORICAL_LEVELS,
    Dataset,
    TrapRecord,
    dataset_from_records,
)

NODES = ("S", "SOI", "W", "Pr", "V", "CS", "AC", "T", "LC", "PGS", "SW", "RHa", "P", "SG", "M", "Sp", "Y")

EDGES = (
    ("S", "T"), ("S", "LC"), ("S", "PGS"),
    ("SOI", "SG"), ("SG", "Y"),
    ("T", "LC"), ("T", "P"), ("T", "RHa"),
    ("Pr", "RHa"), ("Pr", "SW"), ("Pr", "Y"),
    ("SW", "Y"), ("RHa", "P"), ("P", "Y"),
    ("LC", "Y"), ("PGS", "Y"),
    ("V", "Y"), ("CS", "Y"), ("AC", "Y"),
    ("W", "M"), ("S", "M"), ("M", "Y"),
    ("Sp", "Y"),
)

#: Development window of the insect life cycle, degrees Celsius.
DEV_T_MIN = 17.5
DEV_T_MAX = 32.5

_STATIC_DRAWS = ("SOI", "V_u", "CS_u", "AC_u", "adhere_u")
_WEEKLY_DRAWS = ("T", "Pr_zero", "Pr_gamma", "W", "RHa", "SW", "LC", "PGS", "Sp_u", "Y")


class ScmError(ValueError):
    """Raised for invalid graphs, specs, or interventions."""


# ---------------------------------------------------------------------------
# Graph


@dataclass(frozen=True)
class CausalGraph:
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise ScmError(f"edge ({a}, {b}) has an endpoint outside the node set")

    def parents(self, node: str) -> set[str]:
        return {a for a, b in self.edges if b == node}

    def children(self, node: str) -> set[str]:
        return {b for a, b in self.edges if a == node}


def build_default_graph() -> CausalGraph:
    """The hand-built pest-farm ecosystem graph (17 nodes, 23 edges)."""
    graph = CausalGraph(nodes=frozenset(NODES), edges=frozenset(EDGES))
    topological_order(graph)  # acyclicity check
    return graph


def topological_order(graph: CausalGraph) -> list[str]:
    """Deterministic topological order (Kahn's algorithm, lexicographic ties).

    Raises ScmError naming one cycle if the graph is not a DAG.
    """
    import heapq

    indeg = {n: 0 for n in graph.nodes}
    for _, b in graph.edges:
        indeg[b] += 1
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        node = heapq.heappop(heap)
        order.append(node)
        for child in sorted(graph.children(node)):
            indeg[child] -= 1
            if indeg[child] == 0:
                heapq.heappush(heap, child)
    if len(order) < len(graph.nodes):
        cycle = _find_cycle(graph, set(graph.nodes) - set(order))
        raise ScmError(f"graph has a cycle: {' -> '.join(cycle)}")
    return order


def _find_cycle(graph: CausalGraph, candidates: set[str]) -> list[str]:
    start = sorted(candidates)[0]
    path = [start]
    seen = {start}
    node = start
    while True:
        nxt = sorted(c for c in graph.children(node) if c in candidates)[0]
        if nxt in seen:
            return path[path.index(nxt):] + [nxt]
        path.append(nxt)
        seen.add(nxt)
        node = nxt


# ---------------------------------------------------------------------------
# Spec


@dataclass(frozen=True)
class ZoneConfig:
    """Exogenous climate offsets for one agroclimatic zone.

    Zones shift only exogenous distributions (temperature mean, precipitation
    scale, oscillation-index mean); the outcome equation never sees the zone id.
    """

    zone_id: int
    label: str
    temp_shift: float
    pr_theta: float
    soi_mean: float


@dataclass(frozen=True)
class NoiseSpec:
    family: str  # normal | zero_gamma | gamma | uniform | count_jitter
    params: dict[str, float]


@dataclass(frozen=True)
class EquationSpec:
    id: str
    inputs: tuple[str, ...]
    params: dict[str, object]


@dataclass(frozen=True)
class PolicyConfig:
    """Observational scouting-and-spraying behaviour: P(spray | current count)."""

    enabled: bool = True
    intercept: float = -3.0
    slope: float = 0.08


@dataclass(frozen=True)
class StaticsConfig:
    """Sampling probabilities for per-trap farm statics."""

    p_bt: float = 0.3
    p_rot: float = 0.4
    p_ac_cotton: float = 0.4
    p_ac_maize: float = 0.3


@dataclass(frozen=True)
class Intervention:
    node: str
    value: object
    mode: str = "set"  # set | shift


@dataclass(frozen=True)
class ScmSpec:
    graph: CausalGraph
    equations: dict[str, EquationSpec]
    noise: dict[str, NoiseSpec]
    zones: tuple[ZoneConfig, ...]
    seed: int
    policy: PolicyConfig = PolicyConfig()
    statics: StaticsConfig = StaticsConfig()
    year: int = 2023
    interventions: tuple[Intervention, ...] = ()

    def __post_init__(self) -> None:
        endogenous = {n for n in self.graph.nodes if self.graph.parents(n)}
        expected = endogenous - {"Sp"}  # spraying is policy-driven, not an equation
        set_nodes = {iv.node for iv in self.interventions if iv.mode == "set"}
        if not (expected <= set(self.equations) <= expected | set_nodes):
            raise ScmError(
                f"equations must be keyed exactly by the non-exogenous nodes "
                f"{sorted(expected)}, got {sorted(self.equations)}")
        for node, eq in self.equations.items():
            parents = self.graph.parents(node)
            if not set(eq.inputs) <= parents:
                raise ScmError(f"equation for {node} uses non-parent inputs {set(eq.inputs) - parents}")
        if not self.zones:
            raise ScmError("at least one zone is required")
        for z in self.zones:
            if z.pr_theta <= 0:
                raise ScmError(f"zone {z.zone_id}: precipitation scale must be positive")
        for node, ns in self.noise.items():
            for key, val in ns.params.items():
                if key in ("sigma", "scale", "shape", "factor") and val < 0:
                    raise ScmError(f"noise for {node}: {key} must be non-negative")
        if not (0 <= self.seed < 2 ** 63):
            raise ScmError("seed must be a non-negative 63-bit integer")

    def zone_by_id(self, zone_id: int) -> ZoneConfig:
        for z in self.zones:
            if z.zone_id == zone_id:
                return z
        raise ScmError(f"unknown zone_id {zone_id}")


def default_spec(seed: int = 0, y_equation: str = "multiplicative",
                 spray_policy: bool = True, spray_efficacy: float = 0.6) -> ScmSpec:
    """Default ecosystem parameterization.

    ``y_equation`` selects the population update: "multiplicative" is the full
    nonlinear recursion; "loglinear" is the linear regime, where log(1 + count)
    follows a linear autoregression in the same drivers (used for studying
    invariant linear predictors).
    """
    if y_equation not in ("multiplicative", "loglinear"):
        raise ScmError(f"unknown y_equation {y_equation!r}")
    graph = build_default_graph()
    equations = {
        "T": EquationSpec("seasonal_temperature", ("S",),
                          {"base_mean": 25.0, "amplitude": 8.0, "phase_week": 8.0}),
        "LC": EquationSpec("development_rate", ("T",), {}),
        "PGS": EquationSpec("thermal_time_curve", ("S",), {"scale": 20.0}),
        "SW": EquationSpec("soil_water_ar", ("Pr",),
                           {"persistence": 0.7, "recharge": 0.02, "init": 0.5}),
        "RHa": EquationSpec("humidity_balance", ("T", "Pr"),
                            {"base": 55.0, "pr_coef": 0.8, "t_coef": -0.9, "lo": 10.0, "hi": 100.0}),
        "P": EquationSpec("parasitism_response", ("T", "RHa"),
                          {"intercept": -6.0, "t_coef": 0.08, "rh_coef": 0.015, "cap": 0.6}),
        "SG": EquationSpec("oscillation_generation_size", ("SOI",),
                           {"intercept": 2.0, "soi_coef": 0.8}),
        "M": EquationSpec("wind_migration", ("W", "S"),
                          {"coef": 0.3, "window_center": 10.0, "window_width": 4.0}),
    }
    if y_equation == "multiplicative":
        equations["Y"] = EquationSpec("multiplicative_growth", tuple(sorted(graph.parents("Y"))), {
            "growth_coef": 1.2, "efficacy": spray_efficacy,
            "rain_threshold": 30.0, "rain_kill": 0.5,
            "v_bt": 0.55, "cs_rot": 0.85, "ac_cotton": 1.10, "ac_other": 0.90,
            "gen_threshold": 4.0, "y0_scale": 12.0,
        })
        y_noise = NoiseSpec("count_jitter", {"factor": 0.1})
    else:
        equations["Y"] = EquationSpec("loglinear_growth", tuple(sorted(graph.parents("Y"))), {
            "intercept": 0.3, "lag_coef": 0.6,
            "coefs": {"LC": 0.6, "PGS": 0.5, "P": -1.2, "Pr": -0.02, "SW": 0.3,
                      "M": 0.08, "SG": 0.06, "Sp": -0.9,
                      "V_bt": -0.3, "CS_rot": -0.15, "AC_cotton": 0.08, "AC_other": -0.08},
            "y0_scale": 4.0,
        })
        y_noise = NoiseSpec("normal", {"sigma": 0.3})
    noise = {
        "T": NoiseSpec("normal", {"sigma": 1.2}),
        "Pr": NoiseSpec("zero_gamma", {"p_zero": 0.35, "shape": 2.0}),
        "W": NoiseSpec("gamma", {"shape": 2.0, "scale": 1.5}),
        "RHa": NoiseSpec("normal", {"sigma": 4.0}),
        "SW": NoiseSpec("normal", {"sigma": 0.03}),
        "LC": NoiseSpec("normal", {"sigma": 0.02}),
        "PGS": NoiseSpec("normal", {"sigma": 0.02}),
        "SOI": NoiseSpec("normal", {"sigma": 1.0}),
        "Sp": NoiseSpec("uniform", {}),
        "Y": y_noise,
    }
    zones = (
        ZoneConfig(1, "coastal-plain", 0.0, 6.0, 0.0),
        ZoneConfig(2, "inland-valley", 2.0, 7.0, 0.5),
        ZoneConfig(3, "upland", -2.0, 5.0, -0.5),
        ZoneConfig(4, "southern-hot", 5.0, 8.0, 1.0),
        ZoneConfig(5, "arid-extreme", 8.0, 9.0, 1.5),
        ZoneConfig(6, "northern-cool", -4.0, 4.5, -1.0),
    )
    return ScmSpec(graph=graph, equations=equations, noise=noise, zones=zones,
                   seed=seed, policy=PolicyConfig(enabled=spray_policy))


def linear_regime_spec(seed: int = 0, spray_policy: bool = True) -> ScmSpec:
    """Default spec with the linear-regime population update."""
    return default_spec(seed=seed, y_equation="loglinear", spray_policy=spray_policy)


# ---------------------------------------------------------------------------
# Elementary responses


def development_rate(T: float) -> float:
    """Weekly life-cycle completion rate as a function of temperature.

    Linear ramp from 0 at 17.5 C to 1 at 32.5 C; exactly 0 outside that window
    (development halts in the cold, lethal stress above the window).
    """
    if not math.isfinite(T):
        raise ScmError(f"temperature must be finite, got {T}")
    if T < DEV_T_MIN or T > DEV_T_MAX:
        return 0.0
    return (T - DEV_T_MIN) / (DEV_T_MAX - DEV_T_MIN)


def _development_rate_vec(T: np.ndarray) -> np.ndarray:
    ramp = (T - DEV_T_MIN) / (DEV_T_MAX - DEV_T_MIN)
    return np.where((T >= DEV_T_MIN) & (T <= DEV_T_MAX), ramp, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _pgs_base_curve(eq_T: EquationSpec, eq_PGS: EquationSpec, n_weeks: int) -> np.ndarray:
    """Deterministic plant growth-stage curve: scaled cumulative thermal time
    of the reference seasonal temperature climatology."""
    weeks = np.arange(1, n_weeks + 1, dtype=np.float64)
    p = eq_T.params
    t_ref = p["base_mean"] + p["amplitude"] * np.sin(
        2.0 * np.pi * (weeks - p["phase_week"]) / 26.0)
    cum = np.cumsum(_development_rate_vec(t_ref))
    return np.clip(cum / eq_PGS.params["scale"], 0.0, 1.0)


# ---------------------------------------------------------------------------
# Noise tapes


@dataclass
class NoiseTape:
    """Raw standard draws for one trap: statics plus per-week vectors.

    Draws are recorded before any transformation, so a tape can be replayed
    under different interventions (twin worlds share a tape).
    """

    statics: dict[str, float]
    weekly: dict[str, np.ndarray]

    @property
    def n_weeks(self) -> int:
        return len(next(iter(self.weekly.values())))


def draw_tape(seed: int, trap_index: int, n_weeks: int) -> NoiseTape:
    """Draw the full noise tape for one trap from its counter-based stream."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, trap_index], dtype=np.uint64)))
    statics = {
        "SOI": float(rng.standard_normal()),
        "V_u": float(rng.random()),
        "CS_u": float(rng.random()),
        "AC_u": float(rng.random()),
        "adhere_u": float(rng.random()),
    }
    weekly = {
        "T": rng.standard_normal(n_weeks),
        "Pr_zero": rng.random(n_weeks),
        "Pr_gamma": rng.standard_gamma(2.0, n_weeks),
        "W": rng.standard_gamma(2.0, n_weeks),
        "RHa": rng.standard_normal(n_weeks),
        "SW": rng.standard_normal(n_weeks),
        "LC": rng.standard_normal(n_weeks),
        "PGS": rng.standard_normal(n_weeks),
        "Sp_u": rng.random(n_weeks),
        "Y": rng.standard_normal(n_weeks),
    }
    return NoiseTape(statics=statics, weekly=weekly)


def save_noise_csv(traces: Mapping[str, "TrapTrace"], path: str | Path) -> None:
    """Persist noise tapes as CSV rows (trap_id, week, node, draw); statics at week 0."""
    import csv

    with Path(path).open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trap_id", "week", "node", "draw"])
        for trap_id, trace in traces.items():
            writer.writerow([trap_id, 0, "zone_id", float(trace.zone_id)])
            for node, val in trace.tape.statics.items():
                writer.writerow([trap_id, 0, node, repr(val)])
            for node, arr in trace.tape.weekly.items():
                for w, val in enumerate(arr, start=1):
                    writer.writerow([trap_id, w, node, repr(float(val))])


def load_noise_csv(path: str | Path) -> dict[str, "TrapTrace"]:
    """Reload noise tapes written by save_noise_csv (trajectories not included)."""
    import csv

    raw: dict[str, dict] = {}
    with Path(path).open("r", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for trap_id, week, node, draw in reader:
            entry = raw.setdefault(trap_id, {"statics": {}, "weekly": {}, "zone_id": None})
            week = int(week)
            if week == 0:
                if node == "zone_id":
                    entry["zone_id"] = int(float(draw))
                else:
                    entry["statics"][node] = float(draw)
            else:
                entry["weekly"].setdefault(node, {})[week] = float(draw)
    traces = {}
    for trap_id, entry in raw.items():
        weekly = {}
        for node, by_week in entry["weekly"].items():
            n = max(by_week)
            weekly[node] = np.array([by_week[w] for w in range(1, n + 1)])
        tape = NoiseTape(statics=entry["statics"], weekly=weekly)
        traces[trap_id] = TrapTrace(trap_id=trap_id, zone_id=entry["zone_id"],
                                    year=0, tape=tape)
    return traces


# ---------------------------------------------------------------------------
# Forward simulation


@dataclass
class TrapTrace:
    """Everything needed to replay or twin one trap's season."""

    trap_id: str
    zone_id: int
    year: int
    tape: NoiseTape
    adoption_week: int | None = None
    trigger_week: int | None = None


@dataclass
class TwinOutcome:
    """Factual and counterfactual trajectories sharing one noise tape."""

    factual: tuple[TrapRecord, ...]
    counterfactual: tuple[TrapRecord, ...]
    intervention: Intervention
    week: int


#: Quantities sampled once per trap-season; they cannot change mid-season.
_SEASON_STATIC_NODES = {"V", "CS", "AC", "SOI", "SG"}


def _validate_intervention(spec: ScmSpec, iv: Intervention) -> None:
    if iv.node not in spec.graph.nodes:
        raise ScmError(f"unknown node {iv.node!r}")
    if iv.node == "Y":
        raise ScmError("intervening on the outcome Y is not allowed")
    if iv.mode not in ("set", "shift"):
        raise ScmError(f"unknown intervention mode {iv.mode!r}")
    if iv.node in CATEGORICAL_LEVELS:
        if iv.mode == "shift":
            raise ScmError(f"cannot shift categorical node {iv.node}")
        if iv.value not in CATEGORICAL_LEVELS[iv.node]:
            raise ScmError(f"invalid level {iv.value!r} for {iv.node}")
    elif iv.node == "Sp":
        if iv.mode == "set" and iv.value not in (0, 1, 0.0, 1.0, False, True):
            raise ScmError("Sp can only be set to 0 or 1")
    else:
        if not isinstance(iv.value, (int, float)) or not math.isfinite(float(iv.value)):
            raise ScmError(f"intervention value for {iv.node} must be a finite number")


def intervene(spec: ScmSpec, interventions: Sequence[Intervention]) -> ScmSpec:
    """Return a new spec under do(interventions).

    Set-mode nodes become constants and lose their incoming edges; shift-mode
    nodes keep their equations with an additive offset.
    """
    for iv in interventions:
        _validate_intervention(spec, iv)
    if not interventions:
        return spec
    set_nodes = {iv.node for iv in interventions if iv.mode == "set"}
    new_edges = frozenset((a, b) for a, b in spec.graph.edges if b not in set_nodes)
    graph = CausalGraph(nodes=spec.graph.nodes, edges=new_edges)
    equations = {n: (eq if n not in set_nodes
                     else replace(eq, inputs=()))
                 for n, eq in spec.equations.items()}
    return replace(spec, graph=graph, equations=equations,
                   interventions=spec.interventions + tuple(interventions))


@dataclass
class _AdviceParams:
    trigger_count: float
    adhere_prob: float


class _IvSchedule:
    """Week-indexed intervention lookup used by the forward pass."""

    def __init__(self, spec: ScmSpec,
                 transient: Sequence[tuple[Intervention, int, int]] = ()):
        # spec-level interventions apply to every week
        self.entries: dict[str, list[tuple[str, object, int, int]]] = {}
        for iv in spec.interventions:
            self.entries.setdefault(iv.node, []).append((iv.mode, iv.value, 1, 10 ** 9))
        for iv, w_from, w_to in transient:
            _validate_intervention(spec, iv)
            self.entries.setdefault(iv.node, []).append((iv.mode, iv.value, w_from, w_to))

    def apply(self, node: str, week: int, value):
        for mode, v, w_from, w_to in self.entries.get(node, ()):
            if w_from <= week <= w_to:
                value = v if mode == "set" else value + v
        return value

    def static_level(self, node: str, level):
        # statics have no week; any set intervention wins
        for mode, v, w_from, w_to in self.entries.get(node, ()):
            if mode == "set" and w_from <= 1:
                level = v
        return level


def _simulate_block(spec: ScmSpec, zone_ids: np.ndarray, tapes: list[NoiseTape],
                    n_weeks: int, schedule: _IvSchedule,
                    advice: _AdviceParams | None = None) -> dict[str, np.ndarray]:
    """Vectorized forward pass over a block of traps.

    Returns per-node arrays of shape (n_traps, n_weeks) plus static arrays.
    The same code path serves full datasets and single-trap twin replays, so
    trajectories are bit-identical between the two uses.
    """
    n = len(tapes)
    zones = {z.zone_id: z for z in spec.zones}
    temp_shift = np.array([zones[z].temp_shift for z in zone_ids])
    pr_theta = np.array([zones[z].pr_theta for z in zone_ids])
    soi_mean = np.array([zones[z].soi_mean for z in zone_ids])

    stat = {k: np.array([t.statics[k] for t in tapes]) for k in _STATIC_DRAWS}
    wk = {k: np.stack([t.weekly[k][:n_weeks] for t in tapes]) for k in _WEEKLY_DRAWS}

    eq = spec.equations
    noise = spec.noise
    sigma = {k: noise[k].params.get("sigma", 0.0) for k in ("T", "RHa", "SW", "LC", "PGS", "SOI")}

    soi = soi_mean + sigma["SOI"] * stat["SOI"]
    soi = np.asarray(schedule.apply("SOI", 1, soi), dtype=np.float64) + np.zeros(n)

    st = spec.statics
    v_lvl = np.where(stat["V_u"] < st.p_bt, "bt", "conv").astype(object)
    cs_lvl = np.where(stat["CS_u"] < st.p_rot, "rot", "mono").astype(object)
    ac_lvl = np.where(stat["AC_u"] < st.p_ac_cotton, "cotton",
                      np.where(stat["AC_u"] < st.p_ac_cotton + st.p_ac_maize, "maize", "other")).astype(object)
    v_lvl = np.full(n, schedule.static_level("V", None), dtype=object) \
        if schedule.static_level("V", None) is not None else v_lvl
    cs_lvl = np.full(n, schedule.static_level("CS", None), dtype=object) \
        if schedule.static_level("CS", None) is not None else cs_lvl
    ac_lvl = np.full(n, schedule.static_level("AC", None), dtype=object) \
        if schedule.static_level("AC", None) is not None else ac_lvl

    sg_p = eq["SG"].params
    sg = _softplus(sg_p["intercept"] + sg_p["soi_coef"] * soi)
    sg = np.asarray(schedule.apply("SG", 1, sg), dtype=np.float64) + np.zeros(n)

    t_p, rh_p, p_p, m_p, sw_p = (eq["T"].params, eq["RHa"].params, eq["P"].params,
                                 eq["M"].params, eq["SW"].params)
    pgs_curve = _pgs_base_curve(eq["T"], eq["PGS"], max(n_weeks, 26))
    y_eq = eq["Y"]
    y_p = y_eq.params

    out = {k: np.zeros((n, n_weeks)) for k in
           ("S", "T", "Pr", "W", "RHa", "SW", "LC", "PGS", "P", "M", "Sp", "Y", "gen")}
    out["SOI"] = soi
    out["SG"] = sg
    out["V"] = v_lvl
    out["CS"] = cs_lvl
    out["AC"] = ac_lvl

    # initial population scales with the oscillation-driven first generation
    y_raw0 = y_p.get("y0_scale", 1.0) * sg
    if noise["Y"].family == "count_jitter":
        jit = noise["Y"].params["factor"]
        y_cur = np.maximum(0.0, np.rint(y_raw0 + wk["Y"][:, 0] * np.sqrt(jit * y_raw0)))
    else:
        y_cur = np.maximum(0.0, np.rint(y_raw0 + wk["Y"][:, 0]))

    sw_prev = np.full(n, sw_p["init"])
    cumdev = np.zeros(n)
    adopted = np.zeros(n, dtype=bool)
    adoption_week = np.full(n, -1, dtype=np.int64)
    trigger_week = np.full(n, -1, dtype=np.int64)
    adherer = (stat["adhere_u"] < advice.adhere_prob) if advice is not None else None

    p_zero = noise["Pr"].params["p_zero"]
    w_scale = noise["W"].params["scale"]
    pol = spec.policy

    for w in range(1, n_weeks + 1):
        i = w - 1
        s_val = float(schedule.apply("S", w, w))
        t = (t_p["base_mean"] + temp_shift
             + t_p["amplitude"] * np.sin(2.0 * np.pi * (s_val - t_p["phase_week"]) / 26.0)
             + sigma["T"] * wk["T"][:, i])
        t = np.asarray(schedule.apply("T", w, t), dtype=np.float64) + np.zeros(n)

        pr = np.where(wk["Pr_zero"][:, i] < p_zero, 0.0, wk["Pr_gamma"][:, i] * pr_theta)
        pr = np.maximum(0.0, np.asarray(schedule.apply("Pr", w, pr), dtype=np.float64) + np.zeros(n))

        wind = wk["W"][:, i] * w_scale
        wind = np.maximum(0.0, np.asarray(schedule.apply("W", w, wind), dtype=np.float64) + np.zeros(n))

        rha = np.clip(rh_p["base"] + rh_p["pr_coef"] * pr + rh_p["t_coef"] * (t - t_p["base_mean"])
                      + sigma["RHa"] * wk["RHa"][:, i], rh_p["lo"], rh_p["hi"])
        rha = np.clip(np.asarray(schedule.apply("RHa", w, rha), dtype=np.float64) + np.zeros(n),
                      0.0, 100.0)

        swat = np.clip(sw_p["persistence"] * sw_prev + sw_p["recharge"] * pr
                       + sigma["SW"] * wk["SW"][:, i], 0.0, 1.0)
        swat = np.clip(np.asarray(schedule.apply("SW", w, swat), dtype=np.float64) + np.zeros(n), 0.0, 1.0)
        sw_prev = swat

        lc = np.clip(_development_rate_vec(t) + sigma["LC"] * wk["LC"][:, i], 0.0, 1.0)
        lc = np.clip(np.asarray(schedule.apply("LC", w, lc), dtype=np.float64) + np.zeros(n), 0.0, 1.0)
        cumdev = cumdev + lc
        gen = 1.0 + np.floor(cumdev / y_p.get("gen_threshold", 4.0))

        pgs_idx = min(max(int(round(s_val)), 1), len(pgs_curve)) - 1
        pgs = np.clip(pgs_curve[pgs_idx] + sigma["PGS"] * wk["PGS"][:, i], 0.0, 1.0)
        pgs = np.clip(np.asarray(schedule.apply("PGS", w, pgs), dtype=np.float64) + np.zeros(n), 0.0, 1.0)

        par = np.minimum(p_p["cap"], _sigmoid(p_p["intercept"] + p_p["t_coef"] * t
                                              + p_p["rh_coef"] * rha))
        par = np.clip(np.asarray(schedule.apply("P", w, par), dtype=np.float64) + np.zeros(n), 0.0, 1.0)

        window = np.exp(-0.5 * ((s_val - m_p["window_center"]) / m_p["window_width"]) ** 2)
        mig = m_p["coef"] * wind * window
        mig = np.maximum(0.0, np.asarray(schedule.apply("M", w, mig), dtype=np.float64) + np.zeros(n))

        if advice is not None:
            newly = (~adopted) & (trigger_week < 0) & (y_cur >= advice.trigger_count)
            trigger_week = np.where(newly & (trigger_week < 0), w, trigger_week)
            adopt_now = newly & adherer
            adopted = adopted | adopt_now
            adoption_week = np.where(adopt_now, w, adoption_week)
            sp = adopt_now.astype(np.float64)
        elif pol.enabled:
            sp = (wk["Sp_u"][:, i] < _sigmoid(pol.intercept + pol.slope * y_cur)).astype(np.float64)
        else:
            sp = np.zeros(n)
        sp = np.clip(np.asarray(schedule.apply("Sp", w, sp), dtype=np.float64) + np.zeros(n), 0.0, 1.0)

        out["S"][:, i] = s_val
        out["T"][:, i] = t
        out["Pr"][:, i] = pr
        out["W"][:, i] = wind
        out["RHa"][:, i] = rha
        out["SW"][:, i] = swat
        out["LC"][:, i] = lc
        out["PGS"][:, i] = pgs
        out["P"][:, i] = par
        out["M"][:, i] = mig
        out["Sp"][:, i] = sp
        out["Y"][:, i] = y_cur
        out["gen"][:, i] = gen

        y_cur = _next_count(y_eq, noise["Y"], y_cur, lc, pgs, par, sp, pr, swat, mig, sg,
                            gen, v_lvl, cs_lvl, ac_lvl, wk["Y"][:, i])

    out["adoption_week"] = adoption_week
    out["trigger_week"] = trigger_week
    return out


def _next_count(y_eq: EquationSpec, y_noise: NoiseSpec, y, lc, pgs, par, sp, pr, swat, mig,
                sg, gen, v_lvl, cs_lvl, ac_lvl, z) -> np.ndarray:
    """One population transition, shared by simulation and twin replays."""
    p = y_eq.params
    if y_eq.id == "multiplicative_growth":
        v_factor = np.where((v_lvl == "bt") & (gen >= 2), p["v_bt"], 1.0)
        cs_factor = np.where(cs_lvl == "rot", p["cs_rot"], 1.0)
        ac_factor = np.where(ac_lvl == "cotton", p["ac_cotton"],
                             np.where(ac_lvl == "other", p["ac_other"], 1.0))
        growth = ((1.0 + p["growth_coef"] * lc * pgs)
                  * (1.0 - par)
                  * (1.0 - p["efficacy"] * sp)
                  * np.where(pr > p["rain_threshold"], 1.0 - p["rain_kill"], 1.0)
                  * v_factor * cs_factor * ac_factor)
        y_raw = y * growth + mig
        jit = y_noise.params["factor"]
        return np.maximum(0.0, np.rint(y_raw + z * np.sqrt(jit * np.maximum(y_raw, 0.0))))
    if y_eq.id == "loglinear_growth":
        c = p["coefs"]
        ylog = (p["intercept"] + p["lag_coef"] * np.log1p(y)
                + c["LC"] * lc + c["PGS"] * pgs + c["P"] * par + c["Pr"] * pr
                + c["SW"] * swat + c["M"] * mig + c["SG"] * sg + c["Sp"] * sp
                + c["V_bt"] * (v_lvl == "bt")
                + c["CS_rot"] * (cs_lvl == "rot")
                + c["AC_cotton"] * (ac_lvl == "cotton")
                + c["AC_other"] * (ac_lvl == "other")
                + y_noise.params["sigma"] * z)
        return np.maximum(0.0, np.rint(np.expm1(ylog)))
    raise ScmError(f"unknown population equation {y_eq.id!r}")


def _block_to_records(spec: ScmSpec, out: dict[str, np.ndarray], trap_ids: Sequence[str],
                      zone_ids: np.ndarray, n_weeks: int) -> list[TrapRecord]:
    records = []
    for j, trap_id in enumerate(trap_ids):
        for i in range(n_weeks):
            features = {
                "T": float(out["T"][j, i]), "SW": float(out["SW"][j, i]),
                "RHa": float(out["RHa"][j, i]), "Pr": float(out["Pr"][j, i]),
                "W": float(out["W"][j, i]), "SOI": float(out["SOI"][j]),
                "PGS": float(out["PGS"][j, i]), "S": float(out["S"][j, i]),
                "LC": float(out["LC"][j, i]), "P": float(out["P"][j, i]),
                "SG": float(out["SG"][j]), "M": float(out["M"][j, i]),
                "V": str(out["V"][j]), "CS": str(out["CS"][j]), "AC": str(out["AC"][j]),
            }
            records.append(TrapRecord(
                trap_id=trap_id, zone_id=int(zone_ids[j]), year=spec.year, week=i + 1,
                features=features, pest_count=int(out["Y"][j, i]),
                sprayed=bool(out["Sp"][j, i] > 0.5)))
    return records


def _setup_block(spec: ScmSpec, n_traps: int, n_weeks: int, n_zones: int):
    if n_zones > len(spec.zones):
        raise ScmError(f"n_zones={n_zones} exceeds configured zones ({len(spec.zones)})")
    if not (1 <= n_weeks <= 26):
        raise ScmError("n_weeks must be within 1..26")
    if n_traps < 1:
        raise ScmError("n_traps must be positive")
    trap_ids = [f"t{i:05d}" for i in range(n_traps)]
    zone_ids = np.array([spec.zones[i % n_zones].zone_id for i in range(n_traps)])
    tapes = [draw_tape(spec.seed, i, n_weeks) for i in range(n_traps)]
    return trap_ids, zone_ids, tapes


def simulate(spec: ScmSpec, n_traps: int, n_weeks: int = 26, n_zones: int = 4) -> Dataset:
    """Sample a multi-environment trap dataset from the ecosystem model.

    Deterministic given (spec, seed, sizes): trap i is assigned zone i mod
    n_zones and an independent noise stream keyed by (seed, i).
    """
    dataset, _ = simulate_traced(spec, n_traps, n_weeks, n_zones)
    return dataset


def simulate_traced(spec: ScmSpec, n_traps: int, n_weeks: int = 26,
                    n_zones: int = 4) -> tuple[Dataset, dict[str, TrapTrace]]:
    """Like simulate, but also returns per-trap noise tapes for twin replays."""
    trap_ids, zone_ids, tapes = _setup_block(spec, n_traps, n_weeks, n_zones)
    out = _simulate_block(spec, zone_ids, tapes, n_weeks, _IvSchedule(spec))
    records = _block_to_records(spec, out, trap_ids, zone_ids, n_weeks)
    traces = {tid: TrapTrace(trap_id=tid, zone_id=int(zone_ids[j]), year=spec.year,
                             tape=tapes[j])
              for j, tid in enumerate(trap_ids)}
    return dataset_from_records(records), traces


def replay_trap(spec: ScmSpec, trace: TrapTrace, n_weeks: int,
                transient: Sequence[tuple[Intervention, int, int]] = ()) -> tuple[TrapRecord, ...]:
    """Deterministically re-run one trap from its tape, optionally intervened."""
    schedule = _IvSchedule(spec, transient)
    zone_ids = np.array([trace.zone_id])
    out = _simulate_block(spec, zone_ids, [trace.tape], n_weeks, schedule)
    return tuple(_block_to_records(spec, out, [trace.trap_id], zone_ids, n_weeks))


def twin_counterfactual(spec: ScmSpec, trace: TrapTrace, intervention: Intervention,
                        week: int, n_weeks: int = 26) -> TwinOutcome:
    """Abduction-action-prediction on one trap.

    The stored noise tape is reused (abduction), the intervention is applied at
    the stated week (action), and the season re-rolls forward (prediction).
    Weeks strictly before the intervention week are identical by construction.
    """
    if not (1 <= week <= n_weeks):
        raise ScmError(f"week {week} outside 1..{n_weeks}")
    _validate_intervention(spec, intervention)
    if intervention.node in _SEASON_STATIC_NODES and week > 1:
        raise ScmError(
            f"{intervention.node} is fixed for the season and cannot switch at "
            f"week {week}; intervene at week 1 or use intervene() for a "
            f"season-level do")
    factual = replay_trap(spec, trace, n_weeks)
    counter = replay_trap(spec, trace, n_weeks, [(intervention, week, week)])
    return TwinOutcome(factual=factual, counterfactual=counter,
                       intervention=intervention, week=week)


# ---------------------------------------------------------------------------
# Ground-truth effects


@dataclass
class CellEffect:
    effect: float
    se: float
    n: int


@dataclass
class CateGrid:
    """Monte Carlo twin-world treatment effects on a covariate grid."""

    treatment: str
    columns: tuple[str, ...]
    edges: dict[str, np.ndarray]
    cells: dict[tuple[int, ...], CellEffect]
    n_mc: int
    omitted_cells: int

    def lookup(self, values: Mapping[str, float]) -> CellEffect | None:
        key = tuple(int(np.searchsorted(self.edges[c], values[c], side="right"))
                    for c in self.columns)
        return self.cells.get(key)


def spray_twin_effects(spec: ScmSpec, n_traps: int, n_weeks: int = 26,
                       n_zones: int = 4) -> dict[str, np.ndarray]:
    """One-step spray effects for every (trap, week) under shared noise.

    Spraying only affects the following week's count, so both potential
    outcomes are computable in one vectorized pass: re-run the population
    transition with the spray flag forced to 1 and to 0 while every other
    node keeps its factual value and noise draw.
    """
    trap_ids, zone_ids, tapes = _setup_block(spec, n_traps, n_weeks, n_zones)
    out = _simulate_block(spec, zone_ids, tapes, n_weeks, _IvSchedule(spec))
    wkY = np.stack([t.weekly["Y"][:n_weeks] for t in tapes])
    y_eq, y_noise = spec.equations["Y"], spec.noise["Y"]
    shape = out["Y"].shape
    ones, zeros = np.ones(shape[0]), np.zeros(shape[0])
    y1 = np.zeros((shape[0], n_weeks - 1))
    y0 = np.zeros((shape[0], n_weeks - 1))
    for i in range(n_weeks - 1):
        rest = (out["Pr"][:, i], out["SW"][:, i], out["M"][:, i], out["SG"],
                out["gen"][:, i], out["V"], out["CS"], out["AC"], wkY[:, i])
        y1[:, i] = _next_count(y_eq, y_noise, out["Y"][:, i], out["LC"][:, i],
                               out["PGS"][:, i], out["P"][:, i], ones, *rest)
        y0[:, i] = _next_count(y_eq, y_noise, out["Y"][:, i], out["LC"][:, i],
                               out["PGS"][:, i], out["P"][:, i], zeros, *rest)
    out["y_next_treated"] = y1
    out["y_next_control"] = y0
    return out


def ground_truth_cate(spec: ScmSpec, treatment: str, x_bins: Mapping[str, Sequence[float]],
                      n_mc: int, n_weeks: int = 26, n_zones: int = 4) -> CateGrid:
    """Exact conditional treatment effects by twin-world Monte Carlo.

    For every simulated (trap, week) pair the treated and untreated next-week
    counts are computed with shared noise; effects are aggregated per covariate
    grid cell with a standard error.  Empty cells are omitted and counted.
    """
    if treatment != "Sp":
        raise ScmError(f"treatment {treatment!r} is not a binary node of this model; use 'Sp'")
    out = spray_twin_effects(spec, n_mc, n_weeks, n_zones)
    effects = (out["y_next_treated"] - out["y_next_control"]).ravel()
    columns = tuple(sorted(x_bins))
    edges = {c: np.asarray(sorted(x_bins[c]), dtype=np.float64) for c in columns}
    idx_arrays = []
    for c in columns:
        vals = out["Y"][:, :-1] if c in ("Y", "pest_count") else out[c][:, :-1]
        idx_arrays.append(np.searchsorted(edges[c], vals.ravel(), side="right"))
    keys = np.stack(idx_arrays, axis=1)
    cells: dict[tuple[int, ...], CellEffect] = {}
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    for u_i, key in enumerate(uniq):
        sel = effects[inverse == u_i]
        se = float(sel.std(ddof=1) / np.sqrt(len(sel))) if len(sel) > 1 else 0.0
        cells[tuple(int(k) for k in key)] = CellEffect(effect=float(sel.mean()), se=se, n=len(sel))
    n_possible = int(np.prod([len(edges[c]) + 1 for c in columns]))
    return CateGrid(treatment=treatment, columns=columns, edges=edges, cells=cells,
                    n_mc=n_mc, omitted_cells=n_possible - len(cells))


# ---------------------------------------------------------------------------
# Advisory adherence experiment


@dataclass
class AdherenceExperiment:
    """Simulated advisory roll-out: who triggered, who adhered, and when."""

    dataset: Dataset
    adoption: dict[str, int]      # treated trap -> spray week
    triggers: dict[str, int]      # any trap that crossed the advisory trigger
    traces: dict[str, TrapTrace]
    trigger_count: float

    def triggered_dataset(self) -> Dataset:
        """Records restricted to traps that crossed the trigger.

        Never-triggered traps are not comparable controls: they never faced
        the spray decision, so they enter no evaluation panel.
        """
        keep = set(self.triggers)
        return Dataset(records=tuple(r for r in self.dataset.records if r.trap_id in keep),
                       zones=self.dataset.zones)


def simulate_adherence_experiment(spec: ScmSpec, n_traps: int, n_weeks: int = 26,
                                  n_zones: int = 4, trigger_count: float = 15.0,
                                  adhere_prob: float = 0.5) -> AdherenceExperiment:
    """Roll out spray-on-trigger advice with randomized adherence.

    The observational spray policy is disabled; a trap sprays exactly once, in
    the week its count first reaches ``trigger_count``, if and only if its
    (randomized) adherence draw says it follows advice.  Non-adherent traps
    record the same trigger week but never spray, giving a comparable control
    arm for difference-in-differences evaluation.
    """
    spec = replace(spec, policy=PolicyConfig(enabled=False))
    trap_ids, zone_ids, tapes = _setup_block(spec, n_traps, n_weeks, n_zones)
    advice = _AdviceParams(trigger_count=trigger_count, adhere_prob=adhere_prob)
    out = _simulate_block(spec, zone_ids, tapes, n_weeks, _IvSchedule(spec), advice=advice)
    records = _block_to_records(spec, out, trap_ids, zone_ids, n_weeks)
    adoption, triggers, traces = {}, {}, {}
    for j, tid in enumerate(trap_ids):
        adopt = int(out["adoption_week"][j])
        trig = int(out["trigger_week"][j])
        if trig > 0:
            triggers[tid] = trig
        if adopt > 0:
            adoption[tid] = adopt
        traces[tid] = TrapTrace(trap_id=tid, zone_id=int(zone_ids[j]), year=spec.year,
                                tape=tapes[j],
                                adoption_week=adopt if adopt > 0 else None,
                                trigger_week=trig if trig > 0 else None)
    return AdherenceExperiment(dataset=dataset_from_records(records), adoption=adoption,
                               triggers=triggers, traces=traces, trigger_count=trigger_count)


def adherence_true_att(spec: ScmSpec, exp: AdherenceExperiment, treated_units: Sequence[str],
                       post_window: int, n_weeks: int = 26) -> float:
    """Exact treated-unit effect of the advised spray by twin simulation.

    For each treated trap, replays its season with the adopted spray forced
    off, and averages factual-minus-counterfactual counts over the post window.
    """
    spec = replace(spec, policy=PolicyConfig(enabled=False))
    deltas = []
    for tid in treated_units:
        trace = exp.traces[tid]
        week = exp.adoption[tid]
        factual = replay_trap(spec, trace, n_weeks,
                              [(Intervention("Sp", 1.0, "set"), week, week)])
        counter = replay_trap(spec, trace, n_weeks,
                              [(Intervention("Sp", 0.0, "set"), week, week)])
        hi = min(week + post_window - 1, n_weeks)
        f = np.array([r.pest_count for r in factual[week - 1:hi]])
        c = np.array([r.pest_count for r in counter[week - 1:hi]])
        deltas.append(float(f.mean() - c.mean()))
    return float(np.mean(deltas))


# ---------------------------------------------------------------------------
# Spec serialization


def spec_to_json(spec: ScmSpec) -> str:
    doc = {
        "nodes": sorted(spec.graph.nodes),
        "edges": sorted([list(e) for e in spec.graph.edges]),
        "equations": {n: {"id": eq.id, "inputs": list(eq.inputs), "params": eq.params}
                      for n, eq in sorted(spec.equations.items())},
        "noise": {n: {"family": ns.family, "params": ns.params}
                  for n, ns in sorted(spec.noise.items())},
        "zones": [vars(z) for z in spec.zones],
        "policy": vars(spec.policy),
        "statics": vars(spec.statics),
        "seed": spec.seed,
        "year": spec.year,
        "interventions": [{"node": iv.node, "value": iv.value, "mode": iv.mode}
                          for iv in spec.interventions],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def spec_from_json(text: str) -> ScmSpec:
    doc = json.loads(text)
    graph = CausalGraph(nodes=frozenset(doc["nodes"]),
                        edges=frozenset(tuple(e) for e in doc["edges"]))
    equations = {n: EquationSpec(d["id"], tuple(d["inputs"]), d["params"])
                 for n, d in doc["equations"].items()}
    noise = {n: NoiseSpec(d["family"], d["params"]) for n, d in doc["noise"].items()}
    zones = tuple(ZoneConfig(**z) for z in doc["zones"])
    return ScmSpec(graph=graph, equations=equations, noise=noise, zones=zones,
                   seed=doc["seed"], policy=PolicyConfig(**doc["policy"]),
                   statics=StaticsConfig(**doc["statics"]), year=doc["year"],
                   interventions=tuple(Intervention(**iv) for iv in doc["interventions"]))


def save_spec(spec: ScmSpec, path: str | Path) -> None:
    Path(path).write_text(spec_to_json(spec))


def load_spec(path: str | Path) -> ScmSpec:
    return spec_from_json(Path(path).read_text())
