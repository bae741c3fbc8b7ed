"""Pipeline configuration, model bundles with provenance, and the end-to-end run.

A single JSON config drives every stage; the reproducibility contract is that
``run_pipeline`` with a fixed seed regenerates a byte-identical report.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from . import counterfactual as cfx
from . import datamodel as dm
from . import ebm
from . import effects as eff
from . import invariant as inv
from . import scm


class PipelineError(ValueError):
    """Raised for unresolvable configs or corrupted artifacts."""


_DEFAULT_CONFIG: dict = {
    "seed": 0,
    "paths": {"data_dir": "data", "models_dir": "models", "outputs_dir": "outputs"},
    "simulator": {"n_traps": 300, "n_weeks": 26, "n_zones": 4,
                  "y_equation": "multiplicative", "spray_policy": True,
                  "spray_efficacy": 0.6, "spec_path": None},
    "supervised": {"presence_threshold": 10, "forecast_sigma": 0.0},
    "ebm": {"rounds": 300, "lr": 0.05, "max_bins": 16, "bag_count": 8},
    "irm": {"epochs": 800, "lr": 0.01},
    "icp": {"alpha": 0.05, "max_subset_size": 8,
            "candidates": ["T", "SW", "RHa", "Pr", "W", "SOI", "S", "LC", "P", "SG", "M", "Sp"],
            "base_cols": ["Y_log"]},
    "counterfactual": {"k": 3, "restarts": 64, "lambda_prox": 1.0, "lambda_div": 0.5,
                       "threshold": 0.5, "max_candidates": 25},
    "effects": {"trigger_count": 40.0, "adhere_prob": 0.5, "window_pre": 4,
                "window_post": 4, "n_boot": 1000, "n_traps": 800,
                "cate_covariates": ["Y", "T", "LC", "PGS", "P", "SW", "Pr", "week"],
                "cate_rounds": 400, "cate_max_bins": 32},
    "service": {"host": "127.0.0.1", "port": 8000},
}

_ENV_OVERRIDES = {
    "IPM_SEED": (("seed",), int),
    "IPM_DATA_DIR": (("paths", "data_dir"), str),
    "IPM_MODELS_DIR": (("paths", "models_dir"), str),
    "IPM_OUTPUTS_DIR": (("paths", "outputs_dir"), str),
    "IPM_HOST": (("service", "host"), str),
    "IPM_PORT": (("service", "port"), int),
    "IPM_THRESHOLD": (("counterfactual", "threshold"), float),
}


def _deep_merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path)

    def __getitem__(self, key: str):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def path(self, which: str) -> Path:
        p = Path(self.raw["paths"][which])
        return p if p.is_absolute() else self.base_dir / p

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> PipelineConfig:
    """Defaults <- config file <- IPM_* environment variables <- explicit overrides."""
    raw = dict(_DEFAULT_CONFIG)
    base_dir = Path()
    if path is not None:
        path = Path(path)
        try:
            file_doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise PipelineError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise PipelineError(f"config file {path} is not valid JSON: {exc}") from None
        raw = _deep_merge(raw, file_doc)
        base_dir = path.parent
    for env, (keys, cast) in _ENV_OVERRIDES.items():
        if env in os.environ:
            node = raw
            for key in keys[:-1]:
                node = node[key]
            node[keys[-1]] = cast(os.environ[env])
    if overrides:
        raw = _deep_merge(raw, overrides)
    return PipelineConfig(raw=raw, base_dir=base_dir)


def build_spec(config: PipelineConfig) -> scm.ScmSpec:
    sim = config["simulator"]
    if sim.get("spec_path"):
        return scm.load_spec(config.base_dir / sim["spec_path"])
    spec = scm.default_spec(seed=config.seed, y_equation=sim["y_equation"],
                            spray_policy=sim["spray_policy"],
                            spray_efficacy=sim["spray_efficacy"])
    return spec


# ---------------------------------------------------------------------------
# Model bundle


@dataclass
class ModelBundle:
    model: ebm.EbmModel
    scales: dict[str, float]
    threshold: float
    feature_meta: dict[str, dict]
    config_hash: str
    data_hash: str
    created: str = ""

    def default_constraints(self) -> cfx.ActionabilityConstraints:
        immutable = {n for n, meta in self.feature_meta.items() if meta["immutable"]}
        bounds = {}
        step = {}
        for name, meta in self.feature_meta.items():
            if meta["kind"] == "continuous" and not meta["immutable"]:
                bounds[name] = tuple(meta["bounds"])
                if meta.get("step"):
                    step[name] = meta["step"]
        notes = {n: meta["note"] for n, meta in self.feature_meta.items() if meta.get("note")}
        return cfx.ActionabilityConstraints(immutable=frozenset(immutable), bounds=bounds,
                                            step=step, notes=notes)


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _bundle_payload(bundle: ModelBundle) -> dict:
    return {
        "model": json.loads(ebm.ebm_to_json(bundle.model)),
        "scales": dict(sorted(bundle.scales.items())),
        "threshold": bundle.threshold,
        "feature_meta": {k: bundle.feature_meta[k] for k in sorted(bundle.feature_meta)},
        "config_hash": bundle.config_hash,
        "data_hash": bundle.data_hash,
    }


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    payload = _bundle_payload(bundle)
    doc = dict(payload)
    doc["bundle_hash"] = _sha256(json.dumps(payload, sort_keys=True))
    doc["created"] = bundle.created or datetime.now(timezone.utc).isoformat()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_bundle(path: str | Path) -> ModelBundle:
    """Load and verify a bundle; any payload tampering fails the hash check."""
    doc = json.loads(Path(path).read_text())
    stored = doc.pop("bundle_hash", None)
    created = doc.pop("created", "")
    recomputed = _sha256(json.dumps(doc, sort_keys=True))
    if stored != recomputed:
        raise PipelineError(f"bundle {path}: provenance hash mismatch")
    return ModelBundle(model=ebm.ebm_from_json(json.dumps(doc["model"])),
                       scales=doc["scales"], threshold=doc["threshold"],
                       feature_meta=doc["feature_meta"], config_hash=doc["config_hash"],
                       data_hash=doc["data_hash"], created=created)


def make_bundle(table: dm.SupervisedTable, model: ebm.EbmModel, threshold: float,
                config_hash: str, data_hash: str) -> ModelBundle:
    scales = cfx.compute_scales(table.frame,
                                [c for c in model.feature_order
                                 if c not in table.categorical_cols])
    weather = set(cfx.PEST_WEATHER_FIELDS)
    locked = set(cfx.PEST_IMMUTABLE_DEFAULTS) | weather
    meta: dict[str, dict] = {}
    for name in model.feature_order:
        fb = model.bin_map.features[name]
        entry: dict = {"kind": fb.kind, "immutable": name in locked,
                       "note": "forecast-conditioned, not actionable" if name in weather else ""}
        if fb.kind == "categorical":
            entry["levels"] = list(fb.levels)
        else:
            entry["bounds"] = [fb.train_min, fb.train_max]
        if name == "Sp":
            entry["bounds"] = [0.0, 1.0]
            entry["step"] = 1.0
        if name == "SW":
            entry["bounds"] = [0.0, 1.0]
            entry["step"] = 0.05
        meta[name] = entry
    return ModelBundle(model=model, scales=scales, threshold=threshold,
                       feature_meta=meta, config_hash=config_hash, data_hash=data_hash)


# ---------------------------------------------------------------------------
# Stages


def train_test_split(table: dm.SupervisedTable, holdout_fraction: float = 0.25
                     ) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Deterministic split by trap id (whole traps, never rows)."""
    traps = sorted(table.frame["trap_id"].unique())
    n_hold = max(1, int(len(traps) * holdout_fraction))
    holdout_ids = set(traps[-n_hold:])
    mask = table.frame["trap_id"].isin(holdout_ids)
    return table.frame[~mask], table.frame[mask]


def train_presence_model(config: PipelineConfig, table: dm.SupervisedTable,
                         data_hash: str) -> tuple[ModelBundle, dict]:
    e = config["ebm"]
    cfg = ebm.EbmConfig(rounds=e["rounds"], lr=e["lr"], max_bins=e["max_bins"],
                        bag_count=e["bag_count"], seed=config.seed)
    train, hold = train_test_split(table)
    model = ebm.fit_ebm(train, table.ebm_cols, table.label_col,
                        categorical=table.categorical_cols, config=cfg)
    metrics = ebm.evaluate_classifier(model, hold, table.label_col)
    bundle = make_bundle(table, model, config["counterfactual"]["threshold"],
                         config_hash=_sha256(config.to_json()), data_hash=data_hash)
    report = {"holdout_auc": metrics.auc, "holdout_log_loss": metrics.log_loss,
              "holdout_accuracy": metrics.accuracy, "n_train": len(train), "n_holdout": len(hold)}
    return bundle, report


def run_invariant_stage(config: PipelineConfig, table: dm.SupervisedTable) -> dict:
    icp_cfg = config["icp"]
    frame = table.frame
    res = inv.fit_icp(frame, icp_cfg["candidates"], table.log_target_col,
                      alpha=icp_cfg["alpha"], max_subset_size=icp_cfg["max_subset_size"],
                      base_cols=tuple(icp_cfg["base_cols"]))
    parents = {"SG", "Pr", "SW", "P", "LC", "PGS", "M", "Sp",
               "V_bt", "CS_rot", "AC_cotton", "AC_other"}
    features = list(icp_cfg["base_cols"]) + list(icp_cfg["candidates"])
    irm_cfg = config["irm"]
    irm_model = inv.fit_irm(frame, features, table.log_target_col,
                            epochs=irm_cfg["epochs"], lr=irm_cfg["lr"])
    pooled = inv.fit_pooled_ols(frame, features, table.log_target_col)
    restricted = inv.fit_pooled_ols(frame, list(icp_cfg["base_cols"]) + list(res.intersection),
                                    table.log_target_col)
    risks = inv.ood_evaluate({"irm": irm_model, "pooled_ols": pooled,
                              "icp_restricted_ols": restricted},
                             frame, table.log_target_col)
    return {
        "icp": json.loads(res.to_json()),
        "icp_intersection_subset_of_parents": set(res.intersection) <= parents,
        "worst_env_mse": risks.worst,
        "per_env_mse": {m: {str(k): v for k, v in d.items()} for m, d in risks.per_env.items()},
        "irm_final_penalty": irm_model.penalty_per_epoch[-1],
    }


def advise_example(config: PipelineConfig, bundle: ModelBundle,
                   holdout: pd.DataFrame) -> dict:
    """Pick a held-out field predicted at risk and generate spray/irrigation advice."""
    cf_cfg = config["counterfactual"]
    constraints = bundle.default_constraints()
    threshold = bundle.threshold
    probs = ebm.predict_proba_frame(bundle.model, holdout)
    order = np.argsort(np.abs(probs - (threshold + 0.1)))
    search_cfg = cfx.CfConfig(lambda_prox=cf_cfg["lambda_prox"], lambda_div=cf_cfg["lambda_div"],
                              restarts=cf_cfg["restarts"], seed=config.seed)
    tried = 0
    fallback = None
    for i in order:
        if probs[i] < threshold:
            continue
        row = {k: holdout.iloc[int(i)][k] for k in bundle.model.feature_order}
        row = {k: (v if isinstance(v, str) else float(v)) for k, v in row.items()}
        result = cfx.generate_counterfactuals(bundle.model, row, cf_cfg["k"], constraints,
                                              bundle.scales, search_cfg, threshold)
        tried += 1
        if not result.best_effort:
            return {"query_probability": float(probs[i]), "tried": tried,
                    "set": json.loads(result.to_json())}
        if fallback is None and result.items:
            fallback = {"query_probability": float(probs[i]), "tried": tried,
                        "set": json.loads(result.to_json())}
        if tried >= cf_cfg["max_candidates"]:
            break
    return fallback or {"tried": tried, "set": None}


def run_effects_stage(config: PipelineConfig, spec: scm.ScmSpec) -> dict:
    e = config["effects"]
    exp = scm.simulate_adherence_experiment(spec, e["n_traps"],
                                            trigger_count=e["trigger_count"],
                                            adhere_prob=e["adhere_prob"])
    panel = eff.build_panel(exp.triggered_dataset(), exp.adoption,
                            window=(e["window_pre"], e["window_post"]),
                            alignment=exp.triggers)
    did = eff.estimate_att_did(panel, n_boot=e["n_boot"], seed=config.seed)
    delta = scm.adherence_true_att(spec, exp, sorted(panel.treated),
                                   post_window=e["window_post"])
    return {
        "did": json.loads(did.to_json()),
        "twin_world_delta": delta,
        "ci95_covers_twin_delta": bool(did.ci95[0] <= delta <= did.ci95[1]),
        "n_triggered": len(exp.triggers),
        "panel_units": len(panel.units),
        "panel_dropped": len(panel.dropped),
    }


def run_cate_stage(config: PipelineConfig, table: dm.SupervisedTable) -> tuple[eff.CateModel, dict]:
    e = config["effects"]
    covs = e["cate_covariates"]
    base = ebm.EbmConfig(rounds=e["cate_rounds"], lr=0.05, bag_count=4,
                         max_bins=e["cate_max_bins"], seed=config.seed)
    model = eff.fit_cate(table.frame, "Sp", covs, learner_kind="t",
                         base_config=base, target=table.target_col)
    taus = eff.estimate_cate_frame(model, table.frame)
    return model, {"mean_effect": float(taus.mean()),
                   "effect_quartiles": [float(q) for q in np.percentile(taus, [25, 50, 75])]}


def run_pipeline(config: PipelineConfig, write_artifacts: bool = False) -> dict:
    """simulate -> train (ebm, irm, icp) -> advise -> adherence roll-out -> evaluate.

    The returned report is a plain JSON document, reproducible bit-for-bit
    from the config (no timestamps, all randomness seeded).
    """
    spec = build_spec(config)
    sim = config["simulator"]
    dataset = scm.simulate(spec, sim["n_traps"], sim["n_weeks"], sim["n_zones"])
    sup = config["supervised"]
    table = dm.make_supervised(dataset, presence_threshold=sup["presence_threshold"],
                               forecast_sigma=sup["forecast_sigma"], seed=config.seed)
    data_hash = _sha256(table.frame.to_csv(index=False, float_format="%.10g"))

    summary = [vars(r) for r in dm.summarize(dataset)]
    bundle, ebm_report = train_presence_model(config, table, data_hash)
    invariant_report = run_invariant_stage(config, table)
    _, holdout = train_test_split(table)
    advice = advise_example(config, bundle, holdout)
    cate_model, cate_report = run_cate_stage(config, table)
    effects_report = run_effects_stage(config, spec)

    report = {
        "seed": config.seed,
        "config_hash": _sha256(config.to_json()),
        "data_hash": data_hash,
        "dataset": {"records": len(dataset), "zones": len(dataset.zones),
                    "summary": summary},
        "presence_model": ebm_report,
        "invariant": invariant_report,
        "advice_example": advice,
        "cate": cate_report,
        "effects": effects_report,
    }
    if write_artifacts:
        out_dir = config.path("outputs_dir")
        models_dir = config.path("models_dir")
        data_dir = config.path("data_dir")
        for d in (out_dir, models_dir, data_dir):
            d.mkdir(parents=True, exist_ok=True)
        dm.save_csv(dataset, data_dir / "simulated.csv")
        save_bundle(bundle, models_dir / "bundle.json")
        (models_dir / "cate.json").write_text(cate_model.to_json())
        (models_dir / "global_report.json").write_text(
            ebm.explain_global(bundle.model).to_json())
        (out_dir / "report.json").write_text(report_to_json(report))
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
