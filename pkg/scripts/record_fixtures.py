"""Record service responses as fixtures for the advisor UI's contract tests.

Trains the default pipeline artifacts, finds a held-out field whose risk
prediction has a valid counterfactual, and snapshots every endpoint payload
the UI consumes.  The fixtures are committed so the frontend test suite runs
without the primary build.
"""

import json
import sys
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from ipmcausal import counterfactual as cfx
from ipmcausal import datamodel as dm
from ipmcausal import ebm
from ipmcausal import effects as eff
from ipmcausal import pipeline as pl
from ipmcausal import scm
from ipmcausal.service import create_app

OUT = Path(__file__).resolve().parent.parent / "frontend" / "fixtures"


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    config = pl.load_config()
    spec = pl.build_spec(config)
    sim = config["simulator"]
    dataset = scm.simulate(spec, sim["n_traps"], sim["n_weeks"], sim["n_zones"])
    sup = config["supervised"]
    table = dm.make_supervised(dataset, presence_threshold=sup["presence_threshold"],
                               forecast_sigma=sup["forecast_sigma"], seed=config.seed)
    data_hash = pl._sha256(table.frame.to_csv(index=False, float_format="%.10g"))
    bundle, _ = pl.train_presence_model(config, table, data_hash)
    cate_model, _ = pl.run_cate_stage(config, table)
    effects_report = pl.run_effects_stage(config, spec)
    did_json = json.dumps(effects_report["did"], indent=2, sort_keys=True)
    app = create_app(bundle, cate_model, did_json)
    client = TestClient(app)

    _, holdout = pl.train_test_split(table)
    probs = ebm.predict_proba_frame(bundle.model, holdout)
    order = np.argsort(np.abs(probs - 0.62))
    chosen = None
    for i in order:
        if probs[i] < bundle.threshold:
            continue
        row = holdout.iloc[int(i)]
        features = {k: (row[k] if isinstance(row[k], str) else float(row[k]))
                    for k in bundle.model.feature_order}
        res = client.post("/counterfactuals", json={"features": features, "k": 3})
        if res.status_code != 200:
            continue
        doc = res.json()
        if doc["items"] and not doc["best_effort"]:
            chosen = (features, doc)
            break
        if doc["items"] and chosen is None:
            chosen = (features, doc)
    if chosen is None:
        print("no valid counterfactual found; aborting", file=sys.stderr)
        return 1
    features, cf_doc = chosen

    predict_before = client.post("/predict", json={"features": features}).json()
    applied = dict(features)
    applied.update(cf_doc["items"][0]["features"])
    predict_after = client.post("/predict", json={"features": applied}).json()
    assert predict_before["predicted_class"] != predict_after["predicted_class"]

    covs = {c: float(table.frame[c].median()) for c in cate_model.covariates}
    fixtures = {
        "meta.json": client.get("/meta").json(),
        "field_state.json": {"features": features},
        "predict_present.json": predict_before,
        "counterfactuals.json": cf_doc,
        "predict_after_cf.json": predict_after,
        "global.json": client.get("/explanations/global").json(),
        "did.json": client.get("/evaluation/did").json(),
        "cate_request.json": {"covariates": covs},
        "cate.json": client.post("/cate", json={"covariates": covs}).json(),
    }
    for name, doc in fixtures.items():
        (OUT / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {OUT / name}")
    print(f"class before {predict_before['predicted_class']} -> after "
          f"{predict_after['predicted_class']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
