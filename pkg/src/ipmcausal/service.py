"""Read-only HTTP JSON API over a trained model bundle.

The service wraps immutable artifacts (presence model bundle, optional CATE
model and evaluation result) behind stateless endpoints; training stays on the
command line.  Malformed bodies get 400, model-domain violations 422, numeric
failures 500.
"""

from __future__ import annotations

import json
from typing import Mapping

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response

from . import counterfactual as cfx
from . import ebm
from . import effects as eff
from .pipeline import ModelBundle


class DomainError(ValueError):
    """Request is well-formed JSON but violates the model's domain."""


def _client_features(bundle: ModelBundle, body: Mapping) -> dict:
    if not isinstance(body, Mapping) or "features" not in body:
        raise DomainError("body must carry a 'features' object")
    features = body["features"]
    if not isinstance(features, Mapping):
        raise DomainError("'features' must be an object")
    cleaned = {}
    for name in bundle.model.feature_order:
        if name not in features:
            raise DomainError(f"missing feature {name!r}")
        meta = bundle.feature_meta[name]
        value = features[name]
        if meta["kind"] == "categorical":
            cleaned[name] = str(value)
        else:
            try:
                cleaned[name] = float(value)
            except (TypeError, ValueError):
                raise DomainError(f"feature {name!r} must be numeric") from None
    return cleaned


def _parse_constraints(bundle: ModelBundle, doc: Mapping | None) -> cfx.ActionabilityConstraints:
    base = bundle.default_constraints()
    if not doc:
        return base
    immutable = frozenset(doc.get("immutable", sorted(base.immutable)))
    bounds = {k: (float(lo), float(hi)) for k, (lo, hi) in doc.get("bounds", base.bounds).items()}
    step = {k: float(v) for k, v in doc.get("step", base.step).items()}
    cat = {k: tuple(v) for k, v in doc.get("categorical_allowed",
                                           base.categorical_allowed).items()}
    try:
        return cfx.ActionabilityConstraints(immutable=immutable, bounds=bounds, step=step,
                                            categorical_allowed=cat, notes=base.notes)
    except cfx.CounterfactualError as exc:
        raise DomainError(str(exc)) from None


def create_app(bundle: ModelBundle, cate_model: eff.CateModel | None = None,
               did_result_json: str | None = None,
               global_report_json: str | None = None) -> FastAPI:
    app = FastAPI(title="ipmcausal advisor", docs_url=None, redoc_url=None)
    global_json = global_report_json or ebm.explain_global(bundle.model).to_json()

    @app.exception_handler(RequestValidationError)
    async def _malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"error": "malformed body", "detail": str(exc.errors())})

    @app.exception_handler(DomainError)
    async def _domain(request: Request, exc: DomainError):
        return JSONResponse(status_code=422,
                            content={"error": "domain violation", "detail": str(exc)})

    @app.exception_handler(Exception)
    async def _internal(request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": "internal error", "detail": str(exc)})

    async def _read_json(request: Request) -> Mapping:
        try:
            return json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise RequestValidationError([{"body": f"invalid JSON: {exc}"}]) from None

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/meta")
    async def meta():
        return {
            "features": bundle.feature_meta,
            "feature_order": list(bundle.model.feature_order),
            "threshold": bundle.threshold,
            "immutable": sorted(n for n, m in bundle.feature_meta.items() if m["immutable"]),
            "provenance": {"config_hash": bundle.config_hash, "data_hash": bundle.data_hash},
        }

    @app.post("/predict")
    async def predict(request: Request):
        body = await _read_json(request)
        x = _client_features(bundle, body)
        explanation = ebm.explain_local(bundle.model, x)
        return {
            "probability": explanation.probability,
            "logit": explanation.logit,
            "intercept": explanation.intercept,
            "contributions": explanation.contributions,
            "predicted_class": int(explanation.probability >= bundle.threshold),
            "unseen_levels": list(explanation.unseen_levels),
        }

    @app.post("/counterfactuals")
    async def counterfactuals(request: Request):
        body = await _read_json(request)
        x = _client_features(bundle, body)
        k = int(body.get("k", 3))
        constraints = _parse_constraints(bundle, body.get("constraints"))
        config = cfx.CfConfig(restarts=int(body.get("restarts", 64)))
        try:
            result = cfx.generate_counterfactuals(bundle.model, x, k, constraints,
                                                  bundle.scales, config,
                                                  threshold=bundle.threshold)
        except cfx.CounterfactualError as exc:
            raise DomainError(str(exc)) from None
        return Response(content=result.to_json(), media_type="application/json")

    @app.get("/explanations/global")
    async def explanations_global():
        return Response(content=global_json, media_type="application/json")

    @app.post("/cate")
    async def cate(request: Request):
        if cate_model is None:
            return JSONResponse(status_code=404,
                                content={"error": "not found",
                                         "detail": "no treatment-effect model loaded"})
        body = await _read_json(request)
        covs = body.get("covariates")
        if not isinstance(covs, Mapping):
            raise DomainError("body must carry a 'covariates' object")
        try:
            effect = eff.estimate_cate(cate_model, dict(covs))
        except eff.EffectsError as exc:
            raise DomainError(str(exc)) from None
        return {"effect": effect, "treatment": cate_model.treatment,
                "learner": cate_model.learner_kind}

    @app.get("/evaluation/did")
    async def evaluation_did():
        if did_result_json is None:
            return JSONResponse(status_code=404,
                                content={"error": "not found",
                                         "detail": "no evaluation has been run"})
        return Response(content=did_result_json, media_type="application/json")

    return app
