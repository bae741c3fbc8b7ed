"""Command-line interface: one subcommand per pipeline stage.

Every subcommand reads the pipeline config, writes its artifacts, and prints a
single JSON line to stdout.  Exit codes: 0 success, 1 usage, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import counterfactual as cfx
from . import datamodel as dm
from . import ebm
from . import effects as eff
from . import invariant as inv
from . import scm
from . import pipeline as pl

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (dm.DataError, scm.ScmError, pl.PipelineError, OSError,
                json.JSONDecodeError, KeyError)
_NUMERIC_ERRORS = (inv.InvariantError, ebm.EbmError, eff.EffectsError,
                   cfx.CounterfactualError, FloatingPointError, ZeroDivisionError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we reserve 2 for data errors
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ipmcausal", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="pipeline config JSON")
        return p

    p = add("simulate", "sample a synthetic trap dataset")
    p.add_argument("--traps", type=int, default=None)
    p.add_argument("--weeks", type=int, default=None)
    p.add_argument("--zones", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add("summarize", "per-year trap-network summary of a CSV")
    p.add_argument("--data", required=True)

    p = add("train-ebm", "train the presence classifier and write a bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)

    p = add("train-irm", "fit the invariant linear predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)

    p = add("run-icp", "invariant causal prediction subset search")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)

    p = add("advise", "counterfactual advice for one field state")
    p.add_argument("--bundle", required=True)
    p.add_argument("--input", required=True, help="JSON file with a 'features' object")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", default=None)

    p = add("cate", "fit the treatment-effect meta-learner")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)

    p = add("evaluate-did", "adherence roll-out and difference-in-differences")
    p.add_argument("--out", default=None)

    p = add("serve", "run the advisor HTTP service")
    p.add_argument("--bundle", required=True)
    p.add_argument("--cate-model", default=None)
    p.add_argument("--did", default=None)
    p.add_argument("--global-report", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    return parser


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _load_table(config: pl.PipelineConfig, data_path: str) -> dm.SupervisedTable:
    dataset = dm.load_csv(data_path)
    sup = config["supervised"]
    return dm.make_supervised(dataset, presence_threshold=sup["presence_threshold"],
                              forecast_sigma=sup["forecast_sigma"], seed=config.seed)


def _cmd_simulate(args, config: pl.PipelineConfig) -> dict:
    sim = config["simulator"]
    spec = pl.build_spec(config)
    n_traps = args.traps or sim["n_traps"]
    n_weeks = args.weeks or sim["n_weeks"]
    n_zones = args.zones or sim["n_zones"]
    dataset = scm.simulate(spec, n_traps, n_weeks, n_zones)
    out = Path(args.out) if args.out else config.path("data_dir") / "simulated.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    dm.save_csv(dataset, out)
    return {"path": str(out), "rows": len(dataset), "traps": n_traps,
            "weeks": n_weeks, "zones": n_zones, "seed": config.seed}


def _cmd_summarize(args, config) -> dict:
    rows = dm.summarize(dm.load_csv(args.data))
    return {"summary": [vars(r) for r in rows]}


def _cmd_train_ebm(args, config: pl.PipelineConfig) -> dict:
    table = _load_table(config, args.data)
    data_hash = pl._sha256(table.frame.to_csv(index=False, float_format="%.10g"))
    bundle, report = pl.train_presence_model(config, table, data_hash)
    out = Path(args.out) if args.out else config.path("models_dir") / "bundle.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    pl.save_bundle(bundle, out)
    global_path = out.parent / "global_report.json"
    global_path.write_text(ebm.explain_global(bundle.model).to_json())
    report.update({"bundle": str(out), "global_report": str(global_path)})
    return report


def _cmd_train_irm(args, config: pl.PipelineConfig) -> dict:
    table = _load_table(config, args.data)
    icp_cfg = config["icp"]
    features = list(icp_cfg["base_cols"]) + list(icp_cfg["candidates"])
    irm_cfg = config["irm"]
    model = inv.fit_irm(table.frame, features, table.log_target_col,
                        epochs=irm_cfg["epochs"], lr=irm_cfg["lr"])
    out = Path(args.out) if args.out else config.path("models_dir") / "irm.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(model.to_json())
    return {"out": str(out), "final_penalty": model.penalty_per_epoch[-1],
            "weights": dict(sorted(model.weights.items()))}


def _cmd_run_icp(args, config: pl.PipelineConfig) -> dict:
    table = _load_table(config, args.data)
    icp_cfg = config["icp"]
    res = inv.fit_icp(table.frame, icp_cfg["candidates"], table.log_target_col,
                      alpha=icp_cfg["alpha"], max_subset_size=icp_cfg["max_subset_size"],
                      base_cols=tuple(icp_cfg["base_cols"]))
    out = Path(args.out) if args.out else config.path("models_dir") / "icp.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(res.to_json())
    return {"out": str(out), "intersection": list(res.intersection),
            "n_accepted": len(res.accepted_sets),
            "model_class_rejected": res.model_class_rejected}


def _cmd_advise(args, config: pl.PipelineConfig) -> dict:
    bundle = pl.load_bundle(args.bundle)
    body = json.loads(Path(args.input).read_text())
    features = body["features"] if "features" in body else body
    x = {}
    for name in bundle.model.feature_order:
        if name not in features:
            raise dm.DataError(f"input is missing feature {name!r}")
        meta = bundle.feature_meta[name]
        x[name] = str(features[name]) if meta["kind"] == "categorical" else float(features[name])
    cf_cfg = config["counterfactual"]
    constraints = bundle.default_constraints()
    result = cfx.generate_counterfactuals(
        bundle.model, x, args.k, constraints, bundle.scales,
        cfx.CfConfig(lambda_prox=cf_cfg["lambda_prox"], lambda_div=cf_cfg["lambda_div"],
                     restarts=cf_cfg["restarts"], seed=config.seed),
        threshold=bundle.threshold)
    doc = json.loads(result.to_json())
    if args.out:
        Path(args.out).write_text(result.to_json())
        doc["out"] = args.out
    return doc


def _cmd_cate(args, config: pl.PipelineConfig) -> dict:
    table = _load_table(config, args.data)
    model, report = pl.run_cate_stage(config, table)
    out = Path(args.out) if args.out else config.path("models_dir") / "cate.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(model.to_json())
    report["out"] = str(out)
    return report


def _cmd_evaluate_did(args, config: pl.PipelineConfig) -> dict:
    spec = pl.build_spec(config)
    report = pl.run_effects_stage(config, spec)
    out = Path(args.out) if args.out else config.path("outputs_dir") / "did.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report["did"], indent=2, sort_keys=True))
    return {"out": str(out), "att": report["did"]["att"], "ci95": report["did"]["ci95"],
            "twin_world_delta": report["twin_world_delta"],
            "ci95_covers_twin_delta": report["ci95_covers_twin_delta"]}


def _cmd_serve(args, config: pl.PipelineConfig) -> dict:
    import uvicorn

    from .service import create_app

    bundle = pl.load_bundle(args.bundle)
    cate_model = eff.cate_from_json(Path(args.cate_model).read_text()) if args.cate_model else None
    did_json = Path(args.did).read_text() if args.did else None
    global_json = Path(args.global_report).read_text() if args.global_report else None
    app = create_app(bundle, cate_model, did_json, global_json)
    host = args.host or config["service"]["host"]
    port = args.port or config["service"]["port"]
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return {"status": "stopped"}


_COMMANDS = {
    "simulate": _cmd_simulate,
    "summarize": _cmd_summarize,
    "train-ebm": _cmd_train_ebm,
    "train-irm": _cmd_train_irm,
    "run-icp": _cmd_run_icp,
    "advise": _cmd_advise,
    "cate": _cmd_cate,
    "evaluate-did": _cmd_evaluate_did,
    "serve": _cmd_serve,
}


def cli_dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(parser.format_usage(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not args.command:
        print(parser.format_usage(), file=sys.stderr)
        return EXIT_USAGE
    try:
        config = pl.load_config(args.config)
        result = _COMMANDS[args.command](args, config)
    except _DATA_ERRORS as exc:
        print(json.dumps({"error": "data error", "detail": str(exc)}), file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(json.dumps({"error": "numeric failure", "detail": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    _emit(result)
    return EXIT_OK


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
