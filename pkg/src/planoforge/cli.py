"""``planoforge`` command line: thin adapters over the library.

Every command accepts ``--json``.  Failures exit nonzero and print a single
JSON line ``{"error": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .constraints import load_constraints, rates_from_outcomes, validate
from .corpus import CorpusConfig, generate_corpus, read_dataset, write_dataset
from .diffusion import (
    DenoiserConfig,
    TrainConfig,
    dequantize,
    load_checkpoint,
    quantize,
    sample,
    save_checkpoint,
    schedule_for,
    train,
    version_id,
)
from .domain import load_catalog, load_fixture, load_planograms_jsonl, planogram_from_dict, save_planograms_jsonl
from .edgesim import (
    LatencyModel,
    LoadScenario,
    load_json,
    poisson_scenario,
    render_table2,
    run_load,
    table2,
)
from .evaluation import build_report
from .pipeline import sampling_report

log = logging.getLogger("planoforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(args, payload: dict, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return obj


def _dataset_parts(args):
    """Catalog and constraints from ``--data`` or the explicit file flags."""
    catalog = constraints = None
    if args.data:
        d = Path(args.data)
        catalog = load_catalog(d / "catalog.csv")
        constraints = load_constraints(d / "constraints.json")
    if getattr(args, "catalog", None):
        catalog = load_catalog(args.catalog)
    if getattr(args, "constraints", None):
        constraints = load_constraints(args.constraints)
    if catalog is None or constraints is None:
        raise UsageError("need --data DIR or both --catalog and --constraints")
    return catalog, constraints


def _load_planograms(path: str):
    p = Path(path)
    if p.suffix == ".jsonl":
        return load_planograms_jsonl(p)
    obj = json.loads(p.read_text(encoding="utf-8"))
    return [planogram_from_dict(o) for o in (obj if isinstance(obj, list) else [obj])]


# ----------------------------------------------------------------------------
# commands


def cmd_corpus_gen(args) -> None:
    cfg = CorpusConfig.from_dict(_read_config(args.config))
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    if args.stores is not None:
        cfg = replace(cfg, store_count=args.stores)
    if args.per_store is not None:
        cfg = replace(cfg, planograms_per_store=args.per_store)
    ds = generate_corpus(cfg)
    out = write_dataset(ds, args.out)
    _emit(args, {"out": str(out), "planograms": len(ds.planograms), "catalog": len(ds.catalog)},
          f"wrote {len(ds.planograms)} planograms and a {len(ds.catalog)}-product catalog to {out}")


def cmd_train(args) -> None:
    raw = _read_config(args.config)
    model_cfg = DenoiserConfig.from_dict(raw.pop("model")) if "model" in raw else DenoiserConfig()
    cfg = TrainConfig(**raw)
    overrides = {k: v for k, v in (("steps", args.steps), ("lambda1", args.lambda1), ("lambda2", args.lambda2),
                                   ("T", args.T), ("batch_size", args.batch_size), ("rng_seed", args.seed))
                 if v is not None}
    cfg = replace(cfg, **overrides)
    ds = read_dataset(args.data)
    start = time.perf_counter()
    model, history = train(ds, cfg, model_cfg, log_every=args.log_every)
    size = save_checkpoint(model, args.out, args.dtype)
    payload = {
        "out": args.out,
        "bytes": size,
        "steps": cfg.steps,
        "seconds": round(time.perf_counter() - start, 3),
        "final": history[-1].as_dict() if history else None,
        "version": version_id(Path(args.out).read_bytes()),
    }
    if args.history:
        Path(args.history).write_text(
            "\n".join(json.dumps(h.as_dict()) for h in history) + ("\n" if history else ""), encoding="utf-8"
        )
    _emit(args, payload, f"trained {cfg.steps} steps in {payload['seconds']}s -> {args.out} ({size} bytes)")


def cmd_sample(args) -> None:
    model = load_checkpoint(args.model)
    catalog, _ = _dataset_parts(args) if args.data else (load_catalog(args.catalog), None)
    fixture = load_fixture(args.fixture)
    seed = 0 if args.seed is None else args.seed
    start = time.perf_counter()
    pgs = sample(model, schedule_for(model), fixture, catalog, seed, args.count, store_id=args.store_id)
    save_planograms_jsonl(pgs, args.out)
    _emit(args, {"out": args.out, "count": len(pgs), "seconds": round(time.perf_counter() - start, 3)},
          f"wrote {len(pgs)} planograms to {args.out}")


def cmd_validate(args) -> None:
    catalog, constraints = _dataset_parts(args)
    pgs = _load_planograms(args.planograms)
    reports = [validate(pg, constraints, catalog) for pg in pgs]
    outcomes = [(k, ok) for r in reports for k, ok, _ in r.per_constraint]
    rates = rates_from_outcomes(outcomes)
    overall = sum(rates.values()) / len(rates)
    payload = {"count": len(pgs), "per_category_rate": rates, "overall": overall,
               "all_satisfied": all(r.overall == 1.0 for r in reports)}
    if args.out:
        Path(args.out).write_text("\n".join(json.dumps(r.to_dict()) for r in reports) + "\n", encoding="utf-8")
    text = "\n".join([f"{k:<18} {100 * v:6.1f}%" for k, v in rates.items()] + [f"{'overall':<18} {100 * overall:6.1f}%"])
    _emit(args, payload, text)


def cmd_report(args) -> None:
    catalog, constraints = _dataset_parts(args)
    report = build_report(_load_planograms(args.planograms), constraints, catalog)
    if args.out:
        Path(args.out).write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, report.summary(), report.render())


def cmd_quantize(args) -> None:
    model = load_checkpoint(args.model)
    artifact, rep = quantize(model)
    Path(args.out).write_bytes(artifact)
    payload = rep.to_dict()
    lines = [f"fp32 {rep.fp32_bytes} bytes, int8 {rep.int8_bytes} bytes, ratio {rep.size_ratio:.3f}",
             f"max abs weight error {rep.max_abs_error:.3g}"]
    if args.eval:
        ds = read_dataset(args.data) if args.data else None
        if ds is None:
            raise UsageError("--eval needs --data DIR")
        seed = 0 if args.seed is None else args.seed
        full = sampling_report(model, ds, args.eval, seed)
        quant = sampling_report(dequantize(artifact), ds, args.eval, seed)
        delta = 100.0 * (quant.overall - full.overall)
        payload.update({"overall_fp": full.overall, "overall_int8": quant.overall, "delta_points": delta})
        lines.append(f"satisfaction fp {100 * full.overall:.1f}% int8 {100 * quant.overall:.1f}% "
                     f"(delta {delta:+.1f} points over {args.eval} samples)")
    _emit(args, payload, "\n".join(lines))


def cmd_edgesim(args) -> None:
    raw = _read_config(args.config)
    model = LatencyModel.from_dict(raw.get("model", {}))
    overrides = {k: v for k, v in (("mode", args.mode), ("scaling_factor", args.k), ("log_base", args.log_base),
                                   ("provisioned_concurrency", args.provisioned), ("cold_start_ms", args.cold_start))
                 if v is not None}
    model = replace(model, **overrides)
    if args.table2 or not (args.scenario or args.rate or "scenario" in raw):
        rows = table2(model)
        _emit(args, {"model": model.to_dict(), "rows": rows}, render_table2(rows))
        return
    if args.scenario:
        scenario = LoadScenario.from_dict(load_json(args.scenario))
    elif "scenario" in raw:
        scenario = LoadScenario.from_dict(raw["scenario"])
    else:
        scenario = poisson_scenario(args.rate, args.duration, 0 if args.seed is None else args.seed, args.burst)
    stats = run_load(scenario, model)
    d = stats.to_dict()
    text = "\n".join(f"{k:<14} {v}" for k, v in d.items())
    if args.out:
        Path(args.out).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, d, text)


def cmd_serve(args) -> None:
    import uvicorn

    from .service import ModelSnapshot, ServiceState, create_app

    catalog, constraints = _dataset_parts(args)
    state = ServiceState(catalog, constraints)
    for path in args.model or ():
        data = Path(path).read_bytes()
        state.load(ModelSnapshot.from_model(version_id(data), load_checkpoint(path), catalog, constraints))
    app = create_app(state, api_key=args.api_key)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--data", help="corpus directory (catalog.csv, constraints.json)")
    data.add_argument("--catalog")
    data.add_argument("--constraints")

    p = _Parser(prog="planoforge", description="Constraint-aware diffusion planogram synthesis")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("corpus-gen", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--stores", type=int)
    s.add_argument("--per-store", type=int)
    s.set_defaults(func=cmd_corpus_gen)

    s = sub.add_parser("train", parents=[common], help="train a denoiser")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--lambda1", type=float)
    s.add_argument("--lambda2", type=float)
    s.add_argument("--T", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    s.add_argument("--history", help="write per-step losses as JSON lines")
    s.add_argument("--log-every", type=int, default=500)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common, data], help="sample planograms for a fixture")
    s.add_argument("--model", required=True)
    s.add_argument("--fixture", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--store-id", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("validate", parents=[common, data], help="validate planograms")
    s.add_argument("planograms", help=".json or .jsonl planogram file")
    s.add_argument("--out", help="write per-planogram reports as JSON lines")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("report", parents=[common, data], help="satisfaction/utilization/revenue report")
    s.add_argument("planograms")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("quantize", parents=[common], help="int8 quantization")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--data", help="corpus directory, needed with --eval")
    s.add_argument("--eval", type=int, default=0, help="compare satisfaction over N samples")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("edgesim", parents=[common], help="serverless latency simulation")
    s.add_argument("--table2", action="store_true", help="print the concurrency scaling table")
    s.add_argument("--mode", choices=("fitted", "formula"))
    s.add_argument("--k", type=float, help="scaling factor (formula mode)")
    s.add_argument("--log-base", type=float)
    s.add_argument("--provisioned", type=int)
    s.add_argument("--cold-start", type=float)
    s.add_argument("--scenario", help="scenario JSON file")
    s.add_argument("--rate", type=float, help="Poisson arrivals per second")
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--burst", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_edgesim)

    s = sub.add_parser("serve", parents=[common, data], help="run the REST service")
    s.add_argument("--model", action="append", help="checkpoint to load (repeat: last one is active)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--api-key")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        args.func(args)
        return 0
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
