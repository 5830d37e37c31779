"""Command line entry point: ``crank <train|serve|simulate|compare|bench|generate>``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from .factorization import TrainConfig
from .ingestion import SessionRule

SERVE_DEFAULTS = {
    "model_dir": None,
    "state_dir": None,
    "port": 8080,
    "host": "127.0.0.1",
    "w": 0.7,
    "log_base": "e",
    "update_interval_s": 10.0,
    "session_gap_s": 1800,
    "snapshot_interval_s": 60.0,
    "fold_mode": "provisional",
    "normalize": False,
}

ENV_VARS = {"model_dir": "CRANK_MODEL_DIR", "port": "CRANK_PORT", "w": "CRANK_W"}


def resolve_serve_config(args: argparse.Namespace, environ=os.environ) -> dict:
    """Merge settings with precedence flags > environment > config file > defaults."""
    cfg = dict(SERVE_DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise SystemExit(f"unknown keys in {args.config}: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key, var in ENV_VARS.items():
        if var in environ:
            cfg[key] = environ[var]
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["model_dir"] is None:
        raise SystemExit("a model directory is required (--model-dir or CRANK_MODEL_DIR)")
    cfg["port"] = int(cfg["port"])
    cfg["w"] = float(cfg["w"])
    return cfg


def _cmd_train(args: argparse.Namespace) -> int:
    from .pipeline import train

    cfg = TrainConfig(
        dim=args.dim, iterations=args.iters, reg=args.reg, conf_alpha=args.conf_alpha, seed=args.seed
    )
    out = train(args.events, args.catalog, args.out, cfg, args.window_days, SessionRule(args.session_gap_s))
    print(f"wrote model artifacts to {out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .scoring import ScoringConfig
    from .service import EngineConfig, serve

    c = resolve_serve_config(args)
    engine_cfg = EngineConfig(
        model_dir=Path(c["model_dir"]),
        state_dir=Path(c["state_dir"]) if c["state_dir"] else None,
        scoring=ScoringConfig(w=c["w"], log_base=c["log_base"], normalize=bool(c["normalize"])),
        session_gap_s=int(c["session_gap_s"]),
        update_interval_s=float(c["update_interval_s"]),
        snapshot_interval_s=float(c["snapshot_interval_s"]),
        fold_mode=c["fold_mode"],
    )
    serve(engine_cfg, port=c["port"], host=c["host"])
    return 0


def _world_cfg(args: argparse.Namespace):
    from .simharness import WorldConfig

    return WorldConfig(n_users=args.users)


def _cmd_simulate(args: argparse.Namespace) -> int:
    from .simharness import generate_world, simulate

    world = generate_world(_world_cfg(args), seed=args.seed)
    report = simulate(
        world, args.policy, args.sessions, seed=args.sim_seed, w=args.w, normalize=not args.raw
    )
    if args.out:
        report.save(args.out)
    print(report.to_json())
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    from .simharness import SimReport, compare

    lifts = compare(SimReport.load(args.a), SimReport.load(args.b))
    for metric, lift in lifts.items():
        shown = lift if isinstance(lift, str) else f"{lift:+.2f}%"
        print(f"{metric:36s} {shown}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    from .pipeline import load_model_dir
    from .service import Engine
    from .simharness import bench_latency, generate_world, train_world

    with tempfile.TemporaryDirectory(prefix="crank-bench-") as tmp:
        if args.model_dir:
            model = load_model_dir(args.model_dir)
        else:
            model = train_world(generate_world(seed=args.seed))
        engine = Engine.from_model(model, Path(tmp), persist=False)
        try:
            result = bench_latency(
                engine,
                n_requests=args.requests,
                candidates=args.candidates,
                items_per_carousel=args.items,
                concurrency=args.concurrency,
                seed=args.seed,
            )
        finally:
            engine.stop()
    print(json.dumps(result, indent=2))
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    from .domain import write_events
    from .simharness import generate_world

    world = generate_world(_world_cfg(args), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_events(out / "events.jsonl", world.history)
    world.catalog.dump(out / "catalog.jsonl")
    with open(out / "carousels.json", "w", encoding="utf-8") as fh:
        json.dump([{"id": c.id, "items": list(c.items)} for c in world.carousels], fh, indent=1)
    print(f"wrote {len(world.history)} events, catalog and carousels to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crank", description="real-time carousel ranking")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train factor models and seed priors")
    t.add_argument("--events", required=True)
    t.add_argument("--catalog", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--dim", type=int, default=32)
    t.add_argument("--iters", type=int, default=15)
    t.add_argument("--reg", type=float, default=0.01)
    t.add_argument("--conf-alpha", type=float, default=40.0)
    t.add_argument("--window-days", type=int, default=365)
    t.add_argument("--session-gap-s", type=int, default=1800)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_train)

    s = sub.add_parser("serve", help="run the HTTP ranking service")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--model-dir")
    s.add_argument("--state-dir")
    s.add_argument("--port", type=int)
    s.add_argument("--host")
    s.add_argument("--w", type=float)
    s.add_argument("--log-base")
    s.add_argument("--update-interval-s", type=float)
    s.add_argument("--session-gap-s", type=int)
    s.add_argument("--snapshot-interval-s", type=float)
    s.add_argument("--fold-mode", choices=["closed", "provisional", "raw"])
    s.add_argument("--normalize", action="store_true", default=None)
    s.set_defaults(func=_cmd_serve)

    m = sub.add_parser("simulate", help="run the synthetic A/B harness for one policy")
    m.add_argument("--seed", type=int, default=42, help="world seed")
    m.add_argument("--sim-seed", type=int, default=0)
    m.add_argument("--users", type=int, default=200)
    m.add_argument("--sessions", type=int, default=10000)
    m.add_argument("--policy", choices=["static", "dynamic"], default="dynamic")
    m.add_argument("--w", type=float, default=0.7)
    m.add_argument("--raw", action="store_true", help="combine scores without normalization")
    m.add_argument("--out")
    m.set_defaults(func=_cmd_simulate)

    c = sub.add_parser("compare", help="percent lift of report B over report A")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.set_defaults(func=_cmd_compare)

    b = sub.add_parser("bench", help="measure server-side scoring latency")
    b.add_argument("--model-dir")
    b.add_argument("--requests", type=int, default=20000)
    b.add_argument("--concurrency", type=int, default=1)
    b.add_argument("--candidates", type=int, default=10)
    b.add_argument("--items", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=_cmd_bench)

    g = sub.add_parser("generate", help="write a synthetic event log and catalog")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--users", type=int, default=200)
    g.set_defaults(func=_cmd_generate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
