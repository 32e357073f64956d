"""Command-line surface: run, validate, render, metrics, bridge-serve.

Exit codes: 0 success, 1 scenario/config errors, 2 runtime failures with
partial artifacts preserved. B2DR_LOG=debug|info|warn selects verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import simloop
from .scenario import ScenarioError, load_scenario, validate_scenario

log = logging.getLogger("b2dr")


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}.get(
        os.environ.get("B2DR_LOG", "warn").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str | None, seed: int | None, backend: str | None) -> simloop.SimConfig:
    doc = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as e:
            raise simloop.ConfigError(f"cannot read config {path!r}: {e}") from e
        except json.JSONDecodeError as e:
            raise simloop.ConfigError(f"config {path!r} is not valid JSON: {e.msg}") from e
    if seed is not None:
        doc["seed"] = seed
    if backend is not None:
        doc["backend"] = backend
    return simloop.config_from_dict(doc)


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        cfg = _load_config(args.config, args.seed, args.backend)
        agent = simloop.make_builtin_agent(
            args.agent, cfg.waypoint_count, cfg.waypoint_dt
        )
    except (ScenarioError, simloop.ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    try:
        report, _ = simloop.run(scenario, agent, cfg, out_dir=args.out)
    except Exception as e:  # partial artifacts are already on disk
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    print(f"{report.composite:.6f}")
    return 0


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    violations = validate_scenario(scenario)
    for v in violations:
        print(str(v))
    return 0 if not violations else 1


def cmd_render(args) -> int:
    from . import imgio
    from .render import render_frame

    try:
        scenario = load_scenario(args.scenario)
        cfg = _load_config(args.config, args.seed, args.backend)
    except (ScenarioError, simloop.ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if not (0 <= args.tick < len(scenario.frames)):
        print(
            f"error: tick {args.tick} outside recorded range 0..{len(scenario.frames) - 1}",
            file=sys.stderr,
        )
        return 1
    os.makedirs(args.out, exist_ok=True)
    try:
        state = simloop.reset(scenario, cfg)
        # roll the world to the requested recorded tick with the replay agent
        agent = simloop.make_builtin_agent("log_replay", cfg.waypoint_count, cfg.waypoint_dt)
        target = round(
            (scenario.frames[args.tick].time - scenario.frames[0].time) * cfg.world_hz
        )
        for _ in range(int(target)):
            simloop.step(state, agent)
        req = simloop._build_request(state)
        frame = render_frame(state.backend, req)
        for name, img in frame.images.items():
            imgio.save_png(img, os.path.join(args.out, f"cam_{name}_{state.tick:06d}.png"))
            imgio.save_mask_apng(
                req.masks[name], os.path.join(args.out, f"masks_{name}_{state.tick:06d}.png")
            )
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    return 0


def cmd_metrics(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        report = simloop.recompute_metrics(scenario, args.steps)
    except (ScenarioError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_bridge_serve(args) -> int:
    """Host the bridge listener, wait for a renderer to attach, then run."""
    try:
        scenario = load_scenario(args.scenario)
        cfg = _load_config(args.config, args.seed, None)
        remote = dict(cfg.backend_config.get("remote", {}))
        remote.update(
            {
                "mode": "listen",
                "host": args.host,
                "port": args.port,
                "timeout_s": args.timeout,
                "on_listening": lambda host, port: print(
                    f"listening on {host}:{port}", flush=True
                ),
            }
        )
        bcfg = dict(cfg.backend_config)
        bcfg["remote"] = remote
        from dataclasses import replace

        cfg = replace(cfg, backend="remote", backend_config=bcfg)
        agent = simloop.make_builtin_agent(args.agent, cfg.waypoint_count, cfg.waypoint_dt)
    except (ScenarioError, simloop.ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    try:
        report, _ = simloop.run(scenario, agent, cfg, out_dir=args.out)
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    print(f"{report.composite:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="b2dr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a closed-loop simulation")
    run_p.add_argument("--scenario", required=True)
    run_p.add_argument("--agent", default="log-replay")
    run_p.add_argument("--backend", default=None)
    run_p.add_argument("--config", default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", required=True)
    run_p.set_defaults(fn=cmd_run)

    val_p = sub.add_parser("validate", help="validate a scenario file")
    val_p.add_argument("--scenario", required=True)
    val_p.set_defaults(fn=cmd_validate)

    ren_p = sub.add_parser("render", help="render one frame for debugging")
    ren_p.add_argument("--scenario", required=True)
    ren_p.add_argument("--tick", type=int, default=0)
    ren_p.add_argument("--backend", default=None)
    ren_p.add_argument("--config", default=None)
    ren_p.add_argument("--seed", type=int, default=None)
    ren_p.add_argument("--out", required=True)
    ren_p.set_defaults(fn=cmd_render)

    met_p = sub.add_parser("metrics", help="recompute metrics from steps.jsonl")
    met_p.add_argument("--scenario", required=True)
    met_p.add_argument("--steps", required=True)
    met_p.set_defaults(fn=cmd_metrics)

    br_p = sub.add_parser(
        "bridge-serve", help="listen for an external renderer, then run"
    )
    br_p.add_argument("--scenario", required=True)
    br_p.add_argument("--agent", default="log-replay")
    br_p.add_argument("--config", default=None)
    br_p.add_argument("--seed", type=int, default=None)
    br_p.add_argument("--host", default="127.0.0.1")
    br_p.add_argument("--port", type=int, default=0)
    br_p.add_argument("--timeout", type=float, default=30.0)
    br_p.add_argument("--out", required=True)
    br_p.set_defaults(fn=cmd_bridge_serve)

    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
