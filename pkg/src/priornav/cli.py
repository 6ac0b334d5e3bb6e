"""Command-line front end.

Subcommands: generate, run, metrics, plot, parse.  Exit codes: 0 on
success, 2 for configuration or input errors, 3 for suite-level errors
(failed generation, unreadable episodes, episode errors during a run).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .evaluation import (
    ConfigError,
    EvaluationConfig,
    load_config,
    run_suite,
    summarize,
)
from .instructions import (
    IRInvariantError,
    IRSchemaError,
    ParseError,
    ir_to_json,
    load_ir,
    parse_constrained,
)
from .metrics import success_metrics
from .plotting import emit_trajectory_svg
from .runtime import read_jsonl
from .simulator import (
    GenerationError,
    GeneratorConfig,
    generate_episode_suite,
    load_episode,
    load_scene,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SUITE = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="priornav")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a deterministic episode suite")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--episodes", type=int, default=50)
    g.add_argument("--out", required=True)
    g.add_argument("--room-size", type=float, default=10.0)
    g.add_argument("--landmarks-min", type=int, default=3)
    g.add_argument("--landmarks-max", type=int, default=8)
    g.add_argument("--interior-walls", type=int, default=2)
    g.add_argument("--duplicate-label", default=None)
    g.add_argument("--duplicate-count", type=int, default=0)

    r = sub.add_parser("run", help="run a suite and write reports")
    r.add_argument("--suite", required=True)
    r.add_argument("--config", default=None, help="JSON config; default is the suite's pinned config")
    r.add_argument("--parallelism", type=int, default=1)
    r.add_argument("--out-dir", default=None)

    m = sub.add_parser("metrics", help="recompute scores from a finished run")
    m.add_argument("--suite", required=True)
    m.add_argument("--run-dir", required=True)
    m.add_argument("--config", default=None)

    pl = sub.add_parser("plot", help="render one episode to SVG")
    pl.add_argument("--episode", required=True, help="episode JSON inside a suite directory")
    pl.add_argument("--out", required=True)
    pl.add_argument("--run-dir", default=None, help="finished run to overlay (result + estimates)")

    pa = sub.add_parser("parse", help="print instruction IR as JSON")
    src = pa.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--ir", help="validate an IR JSON file and print it normalized")
    return p


def _cmd_generate(args) -> int:
    cfg = GeneratorConfig(
        episodes=args.episodes,
        room_size=args.room_size,
        landmarks_min=args.landmarks_min,
        landmarks_max=args.landmarks_max,
        interior_walls=args.interior_walls,
        duplicate_label=args.duplicate_label,
        duplicate_count=args.duplicate_count,
    )
    try:
        pairs = generate_episode_suite(cfg, args.seed, args.out)
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_SUITE
    print(f"wrote {len(pairs)} episodes to {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else None
    summary, _ = run_suite(
        args.suite, cfg, out_dir=args.out_dir, parallelism=args.parallelism
    )
    print(json.dumps(summary.to_json(), sort_keys=True, indent=2))
    return EXIT_SUITE if summary.error_count else EXIT_OK


def _cmd_metrics(args) -> int:
    cfg = load_config(args.config) if args.config else EvaluationConfig()
    suite = Path(args.suite)
    run_dir = Path(args.run_dir)
    episodes_dir = run_dir / "episodes"
    if not episodes_dir.is_dir():
        raise ConfigError(f"no episodes directory under {run_dir}")
    per_episode = []
    errors = []
    for path in sorted(episodes_dir.glob("*.json")):
        eid = path.stem
        try:
            stored = json.loads(path.read_text())
            episode = load_episode(suite / f"{eid}.json")
            m = success_metrics(
                stored["agent_path"], stored["stop_called"],
                episode.goal, episode.reference_path, cfg.metrics,
            )
            per_episode.append((eid, m))
        except Exception as exc:
            errors.append((eid, str(exc)))
    if not per_episode and not errors:
        raise ConfigError(f"no episode results under {episodes_dir}")
    n = len(per_episode)
    mean = lambda xs: sum(xs) / n if n else 0.0
    out = {
        "sr": mean([m.sr for _, m in per_episode]),
        "spl": mean([m.spl for _, m in per_episode]),
        "osr": mean([m.osr for _, m in per_episode]),
        "ndtw": mean([m.ndtw for _, m in per_episode]),
        "episodes": n,
        "errors": [{"id": eid, "error": msg} for eid, msg in errors],
        "per_episode": {
            eid: {"sr": m.sr, "osr": m.osr, "spl": m.spl, "ndtw": m.ndtw}
            for eid, m in per_episode
        },
    }
    print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_SUITE if errors else EXIT_OK


def _cmd_plot(args) -> int:
    episode_path = Path(args.episode)
    episode = load_episode(episode_path)
    scene = load_scene(episode_path.parent / episode.scene_ref)
    result = None
    records = []
    if args.run_dir:
        run_dir = Path(args.run_dir)
        result_path = run_dir / "episodes" / f"{episode_path.stem}.json"
        if result_path.exists():
            result = json.loads(result_path.read_text())
        log_path = run_dir / "logs" / f"{episode_path.stem}.jsonl"
        if log_path.exists():
            records = read_jsonl(log_path)
    emit_trajectory_svg(result, scene, records, args.out, episode=episode)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_parse(args) -> int:
    ir = parse_constrained(args.text) if args.text is not None else load_ir(args.ir)
    print(json.dumps(ir_to_json(ir), sort_keys=True, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {
        "generate": _cmd_generate,
        "run": _cmd_run,
        "metrics": _cmd_metrics,
        "plot": _cmd_plot,
        "parse": _cmd_parse,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, ParseError, IRSchemaError, IRInvariantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
