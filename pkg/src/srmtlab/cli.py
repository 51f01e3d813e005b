"""Command-line entry point: map generation, training, evaluation, analysis.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 I/O error.
Every command is deterministic given --seed and writes a provenance copy of
its effective configuration into the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import maps as mapmod
from .config import load_config
from .errors import ConfigError, MapParseError, SrmtError
from .evalkit import (
    memory_trace,
    sweep_corridors,
    evaluate_maps,
    write_memory_trace_csv,
    write_reports_csv,
)
from .gridenv import CLASSICAL

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srmtlab",
                                     description="Multi-agent pathfinding lab")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-maps", help="generate map files plus a manifest")
    gen.add_argument("--kind", required=True,
                     choices=["bottleneck", "random", "maze", "movingai-import"])
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--count", type=int, default=16)
    gen.add_argument("--lengths", default="3..30",
                     help="bottleneck corridor lengths, e.g. 3..30 or 5,10,50")
    gen.add_argument("--room-size", type=int, default=5)
    gen.add_argument("--size", type=int, default=20, help="square side for random/maze")
    gen.add_argument("--density", type=float, default=0.3)
    gen.add_argument("--in", dest="input_path", help="source .map file for movingai-import")

    tr = sub.add_parser("train", help="run PPO training from a JSON config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--resume", help="checkpoint to resume from")
    tr.add_argument("--workers", type=int, help="cap the configured rollout workers")

    ev = sub.add_parser("eval", help="evaluate a checkpoint; writes CSV/JSON and figures")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--maps", help="directory of map JSON files to evaluate on")
    ev.add_argument("--sweep-corridors", dest="sweep",
                    help="corridor lengths, e.g. 5,10,100 or 5..1000 (log-spaced points)")
    ev.add_argument("--sweep-points", type=int, default=8,
                    help="points taken from a .. range (log-spaced)")
    ev.add_argument("--seeds", type=int, default=10)
    ev.add_argument("--seed", type=int, default=0, help="base evaluation seed")
    ev.add_argument("--record-memory", action="store_true")
    ev.add_argument("--greedy", action="store_true", help="argmax actions instead of sampling")
    ev.add_argument("--mode", choices=["classical", "lifelong"], default="classical")
    ev.add_argument("--agents", type=int, default=2)
    ev.add_argument("--episode-length", type=int, default=512)
    ev.add_argument("--room-size", type=int, default=5)

    an = sub.add_parser("analyze-memory", help="align memory distances with map distances")
    an.add_argument("--trace", required=True, help="raw memory recording (JSONL)")
    an.add_argument("--out", required=True, help="output CSV path")
    return parser


def parse_lengths(text: str, points: int | None = None) -> list[int]:
    """``5,10,50`` lists values; ``A..B`` spans a range (log-spaced points)."""
    out: list[int] = []
    for item in text.split(","):
        item = item.strip()
        if ".." in item:
            lo, hi = item.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ConfigError(f"bad length range {item!r}")
            if points is None or hi - lo + 1 <= (points or 0):
                out.extend(range(lo, hi + 1))
            else:
                grid = np.unique(np.geomspace(lo, hi, points).round().astype(int))
                out.extend(int(v) for v in grid)
        else:
            out.append(int(item))
    if not out:
        raise ConfigError(f"no corridor lengths in {text!r}")
    return sorted(set(out))


def _write_provenance(out_dir: Path, name: str, doc: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def cmd_gen_maps(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    files = []

    if args.kind == "bottleneck":
        lengths = parse_lengths(args.lengths)
        chosen = [int(lengths[int(rng.integers(len(lengths)))]) for _ in range(args.count)] \
            if len(lengths) > 1 else [lengths[0]] * args.count
        for i, length in enumerate(chosen):
            spec = mapmod.BottleneckSpec(length, args.room_size)
            grid, starts, goals = mapmod.gen_bottleneck(spec, seed=int(rng.integers(1 << 30)))
            path = out_dir / f"bottleneck_{i:03d}.json"
            path.write_text(json.dumps(mapmod.grid_to_json_dict(grid)) + "\n")
            files.append({"path": path.name, "corridor_len": length,
                          "starts": starts, "goals": goals})
    elif args.kind == "random":
        for i in range(args.count):
            grid = mapmod.gen_random(args.size, args.size, args.density,
                                     seed=int(rng.integers(1 << 30)))
            path = out_dir / f"random_{i:03d}.json"
            path.write_text(json.dumps(mapmod.grid_to_json_dict(grid)) + "\n")
            files.append({"path": path.name})
    elif args.kind == "maze":
        side = args.size if args.size % 2 == 1 else args.size + 1
        for i in range(args.count):
            grid = mapmod.gen_maze(side, side, seed=int(rng.integers(1 << 30)))
            path = out_dir / f"maze_{i:03d}.json"
            path.write_text(json.dumps(mapmod.grid_to_json_dict(grid)) + "\n")
            files.append({"path": path.name})
    else:  # movingai-import
        if not args.input_path:
            raise ConfigError("movingai-import needs --in FILE")
        text = Path(args.input_path).read_text(encoding="utf-8")
        grid = mapmod.parse_movingai(text)
        grid.name = Path(args.input_path).stem
        path = out_dir / f"{grid.name}.json"
        path.write_text(json.dumps(mapmod.grid_to_json_dict(grid)) + "\n")
        files.append({"path": path.name, "source": str(args.input_path)})

    manifest = {"kind": args.kind, "seed": args.seed,
                "flags": {k: v for k, v in vars(args).items() if k != "command"},
                "files": files}
    _write_provenance(out_dir, "manifest.json", manifest)
    print(f"wrote {len(files)} map file(s) to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import train

    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.ppo.workers = max(1, min(cfg.ppo.workers, args.workers))
    result = train(cfg, resume=args.resume,
                   progress=lambda row: print(
                       f"iter {row['iteration']:5d}  step {row['global_step']:>9d}  "
                       f"reward {row['mean_reward']:+.5f}  kl {row['kl']:.5f}  "
                       f"lr {row['lr']:.2e}"))
    print(f"done: {result.global_step} steps, checkpoint {result.checkpoint_path}")
    return EXIT_OK


def _load_policy(ckpt_path):
    from .trainer import load_checkpoint

    policy, _, extra = load_checkpoint(ckpt_path)
    return policy, extra


def cmd_eval(args) -> int:
    from . import figures

    if not args.maps and not args.sweep:
        raise ConfigError("eval needs --maps DIR or --sweep-corridors LENGTHS")
    policy, _ = _load_policy(args.ckpt)
    out_dir = Path(args.out)
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed + i for i in range(args.seeds)]
    _write_provenance(out_dir, "eval_config.json",
                      {k: v for k, v in vars(args).items() if k != "command"})

    if args.sweep:
        lengths = parse_lengths(args.sweep, points=args.sweep_points)
        reports, episodes = sweep_corridors(policy, lengths, seeds,
                                            room_size=args.room_size,
                                            record_memory=args.record_memory,
                                            greedy=args.greedy)
        write_reports_csv(reports, reports_dir / "sweep_metrics.csv",
                          group_column="corridor_len")
        figures.render_sweep(reports, reports_dir / "sweep_metrics.png")
    else:
        map_dir = Path(args.maps)
        grids = []
        for path in sorted(map_dir.glob("*.json")):
            if path.name == "manifest.json":
                continue
            doc = json.loads(path.read_text(encoding="utf-8"))
            grid = mapmod.grid_from_json_dict(doc)
            if not grid.name:
                grid.name = path.stem
            grids.append(grid)
        if not grids:
            raise ConfigError(f"no map JSON files found in {map_dir}")
        reports, episodes = evaluate_maps(policy, grids, seeds, mode=args.mode,
                                          num_agents=args.agents,
                                          episode_length=args.episode_length,
                                          record_memory=args.record_memory,
                                          greedy=args.greedy)
        write_reports_csv(reports, reports_dir / "map_metrics.csv", group_column="map")
        figures.render_map_reports(reports, reports_dir / "map_metrics.png")

    payload = [{"group": r.group, "metric": r.metric, "value": r.value,
                "ci95": r.ci95, "n": r.n} for r in reports]
    (reports_dir / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")

    if args.record_memory:
        recorded = 0
        for i, episode in enumerate(episodes):
            if episode.memories is None:
                continue
            raw_path = reports_dir / f"memory_raw_{i:03d}.jsonl"
            _write_memory_raw(episode, raw_path)
            rows = memory_trace(episode)
            write_memory_trace_csv(rows, reports_dir / f"memory_trace_{i:03d}.csv")
            if recorded == 0 and rows:
                figures.render_memory_trace(rows, reports_dir / f"memory_trace_{i:03d}.png")
            recorded += 1
        print(f"recorded memory traces for {recorded} episode(s)")
    print(f"wrote reports to {reports_dir}")
    return EXIT_OK


def _write_memory_raw(episode, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        meta = {"meta": {"mode": episode.mode, "num_agents": episode.num_agents,
                         "obs_size": episode.obs_size,
                         "episode_length": episode.episode_length,
                         "arrival_steps": episode.arrival_steps,
                         "map_name": episode.map_name}}
        fh.write(json.dumps(meta) + "\n")
        for t, (row, mems) in enumerate(zip(episode.positions, episode.memories)):
            fh.write(json.dumps({"step": t,
                                 "positions": [list(p) if p is not None else None
                                               for p in row],
                                 "memories": np.asarray(mems).tolist()}) + "\n")


def cmd_analyze_memory(args) -> int:
    from . import figures
    from .evalkit import EpisodeRecord

    lines = Path(args.trace).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigError(f"empty trace file {args.trace}")
    meta = json.loads(lines[0]).get("meta")
    if meta is None:
        raise ConfigError("trace file is missing its meta header line")
    positions, memories = [], []
    for line in lines[1:]:
        doc = json.loads(line)
        positions.append([tuple(p) if p is not None else None for p in doc["positions"]])
        memories.append(np.asarray(doc["memories"]))
    episode = EpisodeRecord(
        map_name=meta.get("map_name", "map"), mode=meta.get("mode", CLASSICAL),
        num_agents=meta["num_agents"], episode_length=meta["episode_length"],
        obs_size=meta["obs_size"], arrival_steps=meta["arrival_steps"],
        positions=positions, goals=[None] * meta["num_agents"],
        goals_reached=0, runtime_seconds=0.0, moves=[0] * meta["num_agents"],
        memories=memories, grid=None)
    rows = memory_trace(episode)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_memory_trace_csv(rows, out_path)
    if rows:
        figures.render_memory_trace(rows, out_path.with_suffix(".png"))
    print(f"wrote {len(rows)} trace rows to {out_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen-maps": cmd_gen_maps, "train": cmd_train, "eval": cmd_eval,
                "analyze-memory": cmd_analyze_memory}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MapParseError as exc:
        print(f"map parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SrmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
