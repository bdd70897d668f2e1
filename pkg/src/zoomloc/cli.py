"""Command-line entry point: ``zoomloc <subcommand> [options]``.

Exit codes: 0 success, 1 usage error (synopsis on stderr), 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path


from .errors import ZoomlocError

SYNOPSIS = """usage: zoomloc <subcommand> [--config PATH] [--seed N] [--out PATH] [--deterministic] ...

subcommands:
  build-world   generate the synthetic world and write tile snapshots
  curate        filter a capture manifest (JSON Lines)
  train         train the zoom policy or the retrieval baseline
  eval          evaluate a checkpoint on the held-out split
  localize      localize observation images with a policy checkpoint
  compare       side-by-side report for policy and baseline checkpoints
  heatmap       patch-similarity heatmap of an observation against a tile
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config (JSON); defaults to the desk profile")
    p.add_argument("--profile", default="desk", choices=("desk", "main"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path (file or directory, per subcommand)")
    p.add_argument("--deterministic", action="store_true", help="omit wall-clock fields from reports")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zoomloc", add_help=True, usage=SYNOPSIS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-world")
    _common(p)
    p.add_argument("--snapshot-levels", type=int, default=1, help="write tile PNGs down to this level")

    p = sub.add_parser("curate")
    _common(p)
    p.add_argument("manifest", help="input manifest, JSON Lines")

    p = sub.add_parser("train")
    _common(p)
    p.add_argument("--model", choices=("policy", "baseline"), default="policy")
    p.add_argument("--resume", help="policy checkpoint to continue from")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("eval")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--traces", help="per-query JSON Lines output")

    p = sub.add_parser("localize")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("observations", nargs="+", help="PNG or .npy observation files")

    p = sub.add_parser("compare")
    _common(p)
    p.add_argument("--policy", action="append", required=True, help="policy checkpoint (repeatable)")
    p.add_argument("--baseline", required=True)

    p = sub.add_parser("heatmap")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("observation")
    p.add_argument("--tile", default="", help="comma-separated tile address; empty for the root")
    return parser


def _config(args):
    from .experiment import load_config

    return load_config(args.config, seed=args.seed, profile=args.profile)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_build_world(args) -> None:
    from .imageio import save_image
    from .world import TileCache, check_world_matches, generate_world

    cfg = _config(args)
    world = generate_world(cfg.data.world_seed, cfg.world)
    check_world_matches(world, cfg.pyramid)
    summary = {"digest": world.digest(), "extent": world.extent, "roads": int(world.roads.shape[0]),
               "buildings": int(world.buildings.shape[0]), "landmarks": int(world.landmarks.shape[0])}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "world.bin").write_bytes(world.to_bytes())
        tiles = TileCache(world, cfg.pyramid)
        frontier = [()]
        for level in range(min(args.snapshot_levels, cfg.pyramid.num_steps) + 1):
            for addr in frontier:
                name = "tile_root" if not addr else "tile_" + "-".join(map(str, addr))
                save_image(out / f"{name}.png", tiles(addr))
            if level < args.snapshot_levels:
                frontier = [a + (k,) for a in frontier for k in range(cfg.pyramid.num_actions)]
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def cmd_curate(args) -> None:
    from .curation import format_report, read_manifest, run_pipeline, write_manifest

    cfg = _config(args)
    with open(args.manifest) as fh:
        records = read_manifest(fh)
    survivors, report = run_pipeline(records, cfg.curation)
    if args.out:
        with open(args.out, "w") as fh:
            write_manifest(survivors, fh)
    else:
        write_manifest(survivors, sys.stdout)
    sys.stderr.write(format_report(report))


def cmd_train(args) -> None:
    from .experiment import train_baseline, train_policy

    cfg = _config(args)
    if args.batch_size is not None:
        cfg = replace(cfg, batch_size=args.batch_size)
    if args.max_steps is not None:
        cfg = replace(cfg, max_steps=args.max_steps)
    out = args.out or "run"

    def progress(step, loss):
        if step % 50 == 0:
            logging.getLogger("zoomloc.train").info("step %d loss %.4f", step, loss)

    if args.model == "policy":
        res = train_policy(cfg, out, resume=args.resume, progress=progress)
    else:
        res = train_baseline(cfg, out, progress=progress)
    final = res.losses[-1][1] if res.losses else None
    sys.stdout.write(json.dumps({"checkpoint": str(res.checkpoint), "steps": res.steps, "final_loss": final}) + "\n")


def cmd_eval(args) -> None:
    from .experiment import check_report, dumps_report, evaluate

    report = evaluate(args.checkpoint, deterministic=args.deterministic)
    traces = report.pop("traces")
    check_report(report)
    if args.traces:
        with open(args.traces, "w") as fh:
            for t in traces:
                fh.write(json.dumps(t, sort_keys=True) + "\n")
    _emit(dumps_report(report) + "\n", args.out)


def cmd_localize(args) -> None:
    from .experiment import load_model
    from .imageio import load_image
    from .world import TileCache, generate_world

    lm = load_model(args.checkpoint)
    if lm.kind != "policy":
        raise ZoomlocError("localize needs a policy checkpoint")
    world = generate_world(lm.cfg.data.world_seed, lm.cfg.world)
    tiles = TileCache(world, lm.cfg.pyramid)
    lm.model.eval()
    lines = []
    for path in args.observations:
        trace = lm.model.localize(load_image(path), tiles)
        lines.append(json.dumps(dict(trace.to_record(), source=path), sort_keys=True))
    _emit("\n".join(lines) + "\n", args.out)


def cmd_compare(args) -> None:
    from .experiment import compare, dumps_report, format_table

    report = compare(args.policy, args.baseline, deterministic=args.deterministic)
    _emit(dumps_report(report) + "\n", args.out)
    sys.stderr.write(format_table(report))


def cmd_heatmap(args) -> None:
    from .experiment import load_model
    from .imageio import load_image, save_heatmap
    from .policy import similarity_heatmap
    from .world import TileCache, generate_world

    lm = load_model(args.checkpoint)
    addr = tuple(int(x) for x in args.tile.split(",") if x.strip())
    world = generate_world(lm.cfg.data.world_seed, lm.cfg.world)
    tile = TileCache(world, lm.cfg.pyramid)(addr)
    sims = similarity_heatmap(lm.model, load_image(args.observation), tile)
    out = args.out or "heatmap.png"
    save_heatmap(out, sims)
    sys.stdout.write(json.dumps({"out": out, "grid": list(sims.shape), "min": float(sims.min()),
                                 "max": float(sims.max())}) + "\n")


COMMANDS = {
    "build-world": cmd_build_world,
    "curate": cmd_curate,
    "train": cmd_train,
    "eval": cmd_eval,
    "localize": cmd_localize,
    "compare": cmd_compare,
    "heatmap": cmd_heatmap,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
    except UsageError as exc:
        sys.stderr.write(SYNOPSIS + f"\nerror: {exc}\n")
        return 1
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (ZoomlocError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"zoomloc {args.command}: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
