"""Command-line entry points: train, generate, evaluate, solve, report."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, policy_from_checkpoint, trainer_from_checkpoint
from .config import default_config, parse_config
from .errors import LevelFlowError, TailoredGmmError
from .evaluation import (
    analyze_levels,
    generate_batch,
    control_eval,
    expressive_range,
    generate_with_retries,
    quality_eval,
    timing_report,
)
from .games import game_names, get_game, parse_level, render_level
from .gmm import GmmModel, tailored_gmm
from .training import Trainer, parse_training_log, train_run

OUT_ENV = "LEVELFLOW_OUT"

# Out-of-training condition source: these games refit a tailored model at
# the target size; the rest reuse the closest in-training size's model.
TAILORED_GAMES = {"zelda", "dave"}


def _default_out(game: str) -> str:
    root = os.environ.get(OUT_ENV, "runs")
    return os.path.join(root, game)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise LevelFlowError(f"--size must look like WxH, got {text!r}") from None


def _parse_controls(text: str, game) -> dict[str, int]:
    out: dict[str, int] = {}
    known = {c.name for c in game.controls}
    for part in text.split(","):
        if "=" not in part:
            raise LevelFlowError(f"--controls entries must be name=value, got {part!r}")
        name, value = part.split("=", 1)
        name = name.strip()
        if name not in known:
            raise LevelFlowError(
                f"unknown control {name!r} for {game.name}; known: {sorted(known)}")
        out[name] = int(value)
    return out


def closest_size(candidates, size):
    w, h = size
    return min(candidates,
               key=lambda s: (abs(s[0] - w) + abs(s[1] - h), s[0] * s[1], s))


def condition_model_for_size(ckpt_gmms: dict, game, policy, size,
                             rng: np.random.Generator,
                             tailored_n: int = 1000) -> tuple[GmmModel, str | None]:
    """Pick (or build) the condition model for one generation size."""
    if not ckpt_gmms:
        raise LevelFlowError(
            "checkpoint has no condition models; train for at least one "
            "iteration with playable output first")
    if size in ckpt_gmms:
        return ckpt_gmms[size], None
    base_size = closest_size(sorted(ckpt_gmms), size)
    base = ckpt_gmms[base_size]
    if game.name not in TAILORED_GAMES:
        return base, f"using condition model of closest trained size {base_size}"
    try:
        model = tailored_gmm(policy, game, base, size, sample_n=tailored_n, rng=rng)
        return model, f"tailored condition model fit at {size}"
    except TailoredGmmError as exc:
        return base, f"tailored model failed ({exc}); using {base_size} model"


def cmd_train(args) -> int:
    if args.checkpoint and args.config:
        raise LevelFlowError("pass either --config (fresh run) or --checkpoint (resume)")
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        trainer = trainer_from_checkpoint(ckpt)
        config = trainer.config
        if args.iterations is not None:
            config.iterations = args.iterations
    else:
        if args.config:
            with open(args.config) as f:
                config = parse_config(f.read())
        elif args.game:
            config = default_config(args.game)
        else:
            raise LevelFlowError("train needs --config, --game, or --checkpoint")
        if args.seed is not None:
            config.seed = args.seed
        if args.iterations is not None:
            config.iterations = args.iterations
        trainer = Trainer(config)
    out = args.out or config.out_dir or _default_out(config.game)
    config.out_dir = out
    print(f"training {config.game} for {config.iterations} iterations -> {out}")
    train_run(trainer, echo_every=args.echo_every, out_dir=out)
    print(f"done: {trainer.iteration} iterations; "
          f"buffer sizes: { {f'{w}x{h}': trainer.buffer.count((w, h)) for w, h in config.all_sizes} }")
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    policy, game = policy_from_checkpoint(ckpt)
    rng = np.random.default_rng(args.seed)
    size = _parse_size(args.size)
    controls = _parse_controls(args.controls, game) if args.controls else None
    model, note = condition_model_for_size(ckpt.gmms, game, policy, size, rng)
    if note:
        print(f"note: {note}", file=sys.stderr)
    out = args.out or _default_out(game.name)
    os.makedirs(out, exist_ok=True)
    manifest_path = os.path.join(out, "manifest.jsonl")
    written = []
    with open(manifest_path, "w") as manifest:
        for i in range(args.count):
            result = generate_with_retries(policy, game, model, size,
                                           controls=controls,
                                           trials=args.trials, rng=rng)
            name = f"{game.name}_{size[0]}x{size[1]}_{i:04d}.txt"
            with open(os.path.join(out, name), "w") as f:
                f.write(render_level(result.level, game) + "\n")
            record = {
                "file": name,
                "playable": result.analysis.playable,
                "properties": result.analysis.properties,
                "requested": result.requested,
                "trials": result.trials,
                "control_error": result.error,
                "reason": result.analysis.reason,
            }
            manifest.write(json.dumps(record, sort_keys=True) + "\n")
            written.append(record)
    playable = sum(1 for r in written if r["playable"])
    print(f"wrote {len(written)} levels to {out} ({playable} playable); "
          f"manifest: {manifest_path}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    policy, game = policy_from_checkpoint(ckpt)
    rng = np.random.default_rng(args.seed)
    sizes = ([_parse_size(s) for s in args.size]
             if args.size else ckpt.trained_sizes or sorted(ckpt.gmms))
    smoke = args.protocol == "smoke"
    n_quality = 500 if smoke else 10_000
    out = args.out or _default_out(game.name)
    os.makedirs(out, exist_ok=True)

    quality_rows = ["size\tn\tplayable\ttile_diversity\tduplicates"
                    "\tunique_signatures\tsol_len_mean\tsol_len_std"]
    control_rows = ["size\tcontrol\tn\tplayable\tmae\tr2\tscore"]
    timing_rows = ["size\tbatches\tbatch_size\tmean_s\tstd_s\tmin_s\tmax_s"]
    models: dict[tuple[int, int], GmmModel] = {}

    for size in sizes:
        w, h = size
        model, note = condition_model_for_size(ckpt.gmms, game, policy, size, rng)
        models[size] = model
        if note:
            print(f"note ({w}x{h}): {note}", file=sys.stderr)
        report = quality_eval(policy, game, model, size, n=n_quality,
                              rng=rng, threads=args.threads)
        sig = "-" if report.unique_signatures is None else f"{report.unique_signatures:.4f}"
        quality_rows.append(
            f"{w}x{h}\t{report.n}\t{report.playable:.4f}\t{report.tile_diversity:.4f}"
            f"\t{report.duplicates:.4f}\t{sig}"
            f"\t{report.solution_length_mean:.2f}\t{report.solution_length_std:.2f}")

        levels, _ = generate_batch(policy, game, model, w, h, n_quality, rng)
        analyses = analyze_levels(game, levels, args.threads)
        er = expressive_range(levels, analyses, game)
        stem = f"expressive_{game.name}_{w}x{h}"
        with open(os.path.join(out, stem + ".csv"), "w") as f:
            f.write(er.to_csv())
        with open(os.path.join(out, stem + ".svg"), "w") as f:
            f.write(er.to_svg())

        for spec in game.controls:
            values = list(spec.test_values(w, h))
            n_test = spec.n_test
            if smoke:
                values = values[:: max(1, len(values) // 8)]
                n_test = min(n_test, 25)
            creport = control_eval(policy, game, model, size, spec.name,
                                   rng=rng, n_test=n_test, test_values=values,
                                   threads=args.threads)
            control_rows.append(
                f"{w}x{h}\t{creport.control}\t{creport.n}\t{creport.playable:.4f}"
                f"\t{creport.mae:.3f}\t{creport.r2:.3f}\t{creport.score:.4f}")

    batches = 2 if smoke else 5
    batch_size = 25 if smoke else 100
    for entry in timing_report(policy, game, models, sizes,
                               batches=batches, batch_size=batch_size,
                               rng=rng, threads=args.threads):
        w, h = entry.size
        timing_rows.append(
            f"{w}x{h}\t{entry.batches}\t{entry.batch_size}\t{entry.mean_seconds:.3f}"
            f"\t{entry.std_seconds:.3f}\t{entry.min_seconds:.3f}\t{entry.max_seconds:.3f}")

    for name, rows in (("quality.tsv", quality_rows),
                       ("controls.tsv", control_rows),
                       ("timing.tsv", timing_rows)):
        with open(os.path.join(out, name), "w") as f:
            f.write("\n".join(rows) + "\n")
        print(f"wrote {os.path.join(out, name)}")
    return 0


def cmd_solve(args) -> int:
    game = get_game(args.game)
    with open(args.level) as f:
        level = parse_level(f.read(), game)
    analysis = game.analyze(level)
    print(f"playable: {analysis.playable}")
    if analysis.reason:
        print(f"reason: {analysis.reason}")
    for name in sorted(analysis.properties):
        print(f"{name}: {analysis.properties[name]}")
    if analysis.solution is not None:
        print(f"solution: {analysis.solution}")
    return 0


def cmd_report(args) -> int:
    if args.log:
        with open(args.log) as f:
            sizes, records = parse_training_log(f.read())
        if not records:
            print("empty training log")
            return 0
        last = records[-1]
        print(f"iterations: {len(records)} (last id {last['iteration']})")
        window = records[-min(100, len(records)):]
        for size in sizes:
            cells = [r["sizes"][size] for r in records]
            first_active = next((r["iteration"] for r, c in zip(records, cells)
                                 if c["active"]), None)
            first_playable = next((r["iteration"] for r, c in zip(records, cells)
                                   if c["playable"] > 0), None)
            recent = [r["sizes"][size]["playable"] for r in window]
            rate = sum(recent) / (len(recent) or 1)
            print(f"{size[0]}x{size[1]}: active from iter {first_active}, "
                  f"first playable at iter {first_playable}, "
                  f"buffer {cells[-1]['buffer']} (clusters {cells[-1]['clusters']}), "
                  f"recent playable/iter {rate:.2f}")
    if args.eval_dir:
        for name in ("quality.tsv", "controls.tsv", "timing.tsv"):
            path = os.path.join(args.eval_dir, name)
            if os.path.exists(path):
                print(f"--- {name} ---")
                with open(path) as f:
                    print(f.read().rstrip())
    if not args.log and not args.eval_dir:
        raise LevelFlowError("report needs --log and/or --eval-dir")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levelflow",
        description="Train, run, and evaluate multi-size level generators.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a generator")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--game", choices=game_names(), help="use the game's preset config")
    p.add_argument("--checkpoint", help="resume from a checkpoint")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--echo-every", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="generate levels from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--size", required=True, help="WxH, e.g. 7x7")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--controls", help="name=value[,name=value...]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="quality/control/timing reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--size", action="append", help="WxH; repeatable")
    p.add_argument("--protocol", choices=("smoke", "full"), default="smoke")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("solve", help="analyze one level file")
    p.add_argument("--game", required=True, choices=game_names())
    p.add_argument("level", help="path to a level text file")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("report", help="summarize training logs / eval tables")
    p.add_argument("--log", help="train_log.tsv path")
    p.add_argument("--eval-dir", help="directory with evaluation TSVs")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LevelFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
