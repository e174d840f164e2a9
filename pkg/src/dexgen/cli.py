"""Command-line entry point: ``dexgen <command> ...``.

Exit codes: 0 success, 1 verification or validation failure, 2 usage or
input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import yaml

from dexgen.datagen import ConfigError, GenConfig, demo_noise_baseline, derive_seed, generate_dataset, noise_sigmas
from dexgen.dataset import (
    DatasetError,
    DatasetWriter,
    compute_stats,
    iter_episodes,
    load_demo,
    projections_csv,
    projections_svg,
    read_episode,
    read_manifest,
    read_sources,
    replay_check,
    save_demo,
    verify,
)
from dexgen.demo import SegmentationError, SegmentedDemo, SourceDemo, import_manual_segmentation, scripted_expert, segment, validate
from dexgen.expert import ExpertError
from dexgen.tasks import ARMS, TaskError, TaskSpec, resolve_task

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or unreadable inputs (exit 2)."""


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DEXGEN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"DEXGEN_SEED must be an integer, got {env!r}") from None


def _task(name: str) -> TaskSpec:
    try:
        return resolve_task(name)
    except (TaskError, OSError) as e:
        raise UsageError(str(e)) from e


def _demo_paths(items: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("*.jsonl"))
            if not found:
                raise UsageError(f"no demo files in {p}")
            paths += found
        elif p.is_file():
            paths.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    return paths


def _load_demos(items: list[str], task: TaskSpec, segmented: bool):
    out = []
    for p in _demo_paths(items):
        d = load_demo(p, task)
        name = d.task if isinstance(d, SourceDemo) else d.demo.task
        if name != task.name:
            raise UsageError(f"{p}: demo is for task '{name}', not '{task.name}'")
        if segmented and isinstance(d, SourceDemo):
            d = segment(d, task)
        if not segmented and isinstance(d, SegmentedDemo):
            d = d.demo
        out.append(d)
    return out


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- commands ------------------------------------------------------------------------


def cmd_demo(args) -> int:
    task = _task(args.task)
    seed = _seed(args)
    out = Path(args.out)
    written = 0
    attempt = 0
    budget = args.n * args.max_retries
    while written < args.n and attempt < budget:
        s = derive_seed(seed, attempt)
        attempt += 1
        try:
            demo = scripted_expert(task, s, args.variant, demo_id=f"{task.name}-src{written:03d}")
        except ExpertError as e:
            _say(f"warning: {e}; retrying with a new seed")
            continue
        save_demo(out / f"{demo.id}.jsonl", demo, task)
        written += 1
    if written < args.n:
        _say(f"error: expert produced only {written}/{args.n} successful demos in {attempt} attempts")
        return EXIT_FAIL
    print(f"wrote {written} demos for {task.name} to {out}")
    return EXIT_OK


def _read_manual(path: str) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from e
    except yaml.YAMLError as e:
        raise UsageError(f"{path}: parse error: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: expected a mapping of demo id -> {{left: [...], right: [...]}}")
    return doc


def cmd_segment(args) -> int:
    task = _task(args.task)
    demos = _load_demos(args.demos, task, segmented=False)
    manual = _read_manual(args.manual) if args.manual else None
    out = Path(args.out)
    report: dict[str, list[str]] = {}
    for d in demos:
        try:
            if manual is None:
                sd = segment(d, task)
            else:
                spec = manual.get(d.id, manual if set(manual) <= set(ARMS) else None)
                if spec is None:
                    raise UsageError(f"{args.manual}: no boundaries for demo '{d.id}'")
                sd = import_manual_segmentation(d, task, spec)
        except SegmentationError as e:
            if manual is not None:
                raise UsageError(f"demo '{d.id}': {e}") from e
            report[d.id] = [str(e)]
            continue
        report[d.id] = validate(sd, task)
        save_demo(out / f"{d.id}.jsonl", sd, task)
    (out / "segmentation_report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    bad = {k: v for k, v in report.items() if v}
    for k, v in bad.items():
        for msg in v:
            print(f"{k}: {msg}")
    print(f"segmented {len(demos) - len(bad)}/{len(demos)} demos cleanly -> {out}")
    return EXIT_FAIL if bad else EXIT_OK


def _overrides(text: str | None) -> dict[str, str]:
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--scheme-overrides: expected key=scheme, got '{item}'")
        out[key.strip()] = val.strip()
    return out


def _finish(writer: DatasetWriter, stats, elapsed: float, n: int) -> int:
    writer.finalize(stats)
    d = stats.to_dict()
    print(
        f"{d['successes']}/{n} episodes from {d['attempts']} attempts "
        f"(generation success rate {d['success_rate']:.3f}) in {elapsed:.1f}s -> {writer.root}"
    )
    if d["failures"]:
        print("failures: " + ", ".join(f"{k}={v}" for k, v in d["failures"].items()))
    if stats.budget_exhausted:
        _say(f"warning: attempt budget exhausted with {d['successes']}/{n} successes; dataset is partial")
    return EXIT_OK


def cmd_generate(args) -> int:
    task = _task(args.task)
    config = GenConfig(
        n_interpolation_steps=args.interp,
        source_selection=args.source_mix,
        enforce_ordering=args.ordering == "on",
        variant=args.variant,
        scheme_overrides=_overrides(args.scheme_overrides),
        seed=_seed(args),
        allow_unsafe=args.unsafe,
        keep_failures=args.keep_failures,
        max_episode_steps=args.max_steps,
    )
    demos = _load_demos(args.demos, task, segmented=True)
    for d in demos:
        problems = validate(d, task)
        if problems:
            raise UsageError(f"demo '{d.id}': invalid segmentation: {problems[0]}")
    writer = DatasetWriter(args.out, task, config, demos)
    t0 = time.perf_counter()
    _, stats = generate_dataset(task, demos, config, args.n, jobs=args.jobs, sink=writer.add)
    return _finish(writer, stats, time.perf_counter() - t0, args.n)


def cmd_baseline(args) -> int:
    task = _task(args.task)
    try:
        noise = noise_sigmas([float(v) for v in args.noise.split(",")])
    except ValueError as e:
        raise UsageError(f"--noise: {e}") from e
    config = GenConfig(seed=_seed(args), noise=noise, keep_failures=args.keep_failures)
    demos = _load_demos(args.demos, task, segmented=False)
    writer = DatasetWriter(args.out, task, config, demos, kind="demo-noise")
    t0 = time.perf_counter()
    _, stats = demo_noise_baseline(task, demos, noise, config, args.n, variant=args.variant, jobs=args.jobs, sink=writer.add)
    return _finish(writer, stats, time.perf_counter() - t0, args.n)


def cmd_replay(args) -> int:
    path = Path(args.episode)
    if not path.is_file():
        raise UsageError(f"no such episode file: {path}")
    rec = read_episode(path)
    diverged, success_ok = replay_check(rec)
    if diverged is not None:
        print(f"{path}: replay diverges at step {diverged}")
        return EXIT_FAIL
    if not success_ok:
        print(f"{path}: success flag {rec.success} does not match the success predicate")
        return EXIT_FAIL
    print(f"{path}: {rec.length} steps reproduced exactly; success={rec.success}")
    return EXIT_OK


def cmd_stats(args) -> int:
    root = Path(args.dataset)
    manifest = read_manifest(root)
    report = compute_stats(iter_episodes(root, manifest), read_sources(root, manifest))
    out = Path(args.out) if args.out else root / "stats"
    out.mkdir(parents=True, exist_ok=True)
    (out / "projections.csv").write_text(projections_csv(report))
    (out / "projections.svg").write_text(projections_svg(report))
    summary = report.summary()
    (out / "stats.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"{report.n_episodes} episodes, success rate {report.success_rate:.3f}, lengths {report.lengths}")
    for name, fam in report.families.items():
        if fam.note:
            print(f"  {name}: {fam.note}")
        else:
            evr = ", ".join(f"{v:.4f}" for v in fam.explained_variance_ratio[:2])
            hull = "" if fam.source_inside_generated_hull is None else f", source inside generated hull: {fam.source_inside_generated_hull}"
            print(f"  {name}: top-2 explained variance [{evr}]{hull}")
    print(f"wrote {out}/projections.csv, projections.svg, stats.json")
    return EXIT_OK


def cmd_verify(args) -> int:
    root = Path(args.dataset)
    if not (root / "manifest.json").is_file():
        raise UsageError(f"no manifest.json in {root}")
    problems = verify(root, replay=not args.no_replay)
    for p in problems:
        print(p)
    if problems:
        print(f"{root}: {len(problems)} problem(s)")
        return EXIT_FAIL
    print(f"{root}: ok")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dexgen", description="Bimanual demonstration generation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help="master seed (default: $DEXGEN_SEED or 0)")

    sp = sub.add_parser("demo", help="synthesize source demos with the scripted expert")
    sp.add_argument("task")
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--variant", default="D0")
    sp.add_argument("--max-retries", type=int, default=10, help="attempt budget per requested demo")
    sp.add_argument("--out", required=True)
    seeded(sp)
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("segment", help="split demos into per-arm subtask segments")
    sp.add_argument("task")
    sp.add_argument("demos", nargs="+", help="demo files or directories")
    sp.add_argument("--manual", help="YAML/JSON file of per-demo boundaries {id: {left: [...], right: [...]}}")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("generate", help="generate a success-filtered dataset")
    sp.add_argument("task")
    sp.add_argument("demos", nargs="+", help="segmented demo files or directories")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--variant", default="D0")
    sp.add_argument("--scheme-overrides", help="comma-separated group=scheme or arm:index=scheme")
    sp.add_argument("--ordering", choices=("on", "off"), default="on")
    sp.add_argument("--source-mix", choices=("same", "independent"), default="same")
    sp.add_argument("--unsafe", action="store_true", help="allow independent sources with ordering off")
    sp.add_argument("--interp", type=int, default=25, help="interpolation steps before each segment")
    sp.add_argument("--max-steps", type=int, default=None)
    sp.add_argument("--keep-failures", action="store_true")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    seeded(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("baseline", help="Demo-Noise baseline: replay source actions with noise")
    sp.add_argument("task")
    sp.add_argument("demos", nargs="+")
    sp.add_argument("--noise", default="0", help="std: pos[,rot[,hand]]")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--variant", default=None, help="sample resets from this distribution instead of the demo's start")
    sp.add_argument("--keep-failures", action="store_true")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    seeded(sp)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("replay", help="re-simulate an episode file and compare")
    sp.add_argument("episode")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("stats", help="episode statistics and PCA projections")
    sp.add_argument("dataset")
    sp.add_argument("--out", help="output directory (default: <dataset>/stats)")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("verify", help="check digests, replay consistency and success flags")
    sp.add_argument("dataset")
    sp.add_argument("--no-replay", action="store_true")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for flag in ("n", "jobs", "interp", "max_retries"):
        v = getattr(args, flag, None)
        if v is not None and v < 1:
            parser.error(f"--{flag.replace('_', '-')} must be >= 1")
    try:
        return args.func(args)
    except (UsageError, ConfigError, TaskError, SegmentationError, DatasetError) as e:
        _say(f"error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
