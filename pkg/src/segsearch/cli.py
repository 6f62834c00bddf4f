"""Command-line entry point: search, inspect, and report on schedules.

Outputs are machine-readable JSON unless --format text/csv is chosen, and
every file is written atomically (a ".partial" temp file renamed into
place), so interrupted runs never leave truncated outputs. Exit codes:
0 success, 1 usage or missing-file error (with usage text on stderr),
2 engine error (with a diagnostic).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import schedule, search, simulator
from ._io import atomic_write_text, read_config, read_json
from .costmodel import genome_average_macs, load_profile
from .errors import SegsearchError
from .evaluator import ExternalEvaluator, InProcessEvaluator, build_teacher
from .metrics import FeatureExtractor


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage by default; this tool reserves 2 for
    # engine errors
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        atomic_write_text(out, text)


def _load_genome(path: str) -> schedule.ScheduleGenome:
    return schedule.genome_from_dict(read_json(path))


def _load_cost_profile(name_or_path: str | None):
    if name_or_path is None:
        return simulator.toy_cost_profile()
    return load_profile(name_or_path)


def _make_in_process(seed: int, n_images: int, total_steps: int) -> InProcessEvaluator:
    model = simulator.build_unet(simulator.UNetConfig())
    sampler = simulator.SamplerConfig()
    extractor = FeatureExtractor(seed=0, input_dims=model.config.image)
    teacher = build_teacher(
        model,
        total_steps,
        seeds=range(seed, seed + n_images),
        extractor=extractor,
        sampler=sampler,
    )
    return InProcessEvaluator(
        model, sampler, extractor, simulator.toy_cost_profile(), teacher
    )


def _open_evaluator(args, n_images: int, total_steps: int, seed: int):
    if args.backend == "extern":
        if not args.extern_cmd:
            raise SegsearchError("--backend extern requires --extern-cmd")
        return ExternalEvaluator(args.extern_cmd, n_images=n_images, seed=seed)
    return _make_in_process(seed, n_images, total_steps)


def _cmd_search(args) -> int:
    config = search.config_from_dict(read_config(args.config))
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.images is not None:
        overrides["n_images"] = args.images
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if overrides:
        config = dataclasses.replace(config, **overrides)
    profile = _load_cost_profile(args.profile)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "log.jsonl"
    header = {
        "event": "start",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "master_seed": config.master_seed,
        "budget": config.budget,
        "space_size": schedule.space_size(config.space),
    }
    evaluator = _open_evaluator(
        args, config.n_images, config.space.total_steps, config.master_seed
    )
    try:
        with open(str(log_path) + ".partial", "w", encoding="utf-8") as log_fh:
            log_fh.write(json.dumps(header) + "\n")
            population, best = search.search_loop(
                config,
                evaluator,
                profile,
                log_sink=lambda rec: log_fh.write(json.dumps(rec) + "\n"),
                checkpoint_path=args.checkpoint,
                resume_from=args.resume,
            )
        Path(str(log_path) + ".partial").replace(log_path)
    finally:
        if args.backend == "extern":
            evaluator.close()
    atomic_write_text(
        out_dir / "population.json",
        json.dumps(search.population_dump(population), indent=2),
    )
    atomic_write_text(
        out_dir / "best.genome.json",
        json.dumps(schedule.genome_to_dict(best), indent=2),
    )
    sys.stdout.write(
        f"best rfid {population[0].result.rfid:.6f} "
        f"avg_macs {population[0].result.avg_macs:.4f} "
        f"nfe {population[0].result.nfe} -> {out_dir}\n"
    )
    return 0


def _cmd_expand(args) -> int:
    genome = _load_genome(args.genome)
    plan = schedule.expand(genome)
    if args.format == "text":
        lines = []
        for i, action in enumerate(plan.actions):
            if action.kind == schedule.PARTIAL:
                lines.append(f"{i} PARTIAL b={action.branch}")
            else:
                lines.append(f"{i} {action.kind.upper()}")
        _emit("\n".join(lines) + "\n", args.out)
    else:
        payload = {
            "total_steps": plan.total_steps,
            "nfe": schedule.nfe(genome),
            "steps": [
                {"position": i, "kind": a.kind, "branch": a.branch}
                for i, a in enumerate(plan.actions)
            ],
        }
        _emit(json.dumps(payload, indent=2), args.out)
    return 0


def _cmd_cost(args) -> int:
    genome = _load_genome(args.genome)
    profile = _load_cost_profile(args.profile)
    avg = genome_average_macs(genome, profile)
    if args.format == "text":
        _emit(f"{avg:.2f}\n", args.out)
    else:
        payload = {
            "avg_macs": avg,
            "nfe": schedule.nfe(genome),
            "full_macs": profile.full_macs,
            "profile": profile.name,
        }
        _emit(json.dumps(payload, indent=2), args.out)
    return 0


def _cmd_eval(args) -> int:
    genome = _load_genome(args.genome)
    evaluator = _open_evaluator(args, args.images, genome.total_steps, args.seed)
    try:
        result = evaluator.evaluate(genome, args.images, want_mse=args.mse)
    finally:
        if args.backend == "extern":
            evaluator.close()
    if args.format == "text":
        lines = [f"rfid {result.rfid!r}", f"nfe {result.nfe}",
                 f"avg_macs {result.avg_macs!r}"]
        if result.mse is not None:
            lines.append(f"mse {result.mse!r}")
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(json.dumps(result.to_dict(), indent=2), args.out)
    return 0


def _cmd_baseline(args) -> int:
    genome = schedule.deepcache_uniform(args.steps, args.interval, args.branch)
    _emit(json.dumps(schedule.genome_to_dict(genome), indent=2), args.out)
    return 0


def _cmd_space_size(args) -> int:
    config = search.config_from_dict(read_config(args.config))
    size = schedule.space_size(config.space)
    if args.format == "text":
        _emit(f"{size}\n", args.out)
    else:
        _emit(json.dumps({"space_size": size}), args.out)
    return 0


def _cmd_report(args) -> int:
    entries = read_json(args.population)
    profile = _load_cost_profile(args.profile)
    rows = []
    for entry in entries:
        avg = float(entry["avg_macs"])
        rows.append(
            {
                "digest": entry["digest"],
                "nfe": int(entry["nfe"]),
                "avg_macs": avg,
                "speedup_vs_teacher": profile.full_macs / avg,
                "rfid": float(entry["rfid"]),
            }
        )
    rows.sort(key=lambda r: r["rfid"])
    columns = ["digest", "nfe", "avg_macs", "speedup_vs_teacher", "rfid"]
    if args.format == "json":
        _emit(json.dumps(rows, indent=2), args.out)
    elif args.format == "text":
        lines = [
            f"{r['digest'][:12]}  nfe {r['nfe']:>4}  avg {r['avg_macs']:10.4f}  "
            f"{r['speedup_vs_teacher']:.1f}x  rfid {r['rfid']:.6f}"
            for r in rows
        ]
        _emit("\n".join(lines) + ("\n" if lines else ""), args.out)
    else:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([r[c] for c in columns])
        _emit(buffer.getvalue(), args.out)
    return 0


def _cmd_trace(args) -> int:
    genome = _load_genome(args.genome)
    model = simulator.build_unet(simulator.UNetConfig())
    plan = schedule.expand(genome)
    noise = np.random.default_rng(args.seed).standard_normal(
        model.config.image, dtype=np.float32
    )
    records: list = []
    simulator.run_plan(model, plan, noise, simulator.SamplerConfig(), trace=records)
    _emit("\n".join(json.dumps(r) for r in records) + "\n", args.out)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="segsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, **kwargs) -> _Parser:
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        return p

    p = add("search", _cmd_search, help="run the evolutionary schedule search")
    p.add_argument("--config", required=True, help="search config (JSON or TOML)")
    p.add_argument("--profile", help="cost profile: builtin name or JSON path")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, help="override the config master seed")
    p.add_argument("--images", type=int, help="override images per evaluation")
    p.add_argument("--jobs", type=int, help="parallel evaluations")
    p.add_argument("--backend", choices=["sim", "extern"], default="sim")
    p.add_argument("--extern-cmd", help="external evaluator command line")
    p.add_argument("--checkpoint", help="write a checkpoint here each iteration")
    p.add_argument("--resume", help="resume from this checkpoint")

    p = add("expand", _cmd_expand, help="expand a genome into its step plan")
    p.add_argument("--genome", required=True)
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out")

    p = add("cost", _cmd_cost, help="average per-step MACs of a genome")
    p.add_argument("--genome", required=True)
    p.add_argument("--profile")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out")

    p = add("eval", _cmd_eval, help="score a genome against its teacher")
    p.add_argument("--genome", required=True)
    p.add_argument("--profile")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=256)
    p.add_argument("--backend", choices=["sim", "extern"], default="sim")
    p.add_argument("--extern-cmd")
    p.add_argument("--mse", action="store_true", help="also report pixel MSE")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out")

    p = add("baseline", _cmd_baseline, help="uniform-interval caching genome")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--branch", type=int, default=1)
    p.add_argument("--interval", type=int, required=True)
    p.add_argument("--out")

    p = add("space-size", _cmd_space_size, help="count genomes in a search space")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out")

    p = add("report", _cmd_report, help="tabulate a population dump")
    p.add_argument("--population", required=True)
    p.add_argument("--profile")
    p.add_argument("--format", choices=["csv", "json", "text"], default="csv")
    p.add_argument("--out")

    p = add("trace", _cmd_trace, help="per-step trace of one sampling run")
    p.add_argument("--genome", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"segsearch: error: file not found: {exc.filename or exc}\n")
        return 1
    except SegsearchError as exc:
        sys.stderr.write(f"segsearch: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
