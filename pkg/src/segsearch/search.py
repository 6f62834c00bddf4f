"""Segment-wise evolutionary search under a MACs budget.

Each iteration samples parents uniformly from the population, takes the
best by score, and generates children by mutating single segments one
step heavier or lighter along one dimension (branch, interval, or the
segment count via split/merge). Only strictly under-budget children are
admitted; the population keeps the top entries by score.

Randomness is derived, never threaded through mutable state: the initial
candidate for slot i draws from default_rng([master_seed, 0, i]),
iteration `it` (1-based) samples parents with default_rng([master_seed,
it]) and mutation attempt `a` uses default_rng([master_seed, it, a]).
Candidate evaluation consumes no randomness, so evaluation concurrency
cannot change results; reruns with the same master seed are identical.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, canonical_json
from .costmodel import CostProfile, within_budget
from .errors import BudgetError, CheckpointError, ValidationError
from .evaluator import EvalResult
from .schedule import (
    ScheduleGenome,
    SearchSpace,
    SegmentSpec,
    genome_digest,
    genome_from_dict,
    genome_to_dict,
    space_from_dict,
    space_to_dict,
    validate,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SearchConfig:
    space: SearchSpace
    budget: float
    max_iterations: int = 100
    n_parents: int = 25
    n_children: int = 5
    population_cap: int = 300
    max_attempts: int = 200
    n_mutation_segments: int = 1
    n_init: int = 25
    master_seed: int = 0
    n_images: int = 1000
    stagnation_iterations: int | None = None
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise ValidationError("budget must be positive")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")
        if self.n_children < 1:
            raise ValidationError("n_children must be >= 1")
        if self.n_parents < 1 or self.n_parents > self.population_cap:
            raise ValidationError("need 1 <= n_parents <= population_cap")
        if self.n_init < 1 or self.max_attempts < 1:
            raise ValidationError("n_init and max_attempts must be >= 1")
        if self.n_mutation_segments < 1:
            raise ValidationError("n_mutation_segments must be >= 1")
        if self.n_images < 2:
            raise ValidationError("n_images must be >= 2")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.stagnation_iterations is not None and self.stagnation_iterations < 1:
            raise ValidationError("stagnation_iterations must be >= 1 when set")


@dataclass(frozen=True)
class PopulationEntry:
    genome: ScheduleGenome
    result: EvalResult
    birth_iteration: int
    digest: str


def _entry_key(entry: PopulationEntry):
    return (entry.result.rfid, entry.result.avg_macs, entry.digest)


def config_to_dict(config: SearchConfig) -> dict:
    out = {
        "space": space_to_dict(config.space),
        "budget": config.budget,
        "max_iterations": config.max_iterations,
        "n_parents": config.n_parents,
        "n_children": config.n_children,
        "population_cap": config.population_cap,
        "max_attempts": config.max_attempts,
        "n_mutation_segments": config.n_mutation_segments,
        "n_init": config.n_init,
        "master_seed": config.master_seed,
        "n_images": config.n_images,
        "jobs": config.jobs,
    }
    if config.stagnation_iterations is not None:
        out["stagnation_iterations"] = config.stagnation_iterations
    return out


def config_from_dict(data: dict) -> SearchConfig:
    try:
        space = space_from_dict(data["space"])
        kwargs = {
            key: int(data[key])
            for key in (
                "max_iterations", "n_parents", "n_children", "population_cap",
                "max_attempts", "n_mutation_segments", "n_init", "master_seed",
                "n_images", "jobs",
            )
            if key in data
        }
        if data.get("stagnation_iterations") is not None:
            kwargs["stagnation_iterations"] = int(data["stagnation_iterations"])
        return SearchConfig(space=space, budget=float(data["budget"]), **kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed search config: {exc}") from exc


def random_genome(space: SearchSpace, rng: np.random.Generator) -> ScheduleGenome:
    n = int(rng.choice(space.n_segment_choices))
    segments = tuple(
        SegmentSpec(int(rng.choice(space.branch_choices)),
                    int(rng.choice(space.interval_choices)))
        for _ in range(n)
    )
    return ScheduleGenome(segments, space.total_steps)


def split_segment(
    genome: ScheduleGenome, index: int, space: SearchSpace
) -> ScheduleGenome | None:
    """Duplicate segment `index` in place, growing the segment count by one.

    Returns None (rejected) when the new count leaves the [min, max] range
    of the space's segment-count choices or exceeds total_steps. Spans are
    implicitly recomputed by the next expansion; intervals clamp there.
    """
    n = len(genome.segments)
    if not 0 <= index < n:
        raise ValidationError(f"segment index {index} out of range")
    if not space.n_segment_choices[0] <= n + 1 <= space.n_segment_choices[-1]:
        return None
    if n + 1 > genome.total_steps:
        return None
    segments = genome.segments[: index + 1] + (genome.segments[index],) + genome.segments[index + 1 :]
    return replace(genome, segments=segments)


def merge_segments(
    genome: ScheduleGenome, index: int, space: SearchSpace
) -> ScheduleGenome | None:
    """Merge segment `index` with its right neighbor, taking the element-wise min.

    The min rule makes the merge a lighter mutation. Returns None when
    there is no right neighbor or the new count leaves the allowed range.
    """
    n = len(genome.segments)
    if not 0 <= index < n:
        raise ValidationError(f"segment index {index} out of range")
    if index >= n - 1:
        return None
    if not space.n_segment_choices[0] <= n - 1 <= space.n_segment_choices[-1]:
        return None
    left, right = genome.segments[index], genome.segments[index + 1]
    merged = SegmentSpec(min(left.branch, right.branch), min(left.interval, right.interval))
    segments = genome.segments[:index] + (merged,) + genome.segments[index + 2 :]
    return replace(genome, segments=segments)


def _step_choice(value: int, choices: tuple[int, ...], heavier: bool) -> int | None:
    pos = choices.index(value)
    pos += 1 if heavier else -1
    if pos < 0 or pos >= len(choices):
        return None
    return choices[pos]


def mutate(
    parent: ScheduleGenome,
    space: SearchSpace,
    rng: np.random.Generator,
    n_mutation_segments: int = 1,
) -> ScheduleGenome | None:
    """One mutation attempt; returns None when it lands on a boundary.

    Picks n_mutation_segments distinct segments; each draws a mode
    (heavier/lighter) and a dimension (branch/interval/segment count).
    Branch and interval move one position through the sorted choice list.
    A segment-count draw splits (heavier) or merges with the right
    neighbor (lighter); it is applied once per child at most, after the
    other changes, since it renumbers segments. Any boundary hit rejects
    the whole attempt, so the caller retries against its attempt cap.
    """
    n = len(parent.segments)
    count = min(n_mutation_segments, n)
    indices = rng.choice(n, size=count, replace=False)
    segments = list(parent.segments)
    structural: tuple[int, bool] | None = None  # (index, heavier)
    for index in (int(i) for i in indices):
        heavier = bool(rng.integers(2) == 0)
        dimension = int(rng.integers(3))
        if dimension == 0:
            branch = _step_choice(segments[index].branch, space.branch_choices, heavier)
            if branch is None:
                return None
            segments[index] = replace(segments[index], branch=branch)
        elif dimension == 1:
            interval = _step_choice(
                segments[index].interval, space.interval_choices, heavier
            )
            if interval is None:
                return None
            segments[index] = replace(segments[index], interval=interval)
        elif structural is None:
            structural = (index, heavier)
    child = replace(parent, segments=tuple(segments))
    if structural is not None:
        index, heavier = structural
        child = (
            split_segment(child, index, space)
            if heavier
            else merge_segments(child, index, space)
        )
    return child


def init_population(config: SearchConfig, evaluator, profile: CostProfile | None = None) -> list[PopulationEntry]:
    """Sample, filter, and evaluate the initial population.

    Each slot i draws from its own stream until it finds a distinct
    under-budget genome, up to max_attempts draws; exhausting any slot's
    attempts raises BudgetError.
    """
    profile = _resolve_profile(evaluator, profile)
    chosen: list[ScheduleGenome] = []
    digests: set[str] = set()
    for slot in range(config.n_init):
        rng = np.random.default_rng([config.master_seed, 0, slot])
        for _ in range(config.max_attempts):
            genome = random_genome(config.space, rng)
            digest = genome_digest(genome)
            if digest in digests:
                continue
            if validate(genome, config.space):
                continue
            if not within_budget(genome, profile, config.budget):
                continue
            chosen.append(genome)
            digests.add(digest)
            break
        else:
            raise BudgetError(
                f"no feasible candidate for slot {slot} within "
                f"{config.max_attempts} attempts (budget {config.budget})"
            )
    results = _evaluate_all(config, evaluator, chosen)
    population = [
        PopulationEntry(g, r, birth_iteration=0, digest=genome_digest(g))
        for g, r in zip(chosen, results)
    ]
    population.sort(key=_entry_key)
    return population


def _resolve_profile(evaluator, profile: CostProfile | None) -> CostProfile:
    if profile is not None:
        return profile
    profile = getattr(evaluator, "profile", None)
    if profile is None:
        raise ValidationError(
            "a cost profile is required for budget admission with this evaluator"
        )
    return profile


def _evaluate_all(config: SearchConfig, evaluator, genomes: list[ScheduleGenome]) -> list[EvalResult]:
    if not genomes:
        return []
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            return list(
                pool.map(lambda g: evaluator.evaluate(g, config.n_images), genomes)
            )
    return [evaluator.evaluate(g, config.n_images) for g in genomes]


def search_loop(
    config: SearchConfig,
    evaluator,
    profile: CostProfile | None = None,
    *,
    log: list | None = None,
    log_sink=None,
    checkpoint_path: str | Path | None = None,
    resume_from: str | Path | None = None,
):
    """Run the evolutionary loop; returns (population, best genome).

    Per iteration: sample n_parents entries uniformly, mutate the best of
    the sample into up to n_children distinct, valid, under-budget
    children (bounded by max_attempts), evaluate them, merge, and keep
    the population_cap best. A checkpoint (when requested) is written
    after every iteration, so an evaluator failure aborts the run but
    leaves the last completed iteration's checkpoint behind.
    """
    profile = _resolve_profile(evaluator, profile)
    if resume_from is not None:
        completed, population = checkpoint_load(resume_from)
    else:
        completed = 0
        population = init_population(config, evaluator, profile)
    best = population[0]
    stagnant = 0
    for iteration in range(completed + 1, config.max_iterations + 1):
        rng_select = np.random.default_rng([config.master_seed, iteration])
        sample_size = min(config.n_parents, len(population))
        sampled = rng_select.choice(len(population), size=sample_size, replace=False)
        parent = min((population[int(i)] for i in sampled), key=_entry_key)

        known = {entry.digest for entry in population}
        children: list[ScheduleGenome] = []
        child_digests: list[str] = []
        for attempt in range(config.max_attempts):
            if len(children) >= config.n_children:
                break
            rng = np.random.default_rng([config.master_seed, iteration, attempt])
            child = mutate(parent.genome, config.space, rng, config.n_mutation_segments)
            if child is None:
                continue
            if validate(child, config.space):
                continue
            digest = genome_digest(child)
            if digest in known:
                continue
            if not within_budget(child, profile, config.budget):
                continue
            children.append(child)
            child_digests.append(digest)
            known.add(digest)

        results = _evaluate_all(config, evaluator, children)
        population.extend(
            PopulationEntry(g, r, birth_iteration=iteration, digest=d)
            for g, r, d in zip(children, results, child_digests)
        )
        population.sort(key=_entry_key)
        del population[config.population_cap :]

        record = {
            "iteration": iteration,
            "best_rfid": population[0].result.rfid,
            "best_macs": population[0].result.avg_macs,
            "pop_size": len(population),
            "children_admitted": len(children),
        }
        if log is not None:
            log.append(record)
        if log_sink is not None:
            log_sink(record)
        if checkpoint_path is not None:
            checkpoint_save(checkpoint_path, iteration, population)

        if population[0].result.rfid < best.result.rfid:
            best = population[0]
            stagnant = 0
        else:
            stagnant += 1
            if (
                config.stagnation_iterations is not None
                and stagnant >= config.stagnation_iterations
            ):
                break
    return population, population[0].genome


def entry_to_dict(entry: PopulationEntry) -> dict:
    return {
        "genome": genome_to_dict(entry.genome),
        "result": entry.result.to_dict(),
        "birth_iteration": entry.birth_iteration,
        "digest": entry.digest,
    }


def entry_from_dict(data: dict) -> PopulationEntry:
    try:
        result = data["result"]
        return PopulationEntry(
            genome=genome_from_dict(data["genome"]),
            result=EvalResult(
                rfid=float(result["rfid"]),
                nfe=int(result["nfe"]),
                avg_macs=float(result["avg_macs"]),
                images_used=int(result["images_used"]),
                backend=str(result["backend"]),
                mse=float(result["mse"]) if "mse" in result else None,
            ),
            birth_iteration=int(data["birth_iteration"]),
            digest=str(data["digest"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed population entry: {exc}") from exc


def population_dump(population: list[PopulationEntry]) -> list[dict]:
    """The population file format: one flat record per entry, rank order."""
    return [
        {
            "genome": genome_to_dict(entry.genome),
            "rfid": entry.result.rfid,
            "nfe": entry.result.nfe,
            "avg_macs": entry.result.avg_macs,
            "digest": entry.digest,
        }
        for entry in sorted(population, key=_entry_key)
    ]


def population_digest(population: list[PopulationEntry]) -> str:
    """Digest of the rank-ordered population; equal digests mean equal outcomes."""
    payload = canonical_json(population_dump(population))
    return hashlib.sha256(payload.encode()).hexdigest()


def checkpoint_save(path: str | Path, iteration: int, population: list[PopulationEntry]) -> None:
    """Write iteration + population with a checksum; all RNG streams are
    derived from (master_seed, iteration), so this is the complete resume
    state. The stagnation counter is not stored; a resumed run restarts it.
    """
    payload = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "population": [entry_to_dict(e) for e in population],
    }
    payload["checksum"] = hashlib.sha256(canonical_json(payload).encode()).hexdigest()
    atomic_write_text(path, json.dumps(payload))


def checkpoint_load(path: str | Path) -> tuple[int, list[PopulationEntry]]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CheckpointError(f"checkpoint {path} is not an object")
    version = data.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    stored = data.pop("checksum", None)
    expected = hashlib.sha256(canonical_json(data).encode()).hexdigest()
    if stored != expected:
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    population = [entry_from_dict(e) for e in data["population"]]
    return int(data["iteration"]), population
