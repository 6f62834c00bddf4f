"""Segment genomes: representation, validation, expansion to step plans.

A genome is an ordered list of (branch, interval) segment specs over a
sampler schedule of ``total_steps`` timesteps. The schedule is partitioned
into near-equal contiguous spans, one per segment, in generation order
(index 0 is the noisiest step). Each segment expands to one full step,
``interval - 1`` partial steps that reuse the full step's cached feature,
and null steps for the rest of its span.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

from ._io import canonical_json
from .errors import UnsupportedModeError, ValidationError


class Mode(str, Enum):
    CACHE = "cache"
    SOLVER_ORDER = "solver_order"


FULL = "full"
PARTIAL = "partial"
NULL = "null"


@dataclass(frozen=True)
class SegmentSpec:
    """One segment: which branch's feature is cached, and how many active steps run."""

    branch: int
    interval: int

    def __post_init__(self) -> None:
        if self.branch < 1:
            raise ValidationError(f"branch must be >= 1, got {self.branch}")
        if self.interval < 1:
            raise ValidationError(f"interval must be >= 1, got {self.interval}")


@dataclass(frozen=True)
class ScheduleGenome:
    segments: tuple[SegmentSpec, ...]
    total_steps: int
    mode: Mode = Mode.CACHE

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValidationError("genome needs at least one segment")
        if self.total_steps < 1:
            raise ValidationError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.mode is Mode.CACHE and len(self.segments) > self.total_steps:
            raise ValidationError(
                f"{len(self.segments)} segments cannot tile {self.total_steps} steps"
            )


@dataclass(frozen=True)
class StepAction:
    kind: str  # FULL, PARTIAL or NULL
    branch: int | None = None  # set for PARTIAL only


@dataclass(frozen=True)
class StepPlan:
    actions: tuple[StepAction, ...]
    total_steps: int
    effective_timesteps: tuple[int, ...]  # positions of non-null actions, increasing


@dataclass(frozen=True)
class SearchSpace:
    n_segment_choices: tuple[int, ...]
    branch_choices: tuple[int, ...]
    interval_choices: tuple[int, ...]
    total_steps: int
    b_max: int

    def __post_init__(self) -> None:
        for name in ("n_segment_choices", "branch_choices", "interval_choices"):
            choices = getattr(self, name)
            if not choices:
                raise ValidationError(f"{name} is empty")
            if list(choices) != sorted(set(choices)):
                raise ValidationError(f"{name} must be strictly increasing: {choices}")
        if self.total_steps < 1:
            raise ValidationError("total_steps must be >= 1")
        if self.b_max < 1:
            raise ValidationError("b_max must be >= 1")
        if self.branch_choices[-1] > self.b_max:
            raise ValidationError(
                f"branch choice {self.branch_choices[-1]} exceeds b_max {self.b_max}"
            )
        if self.interval_choices[-1] > self.total_steps:
            raise ValidationError(
                f"interval choice {self.interval_choices[-1]} exceeds total_steps"
            )
        if self.n_segment_choices[0] < 1 or self.n_segment_choices[-1] > self.total_steps:
            raise ValidationError("n_segment_choices must lie in [1, total_steps]")


def partition_spans(total_steps: int, n_segments: int) -> list[int]:
    """Split total_steps into n_segments near-equal spans, longer spans first."""
    if n_segments < 1 or n_segments > total_steps:
        raise ValidationError(
            f"cannot partition {total_steps} steps into {n_segments} segments"
        )
    base, extra = divmod(total_steps, n_segments)
    return [base + 1] * extra + [base] * (n_segments - extra)


def expand(genome: ScheduleGenome) -> StepPlan:
    """Expand a cache-mode genome to its per-timestep action plan.

    Each span is one full step, then interval - 1 partials on the segment's
    branch, then nulls. Intervals larger than the span clamp to the span.
    """
    if genome.mode is not Mode.CACHE:
        raise UnsupportedModeError("only cache-mode genomes expand to step plans")
    spans = partition_spans(genome.total_steps, len(genome.segments))
    actions: list[StepAction] = []
    for spec, span in zip(genome.segments, spans):
        active = min(spec.interval, span)
        actions.append(StepAction(FULL))
        actions.extend(StepAction(PARTIAL, spec.branch) for _ in range(active - 1))
        actions.extend(StepAction(NULL) for _ in range(span - active))
    effective = tuple(i for i, a in enumerate(actions) if a.kind != NULL)
    return StepPlan(tuple(actions), genome.total_steps, effective)


def nfe(genome: ScheduleGenome) -> int:
    """Number of function evaluations: active steps in cache mode, solver order sum otherwise."""
    if genome.mode is Mode.SOLVER_ORDER:
        return sum(s.interval for s in genome.segments)
    spans = partition_spans(genome.total_steps, len(genome.segments))
    return sum(min(s.interval, span) for s, span in zip(genome.segments, spans))


def validate(genome: ScheduleGenome, space: SearchSpace) -> list[str]:
    """Check a genome against a space; returns violation messages (empty = valid)."""
    problems: list[str] = []
    if genome.total_steps != space.total_steps:
        problems.append(
            f"total_steps {genome.total_steps} != space total_steps {space.total_steps}"
        )
    if len(genome.segments) not in space.n_segment_choices:
        problems.append(f"segment count {len(genome.segments)} not in choices")
    for i, spec in enumerate(genome.segments):
        if spec.branch not in space.branch_choices:
            problems.append(f"segment {i}: branch {spec.branch} not in choices")
        if spec.interval not in space.interval_choices:
            problems.append(f"segment {i}: interval {spec.interval} not in choices")
    if genome.mode is Mode.CACHE:
        if len(genome.segments) <= genome.total_steps:
            spans = partition_spans(genome.total_steps, len(genome.segments))
            for i, (spec, span) in enumerate(zip(genome.segments, spans)):
                if spec.interval > span:
                    problems.append(
                        f"segment {i}: interval {spec.interval} exceeds span {span}"
                    )
    else:
        for i, spec in enumerate(genome.segments):
            if spec.interval not in (1, 2, 3):
                problems.append(
                    f"segment {i}: solver order {spec.interval} outside 1..3"
                )
    return problems


def space_size(space: SearchSpace) -> int:
    """Exact candidate count: sum over segment-count choices s of (branches * intervals)^s."""
    per_segment = len(space.branch_choices) * len(space.interval_choices)
    return sum(per_segment**s for s in space.n_segment_choices)


def enumerate_genomes(space: SearchSpace) -> Iterator[ScheduleGenome]:
    """Yield every genome in the space. Only sensible for small spaces."""
    from itertools import product

    pairs = [
        SegmentSpec(b, k)
        for b in space.branch_choices
        for k in space.interval_choices
    ]
    for n in space.n_segment_choices:
        for combo in product(pairs, repeat=n):
            yield ScheduleGenome(combo, space.total_steps)


def deepcache_uniform(total_steps: int, interval: int, branch: int) -> ScheduleGenome:
    """Uniform baseline: ceil(T / interval) segments all set to (branch, interval).

    The last segment's interval clamps to its span, so the genome has no
    null steps: interval 1 reproduces the teacher plan.
    """
    if interval < 1 or interval > total_steps:
        raise ValidationError(f"interval {interval} outside [1, {total_steps}]")
    n = -(-total_steps // interval)
    spans = partition_spans(total_steps, n)
    segments = [SegmentSpec(branch, min(interval, span)) for span in spans]
    return ScheduleGenome(tuple(segments), total_steps)


def genome_to_dict(genome: ScheduleGenome) -> dict:
    return {
        "mode": genome.mode.value,
        "total_steps": genome.total_steps,
        "segments": [[s.branch, s.interval] for s in genome.segments],
    }


def genome_from_dict(data: dict) -> ScheduleGenome:
    try:
        mode = Mode(data.get("mode", "cache"))
        segments = tuple(SegmentSpec(int(b), int(k)) for b, k in data["segments"])
        return ScheduleGenome(segments, int(data["total_steps"]), mode)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed genome: {exc}") from exc


def space_to_dict(space: SearchSpace) -> dict:
    return {
        "n_segment_choices": list(space.n_segment_choices),
        "branch_choices": list(space.branch_choices),
        "interval_choices": list(space.interval_choices),
        "total_steps": space.total_steps,
        "b_max": space.b_max,
    }


def space_from_dict(data: dict) -> SearchSpace:
    try:
        return SearchSpace(
            n_segment_choices=tuple(int(x) for x in data["n_segment_choices"]),
            branch_choices=tuple(int(x) for x in data["branch_choices"]),
            interval_choices=tuple(int(x) for x in data["interval_choices"]),
            total_steps=int(data["total_steps"]),
            b_max=int(data["b_max"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed search space: {exc}") from exc


def genome_digest(genome: ScheduleGenome) -> str:
    """Stable sha256 of the canonical genome serialization."""
    return hashlib.sha256(canonical_json(genome_to_dict(genome)).encode()).hexdigest()
