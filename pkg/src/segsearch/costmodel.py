"""MACs cost model: per-step costs, schedule averages, budget checks.

All figures are in G-MACs (1e9 multiply-accumulates). A profile maps each
skip branch to the cost of a cache-reusing partial step; by convention the
deepest branch is billed at the full-step cost, since caching there skips
nothing that matters for the bill.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import ProfileError, ValidationError
from .schedule import (
    FULL,
    NULL,
    PARTIAL,
    Mode,
    ScheduleGenome,
    StepAction,
    StepPlan,
    expand,
)

BUILTIN_PROFILES = ("ldm_imagenet", "ddpm_cifar", "sd_v15")


@dataclass(frozen=True)
class CostProfile:
    name: str
    full_macs: float
    partial_macs: Mapping[int, float]
    b_max: int

    def __post_init__(self) -> None:
        if self.full_macs <= 0:
            raise ProfileError(f"{self.name}: full_macs must be positive")
        if self.b_max < 1:
            raise ProfileError(f"{self.name}: b_max must be >= 1")
        object.__setattr__(
            self, "partial_macs", MappingProxyType(dict(self.partial_macs))
        )
        prev = 0.0
        for b in sorted(self.partial_macs):
            cost = self.partial_macs[b]
            if not 0 < cost <= self.full_macs:
                raise ProfileError(
                    f"{self.name}: partial_macs[{b}]={cost} outside (0, full]"
                )
            if cost < prev:
                raise ProfileError(f"{self.name}: partial_macs not monotone at branch {b}")
            prev = cost
        deepest = self.partial_macs.get(self.b_max)
        if deepest is None or not math.isclose(deepest, self.full_macs, rel_tol=1e-9):
            raise ProfileError(
                f"{self.name}: partial_macs[{self.b_max}] must equal full_macs"
            )


def step_cost(action: StepAction, profile: CostProfile) -> float:
    if action.kind == NULL:
        return 0.0
    if action.kind == FULL:
        return profile.full_macs
    if action.kind == PARTIAL:
        cost = profile.partial_macs.get(action.branch)
        if cost is None:
            raise ProfileError(
                f"{profile.name}: no partial cost for branch {action.branch}"
            )
        return cost
    raise ValidationError(f"unknown action kind {action.kind!r}")


def average_macs(plan: StepPlan, profile: CostProfile) -> float:
    """Mean step cost over all timesteps; null steps cost 0 but still count."""
    return sum(step_cost(a, profile) for a in plan.actions) / plan.total_steps


def genome_average_macs(genome: ScheduleGenome, profile: CostProfile) -> float:
    """Average MACs per evaluation for either genome mode.

    Cache mode averages the expanded plan over its timesteps. Solver-order
    mode bills each segment as one full evaluation plus (order - 1)
    partials at the segment's branch, averaged over the total evaluations.
    """
    if genome.mode is Mode.CACHE:
        return average_macs(expand(genome), profile)
    total = 0.0
    evals = 0
    for spec in genome.segments:
        total += profile.full_macs
        if spec.interval > 1:
            total += (spec.interval - 1) * step_cost(
                StepAction(PARTIAL, spec.branch), profile
            )
        evals += spec.interval
    return total / evals


def derive_partial_macs(
    full: float, avg: float, interval: int, total_steps: int
) -> float:
    """Back out the partial-step cost of a uniform-interval schedule.

    Solves (n_full * full + n_partial * p) / total_steps = avg, where a
    uniform schedule has ceil(total_steps / interval) full steps and
    partials everywhere else.
    """
    if not 0 < avg < full:
        raise ProfileError(f"average {avg} must lie strictly between 0 and full {full}")
    n_full = -(-total_steps // interval)
    n_partial = total_steps - n_full
    if n_partial == 0:
        raise ProfileError("interval 1 schedule has no partial steps to calibrate")
    p = (avg * total_steps - n_full * full) / n_partial
    if p <= 0:
        raise ProfileError(
            f"infeasible profile: derived partial cost {p:.4f} is not positive"
        )
    return p


def within_budget(genome: ScheduleGenome, profile: CostProfile, budget: float) -> bool:
    """Strict admission test: average MACs must be below the budget."""
    return genome_average_macs(genome, profile) < budget


def profile_to_dict(profile: CostProfile) -> dict:
    return {
        "name": profile.name,
        "full_macs": profile.full_macs,
        "partial_macs": {str(b): c for b, c in profile.partial_macs.items()},
        "b_max": profile.b_max,
    }


def profile_from_dict(data: dict) -> CostProfile:
    try:
        return CostProfile(
            name=str(data["name"]),
            full_macs=float(data["full_macs"]),
            partial_macs={int(b): float(c) for b, c in data["partial_macs"].items()},
            b_max=int(data["b_max"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProfileError(f"malformed profile: {exc}") from exc


def load_profile(source: str | Path) -> CostProfile:
    """Load a profile by builtin name ('ldm_imagenet', 'ddpm_cifar', 'sd_v15') or file path."""
    name = str(source)
    if name in BUILTIN_PROFILES:
        text = (
            resources.files("segsearch").joinpath(f"profiles/{name}.json").read_text()
        )
        return profile_from_dict(json.loads(text))
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"no such profile: {source}")
    return profile_from_dict(json.loads(path.read_text()))
