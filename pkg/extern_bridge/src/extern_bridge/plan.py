"""Wire-format genome handling.

The engine serializes a genome as {"mode", "total_steps", "segments"},
where segments is a list of [branch, interval] pairs. This module expands
that dict into per-step actions without importing the engine: the wire
format is the contract, and the adapter side may be a different process,
machine, or language.
"""

from __future__ import annotations

FULL = "full"
PARTIAL = "partial"
NULL = "null"

MODES = ("cache", "solver_order")


class GenomeFormatError(ValueError):
    """The received genome dict does not match the wire format."""


def parse_genome(data: dict) -> tuple[str, int, list[tuple[int, int]]]:
    """Validate a wire genome; returns (mode, total_steps, segments)."""
    if not isinstance(data, dict):
        raise GenomeFormatError(f"genome must be an object, got {type(data).__name__}")
    mode = data.get("mode", "cache")
    if mode not in MODES:
        raise GenomeFormatError(f"unknown mode {mode!r}")
    try:
        total_steps = int(data["total_steps"])
        segments = [(int(b), int(k)) for b, k in data["segments"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise GenomeFormatError(f"malformed genome: {exc}") from exc
    if total_steps < 1:
        raise GenomeFormatError(f"total_steps must be >= 1, got {total_steps}")
    if not 1 <= len(segments) <= total_steps:
        raise GenomeFormatError(
            f"{len(segments)} segments cannot tile {total_steps} steps"
        )
    for b, k in segments:
        if b < 1 or k < 1:
            raise GenomeFormatError(f"segment ({b}, {k}) must be positive")
    return mode, total_steps, segments


def spans(total_steps: int, n_segments: int) -> list[int]:
    """Contiguous segment lengths: longer spans first, difference at most one."""
    base, extra = divmod(total_steps, n_segments)
    return [base + 1] * extra + [base] * (n_segments - extra)


def expand_actions(data: dict) -> list[tuple[str, int]]:
    """Per-step (kind, branch) list for a cache-mode wire genome.

    Each segment runs one full step, interval-1 partials, and nulls for the
    rest of its span; an interval longer than the span clamps to it.
    """
    mode, total_steps, segments = parse_genome(data)
    if mode != "cache":
        raise GenomeFormatError("only cache-mode genomes expand to step plans")
    actions: list[tuple[str, int]] = []
    for (branch, interval), span in zip(segments, spans(total_steps, len(segments))):
        active = min(interval, span)
        actions.append((FULL, branch))
        actions.extend([(PARTIAL, branch)] * (active - 1))
        actions.extend([(NULL, branch)] * (span - active))
    return actions


def genome_nfe(data: dict) -> int:
    """Active (non-null) step count; solver-order genomes sum their orders."""
    mode, total_steps, segments = parse_genome(data)
    if mode == "solver_order":
        return sum(k for _, k in segments)
    return sum(
        min(k, span)
        for (_, k), span in zip(segments, spans(total_steps, len(segments)))
    )
