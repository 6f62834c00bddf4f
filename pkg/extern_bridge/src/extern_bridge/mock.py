"""Deterministic mock evaluator for protocol conformance testing.

Scores are hash-derived: a pure function of the request's genome, seed,
n_images, and metric, so reruns of an entire search against this adapter
reproduce bit-identical results. Costs come from a fixed internal table,
not from any engine profile; the engine enforces its own budget before a
request ever reaches an adapter.
"""

from __future__ import annotations

import hashlib
import json

from .plan import FULL, NULL, expand_actions, genome_nfe, parse_genome

CAPABILITIES = ("cache", "solver_order")

# arbitrary but fixed per-branch partial costs, in mock G-MACs
_FULL_MACS = 1.0
_PARTIAL_SLOPE = 0.15


def _partial_macs(branch: int) -> float:
    return min(_PARTIAL_SLOPE * branch, _FULL_MACS)


def _score(payload: dict) -> float:
    key = json.dumps(
        {
            "genome": payload["genome"],
            "seed": payload.get("seed", 0),
            "n_images": payload.get("n_images", 0),
            "metric": payload.get("metric", "rfid"),
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    digest = hashlib.sha256(key.encode()).hexdigest()
    return int(digest[:12], 16) / 16**12


def mock_average_macs(genome: dict) -> float:
    """Mean per-step cost of the wire genome under the fixed mock table."""
    mode, total_steps, segments = parse_genome(genome)
    if mode == "solver_order":
        total = 0.0
        evals = 0
        for branch, order in segments:
            total += _FULL_MACS + (order - 1) * _partial_macs(branch)
            evals += order
        return total / evals
    total = 0.0
    for kind, branch in expand_actions(genome):
        if kind == FULL:
            total += _FULL_MACS
        elif kind != NULL:
            total += _partial_macs(branch)
    return total / total_steps


class MockAdapter:
    """Answers eval requests with deterministic hash-derived scores."""

    capabilities = CAPABILITIES

    def evaluate(self, payload: dict) -> dict:
        genome = payload["genome"]
        reply = {
            "nfe": genome_nfe(genome),
            "avg_macs": mock_average_macs(genome),
        }
        metric = payload.get("metric", "rfid")
        if metric == "mse":
            reply["mse"] = _score(payload)
        else:
            reply["rfid"] = _score(payload)
        return reply
