"""Engine-side conformance: the real search client against this adapter.

These tests import the engine package on purpose; protocol conformance
means the engine's subprocess client (not a reimplementation) completes
its handshake, evaluations, and a deterministic search against the mock
adapter over real pipes.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import segsearch as ss

ADAPTER_CMD = [sys.executable, "-m", "extern_bridge"]

SPACE = ss.SearchSpace(
    n_segment_choices=(2, 3, 4),
    branch_choices=(1, 2, 3),
    interval_choices=(1, 2, 3),
    total_steps=20,
    b_max=3,
)


def test_handshake_reports_capabilities():
    with ss.ExternalEvaluator(ADAPTER_CMD, n_images=16) as evaluator:
        assert evaluator.capabilities == ("cache", "solver_order")


def test_fifty_eval_round_trips():
    rng = np.random.default_rng(1)
    genomes = [ss.random_genome(SPACE, rng) for _ in range(50)]
    with ss.ExternalEvaluator(ADAPTER_CMD, n_images=16) as evaluator:
        for genome in genomes:
            result = evaluator.evaluate(genome)
            assert result.nfe == ss.nfe(genome)
            assert 0.0 < result.avg_macs <= 1.0
            assert 0.0 <= result.rfid < 1.0
            assert result.images_used == 16
        # per-request determinism over the same process
        again = evaluator.evaluate(genomes[0])
        assert again.rfid == evaluator.evaluate(genomes[0]).rfid


def test_ten_iteration_search_is_deterministic():
    profile = ss.toy_cost_profile()
    config = ss.SearchConfig(
        space=SPACE,
        budget=0.8 * profile.full_macs,
        max_iterations=10,
        n_parents=4,
        n_children=3,
        n_init=8,
        master_seed=11,
        n_images=32,
    )

    def run():
        with ss.ExternalEvaluator(ADAPTER_CMD, n_images=32) as evaluator:
            population, best = ss.search_loop(config, evaluator, profile)
            return ss.population_digest(population), ss.genome_digest(best)

    first = run()
    second = run()
    assert first == second


def test_solver_order_genomes_are_served():
    genome = ss.ScheduleGenome(
        (ss.SegmentSpec(1, 2), ss.SegmentSpec(2, 3)), 20, ss.Mode.SOLVER_ORDER
    )
    with ss.ExternalEvaluator(ADAPTER_CMD, n_images=16) as evaluator:
        result = evaluator.evaluate(genome)
        assert result.nfe == 5


def test_malformed_line_gets_parse_error_then_service_continues():
    proc = subprocess.Popen(
        ADAPTER_CMD,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
        bufsize=1,
    )
    try:
        proc.stdin.write("this is not json\n")
        proc.stdin.flush()
        reply = json.loads(proc.stdout.readline())
        assert reply == {
            "type": "error",
            "id": -1,
            "code": "parse",
            "message": reply["message"],
        }
        proc.stdin.write(json.dumps({"type": "hello", "id": 0, "protocol_version": 1}) + "\n")
        proc.stdin.flush()
        ack = json.loads(proc.stdout.readline())
        assert ack["type"] == "hello_ack"
        proc.stdin.write(json.dumps({"type": "shutdown", "id": 1}) + "\n")
        proc.stdin.flush()
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
        proc.stdin.close()
        proc.stdout.close()


def test_engine_shutdown_exits_adapter_cleanly():
    evaluator = ss.ExternalEvaluator(ADAPTER_CMD, n_images=16)
    proc = evaluator._proc
    evaluator.close()
    assert proc.returncode == 0


def test_primary_package_has_no_bridge_dependency():
    """The engine and its whole test suite must run without this package."""
    package_dir = Path(ss.__file__).resolve().parent
    repo_root = package_dir.parent.parent
    primary_tests = repo_root / "tests"
    assert primary_tests.is_dir()
    offenders = [
        path
        for scope in (package_dir, primary_tests)
        for path in scope.rglob("*.py")
        if "extern_bridge" in path.read_text()
    ]
    assert offenders == []
