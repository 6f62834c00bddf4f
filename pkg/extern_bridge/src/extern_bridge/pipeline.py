"""Adapter skeleton: drive a real diffusion pipeline from a wire genome.

A genome needs three things from a host pipeline: re-spaced timesteps,
a way to read a skip-branch block output after a step (the cache), and a
way to splice that cached output into a later step. Any pipeline exposing
those hooks can run cached schedules; the teacher is the same pipeline run
with the all-full genome from identical initial noise.

The hook protocol (duck-typed):

    set_timesteps(positions)       solve only at these grid positions
    denoise_step(position)         run one solver step
    capture_branch(branch)         block output of the step that just ran
    inject_branch(branch, value)   splice a cached output into the next step
    set_solver_orders(orders)      per-step solver order (solver-order mode)
"""

from __future__ import annotations

from .plan import FULL, NULL, PARTIAL, expand_actions, parse_genome, spans

CACHE_HOOKS = ("set_timesteps", "denoise_step", "capture_branch", "inject_branch")


class CapabilityError(RuntimeError):
    """The host pipeline lacks a hook the genome needs; report it in hello_ack."""


def apply_genome_to_pipeline(genome: dict, pipeline) -> list[tuple[int, str, int]]:
    """Execute the genome's plan on the pipeline; returns the executed trace.

    Trace entries are (grid position, kind, branch-or-order). Cache mode
    walks full/partial steps and skips nulls via re-spacing; solver-order
    mode hands per-step orders to the pipeline's multi-order solver.
    """
    mode, total_steps, segments = parse_genome(genome)
    if mode == "solver_order":
        return _apply_solver_order(pipeline, total_steps, segments)
    return _apply_cache(pipeline, genome)


def _require(pipeline, hooks) -> None:
    missing = [h for h in hooks if not hasattr(pipeline, h)]
    if missing:
        raise CapabilityError(
            f"pipeline lacks block access: missing {', '.join(missing)}"
        )


def _apply_cache(pipeline, genome: dict) -> list[tuple[int, str, int]]:
    _require(pipeline, CACHE_HOOKS)
    actions = expand_actions(genome)
    active = [pos for pos, (kind, _) in enumerate(actions) if kind != NULL]
    pipeline.set_timesteps(active)
    cached = None
    trace = []
    for pos in active:
        kind, branch = actions[pos]
        if kind == FULL:
            pipeline.denoise_step(pos)
            cached = (branch, pipeline.capture_branch(branch))
        else:
            if cached is None or cached[0] != branch:
                # expansion always puts a same-branch full first; a mismatch
                # means the pipeline mangled the plan
                raise CapabilityError(f"no branch-{branch} cache at position {pos}")
            pipeline.inject_branch(*cached)
            pipeline.denoise_step(pos)
        trace.append((pos, kind, branch))
    return trace


def _apply_solver_order(pipeline, total_steps, segments) -> list[tuple[int, str, int]]:
    _require(pipeline, ("set_timesteps", "denoise_step", "set_solver_orders"))
    orders = []
    for (_, order), span in zip(segments, spans(total_steps, len(segments))):
        orders.extend([order] * span)
    positions = list(range(total_steps))
    pipeline.set_solver_orders(orders)
    pipeline.set_timesteps(positions)
    trace = []
    for pos in positions:
        pipeline.denoise_step(pos)
        trace.append((pos, "solver", orders[pos]))
    return trace
