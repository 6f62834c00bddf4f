"""Deterministic toy U-Net diffusion sampler with segment feature caching.

The model is a small untrained U-Net: per level a stride-2 3x3 conv with a
per-level additive time bias and tanh, one 3x3 middle conv, and per level
an upsample + 3x3 conv + tanh over the channel-concatenated [skip, up]
pair. Branch b's cacheable feature is the up-path tensor entering junction
b (the middle output for the deepest branch). A partial step computes only
down blocks 1..b and up blocks b..1, splicing the cached feature in place
of everything deeper. Null steps are realized by DDIM timestep re-spacing:
the update jumps directly to the next effective timestep's alpha-bar.

Convolutions run through torch in float32 (weights live as torch tensors,
exposed as attributes for test oracles); the DDIM state update itself is
plain float32 numpy, so a reference sampler loop written against the
public forward functions reproduces run_plan bit for bit.

Determinism is per call shape: the same (model, plan, seed list) always
reproduces the same images, but conv kernels are selected by tensor
shape, so regrouping the same seeds into a different batch size can move
results by float32 ulps. Evaluations therefore always process one fixed
batch per seed list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import torch
import torch.nn.functional as F

from .costmodel import CostProfile
from .errors import CacheMissError, ValidationError
from .schedule import FULL, NULL, PARTIAL, StepPlan

_GMAC = 1e9


@dataclass(frozen=True)
class UNetConfig:
    image: tuple[int, int, int] = (16, 16, 1)  # (H, W, C)
    levels: int = 3
    base_channels: int = 8
    weight_seed: int = 0
    t_embed_dim: int = 8

    def __post_init__(self) -> None:
        h, w, c = self.image
        if self.levels < 1:
            raise ValidationError("levels must be >= 1")
        if h % (1 << self.levels) or w % (1 << self.levels):
            raise ValidationError(
                f"image {h}x{w} not divisible by 2^{self.levels}"
            )
        if c < 1 or self.base_channels < 1:
            raise ValidationError("channel counts must be positive")
        if self.t_embed_dim < 2 or self.t_embed_dim % 2:
            raise ValidationError("t_embed_dim must be even and >= 2")

    def channels(self, level: int) -> int:
        """Channel count at level b (level 0 is the image itself)."""
        if level == 0:
            return self.image[2]
        return self.base_channels << (level - 1)

    def feature_shape(self, branch: int) -> tuple[int, int, int]:
        """(H, W, C) of the cacheable up-path feature at junction `branch`."""
        h, w, _ = self.image
        return (h >> branch, w >> branch, self.channels(branch))


@dataclass(frozen=True)
class SamplerConfig:
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    eta: float = 0.0  # deterministic DDIM only

    def __post_init__(self) -> None:
        if self.train_steps < 1:
            raise ValidationError("train_steps must be >= 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValidationError("betas must satisfy 0 < start <= end < 1")
        if self.eta != 0.0:
            raise ValidationError("only eta=0 (deterministic) sampling is supported")

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        betas = np.linspace(
            self.beta_start, self.beta_end, self.train_steps, dtype=np.float64
        )
        return np.cumprod(1.0 - betas)


@dataclass
class CacheSlot:
    """A stored branch feature from a segment's full step (channels-last numpy)."""

    branch: int
    feature: np.ndarray
    source_timestep: int


class UNet:
    """Weights and forward passes of the toy denoiser. Built via build_unet."""

    def __init__(self, config: UNetConfig, weights: dict):
        self.config = config
        self.down_w: list[torch.Tensor] = weights["down_w"]
        self.down_b: list[torch.Tensor] = weights["down_b"]
        self.tmap_w: list[torch.Tensor] = weights["tmap_w"]
        self.tmap_b: list[torch.Tensor] = weights["tmap_b"]
        self.mid_w: torch.Tensor = weights["mid_w"]
        self.mid_b: torch.Tensor = weights["mid_b"]
        self.up_w: list[torch.Tensor] = weights["up_w"]
        self.up_b: list[torch.Tensor] = weights["up_b"]
        self._tbias_cache: dict[int, tuple[torch.Tensor, ...]] = {}

    def parameter_count(self) -> int:
        tensors = (
            self.down_w + self.down_b + self.tmap_w + self.tmap_b
            + [self.mid_w, self.mid_b] + self.up_w + self.up_b
        )
        return sum(t.numel() for t in tensors)


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal timestep embedding: [sin(t * w_i), cos(t * w_i)] with log-spaced w."""
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half, dtype=np.float64) / max(half - 1, 1))
    args = t * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


def build_unet(config: UNetConfig) -> UNet:
    """Create the model with weights drawn deterministically from weight_seed.

    Draw order: per level the down conv weight, its bias, the time-bias map
    weight and bias; then the middle conv weight and bias; then up conv
    weights and biases from the deepest junction to the shallowest. Every
    tensor is uniform in [-a, a] with a = sqrt(6 / fan_in) (conv fan_in =
    in_channels * 9, time map fan_in = t_embed_dim), drawn in float64 and
    cast to float32.
    """
    torch.set_num_threads(1)  # keep conv summation order fixed
    rng = np.random.default_rng(config.weight_seed)

    def draw(shape, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        arr = rng.uniform(-bound, bound, size=shape)
        return torch.from_numpy(arr.astype(np.float32))

    b_total = config.levels
    weights = {
        "down_w": [], "down_b": [], "tmap_w": [], "tmap_b": [],
        "up_w": [], "up_b": [],
    }
    for b in range(1, b_total + 1):
        cin, cout = config.channels(b - 1), config.channels(b)
        weights["down_w"].append(draw((cout, cin, 3, 3), cin * 9))
        weights["down_b"].append(draw((cout,), cin * 9))
        weights["tmap_w"].append(draw((cout, config.t_embed_dim), config.t_embed_dim))
        weights["tmap_b"].append(draw((cout,), config.t_embed_dim))
    c_deep = config.channels(b_total)
    weights["mid_w"] = draw((c_deep, c_deep, 3, 3), c_deep * 9)
    weights["mid_b"] = draw((c_deep,), c_deep * 9)
    up_w, up_b = [], []
    for b in range(b_total, 0, -1):
        cin = 2 * config.channels(b)
        cout = config.channels(b - 1)
        up_w.append(draw((cout, cin, 3, 3), cin * 9))
        up_b.append(draw((cout,), cin * 9))
    # store indexed by junction: up_w[b-1] belongs to junction b
    weights["up_w"] = list(reversed(up_w))
    weights["up_b"] = list(reversed(up_b))
    return UNet(config, weights)


def _time_biases(model: UNet, t: int) -> tuple[torch.Tensor, ...]:
    cached = model._tbias_cache.get(t)
    if cached is None:
        emb = torch.from_numpy(
            time_embedding(t, model.config.t_embed_dim).astype(np.float32)
        )
        cached = tuple(
            model.tmap_w[i] @ emb + model.tmap_b[i]
            for i in range(model.config.levels)
        )
        model._tbias_cache[t] = cached
    return cached


def _down_path(model: UNet, xt: torch.Tensor, t: int, depth: int) -> list[torch.Tensor]:
    biases = _time_biases(model, t)
    outs = []
    h = xt
    for i in range(depth):
        h = torch.tanh(
            F.conv2d(h, model.down_w[i], model.down_b[i], stride=2, padding=1)
            + biases[i].view(1, -1, 1, 1)
        )
        outs.append(h)
    return outs


def _up_path(
    model: UNet,
    downs: list[torch.Tensor],
    u: torch.Tensor,
    from_branch: int,
    feats: dict | None = None,
) -> torch.Tensor:
    for b in range(from_branch, 0, -1):
        if feats is not None:
            feats[b] = u
        cat = torch.cat([downs[b - 1], u], dim=1)
        up = F.interpolate(cat, scale_factor=2.0, mode="nearest")
        u = torch.tanh(F.conv2d(up, model.up_w[b - 1], model.up_b[b - 1], padding=1))
    return u


def _forward_full_t(model: UNet, xt: torch.Tensor, t: int):
    downs = _down_path(model, xt, t, model.config.levels)
    mid = F.conv2d(downs[-1], model.mid_w, model.mid_b, padding=1)
    feats: dict[int, torch.Tensor] = {}
    eps = _up_path(model, downs, mid, model.config.levels, feats)
    return eps, feats


def _forward_partial_t(
    model: UNet, xt: torch.Tensor, t: int, branch: int, feature: torch.Tensor
) -> torch.Tensor:
    downs = _down_path(model, xt, t, branch)
    return _up_path(model, downs, feature, branch)


def _to_batch(x: np.ndarray) -> torch.Tensor:
    """(N, H, W, C) float32 numpy to a contiguous (N, C, H, W) torch tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(x, -1, 1)))


def _from_batch(xt: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(xt.numpy(), 1, -1))


def forward_full(model: UNet, x: np.ndarray, t: int):
    """Full denoiser pass on one (H, W, C) image at train timestep t.

    Returns (eps, features): the noise prediction and, per branch, the
    cacheable up-path feature entering that junction (channels-last).
    """
    arr = np.asarray(x, dtype=np.float32)
    if arr.shape != model.config.image:
        raise ValidationError(f"expected image {model.config.image}, got {arr.shape}")
    eps_t, feats_t = _forward_full_t(model, _to_batch(arr[None]), int(t))
    eps = _from_batch(eps_t)[0]
    feats = {b: _from_batch(f)[0] for b, f in feats_t.items()}
    return eps, feats


def forward_partial(model: UNet, x: np.ndarray, t: int, cache: CacheSlot) -> np.ndarray:
    """Shallow pass splicing the cached feature at the cache's branch."""
    if cache is None or cache.feature is None:
        raise CacheMissError("partial step has no cached feature")
    if not 1 <= cache.branch <= model.config.levels:
        raise ValidationError(f"branch {cache.branch} outside 1..{model.config.levels}")
    expected = model.config.feature_shape(cache.branch)
    feat = np.asarray(cache.feature, dtype=np.float32)
    if feat.shape != expected:
        raise ValidationError(
            f"cache feature shape {feat.shape} != junction shape {expected}"
        )
    arr = np.asarray(x, dtype=np.float32)
    if arr.shape != model.config.image:
        raise ValidationError(f"expected image {model.config.image}, got {arr.shape}")
    eps_t = _forward_partial_t(
        model, _to_batch(arr[None]), int(t), cache.branch, _to_batch(feat[None])
    )
    return _from_batch(eps_t)[0]


def sampler_grid(total_steps: int, sampler: SamplerConfig) -> np.ndarray:
    """Evenly spaced train timesteps in generation order (noisiest first)."""
    if not 1 <= total_steps <= sampler.train_steps:
        raise ValidationError(
            f"total_steps {total_steps} outside [1, {sampler.train_steps}]"
        )
    if total_steps == 1:
        return np.array([sampler.train_steps - 1])
    grid = np.round(np.linspace(0, sampler.train_steps - 1, total_steps)).astype(int)
    return grid[::-1].copy()


def _cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    fa = a.reshape(-1).numpy().astype(np.float64)
    fb = b.reshape(-1).numpy().astype(np.float64)
    denom = float(np.linalg.norm(fa) * np.linalg.norm(fb))
    if denom == 0.0:
        return 0.0
    return float(fa @ fb / denom)


def _run_batch(
    model: UNet,
    plan: StepPlan,
    noise: np.ndarray,
    sampler: SamplerConfig,
    trace: list | None = None,
) -> np.ndarray:
    grid = sampler_grid(plan.total_steps, sampler)
    abars = sampler.alpha_bars
    macs = None
    if trace is not None:
        full_g, partial_g = count_macs(model.config)
        macs = (full_g, partial_g)
    x = np.ascontiguousarray(np.moveaxis(noise, -1, 1))  # (N, C, H, W) float32
    cache: dict[int, torch.Tensor] = {}
    prev_feats: dict[int, torch.Tensor] = {}
    eff = plan.effective_timesteps
    emitted = 0

    def emit_nulls(upto: int) -> None:
        nonlocal emitted
        for p in range(emitted, upto):
            trace.append(
                {"position": p, "timestep": int(grid[p]), "action": NULL,
                 "branch": None, "macs": 0.0}
            )
        emitted = upto

    for j, pos in enumerate(eff):
        t = int(grid[pos])
        action = plan.actions[pos]
        xt = torch.from_numpy(x)
        if action.kind == FULL:
            eps_t, feats = _forward_full_t(model, xt, t)
            cache = feats
        elif action.kind == PARTIAL:
            feat = cache.get(action.branch)
            if feat is None:
                raise CacheMissError(
                    f"partial step at position {pos} before any full step"
                )
            eps_t = _forward_partial_t(model, xt, t, action.branch, feat)
        else:
            raise ValidationError(f"unexpected action {action.kind!r} in plan")
        if trace is not None:
            emit_nulls(pos)
            record = {
                "position": pos, "timestep": t, "action": action.kind,
                "branch": action.branch,
                "macs": macs[0] if action.kind == FULL else macs[1][action.branch],
            }
            if action.kind == FULL:
                sims = {
                    str(b): _cosine(feats[b], prev_feats[b])
                    for b in feats if b in prev_feats
                }
                if sims:
                    record["feature_cosine"] = sims
                prev_feats = dict(feats)
            trace.append(record)
            emitted = pos + 1
        eps = eps_t.numpy()
        a_cur = float(abars[t])
        if j + 1 < len(eff):
            a_next = float(abars[int(grid[eff[j + 1]])])
        else:
            a_next = 1.0  # final update lands on the clean image estimate
        x0 = (x - math.sqrt(1.0 - a_cur) * eps) / math.sqrt(a_cur)
        x = math.sqrt(a_next) * x0 + math.sqrt(1.0 - a_next) * eps
    if trace is not None:
        emit_nulls(plan.total_steps)
    return np.ascontiguousarray(np.moveaxis(x, 1, -1))


def run_plan(
    model: UNet,
    plan: StepPlan,
    noise: np.ndarray,
    sampler: SamplerConfig,
    trace: list | None = None,
) -> np.ndarray:
    """Run one (H, W, C) noise image through the plan's DDIM schedule.

    When `trace` is a list, one record per timestep is appended: position,
    train timestep, action, cost in G-MACs, and at full steps the cosine
    similarity of each branch feature against the previous full step's.
    """
    arr = np.asarray(noise, dtype=np.float32)
    if arr.shape != model.config.image:
        raise ValidationError(f"expected noise {model.config.image}, got {arr.shape}")
    return _run_batch(model, plan, arr[None], sampler, trace)[0]


def generate_batch(
    model: UNet,
    plan: StepPlan,
    seeds,
    sampler: SamplerConfig,
) -> np.ndarray:
    """Generate one image per seed; noise for seed s is default_rng(s) normals."""
    seeds = list(seeds)
    if not seeds:
        raise ValidationError("seeds must be non-empty")
    h, w, c = model.config.image
    noise = np.stack(
        [
            np.random.default_rng(s).standard_normal((h, w, c), dtype=np.float32)
            for s in seeds
        ]
    )
    return _run_batch(model, plan, noise, sampler)


def count_macs(config: UNetConfig) -> tuple[float, dict[int, float]]:
    """Analytic MACs (in G-MACs) of a full step and of each branch's partial step.

    Counts convolution and time-map multiplies only (biases, tanh, and the
    nearest upsample add no multiply-accumulates). The deepest branch's
    partial is billed at the full cost by profile convention even though
    its execution skips the middle conv.
    """
    h, w, _ = config.image
    levels = config.levels
    down = []
    tmap = []
    for b in range(1, levels + 1):
        hb, wb = h >> b, w >> b
        down.append(hb * wb * config.channels(b) * 9 * config.channels(b - 1))
        tmap.append(config.t_embed_dim * config.channels(b))
    hd, wd = h >> levels, w >> levels
    mid = hd * wd * config.channels(levels) * 9 * config.channels(levels)
    up = []
    for b in range(1, levels + 1):
        hb, wb = h >> (b - 1), w >> (b - 1)
        up.append(hb * wb * config.channels(b - 1) * 9 * 2 * config.channels(b))
    full = sum(down) + sum(tmap) + mid + sum(up)
    partial = {
        b: (sum(down[:b]) + sum(tmap[:b]) + sum(up[:b])) / _GMAC
        for b in range(1, levels)
    }
    partial[levels] = full / _GMAC
    return full / _GMAC, partial


def toy_cost_profile(config: UNetConfig | None = None) -> CostProfile:
    """Cost profile of the toy model, from exact multiply-accumulate counting."""
    config = config or UNetConfig()
    full, partial = count_macs(config)
    return CostProfile(
        name="toy", full_macs=full, partial_macs=partial, b_max=config.levels
    )
