"""Feature statistics and distances: Frechet distance, pixel MSE, Kendall's tau.

Images are compared through a fixed seeded random projection (a stand-in
for a learned feature extractor): features = tanh(P @ flatten(image)),
with P drawn once from the extractor seed. The Frechet distance between
candidate and teacher feature statistics is the candidate's score (rFID
when both image sets come from identical noise seeds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientSamplesError,
    NumericError,
    PairedGenerationError,
    UndefinedTauError,
    ValidationError,
)

JITTER = 1e-6
NEGATIVE_SLACK = -1e-6  # frechet results above this are treated as rounding to zero


@dataclass(frozen=True)
class FeatureExtractor:
    """Fixed random projection + tanh. Same seed and dims give the same features forever."""

    seed: int
    input_dims: tuple[int, int, int]
    feature_dim: int = 32
    projection: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        h, w, c = self.input_dims
        n_in = h * w * c
        if self.feature_dim < 1 or n_in < 1:
            raise ValidationError("extractor dims must be positive")
        rng = np.random.default_rng(self.seed)
        # 1/sqrt(n_in) scaling keeps projected unit-variance inputs inside
        # tanh's responsive range
        proj = rng.standard_normal((self.feature_dim, n_in)) / np.sqrt(n_in)
        object.__setattr__(self, "projection", proj)

    def features(self, images: np.ndarray) -> np.ndarray:
        """Map (N, H, W, C) images to (N, feature_dim) features in float64."""
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[1:] != self.input_dims:
            raise ValidationError(
                f"expected images shaped (N, {self.input_dims}), got {arr.shape}"
            )
        flat = arr.reshape(arr.shape[0], -1)
        return np.tanh(flat @ self.projection.T)


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.ravel().tolist(),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureStats":
        mean = np.asarray(data["mean"], dtype=np.float64)
        d = mean.shape[0]
        cov = np.asarray(data["cov"], dtype=np.float64).reshape(d, d)
        return cls(mean, cov, int(data["count"]))


def extract_stats(images: np.ndarray, extractor: FeatureExtractor) -> FeatureStats:
    """Sample mean and unbiased covariance of the extracted features."""
    arr = np.asarray(images)
    if arr.shape[0] < 2:
        raise InsufficientSamplesError(
            f"need at least 2 images for covariance, got {arr.shape[0]}"
        )
    feats = extractor.features(arr)
    mean = feats.mean(axis=0)
    cov = np.atleast_2d(np.cov(feats, rowvar=False))
    cov = (cov + cov.T) / 2.0
    return FeatureStats(mean, cov, feats.shape[0])


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative eigenvalues clip to zero."""
    try:
        w, v = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^1/2).

    Both covariances get a 1e-6 jitter before the root, and the trace term
    uses the symmetrized product S_a^1/2 S_b S_a^1/2 so every
    eigendecomposition sees a symmetric matrix.
    """
    if a.mean.shape != b.mean.shape:
        raise ValidationError(
            f"feature dim mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}"
        )
    d = a.mean.shape[0]
    eye = np.eye(d)
    cov_a = (a.cov + a.cov.T) / 2.0 + JITTER * eye
    cov_b = (b.cov + b.cov.T) / 2.0 + JITTER * eye
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = (inner + inner.T) / 2.0
    try:
        w = np.linalg.eigvalsh(inner)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    trace_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    delta = a.mean - b.mean
    dist = float(delta @ delta + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    if dist < 0:
        if dist < NEGATIVE_SLACK:
            raise NumericError(f"frechet distance {dist} below the rounding floor")
        dist = 0.0
    return dist


def rfid(
    candidate_images: np.ndarray,
    teacher_images: np.ndarray,
    extractor: FeatureExtractor,
) -> float:
    """Frechet distance between candidate and teacher feature stats.

    Both sets must come from the same noise seeds in the same order; the
    count check is the cheap guard for that contract.
    """
    cand = np.asarray(candidate_images)
    teach = np.asarray(teacher_images)
    if cand.shape[0] != teach.shape[0]:
        raise PairedGenerationError(
            f"candidate count {cand.shape[0]} != teacher count {teach.shape[0]}"
        )
    return frechet(extract_stats(cand, extractor), extract_stats(teach, extractor))


def pixel_mse(candidate_images: np.ndarray, teacher_images: np.ndarray) -> float:
    """Mean squared pixel difference over paired image sets."""
    cand = np.asarray(candidate_images, dtype=np.float64)
    teach = np.asarray(teacher_images, dtype=np.float64)
    if cand.shape != teach.shape:
        raise PairedGenerationError(
            f"shape mismatch: {cand.shape} vs {teach.shape}"
        )
    return float(np.mean((cand - teach) ** 2))


def kendall_tau(scores_a, scores_b) -> float:
    """Tie-corrected Kendall's tau-b over all pairs.

    tau = (C - D) / sqrt((n0 - t_a) (n0 - t_b)) with concordant C,
    discordant D, total pairs n0 and tied pairs t_a, t_b per input.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValidationError("kendall_tau expects 1-D score lists")
    n = a.shape[0]
    if b.shape[0] != n:
        raise ValidationError(f"length mismatch: {n} vs {b.shape[0]}")
    if n < 2:
        raise ValidationError("need at least 2 scores")
    sign_a = np.sign(a[:, None] - a[None, :])
    sign_b = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(n, k=1)
    sa = sign_a[iu]
    sb = sign_b[iu]
    concordant = int(np.count_nonzero(sa * sb > 0))
    discordant = int(np.count_nonzero(sa * sb < 0))
    ties_a = int(np.count_nonzero(sa == 0))
    ties_b = int(np.count_nonzero(sb == 0))
    n0 = n * (n - 1) // 2
    if ties_a == n0 or ties_b == n0:
        raise UndefinedTauError("all pairs tied in one input; tau undefined")
    return (concordant - discordant) / math.sqrt(
        float(n0 - ties_a) * float(n0 - ties_b)
    )
