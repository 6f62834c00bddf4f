"""Candidate scoring against a cached teacher.

The teacher is the all-full-step run of the same model from the same noise
seeds. Evaluating a genome generates candidate images on a prefix of those
seeds, computes the Frechet distance between candidate and teacher feature
statistics, and attaches NFE and average-MACs figures.

A TeacherBundle can be cached on disk (directory layout: <digest>.stats.json
plus <digest>.images.bin). The image blob is little-endian float32,
row-major, preceded by a 24-byte header: magic b"SEGT", then uint32
version, count, height, width, channels. The FLEXI_CACHE_DIR environment
variable supplies the default cache directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import struct
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, schedule, simulator
from ._io import atomic_write_bytes, atomic_write_text, canonical_json
from .costmodel import CostProfile, genome_average_macs
from .errors import BackendError, UnsupportedModeError, ValidationError
from .metrics import FeatureExtractor, FeatureStats
from .schedule import Mode, ScheduleGenome, genome_digest
from .simulator import SamplerConfig, UNet, UNetConfig

IN_PROCESS = "in_process"
EXTERNAL = "external"
PROTOCOL_VERSION = 1
_BLOB_MAGIC = b"SEGT"
_BLOB_VERSION = 1
CACHE_DIR_ENV = "FLEXI_CACHE_DIR"


@dataclass(frozen=True)
class EvalResult:
    rfid: float
    nfe: int
    avg_macs: float
    images_used: int
    backend: str
    mse: float | None = None

    def to_dict(self) -> dict:
        out = {
            "rfid": self.rfid,
            "nfe": self.nfe,
            "avg_macs": self.avg_macs,
            "images_used": self.images_used,
            "backend": self.backend,
        }
        if self.mse is not None:
            out["mse"] = self.mse
        return out


@dataclass
class TeacherBundle:
    total_steps: int
    seeds: tuple[int, ...]
    images: np.ndarray  # (N, H, W, C) float32
    stats: FeatureStats
    extractor_seed: int
    digest: str
    _prefix_stats: dict = field(default_factory=dict, repr=False)

    def prefix_stats(self, n: int, extractor: FeatureExtractor) -> FeatureStats:
        """Stats over the first n teacher images (cached per n)."""
        if n == len(self.seeds):
            return self.stats
        cached = self._prefix_stats.get(n)
        if cached is None:
            cached = metrics.extract_stats(self.images[:n], extractor)
            self._prefix_stats[n] = cached
        return cached


def teacher_cache_dir(explicit: str | Path | None = None) -> Path | None:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_DIR_ENV)
    return Path(env) if env else None


def _teacher_digest(
    config: UNetConfig,
    sampler: SamplerConfig,
    total_steps: int,
    seeds,
    extractor: FeatureExtractor,
) -> str:
    key = {
        "image": list(config.image),
        "levels": config.levels,
        "base_channels": config.base_channels,
        "weight_seed": config.weight_seed,
        "t_embed_dim": config.t_embed_dim,
        "train_steps": sampler.train_steps,
        "beta_start": sampler.beta_start,
        "beta_end": sampler.beta_end,
        "total_steps": total_steps,
        "seeds": list(seeds),
        "extractor_seed": extractor.seed,
        "feature_dim": extractor.feature_dim,
    }
    return hashlib.sha256(canonical_json(key).encode()).hexdigest()


def _write_image_blob(path: Path, images: np.ndarray) -> None:
    n, h, w, c = images.shape
    header = _BLOB_MAGIC + struct.pack("<IIIII", _BLOB_VERSION, n, h, w, c)
    data = np.ascontiguousarray(images, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + data)


def _read_image_blob(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:4] != _BLOB_MAGIC:
        raise ValidationError(f"{path}: not a teacher image blob")
    version, n, h, w, c = struct.unpack("<IIIII", raw[4:24])
    if version != _BLOB_VERSION:
        raise ValidationError(f"{path}: unsupported blob version {version}")
    images = np.frombuffer(raw[24:], dtype="<f4").reshape(n, h, w, c)
    return np.ascontiguousarray(images)


def build_teacher(
    model: UNet,
    total_steps: int,
    seeds,
    extractor: FeatureExtractor,
    sampler: SamplerConfig,
    cache_dir: str | Path | None = None,
) -> TeacherBundle:
    """Generate (or load from cache) the all-full teacher images and stats."""
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValidationError("teacher needs a non-empty seed list")
    digest = _teacher_digest(model.config, sampler, total_steps, seeds, extractor)
    directory = teacher_cache_dir(cache_dir)
    if directory is not None:
        stats_path = directory / f"{digest}.stats.json"
        blob_path = directory / f"{digest}.images.bin"
        if stats_path.exists() and blob_path.exists():
            meta = json.loads(stats_path.read_text())
            images = _read_image_blob(blob_path)
            return TeacherBundle(
                total_steps=total_steps,
                seeds=seeds,
                images=images,
                stats=FeatureStats.from_dict(meta["stats"]),
                extractor_seed=extractor.seed,
                digest=digest,
            )
    plan = schedule.expand(schedule.deepcache_uniform(total_steps, 1, 1))
    images = simulator.generate_batch(model, plan, seeds, sampler)
    stats = metrics.extract_stats(images, extractor)
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"digest": digest, "count": len(seeds), "stats": stats.to_dict()}
        atomic_write_text(directory / f"{digest}.stats.json", json.dumps(meta))
        _write_image_blob(directory / f"{digest}.images.bin", images)
    return TeacherBundle(
        total_steps=total_steps,
        seeds=seeds,
        images=images,
        stats=stats,
        extractor_seed=extractor.seed,
        digest=digest,
    )


class InProcessEvaluator:
    """Scores genomes on the toy simulator against a teacher bundle.

    evaluate() is a pure function of (genome, n_images, want_mse), so
    results are memoized by genome digest.
    """

    backend_name = IN_PROCESS

    def __init__(
        self,
        model: UNet,
        sampler: SamplerConfig,
        extractor: FeatureExtractor,
        profile: CostProfile,
        teacher: TeacherBundle,
    ):
        self.model = model
        self.sampler = sampler
        self.extractor = extractor
        self.profile = profile
        self.teacher = teacher
        self._memo: dict = {}

    def evaluate(
        self,
        genome: ScheduleGenome,
        n_images: int | None = None,
        want_mse: bool = False,
    ) -> EvalResult:
        if genome.mode is not Mode.CACHE:
            raise UnsupportedModeError(
                "solver-order genomes need an external evaluator backend"
            )
        n = len(self.teacher.seeds) if n_images is None else n_images
        if n < 2:
            raise ValidationError(f"n_images must be >= 2, got {n}")
        if n > len(self.teacher.seeds):
            raise ValidationError(
                f"n_images {n} exceeds teacher seed count {len(self.teacher.seeds)}"
            )
        if genome.total_steps != self.teacher.total_steps:
            raise ValidationError(
                f"genome total_steps {genome.total_steps} != teacher "
                f"{self.teacher.total_steps}"
            )
        key = (genome_digest(genome), n, want_mse)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        plan = schedule.expand(genome)
        images = simulator.generate_batch(
            self.model, plan, self.teacher.seeds[:n], self.sampler
        )
        stats = metrics.extract_stats(images, self.extractor)
        rfid = metrics.frechet(stats, self.teacher.prefix_stats(n, self.extractor))
        mse = None
        if want_mse:
            mse = metrics.pixel_mse(images, self.teacher.images[:n])
        result = EvalResult(
            rfid=rfid,
            nfe=schedule.nfe(genome),
            avg_macs=genome_average_macs(genome, self.profile),
            images_used=n,
            backend=IN_PROCESS,
            mse=mse,
        )
        self._memo[key] = result
        return result


class ExternalEvaluator:
    """Protocol client for a subprocess evaluator (newline-delimited JSON on stdio).

    Keeps at most one outstanding request; close() sends shutdown and
    reaps the process. Usable as a context manager.
    """

    backend_name = EXTERNAL

    def __init__(self, command: str | list, n_images: int = 1000, seed: int = 0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.default_images = n_images
        self.seed = seed
        self._next_id = 1
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot launch evaluator {argv!r}: {exc}") from exc
        ack = self._roundtrip({"type": "hello", "id": 0,
                               "protocol_version": PROTOCOL_VERSION})
        if ack.get("type") != "hello_ack":
            raise BackendError(f"expected hello_ack, got {ack.get('type')!r}")
        if ack.get("protocol_version") != PROTOCOL_VERSION:
            raise BackendError(
                f"protocol version mismatch: engine {PROTOCOL_VERSION}, "
                f"adapter {ack.get('protocol_version')}"
            )
        self.capabilities = tuple(ack.get("capabilities", ()))

    def _send(self, message: dict) -> None:
        if self._proc.poll() is not None:
            raise BackendError("evaluator process has exited")
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"evaluator pipe closed: {exc}") from exc

    def _recv(self) -> dict:
        line = self._proc.stdout.readline()
        if not line:
            code = self._proc.poll()
            raise BackendError(f"evaluator closed its stdout (exit code {code})")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BackendError(f"unparseable evaluator reply: {line!r}") from exc
        if not isinstance(message, dict):
            raise BackendError(f"evaluator reply is not an object: {line!r}")
        return message

    def _roundtrip(self, message: dict) -> dict:
        self._send(message)
        reply = self._recv()
        if reply.get("type") == "error":
            raise BackendError(
                f"evaluator error (code {reply.get('code')!r}): {reply.get('message')}"
            )
        if reply.get("id") != message["id"]:
            raise BackendError(
                f"reply id {reply.get('id')} does not match request {message['id']}"
            )
        return reply

    def evaluate(
        self,
        genome: ScheduleGenome,
        n_images: int | None = None,
        want_mse: bool = False,
    ) -> EvalResult:
        n = self.default_images if n_images is None else n_images
        request_id = self._next_id
        self._next_id += 1
        reply = self._roundtrip(
            {
                "type": "eval_request",
                "id": request_id,
                "genome": schedule.genome_to_dict(genome),
                "n_images": n,
                "seed": self.seed,
                "metric": "mse" if want_mse else "rfid",
            }
        )
        if reply.get("type") != "eval_response":
            raise BackendError(f"expected eval_response, got {reply.get('type')!r}")
        try:
            return EvalResult(
                rfid=float(reply["rfid"]) if "rfid" in reply else float("nan"),
                nfe=int(reply["nfe"]),
                avg_macs=float(reply["avg_macs"]),
                images_used=n,
                backend=EXTERNAL,
                mse=float(reply["mse"]) if "mse" in reply else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed eval_response: {reply}") from exc

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._send({"type": "shutdown", "id": self._next_id})
            except BackendError:
                pass
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        for stream in (self._proc.stdin, self._proc.stdout):
            if stream:
                stream.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def rank(entries: list) -> list:
    """Sort (genome, EvalResult) pairs: rfid, then avg_macs, then digest."""
    if not entries:
        raise ValidationError("cannot rank an empty result list")
    return sorted(
        entries,
        key=lambda pair: (pair[1].rfid, pair[1].avg_macs, genome_digest(pair[0])),
    )
