"""Domain types, prediction ingestion, and pool bookkeeping.

Predictions are exchanged as JSON Lines, one image per line:

    {"image_id": "img0", "image_embedding": [..] | null,
     "instances": [{"instance_id": "img0:i0", "class_probs": [..],
                    "embedding": [..], "size_ratio": 0.2,
                    "mask": {"w": 2, "h": 2, "values": [..]} | null,
                    "seg_entropy": 0.31 | null}]}

Paths ending in ``.gz`` are transparently gunzipped. All numbers must be
finite; NaN/Infinity tokens are rejected. When an instance carries both a
dense mask and a precomputed ``seg_entropy``, the mask is authoritative and
the stored value must agree with it within ``SEG_ENTROPY_TOL``.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import uncertainty

PROB_SUM_TOL = 1e-6
SEG_ENTROPY_TOL = 1e-6

STRATEGIES = ("taudis", "taudis_img", "random", "avg_cm", "wce", "wse",
              "coreset", "round_robin")
INSTANCE_METRICS = ("se", "ce", "cm")
COVER_ALGOS = ("greedy", "lazy", "partitioned", "brute")


class IngestError(ValueError):
    """A prediction stream violates the interchange contract."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """A SelectionConfig violates its invariants."""


class MissingEmbeddingError(ValueError):
    """A strategy needs an embedding that no prediction provides."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Mask:
    """Dense sigmoid mask of the winning class, row-major, values in [0, 1]."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.values, other.values))


@dataclass(eq=False)
class InstancePrediction:
    """One detected instance: class distribution, mask state, embedding, size."""

    instance_id: str
    image_id: str
    class_probs: np.ndarray
    embedding: np.ndarray
    size_ratio: float
    mask: Mask | None = None
    seg_entropy: float | None = None

    def __post_init__(self):
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        self.embedding = np.asarray(self.embedding, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, InstancePrediction):
            return NotImplemented
        return (self.instance_id == other.instance_id
                and self.image_id == other.image_id
                and np.array_equal(self.class_probs, other.class_probs)
                and np.array_equal(self.embedding, other.embedding)
                and self.size_ratio == other.size_ratio
                and self.mask == other.mask
                and self.seg_entropy == other.seg_entropy)


@dataclass(eq=False)
class ImagePrediction:
    """All instances detected in one unlabeled image."""

    image_id: str
    instances: list[InstancePrediction] = field(default_factory=list)
    image_embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.image_embedding is not None:
            self.image_embedding = np.asarray(self.image_embedding, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, ImagePrediction):
            return NotImplemented
        if self.image_id != other.image_id or self.instances != other.instances:
            return False
        if (self.image_embedding is None) != (other.image_embedding is None):
            return False
        return (self.image_embedding is None
                or np.array_equal(self.image_embedding, other.image_embedding))


def image_embedding(image: ImagePrediction) -> np.ndarray:
    """Image-level embedding: the explicit one, else the mean of instance embeddings."""
    if image.image_embedding is not None:
        return image.image_embedding
    if image.instances:
        return np.mean([inst.embedding for inst in image.instances], axis=0)
    raise MissingEmbeddingError(
        f"image {image.image_id!r} has neither an image_embedding nor instances "
        "to derive one from")


@dataclass(frozen=True)
class PoolState:
    """Partition of the image universe into labeled / unlabeled, with history."""

    labeled: frozenset[str]
    unlabeled: frozenset[str]
    history: tuple[frozenset[str], ...] = ()

    def __post_init__(self):
        overlap = self.labeled & self.unlabeled
        if overlap:
            raise ValueError(f"labeled and unlabeled overlap: {sorted(overlap)[:5]}")

    @property
    def total(self) -> int:
        return len(self.labeled) + len(self.unlabeled)


def make_pool_state(image_ids: Iterable[str], labeled_ids: Iterable[str] = ()) -> PoolState:
    labeled = frozenset(labeled_ids)
    universe = frozenset(image_ids) | labeled
    return PoolState(labeled=labeled, unlabeled=universe - labeled)


def apply_round(state: PoolState, selected: Iterable[str]) -> PoolState:
    """Move ``selected`` from unlabeled to labeled and append one history entry."""
    chosen = frozenset(selected)
    unknown = chosen - state.unlabeled
    if unknown:
        raise ValueError(
            f"selected ids not in the unlabeled pool: {sorted(unknown)[:5]}")
    return PoolState(labeled=state.labeled | chosen,
                     unlabeled=state.unlabeled - chosen,
                     history=state.history + (chosen,))


@dataclass(frozen=True)
class SelectionConfig:
    """One round's knobs: budget, multipliers, similarity threshold, strategy.

    ``alpha`` (instance oversampling) and ``beta`` (downsampling) multiply the
    image budget to size the candidate and diversified instance sets; they must
    satisfy alpha > beta > 1. ``sigma`` is the cosine-similarity threshold in
    (0, 1). Defaults for alpha/beta keep the production 150:40 candidate ratio
    at small budgets; sigma defaults to 0.8.
    """

    budget: int
    strategy: str
    rounds: int = 1
    alpha: float = 7.5
    beta: float = 2.0
    sigma: float = 0.8
    seed: int = 0
    instance_metric: str = "se"
    cover_algo: str = "lazy"
    partitions: int = 4

    def __post_init__(self):
        if not isinstance(self.budget, int) or self.budget < 1:
            raise ConfigError(f"budget must be a positive integer, got {self.budget!r}")
        if not isinstance(self.rounds, int) or self.rounds < 1:
            raise ConfigError(f"rounds must be a positive integer, got {self.rounds!r}")
        if not (self.alpha > self.beta > 1):
            raise ConfigError(
                f"multipliers must satisfy alpha > beta > 1, got "
                f"alpha={self.alpha}, beta={self.beta}")
        if not (0 < self.sigma < 1):
            raise ConfigError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.instance_metric not in INSTANCE_METRICS:
            raise ConfigError(
                f"unknown instance metric {self.instance_metric!r}; "
                f"expected one of {INSTANCE_METRICS}")
        if self.cover_algo not in COVER_ALGOS:
            raise ConfigError(
                f"unknown cover algorithm {self.cover_algo!r}; "
                f"expected one of {COVER_ALGOS}")
        if not isinstance(self.partitions, int) or self.partitions < 2:
            raise ConfigError(f"partitions must be an integer >= 2, got {self.partitions!r}")


def config_from_dict(data: Mapping) -> SelectionConfig:
    """Build a SelectionConfig from a JSON-style dict; unknown keys are errors."""
    known = {f.name for f in fields(SelectionConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return SelectionConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(config: SelectionConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(SelectionConfig)}


def config_hash(config: SelectionConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def multipliers_from_seed_mean(mean_instances_per_image: float,
                               alpha_factor: float = 2.5,
                               beta_factor: float = 1.5) -> tuple[float, float]:
    """Derive (alpha, beta) from the mean instance count of the seed set.

    alpha is ``alpha_factor`` times the mean, beta ``beta_factor`` times; the
    result must satisfy alpha > beta > 1 or a ConfigError is raised.
    """
    alpha = alpha_factor * mean_instances_per_image
    beta = beta_factor * mean_instances_per_image
    if not (alpha > beta > 1):
        raise ConfigError(
            f"derived multipliers violate alpha > beta > 1: "
            f"alpha={alpha:.4g}, beta={beta:.4g} "
            f"(mean instances per image {mean_instances_per_image:.4g})")
    return alpha, beta


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _reject_constant(token: str):
    raise ValueError(f"non-finite number {token!r} is not permitted")


def _as_float_array(value, what: str) -> np.ndarray:
    if not isinstance(value, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise ValueError(f"{what} must be an array of numbers")
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


def _instance_from_record(rec, image_id: str) -> InstancePrediction:
    if not isinstance(rec, dict):
        raise ValueError("instance record must be an object")
    for key in ("instance_id", "class_probs", "embedding", "size_ratio"):
        if key not in rec:
            raise ValueError(f"instance record missing {key!r}")
    instance_id = rec["instance_id"]
    if not isinstance(instance_id, str) or not instance_id:
        raise ValueError("instance_id must be a non-empty string")
    probs = _as_float_array(rec["class_probs"], f"class_probs of {instance_id!r}")
    emb = _as_float_array(rec["embedding"], f"embedding of {instance_id!r}")
    size_ratio = rec["size_ratio"]
    if isinstance(size_ratio, bool) or not isinstance(size_ratio, (int, float)):
        raise ValueError(f"size_ratio of {instance_id!r} must be a number")
    mask = None
    mask_rec = rec.get("mask")
    if mask_rec is not None:
        if (not isinstance(mask_rec, dict)
                or not all(k in mask_rec for k in ("w", "h", "values"))):
            raise ValueError(f"mask of {instance_id!r} must have keys w, h, values")
        w, h = mask_rec["w"], mask_rec["h"]
        if not isinstance(w, int) or not isinstance(h, int) or w < 1 or h < 1:
            raise ValueError(f"mask of {instance_id!r} has invalid dimensions")
        values = _as_float_array(mask_rec["values"], f"mask values of {instance_id!r}")
        if values.size != w * h:
            raise ValueError(
                f"mask of {instance_id!r} has {values.size} values, expected {w * h}")
        mask = Mask(width=w, height=h, values=values)
    seg_entropy = rec.get("seg_entropy")
    if seg_entropy is not None:
        if isinstance(seg_entropy, bool) or not isinstance(seg_entropy, (int, float)):
            raise ValueError(f"seg_entropy of {instance_id!r} must be a number")
        seg_entropy = float(seg_entropy)
        if not math.isfinite(seg_entropy):
            raise ValueError(f"seg_entropy of {instance_id!r} is not finite")
    return InstancePrediction(instance_id=instance_id, image_id=image_id,
                              class_probs=probs, embedding=emb,
                              size_ratio=float(size_ratio), mask=mask,
                              seg_entropy=seg_entropy)


def _image_from_record(rec) -> ImagePrediction:
    if not isinstance(rec, dict):
        raise ValueError("record must be a JSON object")
    image_id = rec.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        raise ValueError("image_id must be a non-empty string")
    instances_rec = rec.get("instances")
    if not isinstance(instances_rec, list):
        raise ValueError(f"image {image_id!r}: instances must be an array")
    instances = [_instance_from_record(r, image_id) for r in instances_rec]
    img_emb = rec.get("image_embedding")
    if img_emb is not None:
        img_emb = _as_float_array(img_emb, f"image_embedding of {image_id!r}")
    return ImagePrediction(image_id=image_id, instances=instances,
                           image_embedding=img_emb)


def instance_violations(inst: InstancePrediction) -> list[str]:
    """Contract violations for one instance, as human-readable strings."""
    out = []
    iid = inst.instance_id
    probs = inst.class_probs
    if probs.ndim != 1 or probs.size == 0:
        out.append(f"instance {iid!r}: class_probs must be a non-empty vector")
        return out
    if np.any(probs < 0):
        out.append(f"instance {iid!r}: class_probs has negative entries")
    total = float(probs.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        out.append(f"instance {iid!r}: class_probs sum to {total:.6g}, "
                   f"expected 1 within {PROB_SUM_TOL:g}")
    if inst.embedding.ndim != 1 or inst.embedding.size < 1:
        out.append(f"instance {iid!r}: embedding must be a non-empty vector")
    elif not np.any(inst.embedding):
        out.append(f"instance {iid!r}: embedding has zero norm")
    if not (0 < inst.size_ratio <= 1):
        out.append(f"instance {iid!r}: size_ratio {inst.size_ratio:.6g} "
                   "outside (0, 1]")
    if inst.mask is None and inst.seg_entropy is None:
        out.append(f"instance {iid!r}: needs a mask or a seg_entropy")
    if inst.mask is not None:
        mv = inst.mask.values
        if np.any(mv < 0) or np.any(mv > 1):
            out.append(f"instance {iid!r}: mask values outside [0, 1]")
        elif inst.seg_entropy is not None:
            computed = uncertainty.mean_binary_entropy(mv)
            if abs(computed - inst.seg_entropy) > SEG_ENTROPY_TOL:
                out.append(
                    f"instance {iid!r}: stored seg_entropy {inst.seg_entropy:.8g} "
                    f"disagrees with mask-derived {computed:.8g}")
    if inst.seg_entropy is not None and not (
            -SEG_ENTROPY_TOL <= inst.seg_entropy <= math.log(2) + SEG_ENTROPY_TOL):
        out.append(f"instance {iid!r}: seg_entropy {inst.seg_entropy:.6g} "
                   "outside [0, ln 2]")
    return out


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        opener = gzip.open if path.suffix == ".gz" else open
        try:
            with opener(path, "rt", encoding="utf-8") as handle:
                yield from handle
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from None
    else:
        for line in source:
            yield line.decode("utf-8") if isinstance(line, bytes) else line


def _ingest_impl(source, collect: bool):
    pool: dict[str, ImagePrediction] = {}
    violations: list[str] = []
    seen_instances: dict[str, str] = {}
    num_classes = None
    embedding_dim = None
    image_embedding_dim = None

    def report(message: str, line_no: int):
        if collect:
            violations.append(f"line {line_no}: {message}")
        else:
            raise IngestError(message, line=line_no)

    for line_no, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line, parse_constant=_reject_constant)
        except (json.JSONDecodeError, ValueError) as exc:
            report(f"malformed record: {exc}", line_no)
            continue
        try:
            image = _image_from_record(record)
        except ValueError as exc:
            report(str(exc), line_no)
            continue
        if image.image_id in pool:
            report(f"duplicate image id {image.image_id!r}", line_no)
            continue
        ok = True
        for inst in image.instances:
            if inst.instance_id in seen_instances:
                report(f"duplicate instance id {inst.instance_id!r} "
                       f"(first seen in image {seen_instances[inst.instance_id]!r})",
                       line_no)
                ok = False
                continue
            seen_instances[inst.instance_id] = image.image_id
            for problem in instance_violations(inst):
                report(problem, line_no)
                ok = False
            if num_classes is None:
                num_classes = inst.class_probs.size
            elif inst.class_probs.size != num_classes:
                report(f"instance {inst.instance_id!r}: {inst.class_probs.size} "
                       f"class probabilities, pool uses {num_classes}", line_no)
                ok = False
            if embedding_dim is None:
                embedding_dim = inst.embedding.size
            elif inst.embedding.size != embedding_dim:
                report(f"instance {inst.instance_id!r}: embedding dimension "
                       f"{inst.embedding.size}, pool uses {embedding_dim}", line_no)
                ok = False
        if image.image_embedding is not None:
            if image_embedding_dim is None:
                image_embedding_dim = image.image_embedding.size
            elif image.image_embedding.size != image_embedding_dim:
                report(f"image {image.image_id!r}: image_embedding dimension "
                       f"{image.image_embedding.size}, pool uses "
                       f"{image_embedding_dim}", line_no)
                ok = False
        if ok:
            pool[image.image_id] = image
    return pool, violations


def ingest_predictions(source) -> dict[str, ImagePrediction]:
    """Parse a JSONL prediction stream into ``{image_id: ImagePrediction}``.

    ``source`` may be a path (``.gz`` accepted) or an iterable of lines.
    Raises IngestError, with the offending line number, on the first
    contract violation.
    """
    pool, _ = _ingest_impl(source, collect=False)
    return pool


def scan_violations(source) -> list[str]:
    """Lenient full-file scan; returns every violation instead of raising."""
    _, violations = _ingest_impl(source, collect=True)
    return violations


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def image_to_record(image: ImagePrediction) -> dict:
    instances = []
    for inst in image.instances:
        mask = None
        if inst.mask is not None:
            mask = {"w": inst.mask.width, "h": inst.mask.height,
                    "values": inst.mask.values.tolist()}
        instances.append({
            "instance_id": inst.instance_id,
            "class_probs": inst.class_probs.tolist(),
            "embedding": inst.embedding.tolist(),
            "size_ratio": inst.size_ratio,
            "mask": mask,
            "seg_entropy": inst.seg_entropy,
        })
    record = {"image_id": image.image_id, "instances": instances}
    if image.image_embedding is not None:
        record["image_embedding"] = image.image_embedding.tolist()
    return record


def write_predictions(pool: Mapping[str, ImagePrediction], path) -> None:
    """Write a pool as canonical JSONL (images sorted by id, LF endings)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt", encoding="utf-8", newline="\n") as handle:
        for image_id in sorted(pool):
            record = image_to_record(pool[image_id])
            handle.write(json.dumps(record, allow_nan=False) + "\n")
