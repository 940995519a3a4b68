"""Synthetic planted-cluster pools and a multi-round selection simulator.

The pool generator plants clusters on orthonormal embedding centers, so the
expected within-cluster cosine similarity equals ``intra_similarity`` while
across-cluster similarities are centered on zero. A designated subset of
clusters carries high segmentation entropy, reproducing the situation where
the most uncertain instances share a few semantic types.

The mock predictor stands in for retraining: once a cluster accumulates c
labeled instances, the segmentation entropy of its unlabeled kin is scaled by
gamma ** c. That is the one assumption batch selection exploits, labels reduce
uncertainty on similar data, without claiming any accuracy fidelity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import brentq

from . import strategies, uncertainty
from .core import (ImagePrediction, InstancePrediction, Mask, PoolState,
                   SelectionConfig, apply_round, make_pool_state)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class SyntheticPoolSpec:
    """Recipe for a planted-cluster prediction pool; fully seeded."""

    num_images: int
    num_clusters: int
    embedding_dim: int
    num_classes: int
    instances_min: int = 2
    instances_max: int = 6
    intra_similarity: float = 0.95
    hot_clusters: tuple[int, ...] = ()
    hot_se_range: tuple[float, float] = (0.45, 0.69)
    cold_se_range: tuple[float, float] = (0.02, 0.10)
    se_jitter: float = 0.01
    size_ratio_range: tuple[float, float] = (0.05, 0.20)
    mask_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_images < 1 or self.num_clusters < 1:
            raise ValueError("num_images and num_clusters must be positive")
        if self.num_clusters > self.embedding_dim:
            raise ValueError(
                f"cannot realize the similarity gap: {self.num_clusters} "
                f"orthogonal cluster centers do not fit in dimension "
                f"{self.embedding_dim}")
        if not (0 < self.intra_similarity < 1):
            raise ValueError("intra_similarity must lie in (0, 1)")
        if not (0 <= self.instances_min <= self.instances_max):
            raise ValueError("need 0 <= instances_min <= instances_max")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if any(not (0 <= c < self.num_clusters) for c in self.hot_clusters):
            raise ValueError("hot_clusters indices out of range")
        for lo, hi in (self.hot_se_range, self.cold_se_range):
            if not (0 < lo <= hi < LN2):
                raise ValueError("SE ranges must lie inside (0, ln 2)")
        lo, hi = self.size_ratio_range
        if not (0 < lo <= hi <= 1):
            raise ValueError("size_ratio_range must lie inside (0, 1]")
        if self.mask_size < 1:
            raise ValueError("mask_size must be positive")


@dataclass(frozen=True)
class SyntheticPool:
    images: dict[str, ImagePrediction]
    instance_clusters: dict[str, int]
    image_clusters: dict[str, int]
    num_clusters: int


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    cluster_coverage: float
    redundancy: float
    mean_pool_uncertainty: float
    num_selected: int
    labeled_total: int


def spec_from_dict(data: Mapping) -> SyntheticPoolSpec:
    known = {f.name for f in fields(SyntheticPoolSpec)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown pool spec keys: {sorted(unknown)}")
    data = dict(data)
    for key in ("hot_clusters", "hot_se_range", "cold_se_range",
                "size_ratio_range"):
        if key in data:
            data[key] = tuple(data[key])
    return SyntheticPoolSpec(**data)


def _mask_level_for_entropy(se: float) -> float:
    """Constant mask probability p in (0, 0.5] whose binary entropy is ``se``."""
    floor = uncertainty.mean_binary_entropy(np.array([1e-9]))
    if not (floor < se < LN2):
        raise ValueError(f"target segmentation entropy {se:.6g} is unreachable")
    return float(brentq(
        lambda p: uncertainty.mean_binary_entropy(np.array([p])) - se,
        1e-9, 0.5, xtol=1e-14))


def generate_pool(spec: SyntheticPoolSpec) -> SyntheticPool:
    """Deterministically sample a pool of predictions with planted clusters."""
    rng = np.random.default_rng(spec.seed)
    basis = np.linalg.qr(
        rng.standard_normal((spec.embedding_dim, spec.embedding_dim)))[0]
    centers = basis.T[:spec.num_clusters]

    hot = set(spec.hot_clusters)
    cluster_se = np.empty(spec.num_clusters)
    for c in range(spec.num_clusters):
        lo, hi = spec.hot_se_range if c in hot else spec.cold_se_range
        cluster_se[c] = rng.uniform(lo, hi)

    assignments = np.array([i % spec.num_clusters for i in range(spec.num_images)])
    rng.shuffle(assignments)

    root = math.sqrt(spec.intra_similarity)
    noise_scale = math.sqrt(1.0 - spec.intra_similarity)
    se_lo = min(spec.cold_se_range[0], spec.hot_se_range[0]) / 2
    se_hi = LN2 - 1e-6

    images: dict[str, ImagePrediction] = {}
    instance_clusters: dict[str, int] = {}
    image_clusters: dict[str, int] = {}
    for i in range(spec.num_images):
        image_id = f"img{i:05d}"
        cluster = int(assignments[i])
        image_clusters[image_id] = cluster
        center = centers[cluster]
        n_inst = int(rng.integers(spec.instances_min, spec.instances_max + 1))
        instances = []
        for j in range(n_inst):
            noise = rng.standard_normal(spec.embedding_dim)
            noise -= np.dot(noise, center) * center
            noise /= np.linalg.norm(noise)
            embedding = root * center + noise_scale * noise

            se = float(np.clip(
                cluster_se[cluster] + rng.uniform(-spec.se_jitter, spec.se_jitter),
                se_lo, se_hi))
            level = _mask_level_for_entropy(se)
            mask_values = np.full(spec.mask_size * spec.mask_size, level)
            seg_entropy = uncertainty.mean_binary_entropy(mask_values)

            win = cluster % spec.num_classes
            confidence = 1.0 - 0.5 * (se / LN2)
            if spec.num_classes == 1:
                probs = np.array([1.0])
            else:
                probs = np.full(spec.num_classes,
                                (1.0 - confidence) / (spec.num_classes - 1))
                probs[win] = confidence
            instance_id = f"{image_id}:i{j}"
            instances.append(InstancePrediction(
                instance_id=instance_id, image_id=image_id,
                class_probs=probs, embedding=embedding,
                size_ratio=float(rng.uniform(*spec.size_ratio_range)),
                mask=Mask(width=spec.mask_size, height=spec.mask_size,
                          values=mask_values),
                seg_entropy=seg_entropy))
            instance_clusters[instance_id] = cluster
        images[image_id] = ImagePrediction(image_id=image_id, instances=instances)
    return SyntheticPool(images=images, instance_clusters=instance_clusters,
                         image_clusters=image_clusters,
                         num_clusters=spec.num_clusters)


def mock_predictor(pool: SyntheticPool, labeled: Iterable[str],
                   gamma: float = 0.7) -> dict[str, ImagePrediction]:
    """Predictions given the labeled set: each instance's segmentation entropy
    shrinks by gamma per labeled instance of its cluster; embeddings stay put.

    Rescaled instances carry the entropy directly instead of a mask, like a
    fresh inference pass would re-emit its own uncertainty summary.
    """
    if not (0 < gamma < 1):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    labeled = set(labeled)
    counts = [0] * pool.num_clusters
    for image_id in labeled:
        for inst in pool.images[image_id].instances:
            counts[pool.instance_clusters[inst.instance_id]] += 1
    out: dict[str, ImagePrediction] = {}
    for image_id, image in pool.images.items():
        rebuilt = []
        changed = False
        for inst in image.instances:
            c = counts[pool.instance_clusters[inst.instance_id]]
            if c == 0:
                rebuilt.append(inst)
                continue
            changed = True
            rebuilt.append(InstancePrediction(
                instance_id=inst.instance_id, image_id=inst.image_id,
                class_probs=inst.class_probs, embedding=inst.embedding,
                size_ratio=inst.size_ratio, mask=None,
                seg_entropy=uncertainty.instance_seg_entropy(inst) * gamma ** c))
        out[image_id] = (ImagePrediction(image_id=image_id, instances=rebuilt,
                                         image_embedding=image.image_embedding)
                         if changed else image)
    return out


def _round_metrics(round_index: int, pool: SyntheticPool, state: PoolState,
                   predictions: Mapping[str, ImagePrediction],
                   selected: list[str]) -> RoundMetrics:
    covered = {pool.instance_clusters[inst.instance_id]
               for iid in state.labeled for inst in pool.images[iid].instances}
    coverage = len(covered) / pool.num_clusters

    chosen = [inst for iid in selected for inst in pool.images[iid].instances]
    redundancy = 0.0
    if len(chosen) > 1:
        vectors = np.asarray([inst.embedding for inst in chosen])
        vectors = vectors / np.linalg.norm(vectors, axis=1)[:, None]
        sims = vectors @ vectors.T
        n = len(chosen)
        redundancy = float((sims.sum() - np.trace(sims)) / (n * (n - 1)))

    remaining = [inst for iid in sorted(state.unlabeled)
                 for inst in predictions[iid].instances]
    mean_unc = (math.fsum(uncertainty.instance_seg_entropy(i) for i in remaining)
                / len(remaining)) if remaining else 0.0
    return RoundMetrics(round_index=round_index, cluster_coverage=coverage,
                        redundancy=redundancy, mean_pool_uncertainty=mean_unc,
                        num_selected=len(selected),
                        labeled_total=len(state.labeled))


def initial_labeled_set(pool: SyntheticPool, fraction: float, seed: int) -> list[str]:
    """Seeded random draw of the initial labeled images."""
    if not (0 <= fraction < 1):
        raise ValueError(f"initial fraction must lie in [0, 1), got {fraction}")
    ids = sorted(pool.images)
    count = int(round(fraction * len(ids)))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ids), size=count, replace=False)
    return sorted(ids[i] for i in picked)


def rounds_for_quota(num_images: int, initially_labeled: int, budget: int,
                     quota: float = 0.9) -> int:
    """Rounds needed before at least ``quota`` of the pool is labeled."""
    need = math.ceil(num_images * quota) - initially_labeled
    return max(1, math.ceil(need / budget))


def run_simulation(spec: SyntheticPoolSpec, config: SelectionConfig,
                   strategy_names: Iterable[str], initial_fraction: float = 0.25,
                   gamma: float = 0.7) -> dict[str, list[RoundMetrics]]:
    """Run every strategy for config.rounds rounds from one shared seed state.

    All strategies start from the identical randomly drawn labeled set, so the
    metric traces are directly comparable.
    """
    pool = generate_pool(spec)
    initial = initial_labeled_set(pool, initial_fraction, config.seed)
    results: dict[str, list[RoundMetrics]] = {}
    for name in strategy_names:
        state = make_pool_state(pool.images, initial)
        metrics: list[RoundMetrics] = []
        for round_index in range(config.rounds):
            if not state.unlabeled:
                break
            predictions = mock_predictor(pool, state.labeled, gamma)
            round_config = replace(config, strategy=name,
                                   seed=config.seed + round_index)
            output = strategies.select_batch(state, predictions, round_config)
            state = apply_round(state, output.selected_images)
            metrics.append(_round_metrics(round_index, pool, state, predictions,
                                          output.selected_images))
        results[name] = metrics
    return results


def metrics_to_rows(results: Mapping[str, list[RoundMetrics]]) -> list[tuple]:
    """Flatten results to (round, strategy, metric, value) rows for CSV."""
    rows = []
    for name in results:
        for m in results[name]:
            for metric_field in ("cluster_coverage", "redundancy",
                                 "mean_pool_uncertainty", "num_selected",
                                 "labeled_total"):
                rows.append((m.round_index, name, metric_field,
                             getattr(m, metric_field)))
    return rows
