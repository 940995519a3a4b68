"""Image-selection strategies behind one dispatch surface.

Every strategy returns exactly min(budget, |unlabeled|) distinct unlabeled
image ids and is a pure function of (pool state, predictions, config). All
tie-breaks bottom out at ascending image or instance id, so results are
reproducible regardless of iteration order.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import maxcover, simgraph, uncertainty
from .core import (ImagePrediction, MissingEmbeddingError, PoolState,
                   SelectionConfig, image_embedding)


@dataclass
class StrategyOutput:
    selected_images: list[str]
    diagnostics: dict


def _unlabeled_predictions(state: PoolState,
                           predictions: Mapping[str, ImagePrediction]
                           ) -> dict[str, ImagePrediction]:
    missing = state.unlabeled - predictions.keys()
    if missing:
        raise ValueError(
            f"no predictions for unlabeled images: {sorted(missing)[:5]}")
    return {iid: predictions[iid] for iid in sorted(state.unlabeled)}


def _scaled_count(multiplier: float, budget: int) -> int:
    # floor with a guard against float fuzz in multiplier * budget
    return max(1, math.floor(multiplier * budget + 1e-9))


def _ranked_instances(images: Mapping[str, ImagePrediction], metric: str):
    """All instances, most uncertain first; ties by instance id."""
    scored = []
    for img in images.values():
        for inst in img.instances:
            score = uncertainty.instance_uncertainty(inst, metric)
            scored.append((score.rank_key(), inst.instance_id, inst))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [item[2] for item in scored]


def _solve_cover(problem: maxcover.CoverProblem, k: int,
                 config: SelectionConfig) -> maxcover.CoverSolution:
    return maxcover.solve_max_cover(problem, k, algo=config.cover_algo,
                                    partitions=config.partitions,
                                    seed=config.seed)


def majority_vote(selected_instances: Iterable[str], budget: int,
                  predictions: Mapping[str, ImagePrediction]) -> list[str]:
    """Rank images by how many of the chosen instances they contain.

    Ties break by higher summed segmentation entropy of those instances, then
    ascending image id. If fewer images are voted than the budget, the rest is
    filled with the highest-WSE untouched images.
    """
    chosen_instances = set(selected_instances)
    counts: dict[str, int] = {}
    se_sums: dict[str, float] = {}
    for img in predictions.values():
        hits = [inst for inst in img.instances
                if inst.instance_id in chosen_instances]
        if hits:
            counts[img.image_id] = len(hits)
            se_sums[img.image_id] = math.fsum(
                uncertainty.instance_seg_entropy(inst) for inst in hits)
    voted = sorted(counts, key=lambda iid: (-counts[iid], -se_sums[iid], iid))
    take = min(budget, len(predictions))
    selected = voted[:take]
    if len(selected) < take:
        rest = [iid for iid in sorted(predictions) if iid not in counts]
        wse = {iid: uncertainty.weighted_segmentation_entropy(predictions[iid]).value
               for iid in rest}
        rest.sort(key=lambda iid: (-wse[iid], iid))
        selected += rest[:take - len(selected)]
    return selected


def taudis_select(state: PoolState, predictions: Mapping[str, ImagePrediction],
                  config: SelectionConfig) -> StrategyOutput:
    """Two-step selection: top uncertain instances, max-cover diversification,
    then a majority vote over the surviving instances."""
    images = _unlabeled_predictions(state, predictions)
    ranked = _ranked_instances(images, config.instance_metric)
    t_c = ranked[:_scaled_count(config.alpha, config.budget)]
    universe = [(inst.instance_id, inst.embedding)
                for img in images.values() for inst in img.instances]
    candidates = [(inst.instance_id, inst.embedding) for inst in t_c]
    matrix = simgraph.build_similarity_matrix(candidates, universe, config.sigma)
    problem = simgraph.to_cover_problem(matrix)
    solution = _solve_cover(problem, _scaled_count(config.beta, config.budget),
                            config)
    t_d = list(solution.selected)
    selected = majority_vote(t_d, config.budget, images)
    owner = {inst.instance_id: img.image_id
             for img in images.values() for inst in img.instances}
    n_d: dict[str, int] = {}
    for iid in t_d:
        n_d[owner[iid]] = n_d.get(owner[iid], 0) + 1
    return StrategyOutput(selected_images=selected, diagnostics={
        "t_c_size": len(t_c),
        "t_d_size": len(t_d),
        "coverage": solution.coverage,
        "n_d": n_d,
        "t_c_ids": [inst.instance_id for inst in t_c],
        "t_d_ids": t_d,
    })


def taudis_img_select(state: PoolState,
                      predictions: Mapping[str, ImagePrediction],
                      config: SelectionConfig) -> StrategyOutput:
    """Image-level variant: top-WSE images, then max cover on image embeddings."""
    images = _unlabeled_predictions(state, predictions)
    wse = {iid: uncertainty.weighted_segmentation_entropy(img).value
           for iid, img in images.items()}
    ranked = sorted(images, key=lambda iid: (-wse[iid], iid))
    d_c = ranked[:_scaled_count(config.alpha, config.budget)]
    embeddings = {iid: image_embedding(images[iid]) for iid in images}
    dims = {emb.shape for emb in embeddings.values()}
    if len(dims) > 1:
        raise MissingEmbeddingError(
            f"inconsistent image embedding dimensions: {sorted(dims)}")
    universe = [(iid, embeddings[iid]) for iid in sorted(images)]
    candidates = [(iid, embeddings[iid]) for iid in d_c]
    matrix = simgraph.build_similarity_matrix(candidates, universe, config.sigma)
    problem = simgraph.to_cover_problem(matrix)
    solution = _solve_cover(problem, config.budget, config)
    return StrategyOutput(selected_images=list(solution.selected), diagnostics={
        "d_c_size": len(d_c),
        "coverage": solution.coverage,
    })


def random_select(state: PoolState, budget: int, seed: int) -> StrategyOutput:
    """Uniform sample without replacement from the unlabeled pool."""
    ids = sorted(state.unlabeled)
    rng = random.Random(seed)
    selected = rng.sample(ids, min(budget, len(ids)))
    return StrategyOutput(selected_images=selected, diagnostics={})


_IMAGE_METRICS = {
    "avg_cm": uncertainty.average_classification_margin,
    "wce": uncertainty.weighted_classification_entropy,
    "wse": uncertainty.weighted_segmentation_entropy,
}


def uncertainty_select(state: PoolState,
                       predictions: Mapping[str, ImagePrediction],
                       metric: str, budget: int) -> StrategyOutput:
    """Top images by one image-level metric, taken in its uncertain direction."""
    if metric not in _IMAGE_METRICS:
        raise ValueError(f"unknown image metric {metric!r}")
    images = _unlabeled_predictions(state, predictions)
    scores = {iid: _IMAGE_METRICS[metric](img) for iid, img in images.items()}
    ranked = sorted(images, key=lambda iid: (scores[iid].rank_key(), iid))
    take = min(budget, len(ranked))
    return StrategyOutput(
        selected_images=ranked[:take],
        diagnostics={"metric": metric,
                     "scores": {iid: scores[iid].value for iid in ranked[:take]}})


def coreset_select(state: PoolState,
                   predictions: Mapping[str, ImagePrediction],
                   budget: int) -> StrategyOutput:
    """k-center greedy on image embeddings: repeatedly take the unlabeled
    image farthest from every labeled or already-selected image."""
    unlabeled = sorted(state.unlabeled)
    labeled = sorted(state.labeled)
    missing = [iid for iid in labeled + unlabeled if iid not in predictions]
    if missing:
        raise MissingEmbeddingError(
            f"no predictions (hence no embeddings) for images: {missing[:5]}")
    embeddings = {iid: image_embedding(predictions[iid])
                  for iid in labeled + unlabeled}
    dims = {emb.shape for emb in embeddings.values()}
    if len(dims) > 1:
        raise MissingEmbeddingError(
            f"inconsistent image embedding dimensions: {sorted(dims)}")
    take = min(budget, len(unlabeled))
    if take == 0:
        return StrategyOutput(selected_images=[], diagnostics={})
    pool = np.asarray([embeddings[iid] for iid in unlabeled])
    selected: list[str] = []
    if labeled:
        centers = np.asarray([embeddings[iid] for iid in labeled])
        min_dist = np.min(
            np.linalg.norm(pool[:, None, :] - centers[None, :, :], axis=2), axis=1)
    else:
        # no labeled images yet: seed with the lowest image id
        min_dist = np.full(len(unlabeled), np.inf)
        min_dist[0] = -np.inf
        selected.append(unlabeled[0])
        min_dist = np.minimum(min_dist, np.linalg.norm(pool - pool[0], axis=1))
        min_dist[0] = -np.inf
    while len(selected) < take:
        pick = int(np.argmax(min_dist))  # first max = lowest id, ids are sorted
        selected.append(unlabeled[pick])
        min_dist = np.minimum(min_dist, np.linalg.norm(pool - pool[pick], axis=1))
        min_dist[pick] = -np.inf
    return StrategyOutput(selected_images=selected, diagnostics={})


def round_robin_select(state: PoolState,
                       predictions: Mapping[str, ImagePrediction],
                       budget: int) -> StrategyOutput:
    """Cycle classes in ascending index, each turn taking the image with the
    highest class-conditional WSE that is still unselected and positive."""
    images = _unlabeled_predictions(state, predictions)
    take = min(budget, len(images))
    num_classes = 0
    for img in images.values():
        if img.instances:
            num_classes = img.instances[0].class_probs.size
            break
    rankings = []
    for k in range(num_classes):
        scored = [(iid, uncertainty.class_conditional_wse(img, k).value)
                  for iid, img in images.items()]
        scored = [(iid, v) for iid, v in scored if v > 0]
        scored.sort(key=lambda item: (-item[1], item[0]))
        rankings.append([iid for iid, _ in scored])
    selected: list[str] = []
    chosen: set[str] = set()
    cursors = [0] * num_classes
    while len(selected) < take and num_classes:
        progressed = False
        for k in range(num_classes):
            if len(selected) >= take:
                break
            ranking = rankings[k]
            while cursors[k] < len(ranking) and ranking[cursors[k]] in chosen:
                cursors[k] += 1
            if cursors[k] < len(ranking):
                iid = ranking[cursors[k]]
                selected.append(iid)
                chosen.add(iid)
                cursors[k] += 1
                progressed = True
        if not progressed:
            break
    if len(selected) < take:
        rest = [iid for iid in images if iid not in chosen]
        wse = {iid: uncertainty.weighted_segmentation_entropy(images[iid]).value
               for iid in rest}
        rest.sort(key=lambda iid: (-wse[iid], iid))
        selected += rest[:take - len(selected)]
    return StrategyOutput(selected_images=selected,
                          diagnostics={"num_classes": num_classes})


def select_batch(state: PoolState, predictions: Mapping[str, ImagePrediction],
                 config: SelectionConfig) -> StrategyOutput:
    """Run the configured strategy for one round."""
    name = config.strategy
    if name == "taudis":
        return taudis_select(state, predictions, config)
    if name == "taudis_img":
        return taudis_img_select(state, predictions, config)
    if name == "random":
        return random_select(state, config.budget, config.seed)
    if name in _IMAGE_METRICS:
        return uncertainty_select(state, predictions, name, config.budget)
    if name == "coreset":
        return coreset_select(state, predictions, config.budget)
    if name == "round_robin":
        return round_robin_select(state, predictions, config.budget)
    raise ValueError(f"unknown strategy {name!r}")
