import json

import numpy as np
import pytest

from taudis.core import ImagePrediction, InstancePrediction, Mask


def make_instance(instance_id, image_id, probs=(0.6, 0.3, 0.1), emb=(1.0, 0.0),
                  size=0.2, mask=None, seg_entropy=None):
    if mask is None and seg_entropy is None:
        seg_entropy = 0.1
    return InstancePrediction(
        instance_id=instance_id, image_id=image_id,
        class_probs=np.asarray(probs, dtype=float),
        embedding=np.asarray(emb, dtype=float),
        size_ratio=size, mask=mask, seg_entropy=seg_entropy)


def make_image(image_id, instances, image_embedding=None):
    return ImagePrediction(image_id=image_id, instances=list(instances),
                           image_embedding=image_embedding)


@pytest.fixture
def score_pool():
    """Two images, three instances, every metric hand-checkable."""
    a1 = make_instance("a1", "img_a", probs=(0.7, 0.2, 0.1), emb=(1.0, 0.0),
                       size=0.25,
                       mask=Mask(width=2, height=2, values=[0.5, 0.5, 1.0, 0.0]),
                       seg_entropy=None)
    a2 = make_instance("a2", "img_a", probs=(0.5, 0.5, 0.0), emb=(0.0, 1.0),
                       size=0.1, seg_entropy=0.2)
    b1 = make_instance("b1", "img_b", probs=(1.0, 0.0, 0.0), emb=(1.0, 1.0),
                       size=0.5,
                       mask=Mask(width=1, height=2, values=[0.5, 0.5]),
                       seg_entropy=None)
    return {"img_a": make_image("img_a", [a1, a2]),
            "img_b": make_image("img_b", [b1])}


@pytest.fixture
def score_jsonl(tmp_path, score_pool):
    from taudis.core import write_predictions
    path = tmp_path / "predictions.jsonl"
    write_predictions(score_pool, path)
    return path


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            handle.write(json.dumps(rec) + "\n")
    return path


def valid_record(image_id="img0", n_instances=1, dim=2, classes=3):
    instances = []
    for j in range(n_instances):
        instances.append({
            "instance_id": f"{image_id}:i{j}",
            "class_probs": [1.0 / classes] * classes,
            "embedding": [1.0] + [0.0] * (dim - 1),
            "size_ratio": 0.5,
            "mask": None,
            "seg_entropy": 0.25,
        })
    return {"image_id": image_id, "instances": instances}


def cluster_pool(num_clusters, images_per_cluster, instances_per_image=2,
                 dim=None, se_by_cluster=None, size=0.1):
    """Pool whose instance embeddings are exact cluster axes: intra-cluster
    similarity 1, inter-cluster similarity 0."""
    dim = dim or num_clusters
    se_by_cluster = se_by_cluster or [0.3 + 0.01 * c for c in range(num_clusters)]
    pool = {}
    clusters = {}
    idx = 0
    for c in range(num_clusters):
        axis = np.zeros(dim)
        axis[c] = 1.0
        for i in range(images_per_cluster):
            image_id = f"img{idx:03d}"
            idx += 1
            instances = []
            for j in range(instances_per_image):
                iid = f"{image_id}:i{j}"
                instances.append(make_instance(
                    iid, image_id, probs=(0.6, 0.4), emb=axis, size=size,
                    seg_entropy=se_by_cluster[c]))
                clusters[iid] = c
            pool[image_id] = make_image(image_id, instances)
    return pool, clusters
