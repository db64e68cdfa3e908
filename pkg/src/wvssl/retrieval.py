"""One-shot image retrieval over embeddings: nearest-neighbor lists by cosine
similarity and per-class mean average precision over repeated anchor draws.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ConfigError, DataError
from .store import EmbeddingMatrix

RETRIEVAL_K = 20
RELEVANCE_ANCHOR_CLASS = "anchor_class"
RELEVANCE_ANY_OVERLAP = "any_overlap"


def retrieve_topk(anchor_id: str, matrix: EmbeddingMatrix,
                  k: int = RETRIEVAL_K) -> list:
    """Ids of the k most cosine-similar rows to the anchor, anchor excluded,
    ties broken by id."""
    ids = matrix.ids
    if anchor_id not in ids:
        raise DataError(f"anchor id {anchor_id!r} not present")
    n = len(ids)
    if k >= n:
        raise ConfigError(f"k={k} must be smaller than the {n}-row store")
    rows = np.asarray(matrix.rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise DataError("embedding store contains a zero row")
    unit = rows / norms[:, None]
    anchor_idx = ids.index(anchor_id)
    sims = unit @ unit[anchor_idx]
    candidates = [i for i in range(n) if i != anchor_idx]
    candidates.sort(key=lambda i: (-sims[i], ids[i]))
    return [ids[i] for i in candidates[:k]]


def average_precision(relevance) -> float:
    """Mean of precision@i over the relevant ranks of a truncated ranking;
    zero when nothing relevant was retrieved."""
    precisions = []
    hits = 0
    for rank, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            precisions.append(hits / rank)
    return float(np.mean(precisions)) if precisions else 0.0


def retrieval_map(matrix: EmbeddingMatrix, labels_by_id: dict, classes,
                  trials: int = 100, k: int = RETRIEVAL_K, seed: int = 0,
                  relevance: str = RELEVANCE_ANCHOR_CLASS):
    """Per-class retrieval quality: for each class, draw `trials` random
    anchors carrying that class, retrieve the top-k neighbors, and average the
    AP of the binary relevance lists. Returns (map_per_class, map_mean).

    Relevance modes: the anchor's sampled class appears in the retrieved
    image's label set (default), or any label overlap with the anchor.
    Classes with fewer than two positives are skipped with a warning.
    """
    if relevance not in (RELEVANCE_ANCHOR_CLASS, RELEVANCE_ANY_OVERLAP):
        raise ConfigError(f"unknown relevance mode {relevance!r}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    missing = [i for i in matrix.ids if i not in labels_by_id]
    if missing:
        raise DataError(f"{len(missing)} embedding ids lack labels "
                        f"(first: {missing[0]!r})")
    label_sets = {i: frozenset(labels_by_id[i]) for i in matrix.ids}
    map_per_class = {}
    for ci, cls in enumerate(classes):
        positives = [i for i in matrix.ids if cls in label_sets[i]]
        if len(positives) < 2:
            warnings.warn(f"retrieval: class {cls!r} has {len(positives)} "
                          f"positives; skipped", stacklevel=2)
            continue
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x2F, ci])
        aps = []
        for _ in range(trials):
            anchor = positives[int(rng.integers(0, len(positives)))]
            retrieved = retrieve_topk(anchor, matrix, k=k)
            if relevance == RELEVANCE_ANCHOR_CLASS:
                rels = [cls in label_sets[r] for r in retrieved]
            else:
                anchor_labels = label_sets[anchor]
                rels = [bool(anchor_labels & label_sets[r]) for r in retrieved]
            aps.append(average_precision(rels))
        map_per_class[cls] = float(np.mean(aps))
    if not map_per_class:
        raise DataError("no class had enough positives for retrieval")
    map_mean = float(np.mean(list(map_per_class.values())))
    return map_per_class, map_mean
