"""Gallery ranking, tilt-based top-k re-ranking, and identification/verification metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fields import TiltMap
from .tensor import DTYPE
from .warp import MODES, degrade


@dataclass
class Gallery:
    """Closed-set gallery: one label, image and unit-norm embedding per entry."""

    labels: np.ndarray
    images: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=DTYPE))
        if not len(self.labels) == len(self.images) == len(self.embeddings):
            raise ValueError("gallery labels, images and embeddings differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def build(cls, labels, images, embedder) -> "Gallery":
        images = np.stack([np.asarray(im, dtype=DTYPE) for im in images])
        return cls(np.asarray(labels), images, embedder(images))


@dataclass
class RankedList:
    """Gallery candidates for one query, best first.

    ``indices`` index into the gallery, ``labels`` are the matching gallery
    labels. Lists from :func:`rank_gallery` are sorted by descending score with
    ties broken by ascending index; after :func:`rerank_top_k` only the
    first ``k`` positions are re-sorted (by their new scores).
    """

    query_id: int
    indices: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def mate_ranks(self) -> np.ndarray:
        """1-based positions of gallery entries sharing the query's identity."""
        return np.flatnonzero(self.labels == self.query_id) + 1


def _order(indices: np.ndarray, scores: np.ndarray) -> np.ndarray:
    return np.lexsort((indices, -scores))


def rank_gallery(query_emb, gallery: Gallery, query_id=None) -> RankedList:
    """Rank all gallery entries by cosine similarity (dot product of unit vectors)."""
    q = np.asarray(query_emb, dtype=DTYPE)
    if q.shape != gallery.embeddings.shape[1:]:
        raise ValueError(f"query embedding dims {q.shape} vs gallery {gallery.embeddings.shape[1:]}")
    scores = gallery.embeddings @ q
    idx = np.arange(len(gallery))
    order = _order(idx, scores)
    return RankedList(query_id, idx[order], scores[order], gallery.labels[order])


def rerank_top_k(
    query_img,
    ranked: RankedList,
    gallery: Gallery,
    predictor: Callable[[np.ndarray], TiltMap] | None,
    embedder: Callable[[np.ndarray], np.ndarray],
    k: int = 5,
    mode: str = "tilt",
    blur=None,
) -> RankedList:
    """Re-score the top ``k`` candidates after degrading them like the query.

    The query's tilt map comes from ``predictor(query_img)``; each of the top
    ``k`` gallery images is degraded with it (``mode`` selects tilt, blur or
    both), re-embedded and re-scored against the query embedding. Positions
    beyond ``k`` are untouched, so the set of top-``k`` entries never changes.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(ranked.indices):
        raise ValueError(f"k={k} exceeds the gallery size {len(ranked.indices)}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if k == 1:
        return ranked
    tilt = predictor(query_img) if "tilt" in mode else None
    q_emb = np.asarray(embedder(query_img), dtype=DTYPE).ravel()
    top = ranked.indices[:k]
    warped = np.stack([degrade(gallery.images[i], tilt, mode, blur) for i in top])
    new_scores = np.asarray(embedder(warped), dtype=DTYPE) @ q_emb
    order = _order(top, new_scores)
    indices = ranked.indices.copy()
    scores = ranked.scores.copy()
    labels = ranked.labels.copy()
    indices[:k] = top[order]
    scores[:k] = new_scores[order]
    labels[:k] = gallery.labels[indices[:k]]
    return RankedList(ranked.query_id, indices, scores, labels)


def check_closed_set(query_ids, gallery_labels) -> None:
    missing = set(np.asarray(query_ids).tolist()) - set(np.asarray(gallery_labels).tolist())
    if missing:
        raise ValueError(f"query identities without a gallery mate: {sorted(missing)}")


def _check_results(results: Sequence[RankedList]) -> None:
    if not results:
        raise ValueError("no ranked lists to score")
    for r in results:
        if not np.any(r.labels == r.query_id):
            raise ValueError(f"query identity {r.query_id} has no mate in the gallery")


def rank_k_accuracy(results: Sequence[RankedList], k: int) -> float:
    """Fraction of queries with a mate among the top ``k`` candidates."""
    _check_results(results)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return float(np.mean([np.any(r.labels[:k] == r.query_id) for r in results]))


def average_precision(ranked: RankedList) -> float:
    ranks = ranked.mate_ranks()
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(results: Sequence[RankedList]) -> float:
    _check_results(results)
    return float(np.mean([average_precision(r) for r in results]))


def verification_scores(results: Sequence[RankedList]) -> tuple[np.ndarray, np.ndarray]:
    """Split every (query, gallery) score into genuine and imposter sets."""
    genuine, imposter = [], []
    for r in results:
        mate = r.labels == r.query_id
        genuine.append(r.scores[mate])
        imposter.append(r.scores[~mate])
    return np.concatenate(genuine), np.concatenate(imposter)


def roc_curve(genuine, imposter) -> tuple[np.ndarray, np.ndarray]:
    """ROC points ``(fpr, tpr)`` from a sweep over every distinct score.

    A pair is accepted when its score is >= the threshold. The curve starts
    at (0, 0) and ends at (1, 1).
    """
    genuine = np.asarray(genuine, dtype=DTYPE)
    imposter = np.asarray(imposter, dtype=DTYPE)
    if genuine.size == 0 or imposter.size == 0:
        raise ValueError("need at least one genuine and one imposter score")
    thresholds = np.unique(np.concatenate([genuine, imposter]))[::-1]
    g = np.sort(genuine)
    im = np.sort(imposter)
    tpr = (g.size - np.searchsorted(g, thresholds, side="left")) / g.size
    fpr = (im.size - np.searchsorted(im, thresholds, side="left")) / im.size
    return np.concatenate([[0.0], fpr]), np.concatenate([[0.0], tpr])


def auc(curve) -> float:
    fpr, tpr = curve
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def tar_at_far(curve, far: float) -> float:
    """TPR at the requested FPR, linearly interpolated along the curve's upper envelope."""
    fpr, tpr = curve
    ux = np.unique(fpr)
    upper = np.array([tpr[fpr == x].max() for x in ux])
    return float(np.interp(far, ux, upper))


def summarize(results: Sequence[RankedList]) -> dict:
    genuine, imposter = verification_scores(results)
    curve = roc_curve(genuine, imposter)
    n = len(results[0].indices)
    return {
        "rank1": rank_k_accuracy(results, 1),
        "rank3": rank_k_accuracy(results, min(3, n)),
        "rank5": rank_k_accuracy(results, min(5, n)),
        "mAP": mean_average_precision(results),
        "auc": auc(curve),
        "tar_at_1pct_far": tar_at_far(curve, 0.01),
    }


def write_results_csv(path, results: Sequence[RankedList]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_index", "query_label", "rank", "gallery_index", "gallery_label", "score"])
        for qi, r in enumerate(results):
            for pos, (gi, lab, s) in enumerate(zip(r.indices, r.labels, r.scores), start=1):
                w.writerow([qi, r.query_id, pos, int(gi), lab, repr(float(s))])


def write_roc_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for f, t in zip(*curve):
            w.writerow([repr(float(f)), repr(float(t))])


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
