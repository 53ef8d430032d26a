"""End-to-end experiment stages driven by an :class:`ExperimentConfig`.

Stage outputs under ``output_dir``::

    identity/   checkpoint of backbone, attention head and memory bank
    tilt/       checkpoint of the tilt predictor
    eval-<mode>/results.csv, summary.json, roc.csv
"""

from __future__ import annotations

import json
import logging
from functools import partial
from pathlib import Path

import numpy as np

from .benchmark import make_benchmark, write_benchmark
from .config import ExperimentConfig
from .identity import (
    IdentityConfig,
    IdentityModel,
    LabeledSample,
    MemoryBank,
    check_disjoint,
    train_identity,
)
from .io import load_checkpoint, read_image, read_manifest, save_checkpoint
from .retrieval import (
    Gallery,
    check_closed_set,
    rank_gallery,
    rerank_top_k,
    summarize,
    write_results_csv,
    write_roc_csv,
    write_summary,
)
from .tilt import predict_tilt, synth_training_set, train_tilt_predictor

logger = logging.getLogger(__name__)

RERANK_MODES = ("none", "tilt", "blur", "tilt+blur")


def load_samples(manifest) -> list[LabeledSample]:
    return [
        LabeledSample(read_image(e["image_path"]), e["label"], e["domain"])
        for e in read_manifest(manifest)
    ]


def make_benchmark_stage(cfg: ExperimentConfig, out_dir) -> dict[str, Path]:
    bench = make_benchmark(cfg.benchmark_config())
    out_dir = Path(out_dir)
    paths = write_benchmark(bench, out_dir)
    (out_dir / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    return paths


def save_identity(directory, model: IdentityModel, bank: MemoryBank, class_labels, config: IdentityConfig, losses):
    tensors = {**model.params(), "bank.centers": bank.centers}
    meta = {
        "kind": "identity",
        "training": config.to_dict(),
        "class_labels": [int(c) for c in class_labels],
        "bank_momentum": bank.momentum,
        "tau": bank.tau,
        "losses": [float(v) for v in losses],
    }
    save_checkpoint(directory, tensors, meta)


def load_identity(directory) -> tuple[IdentityModel, MemoryBank, dict]:
    tensors, meta = load_checkpoint(directory)
    if meta.get("kind") != "identity":
        raise ValueError(f"{directory} is not an identity checkpoint")
    centers = tensors.pop("bank.centers")
    return IdentityModel.from_params(tensors), MemoryBank(centers, meta["bank_momentum"], meta["tau"]), meta


def train_identity_stage(cfg: ExperimentConfig):
    samples = load_samples(cfg.manifest("train"))
    icfg = cfg.identity_config()
    result = train_identity(samples, icfg)
    save_identity(cfg.output_dir / "identity", result.model, result.bank, result.class_labels, icfg, result.losses)
    return result


def tilt_training_images(cfg: ExperimentConfig) -> list[np.ndarray]:
    """Pristine images for the predictor: the ``pool`` manifest if present,
    otherwise the pristine images of the training manifest."""
    try:
        pool = cfg.manifest("pool")
    except ValueError:
        pool = None
    if pool is not None and pool.is_file():
        images = [s.image for s in load_samples(pool)]
        if images:
            return images
    return [s.image for s in load_samples(cfg.manifest("train")) if s.domain == "gallery"]


def train_tilt_stage(cfg: ExperimentConfig):
    """Synthesize warped copies of pristine images and fit the predictor."""
    pristine = tilt_training_images(cfg)
    tcfg, n_per_image = cfg.tilt_config()
    samples = synth_training_set(pristine, n_per_image, cfg.spec_ranges(), seed=tcfg.seed + 7)
    result = train_tilt_predictor(samples, tcfg)
    meta = {"kind": "tilt", "training": tcfg.to_dict(), "n_per_image": n_per_image,
            "losses": [float(v) for v in result.losses]}
    save_checkpoint(cfg.output_dir / "tilt", result.params, meta)
    return result


def load_tilt_params(directory) -> dict[str, np.ndarray]:
    tensors, meta = load_checkpoint(directory)
    if meta.get("kind") != "tilt":
        raise ValueError(f"{directory} is not a tilt checkpoint")
    return tensors


def evaluate_queries(model, gallery: Gallery, queries, rerank: str = "none", predictor=None, k: int = 5, blur=None):
    """Rank every ``(image, label)`` query, optionally re-ranking the top ``k``."""
    if rerank not in RERANK_MODES:
        raise ValueError(f"rerank must be one of {RERANK_MODES}, got {rerank!r}")
    check_closed_set([lab for _, lab in queries], gallery.labels)
    k = min(k, len(gallery))
    results = []
    for img, lab in queries:
        ranked = rank_gallery(model.embed(img), gallery, lab)
        if rerank != "none":
            ranked = rerank_top_k(img, ranked, gallery, predictor, model.embed, k, rerank, blur)
        results.append(ranked)
    return results


def eval_stage(cfg: ExperimentConfig, rerank: str = "none") -> dict:
    model, _, meta = load_identity(cfg.output_dir / "identity")
    gallery_entries = read_manifest(cfg.manifest("gallery"))
    query_entries = read_manifest(cfg.manifest("query"))
    check_disjoint(meta["class_labels"], [e["label"] for e in gallery_entries])
    gallery = Gallery.build(
        [e["label"] for e in gallery_entries], [read_image(e["image_path"]) for e in gallery_entries], model.embed
    )
    queries = [(read_image(e["image_path"]), e["label"]) for e in query_entries]
    predictor = None
    if "tilt" in rerank:
        predictor = partial(predict_tilt, load_tilt_params(cfg.output_dir / "tilt"))
    ev = cfg.section("eval")
    blur = (ev.get("blur_sigma", 1.0), ev.get("blur_ksize", 5))
    results = evaluate_queries(model, gallery, queries, rerank, predictor, ev.get("k", 5), blur)
    summary = summarize(results)
    out = cfg.output_dir / f"eval-{rerank}"
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", results)
    from .retrieval import roc_curve, verification_scores

    write_roc_csv(out / "roc.csv", roc_curve(*verification_scores(results)))
    write_summary(out / "summary.json", summary)
    return summary
