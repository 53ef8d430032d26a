"""Self-contained synthetic recognition benchmark.

Each identity is a procedural grayscale pattern: a plaid of two roughly
orthogonal gratings plus a few Gaussian blobs. Pristine (gallery) images are
the patterns themselves; turbulent (query) images are the patterns warped by
a fresh power-law tilt map. Identities are split into a labelled training
subset and disjoint evaluation identities. A separate pool of unlabelled
pristine patterns, drawn from the same family but belonging to no identity,
serves as raw material for tilt-predictor training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fields import KOLMOGOROV_ALPHA, FieldSpec, TiltMap, generate_tilt_map
from .identity import LabeledSample
from .io import save_tilt, write_image, write_manifest
from .seeding import stage_rng, stage_seed
from .tensor import DTYPE
from .warp import degrade


def identity_pattern(rng: np.random.Generator, size: int) -> np.ndarray:
    """One ``[1, size, size]`` pattern with values in [0.05, 0.95].

    A low-frequency plaid (0.5-1.5 cycles per image) plus three signed
    Gaussian blobs, with an identity-specific brightness and contrast.
    """
    t = (np.arange(size, dtype=DTYPE) + 0.5) / size
    yy, xx = np.meshgrid(t, t, indexing="ij")
    img = np.zeros((size, size))
    theta = rng.uniform(0, np.pi)
    for ang in (theta, theta + np.pi / 2 + rng.uniform(-0.3, 0.3)):
        freq = rng.uniform(0.5, 1.5)
        phase = rng.uniform(0, 2 * np.pi)
        img += 0.18 * np.cos(2 * np.pi * freq * (xx * np.cos(ang) + yy * np.sin(ang)) + phase)
    for _ in range(3):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        s = rng.uniform(0.08, 0.2)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.15, 0.3)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    contrast = rng.uniform(0.6, 1.4)
    brightness = 0.5 + rng.uniform(-0.15, 0.15)
    return np.clip(brightness + contrast * img, 0.05, 0.95)[None]


@dataclass
class BenchmarkConfig:
    n_identities: int = 8
    n_train_identities: int = 4
    image_size: int = 16
    train_pristine_per_id: int = 4
    train_turbulent_per_id: int = 32
    queries_per_id: int = 25
    tilt_strength: float = 2.0
    corr_length: float = 8.0
    alpha: float = KOLMOGOROV_ALPHA
    pristine_noise: float = 0.02
    query_blur: list | None = None  # optional [sigma, ksize] after the tilt
    pool_size: int = 100  # unlabelled pristine patterns
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.n_train_identities <= self.n_identities - 2:
            raise ValueError("need at least two training and two evaluation identities")


@dataclass
class Query:
    image: np.ndarray
    label: int
    tilt: TiltMap


@dataclass
class Benchmark:
    config: BenchmarkConfig
    patterns: dict[int, np.ndarray]
    train: list[LabeledSample] = field(default_factory=list)
    gallery: list[tuple[int, np.ndarray]] = field(default_factory=list)
    queries: list[Query] = field(default_factory=list)
    pool: list[np.ndarray] = field(default_factory=list)

    @property
    def train_labels(self) -> list[int]:
        return sorted({s.label for s in self.train})

    @property
    def eval_labels(self) -> list[int]:
        return sorted({lab for lab, _ in self.gallery})


def random_tilt(size: int, strength: float, corr_length: float, alpha: float, seed: int) -> TiltMap:
    return generate_tilt_map(
        FieldSpec((size, size), alpha=alpha, corr_length=corr_length, strength=strength, seed=seed)
    )


def make_benchmark(config: BenchmarkConfig | None = None) -> Benchmark:
    config = config or BenchmarkConfig()
    cfg = config
    rng = stage_rng(cfg.seed, "benchmark.patterns")
    patterns = {lab: identity_pattern(rng, cfg.image_size) for lab in range(cfg.n_identities)}
    bench = Benchmark(cfg, patterns)
    pool_rng = stage_rng(cfg.seed, "benchmark.pool")
    bench.pool = [identity_pattern(pool_rng, cfg.image_size) for _ in range(cfg.pool_size)]
    blur = tuple(cfg.query_blur) if cfg.query_blur else None
    mode = "tilt+blur" if blur else "tilt"

    field_seed = stage_seed(cfg.seed, "benchmark.fields")
    noise_rng = stage_rng(cfg.seed, "benchmark.noise")
    n_field = 0

    def next_tilt():
        nonlocal n_field
        # each tilt consumes seeds s and s+1
        seed = (field_seed + 2 * n_field) % 2**64
        n_field += 1
        return random_tilt(cfg.image_size, cfg.tilt_strength, cfg.corr_length, cfg.alpha, seed)

    for lab in range(cfg.n_train_identities):
        base = patterns[lab]
        for _ in range(cfg.train_pristine_per_id):
            img = np.clip(base + cfg.pristine_noise * noise_rng.standard_normal(base.shape), 0, 1)
            bench.train.append(LabeledSample(img, lab, "gallery"))
        for _ in range(cfg.train_turbulent_per_id):
            img = np.clip(base + cfg.pristine_noise * noise_rng.standard_normal(base.shape), 0, 1)
            bench.train.append(LabeledSample(degrade(img, next_tilt(), mode, blur), lab, "query"))
    for lab in range(cfg.n_train_identities, cfg.n_identities):
        base = patterns[lab]
        bench.gallery.append((lab, base))
        for _ in range(cfg.queries_per_id):
            tilt = next_tilt()
            bench.queries.append(Query(degrade(base, tilt, mode, blur), lab, tilt))
    return bench


def write_benchmark(bench: Benchmark, out_dir) -> dict[str, Path]:
    """Write images (PGM), query tilt maps (NPY) and the manifests.

    ``pool.json`` lists the unlabelled pristine images with label -1.
    """
    out = Path(out_dir)
    for sub in ("train", "gallery", "query", "pool"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    train = []
    for i, s in enumerate(bench.train):
        rel = f"train/{i:04d}_id{s.label}_{s.domain}.pgm"
        write_image(out / rel, s.image)
        train.append({"image_path": rel, "label": s.label, "domain": s.domain})
    gallery = []
    for i, (lab, img) in enumerate(bench.gallery):
        rel = f"gallery/{i:04d}_id{lab}.pgm"
        write_image(out / rel, img)
        gallery.append({"image_path": rel, "label": lab, "domain": "gallery"})
    queries = []
    for i, q in enumerate(bench.queries):
        rel = f"query/{i:04d}_id{q.label}.pgm"
        tilt_rel = f"query/{i:04d}_id{q.label}_tilt.npy"
        write_image(out / rel, q.image)
        save_tilt(out / tilt_rel, q.tilt)
        queries.append({"image_path": rel, "label": q.label, "domain": "query", "tilt_path": tilt_rel})
    pool = []
    for i, img in enumerate(bench.pool):
        rel = f"pool/{i:04d}.pgm"
        write_image(out / rel, img)
        pool.append({"image_path": rel, "label": -1, "domain": "gallery"})
    paths = {name: out / f"{name}.json" for name in ("train", "gallery", "query", "pool")}
    write_manifest(paths["train"], train)
    write_manifest(paths["gallery"], gallery)
    write_manifest(paths["query"], queries)
    write_manifest(paths["pool"], pool)
    return paths


def config_dict(config: BenchmarkConfig) -> dict:
    return asdict(config)
