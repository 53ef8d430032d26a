"""Experiment configuration: a JSON document validated before any run."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .benchmark import BenchmarkConfig
from .identity import IdentityConfig
from .seeding import stage_seed
from .tilt import SpecRanges, TiltConfig

OUTPUT_DIR_ENV = "TILTRANK_OUTPUT_DIR"

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_range = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_channels = {"type": "array", "items": _pos_int, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "data_dir": {"type": "string"},
        "manifests": _obj({k: {"type": "string"} for k in ("train", "gallery", "query", "pool")}),
        "benchmark": _obj(
            {
                "n_identities": _pos_int,
                "n_train_identities": _pos_int,
                "image_size": _pos_int,
                "train_pristine_per_id": _nonneg_int,
                "train_turbulent_per_id": _nonneg_int,
                "queries_per_id": _pos_int,
                "tilt_strength": {"type": "number", "minimum": 0},
                "corr_length": {"type": "number", "exclusiveMinimum": 0},
                "alpha": {"type": "number", "minimum": 0},
                "pristine_noise": {"type": "number", "minimum": 0},
                "query_blur": {"type": ["array", "null"], "items": _num, "minItems": 2, "maxItems": 2},
                "pool_size": _nonneg_int,
            }
        ),
        "field": _obj({"alpha": {"type": "number", "minimum": 0}, "corr_length": _range, "strength": _range}),
        "identity": _obj(
            {
                "epochs": _nonneg_int,
                "batch_size": _pos_int,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "bank_momentum": {"type": "number", "minimum": 0, "maximum": 1},
                "backbone_channels": _channels,
                "embed_dim": _pos_int,
            }
        ),
        "tilt": _obj(
            {
                "epochs": _nonneg_int,
                "batch_size": _pos_int,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "encoder": _channels,
                "decoder": _channels,
                "zero_last": {"type": "boolean"},
                "n_per_image": _nonneg_int,
            }
        ),
        "eval": _obj(
            {
                "k": _pos_int,
                "blur_sigma": {"type": "number", "exclusiveMinimum": 0},
                "blur_ksize": _pos_int,
            }
        ),
    },
    required=("seed", "output_dir"),
)


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: Path
    base_dir: Path
    raw: dict = field(repr=False, default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def path(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def manifest(self, name: str) -> Path:
        manifests = self.raw.get("manifests", {})
        if name in manifests:
            return self.path(manifests[name])
        if "data_dir" in self.raw:
            return self.path(self.raw["data_dir"]) / f"{name}.json"
        raise ValueError(f"config names no '{name}' manifest (set manifests.{name} or data_dir)")

    def benchmark_config(self) -> BenchmarkConfig:
        return BenchmarkConfig(**self.section("benchmark"), seed=stage_seed(self.seed, "benchmark"))

    def identity_config(self) -> IdentityConfig:
        d = self.section("identity")
        if "backbone_channels" in d:
            d["backbone_channels"] = tuple(d["backbone_channels"])
        return IdentityConfig(**d, seed=stage_seed(self.seed, "identity"))

    def tilt_config(self) -> tuple[TiltConfig, int]:
        d = self.section("tilt")
        n_per_image = d.pop("n_per_image", 20)
        for key in ("encoder", "decoder"):
            if key in d:
                d[key] = tuple(d[key])
        return TiltConfig(**d, seed=stage_seed(self.seed, "tilt")), n_per_image

    def spec_ranges(self) -> SpecRanges:
        d = self.section("field")
        out = SpecRanges()
        if "alpha" in d:
            out.alpha = d["alpha"]
        if "corr_length" in d:
            out.corr_length = tuple(d["corr_length"])
        if "strength" in d:
            out.strength = tuple(d["strength"])
        return out


def validate(raw: dict) -> None:
    jsonschema.validate(raw, SCHEMA)


def load_config(path) -> ExperimentConfig:
    """Read and validate a config; ``$TILTRANK_OUTPUT_DIR`` overrides ``output_dir``."""
    path = Path(path)
    raw = json.loads(path.read_text())
    try:
        validate(raw)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"{path}: invalid config at {where}: {exc.message}") from None
    cfg = ExperimentConfig(raw["seed"], Path(raw["output_dir"]), path.parent.resolve(), raw)
    override = os.environ.get(OUTPUT_DIR_ENV)
    cfg.output_dir = Path(override) if override else cfg.path(raw["output_dir"])
    return cfg
