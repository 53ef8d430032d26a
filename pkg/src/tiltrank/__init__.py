"""Turbulence-robust recognition at desk scale.

Power-law tilt fields, image warping, a small self-attention embedding head
trained with a memory-bank loss, a tilt-map predictor, and tilt-aware
re-ranking of gallery matches, all on numpy.
"""

from .attention import AttentionParams, attention_forward, init_attention, pool_embed
from .fields import FieldSpec, ScalarField, TiltMap, generate_scalar_field, generate_tilt_map, measure_psd_slope
from .identity import IdentityConfig, MemoryBank, identity_loss, train_identity, update_center
from .retrieval import Gallery, RankedList, rank_gallery, rerank_top_k, summarize
from .tensor import Tape, Var, conv2d, conv2d_transpose, sgd_step
from .tilt import TiltConfig, predict_tilt, train_tilt_predictor
from .warp import apply_tilt, degrade, gaussian_blur

__version__ = "0.1.0"

__all__ = [
    "AttentionParams", "FieldSpec", "Gallery", "IdentityConfig", "MemoryBank", "RankedList",
    "ScalarField", "Tape", "TiltConfig", "TiltMap", "Var", "apply_tilt", "attention_forward",
    "conv2d", "conv2d_transpose", "degrade", "gaussian_blur", "generate_scalar_field",
    "generate_tilt_map", "identity_loss", "init_attention", "measure_psd_slope", "pool_embed",
    "predict_tilt", "rank_gallery", "rerank_top_k", "sgd_step", "summarize", "train_identity",
    "train_tilt_predictor", "update_center",
]
