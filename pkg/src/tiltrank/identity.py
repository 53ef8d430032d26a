"""Weakly supervised identity learning against a memory bank of class centers."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import (
    AttentionParams,
    attention_forward,
    attention_op,
    init_attention,
    pool_embed,
    pool_embed_op,
)
from .tensor import DTYPE, Tape, Var, conv2d, relu, sgd_step

logger = logging.getLogger(__name__)


@dataclass
class MemoryBank:
    """Unit-norm class centers ``[nc, D]`` with update momentum and temperature."""

    centers: np.ndarray
    momentum: float = 0.5
    tau: float = 0.1

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=DTYPE)
        if self.centers.ndim != 2 or self.centers.shape[0] < 2:
            raise ValueError(f"memory bank needs at least two centers, got dims {self.centers.shape}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def init_bank(num_classes: int, dim: int, seed: int = 0, momentum: float = 0.5, tau: float = 0.1) -> MemoryBank:
    """Random unit-vector centers."""
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((num_classes, dim))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return MemoryBank(c, momentum, tau)


def _logits(bank: MemoryBank, f) -> np.ndarray:
    f = np.asarray(f, dtype=DTYPE)
    if f.shape[-1] != bank.dim:
        raise ValueError(f"embedding dim {f.shape[-1]} does not match bank dim {bank.dim}")
    return f @ bank.centers.T / bank.tau


def log_class_probability(bank: MemoryBank, f) -> np.ndarray:
    z = _logits(bank, f)
    zmax = z.max(axis=-1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))


def class_probability(bank: MemoryBank, f) -> np.ndarray:
    """Softmax over all centers of ``centers @ f / tau``."""
    return np.exp(log_class_probability(bank, f))


def identity_loss(bank: MemoryBank, f, label) -> float:
    """Mean negative log-likelihood of the labelled center."""
    logp = np.atleast_2d(log_class_probability(bank, f))
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    return float(-logp[np.arange(len(labels)), labels].mean())


def identity_loss_op(tape: Tape, emb: Var, bank: MemoryBank, labels) -> Var:
    labels = np.asarray(labels, dtype=np.intp)
    logp = log_class_probability(bank, emb.value)
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        d_z = np.exp(logp)
        d_z[np.arange(n), labels] -= 1.0
        return (g * d_z @ bank.centers / (bank.tau * n),)

    return tape.record(np.array(loss), (emb,), vjp)


def update_center(bank: MemoryBank, label: int, f) -> MemoryBank:
    """``center <- normalize(m*center + (1-m)*f)`` for one class; returns a new bank."""
    centers = bank.centers.copy()
    c = bank.momentum * centers[label] + (1.0 - bank.momentum) * np.asarray(f, dtype=DTYPE)
    norm = np.linalg.norm(c)
    if norm > 0:
        centers[label] = c / norm
    return MemoryBank(centers, bank.momentum, bank.tau)


# model -----------------------------------------------------------------------

BACKBONE_CHANNELS = (8, 16, 32)


def init_backbone(in_channels: int, channels=BACKBONE_CHANNELS, seed: int = 0) -> dict[str, np.ndarray]:
    """Three 3x3 stride-2 conv blocks, He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    c_prev = in_channels
    for i, c in enumerate(channels):
        bound = np.sqrt(6.0 / (c_prev * 9))
        params[f"bb{i}.w"] = rng.uniform(-bound, bound, size=(c, c_prev, 3, 3))
        params[f"bb{i}.b"] = np.zeros(c, dtype=DTYPE)
        c_prev = c
    return params


INPUT_OFFSET = 0.5  # pixels are centered before the first conv


def backbone_forward(params: dict[str, np.ndarray], images) -> np.ndarray:
    x = np.asarray(images, dtype=DTYPE) - INPUT_OFFSET
    i = 0
    while f"bb{i}.w" in params:
        x = relu(conv2d(x, params[f"bb{i}.w"], params[f"bb{i}.b"], stride=2, pad=1))
        i += 1
    return x


@dataclass
class IdentityModel:
    """Toy backbone followed by the attention head and pooled embedding."""

    backbone: dict[str, np.ndarray]
    attention: AttentionParams

    def params(self) -> dict[str, np.ndarray]:
        return {**self.backbone, **self.attention.as_dict("attn.")}

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray]) -> "IdentityModel":
        backbone = {k: v for k, v in params.items() if k.startswith("bb")}
        return cls(backbone, AttentionParams.from_dict(params, "attn."))

    def features(self, images) -> np.ndarray:
        return attention_forward(backbone_forward(self.backbone, images), self.attention)

    def embed(self, images) -> np.ndarray:
        """Unit-norm embeddings for ``[C,H,W]`` or ``[B,C,H,W]`` images."""
        return pool_embed(self.features(images))

    __call__ = embed

    def forward_op(self, tape: Tape, images, params: dict[str, Var]) -> Var:
        x = Var(np.asarray(images, dtype=DTYPE) - INPUT_OFFSET)
        i = 0
        while f"bb{i}.w" in params:
            x = tape.relu(tape.conv2d(x, params[f"bb{i}.w"], params[f"bb{i}.b"], stride=2, pad=1))
            i += 1
        attn = {k[len("attn."):]: v for k, v in params.items() if k.startswith("attn.")}
        return pool_embed_op(tape, attention_op(tape, x, attn))


def init_identity_model(in_channels: int, channels=BACKBONE_CHANNELS, embed_dim: int = 16, seed: int = 0) -> IdentityModel:
    return IdentityModel(
        init_backbone(in_channels, channels, seed),
        init_attention(channels[-1], embed_dim, seed + 1),
    )


@dataclass(frozen=True)
class LabeledSample:
    image: np.ndarray
    label: int
    domain: str  # "gallery" (pristine) or "query" (turbulent)


@dataclass
class IdentityConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.003
    momentum: float = 0.9
    tau: float = 0.1
    bank_momentum: float = 0.5
    backbone_channels: tuple[int, ...] = BACKBONE_CHANNELS
    embed_dim: int = 16
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d


@dataclass
class IdentityResult:
    model: IdentityModel
    bank: MemoryBank
    class_labels: list[int]
    losses: list[float] = field(default_factory=list)


def check_disjoint(train_labels, test_labels) -> None:
    """Training identities must not overlap the evaluation identities."""
    overlap = set(train_labels) & set(test_labels)
    if overlap:
        raise ValueError(f"train and evaluation identities overlap: {sorted(overlap)}")


def train_identity(samples: list[LabeledSample], config: IdentityConfig | None = None) -> IdentityResult:
    """Train backbone and attention head against a memory bank.

    Each step embeds a minibatch, takes the mean NLL of the labelled centers,
    backpropagates, applies momentum SGD, then moves each sample's center
    toward its (pre-step) embedding. Labels may be arbitrary ints; they are
    mapped to bank rows in sorted order (``result.class_labels``).
    """
    config = config or IdentityConfig()
    class_labels = sorted({s.label for s in samples})
    if len(class_labels) < 2:
        raise ValueError("identity training needs at least two classes")
    if {s.domain for s in samples} != {"gallery", "query"}:
        raise ValueError("identity training needs both pristine (gallery) and turbulent (query) samples")
    index = {lab: i for i, lab in enumerate(class_labels)}
    images = np.stack([np.asarray(s.image, dtype=DTYPE) for s in samples])
    labels = np.array([index[s.label] for s in samples], dtype=np.intp)

    model = init_identity_model(images.shape[1], tuple(config.backbone_channels), config.embed_dim, config.seed)
    bank = init_bank(len(class_labels), config.embed_dim, config.seed + 2, config.bank_momentum, config.tau)
    params = model.params()
    velocity = None
    rng = np.random.default_rng(config.seed + 3)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = Tape()
            pvars = {k: Var(v) for k, v in params.items()}
            emb = model.forward_op(tape, images[idx], pvars)
            loss = identity_loss_op(tape, emb, bank, labels[idx])
            tape.backward(loss)
            params, velocity = sgd_step(
                params, {k: v.grad for k, v in pvars.items()}, config.lr, config.momentum, velocity
            )
            model = IdentityModel.from_params(params)
            for e, lab in zip(emb.value, labels[idx]):
                bank = update_center(bank, lab, e)
            epoch_loss += float(loss.value) * len(idx)
        losses.append(epoch_loss / len(samples))
        logger.debug("identity epoch %d loss %.4f", epoch, losses[-1])
    return IdentityResult(model, bank, class_labels, losses)
