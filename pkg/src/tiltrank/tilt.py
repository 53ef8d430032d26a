"""Encoder-decoder network that predicts a 2-channel tilt map from one image.

Training pairs are made by warping pristine images with synthetic power-law
tilt maps; the network regresses the displacement (in pixels) with MSE.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import KOLMOGOROV_ALPHA, FieldSpec, TiltMap, generate_tilt_map
from .tensor import DTYPE, Tape, Var, conv2d, relu, sgd_step, upsample_nearest
from .warp import apply_tilt, check_image, to_gray

logger = logging.getLogger(__name__)

ENCODER_CHANNELS = (16, 32, 64)
DECODER_CHANNELS = (32, 16, 2)
INPUT_OFFSET = 0.5  # grayscale input is centered before the first conv


def init_tilt_net(
    encoder=ENCODER_CHANNELS, decoder=DECODER_CHANNELS, seed: int = 0, zero_last: bool = False
) -> dict[str, np.ndarray]:
    """He-uniform 3x3 kernels with zero biases; ``zero_last`` zeroes the output layer."""
    if decoder[-1] != 2:
        raise ValueError("the decoder must end with 2 channels (dx, dy)")
    rng = np.random.default_rng(seed)
    params = {}
    c_prev = 1
    for prefix, chans in (("enc", encoder), ("dec", decoder)):
        for i, c in enumerate(chans):
            bound = np.sqrt(6.0 / (c_prev * 9))
            params[f"{prefix}{i}.w"] = rng.uniform(-bound, bound, size=(c, c_prev, 3, 3))
            params[f"{prefix}{i}.b"] = np.zeros(c, dtype=DTYPE)
            c_prev = c
    if zero_last:
        last = len(decoder) - 1
        params[f"dec{last}.w"] = np.zeros_like(params[f"dec{last}.w"])
    return params


def _depths(params) -> tuple[int, int]:
    n_enc = sum(1 for k in params if k.startswith("enc") and k.endswith(".w"))
    n_dec = sum(1 for k in params if k.startswith("dec") and k.endswith(".w"))
    return n_enc, n_dec


def _prepare(images, n_enc: int) -> np.ndarray:
    x = np.asarray(images, dtype=DTYPE)
    if x.ndim == 3:
        x = check_image(x)
    elif x.ndim != 4:
        raise ValueError(f"expected [C,H,W] or [B,C,H,W] images, got dims {x.shape}")
    x = x.mean(axis=-3, keepdims=True)
    h, w = x.shape[-2:]
    factor = 2**n_enc
    if h % factor or w % factor:
        raise ValueError(
            f"image size {h}x{w} must be divisible by {factor}; pad the image upstream"
        )
    return x - INPUT_OFFSET


def tilt_net_forward(params: dict[str, np.ndarray], images) -> np.ndarray:
    """Raw network output ``[2,H,W]`` (or ``[B,2,H,W]``), pixels."""
    n_enc, n_dec = _depths(params)
    x = _prepare(images, n_enc)
    for i in range(n_enc):
        x = relu(conv2d(x, params[f"enc{i}.w"], params[f"enc{i}.b"], stride=2, pad=1))
    for i in range(n_dec):
        x = conv2d(upsample_nearest(x), params[f"dec{i}.w"], params[f"dec{i}.b"], stride=1, pad=1)
        if i < n_dec - 1:
            x = relu(x)
    return x


def tilt_net_op(tape: Tape, params: dict[str, Var], images) -> Var:
    n_enc, n_dec = _depths(params)
    x = Var(_prepare(images, n_enc))
    for i in range(n_enc):
        x = tape.relu(tape.conv2d(x, params[f"enc{i}.w"], params[f"enc{i}.b"], stride=2, pad=1))
    for i in range(n_dec):
        x = tape.conv2d(tape.upsample_nearest(x), params[f"dec{i}.w"], params[f"dec{i}.b"], stride=1, pad=1)
        if i < n_dec - 1:
            x = tape.relu(x)
    return x


def predict_tilt(params: dict[str, np.ndarray], img) -> TiltMap:
    """Predicted displacement for one image (converted to grayscale by channel mean)."""
    return TiltMap.from_array(tilt_net_forward(params, check_image(img)))


@dataclass(frozen=True)
class TiltTrainSample:
    degraded: np.ndarray
    target: TiltMap
    spec: FieldSpec | None = None  # the field parameters that produced ``target``


@dataclass
class SpecRanges:
    """Uniform sampling ranges for training fields."""

    corr_length: tuple[float, float] = (4.0, 16.0)
    strength: tuple[float, float] = (0.5, 3.0)
    alpha: float = KOLMOGOROV_ALPHA


def synth_training_set(
    pristine: list[np.ndarray], n_per_image: int, ranges: SpecRanges | None = None, seed: int = 0
) -> list[TiltTrainSample]:
    """Warp every pristine image with ``n_per_image`` fresh random tilt maps."""
    ranges = ranges or SpecRanges()
    if not pristine:
        raise ValueError("need at least one pristine image")
    if n_per_image < 0:
        raise ValueError("n_per_image must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for img in pristine:
        img = check_image(img)
        for _ in range(n_per_image):
            corr = rng.uniform(*ranges.corr_length)
            strength = rng.uniform(*ranges.strength)
            fseed = int(rng.integers(0, 2**63))
            spec = FieldSpec(img.shape[1:], alpha=ranges.alpha, corr_length=corr, strength=strength, seed=fseed)
            tilt = generate_tilt_map(spec)
            out.append(TiltTrainSample(apply_tilt(img, tilt), tilt, spec))
    return out


@dataclass
class TiltConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    encoder: tuple[int, ...] = ENCODER_CHANNELS
    decoder: tuple[int, ...] = DECODER_CHANNELS
    zero_last: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = list(self.encoder)
        d["decoder"] = list(self.decoder)
        return d


@dataclass
class TiltResult:
    params: dict[str, np.ndarray]
    losses: list[float] = field(default_factory=list)


def stack_samples(samples: list[TiltTrainSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([to_gray(s.degraded) for s in samples])
    y = np.stack([s.target.as_array() for s in samples])
    return x, y


def train_tilt_predictor(samples: list[TiltTrainSample], config: TiltConfig | None = None) -> TiltResult:
    """Minibatch momentum SGD on the MSE between predicted and true tilt maps."""
    config = config or TiltConfig()
    params = init_tilt_net(config.encoder, config.decoder, config.seed, config.zero_last)
    if config.epochs == 0 or not samples:
        return TiltResult(params, [])
    x, y = stack_samples(samples)
    rng = np.random.default_rng(config.seed + 1)
    velocity = None
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = Tape()
            pvars = {k: Var(v) for k, v in params.items()}
            loss = tape.mse_loss(tilt_net_op(tape, pvars, x[idx]), y[idx])
            tape.backward(loss)
            params, velocity = sgd_step(
                params, {k: v.grad for k, v in pvars.items()}, config.lr, config.momentum, velocity
            )
            total += float(loss.value) * len(idx)
        losses.append(total / len(samples))
        logger.debug("tilt epoch %d loss %.4f", epoch, losses[-1])
    return TiltResult(params, losses)


def pearson(a, b) -> float:
    a = np.ravel(a) - np.mean(a)
    b = np.ravel(b) - np.mean(b)
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom) if denom > 0 else 0.0


def tilt_correlation(params, samples: list[TiltTrainSample]) -> float:
    """Mean over the dx and dy channels of the pooled Pearson correlation."""
    x, y = stack_samples(samples)
    pred = tilt_net_forward(params, x)
    return float(np.mean([pearson(pred[:, c], y[:, c]) for c in range(2)]))
