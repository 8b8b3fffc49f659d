"""Compact promptable encoder-decoder segmentation network.

The image runs through a small convolutional encoder; prompts are rasterized
into four channels on the low-resolution grid and concatenated into the
bottleneck; a decoder with skip connections emits four logit masks (index 0
primary, 1..3 secondary).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..maskops import Box
from ..prompts import NEGATIVE, POSITIVE, PromptSet
from ..rng import stream
from . import autodiff as ad
from .autodiff import Tensor

NUM_MASKS = 4
POINT_SIGMA = 1.5  # Gaussian bump stddev, low-res grid cells


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 128
    lowres_size: int = 32
    widths: tuple[int, ...] = (16, 32, 64)
    block_convs: int = 2
    num_masks: int = NUM_MASKS
    seed: int = 0

    def __post_init__(self):
        if self.num_masks != NUM_MASKS:
            raise ValueError(f"model always emits {NUM_MASKS} masks")
        if self.block_convs < 1:
            raise ValueError("block_convs must be >= 1")
        factor = 2 ** (len(self.widths) - 1)
        if self.image_size % factor or self.image_size // factor != self.lowres_size:
            raise ValueError(
                f"image_size {self.image_size} must be lowres_size {self.lowres_size} "
                f"x {factor} (one halving per encoder stage)"
            )

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "lowres_size": self.lowres_size,
            "widths": list(self.widths),
            "block_convs": self.block_convs,
            "num_masks": self.num_masks,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            image_size=int(d["image_size"]),
            lowres_size=int(d["lowres_size"]),
            widths=tuple(int(w) for w in d["widths"]),
            block_convs=int(d.get("block_convs", 2)),
            num_masks=int(d.get("num_masks", NUM_MASKS)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class ModelOutput:
    """Four logit masks for one slice at model resolution."""

    logits: np.ndarray  # (4, H, W)

    def __post_init__(self):
        if self.logits.shape[0] != NUM_MASKS:
            raise ValueError(f"expected {NUM_MASKS} masks, got {self.logits.shape[0]}")
        if not np.isfinite(self.logits).all():
            raise ValueError("logits contain NaN or Inf")

    @property
    def primary(self) -> np.ndarray:
        return self.logits[0]

    @property
    def secondaries(self) -> np.ndarray:
        return self.logits[1:]

    def binary(self, index: int = 0) -> np.ndarray:
        return self.logits[index] > 0.0


PROMPT_CHANNELS = 4  # mask, positive points, negative points, box


def encode_prompts(prompt_set: PromptSet, config: ModelConfig) -> np.ndarray:
    """Rasterize a prompt set into (4, H', W') float32 channels.

    Channel 0: binary mask prompt. 1: positive-point bumps. 2: negative-point
    bumps (each bump peak-normalized to 1.0 at its nearest cell). 3: box
    interior indicator. Point/box coordinates are model-grid pixels.
    """
    size = config.lowres_size
    out = np.zeros((PROMPT_CHANNELS, size, size), dtype=np.float32)
    if prompt_set.mask is not None:
        if prompt_set.mask.shape != (size, size):
            raise ValueError(
                f"mask prompt shape {prompt_set.mask.shape} != low-res grid {(size, size)}"
            )
        out[0] = prompt_set.mask.astype(np.float32)
    img = config.image_size
    f = (size - 1) / (img - 1)
    if prompt_set.points:
        ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        for p in prompt_set.points:
            if not (0 <= p.row < img and 0 <= p.col < img):
                raise ValueError(f"point ({p.row}, {p.col}) outside image grid {img}")
            r, c = p.row * f, p.col * f
            bump = np.exp(-((ii - r) ** 2 + (jj - c) ** 2) / (2 * POINT_SIGMA**2))
            bump /= bump.max()
            ch = 1 if p.label == POSITIVE else 2
            out[ch] = np.maximum(out[ch], bump.astype(np.float32))
    if prompt_set.box is not None:
        b: Box = prompt_set.box
        r0, c0 = b.row_min * f, b.col_min * f
        r1, c1 = b.row_max * f, b.col_max * f
        cells = np.arange(size)
        inside_r = (cells >= r0 - 0.5) & (cells <= r1 + 0.5)
        inside_c = (cells >= c0 - 0.5) & (cells <= c1 + 0.5)
        out[3] = np.outer(inside_r, inside_c).astype(np.float32)
    return out


# --- parameters ----------------------------------------------------------------


def _conv_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Name -> (weight shape) for every conv; instance-norm affine params follow."""
    ws = config.widths
    shapes: dict[str, tuple] = {}

    def block(name, cin, cout):
        shapes[f"{name}.conv1.w"] = (cout, cin, 3, 3)
        for k in range(2, config.block_convs + 1):
            shapes[f"{name}.conv{k}.w"] = (cout, cout, 3, 3)

    block("enc0", 1, ws[0])
    for k in range(1, len(ws)):
        block(f"enc{k}", ws[k - 1], ws[k])
    block("bott", ws[-1] + PROMPT_CHANNELS, ws[-1])
    for k in range(len(ws) - 2, -1, -1):
        block(f"dec{k}", ws[k + 1] + ws[k], ws[k])
    shapes["head.w"] = (NUM_MASKS, ws[0], 1, 1)
    return shapes


def init_params(config: ModelConfig, dtype=np.float32) -> dict[str, Tensor]:
    """He-normal conv weights, unit-gain norms, zero-initialized output head."""
    rng = stream(config.seed, "init")
    params: dict[str, Tensor] = {}
    for name, shape in _conv_shapes(config).items():
        cout, cin, kh, kw = shape
        if name == "head.w":
            w = np.zeros(shape, dtype=dtype)
        else:
            std = np.sqrt(2.0 / (cin * kh * kw))
            w = rng.normal(0.0, std, size=shape).astype(dtype)
        params[name] = Tensor(w, requires_grad=True)
        params[name.replace(".w", ".b")] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        if name != "head.w":
            params[name.replace(".w", ".g")] = Tensor(np.ones(cout, dtype=dtype), requires_grad=True)
            params[name.replace(".w", ".beta")] = Tensor(
                np.zeros(cout, dtype=dtype), requires_grad=True
            )
    return params


def param_count(params: dict[str, Tensor]) -> int:
    return sum(int(np.prod(t.shape)) for t in params.values())


def _conv_block(x: Tensor, params, name: str, stride_first: int, block_convs: int) -> Tensor:
    for k in range(1, block_convs + 1):
        stride = stride_first if k == 1 else 1
        x = ad.conv2d(x, params[f"{name}.conv{k}.w"], params[f"{name}.conv{k}.b"], stride=stride)
        x = ad.instance_norm(x, params[f"{name}.conv{k}.g"], params[f"{name}.conv{k}.beta"])
        x = ad.relu(x)
    return x


def forward_batch(
    params: dict[str, Tensor],
    images: np.ndarray | Tensor,
    prompt_channels: np.ndarray | Tensor,
    config: ModelConfig,
) -> Tensor:
    """Forward pass on a batch: images (B,1,H,W), prompts (B,4,H',W') -> logits (B,4,H,W)."""
    x = ad.as_tensor(images)
    pc = ad.as_tensor(prompt_channels)
    if x.shape[2] != config.image_size or pc.shape[2] != config.lowres_size:
        raise ValueError(
            f"input sizes {x.shape} / {pc.shape} do not match config "
            f"({config.image_size}, {config.lowres_size})"
        )
    ws = config.widths
    nc = config.block_convs
    skips = []
    h = _conv_block(x, params, "enc0", 1, nc)
    skips.append(h)
    for k in range(1, len(ws)):
        h = _conv_block(h, params, f"enc{k}", 2, nc)
        if k != len(ws) - 1:
            skips.append(h)
    h = ad.concat([h, pc], axis=1)
    h = _conv_block(h, params, "bott", 1, nc)
    for k in range(len(ws) - 2, -1, -1):
        h = ad.upsample2x(h)
        h = ad.concat([h, skips[k]], axis=1)
        h = _conv_block(h, params, f"dec{k}", 1, nc)
    return ad.conv2d(h, params["head.w"], params["head.b"], stride=1, padding=0)


def forward(
    image_values: np.ndarray,
    prompt_set: PromptSet,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> ModelOutput:
    """Single-slice forward: (H,W) image in [0,1] + prompts -> ModelOutput."""
    if image_values.shape != (config.image_size, config.image_size):
        raise ValueError(
            f"image shape {image_values.shape} != ({config.image_size}, {config.image_size})"
        )
    dtype = next(iter(params.values())).data.dtype
    imgs = image_values.astype(dtype)[None, None]
    pcs = encode_prompts(prompt_set, config).astype(dtype)[None]
    logits = forward_batch(params, imgs, pcs, config)
    return ModelOutput(np.asarray(logits.data[0], dtype=np.float32))
