"""Binary mask geometry: morphology, bounding boxes, random perturbation,
error masks, uniform sampling, and run-length encoding.

Masks are 2D boolean numpy arrays throughout. Morphology uses a square
(Chebyshev) structuring element; pixels outside the image count as
background for both erosion and dilation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rng import stream


@dataclass(frozen=True)
class Box:
    """Inclusive pixel bounding box (row_min, col_min, row_max, col_max)."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ValueError(f"degenerate box {self}")

    def clipped(self, height: int, width: int) -> "Box":
        return Box(
            max(0, min(self.row_min, height - 1)),
            max(0, min(self.col_min, width - 1)),
            max(0, min(self.row_max, height - 1)),
            max(0, min(self.col_max, width - 1)),
        )

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1


@dataclass(frozen=True)
class AffineParams:
    """One sampled mask perturbation: rotate, scale, translate, then morph."""

    rotation_deg: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)  # (dy, dx) pixels
    morph: int = 0  # <0 erode, >0 dilate, radius in px

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")


@dataclass(frozen=True)
class AffineRanges:
    """Uniform sampling ranges for AffineParams.

    Defaults keep the perturbed mask overlapping the original well enough to
    serve as a usable coarse prompt (mean IoU >= 0.5 against the source).
    """

    rotation_deg: tuple[float, float] = (-10.0, 10.0)
    scale: tuple[float, float] = (0.9, 1.1)
    translation: tuple[float, float] = (-5.0, 5.0)
    morph: tuple[int, int] = (-2, 2)

    @classmethod
    def identity(cls) -> "AffineRanges":
        return cls((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (0, 0))

    def sample(self, rng: np.random.Generator) -> AffineParams:
        return AffineParams(
            rotation_deg=float(rng.uniform(*self.rotation_deg)),
            scale=float(rng.uniform(*self.scale)),
            translation=(
                float(rng.uniform(*self.translation)),
                float(rng.uniform(*self.translation)),
            ),
            morph=int(rng.integers(self.morph[0], self.morph[1] + 1)),
        )


def _as_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Keep a pixel iff every pixel within Chebyshev distance <= radius is set."""
    mask = _as_mask(mask)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    out = ndimage.minimum_filter(
        mask.astype(np.uint8), size=2 * radius + 1, mode="constant", cval=0
    )
    return out.astype(bool)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Set a pixel iff any pixel within Chebyshev distance <= radius is set."""
    mask = _as_mask(mask)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    out = ndimage.maximum_filter(
        mask.astype(np.uint8), size=2 * radius + 1, mode="constant", cval=0
    )
    return out.astype(bool)


def bbox_of(mask: np.ndarray) -> Box | None:
    """Tightest box containing all set pixels, or None for an empty mask."""
    mask = _as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def apply_affine(mask: np.ndarray, params: AffineParams) -> np.ndarray:
    """Rotate/scale about the mask centroid, translate, then erode or dilate.

    Nearest-neighbor resampling keeps the output strictly binary. The fixed
    composition order is rotation -> scale -> translation -> morph.
    """
    mask = _as_mask(mask)
    identity_affine = (
        params.rotation_deg == 0.0
        and params.scale == 1.0
        and params.translation == (0.0, 0.0)
    )
    if identity_affine:
        out = mask.copy()
    else:
        box = bbox_of(mask)
        if box is None:
            center = np.array([(mask.shape[0] - 1) / 2, (mask.shape[1] - 1) / 2])
        else:
            ys, xs = np.nonzero(mask)
            center = np.array([ys.mean(), xs.mean()])
        theta = np.deg2rad(params.rotation_deg)
        c, s = np.cos(theta), np.sin(theta)
        fwd = params.scale * np.array([[c, -s], [s, c]])
        inv = np.linalg.inv(fwd)
        t = np.asarray(params.translation, dtype=float)
        # affine_transform maps output coords to input coords:
        # in = inv @ (out - center - t) + center
        offset = center - inv @ (center + t)
        out = ndimage.affine_transform(
            mask.astype(np.uint8), inv, offset=offset, order=0, mode="constant", cval=0
        ).astype(bool)
    if params.morph > 0:
        out = dilate(out, params.morph)
    elif params.morph < 0:
        out = erode(out, -params.morph)
    return out


def random_affine(mask: np.ndarray, ranges: AffineRanges, rng) -> np.ndarray:
    """Apply a perturbation with parameters drawn uniformly from ranges."""
    rng = _as_rng(rng)
    return apply_affine(mask, ranges.sample(rng))


def error_mask(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (false_negatives, false_positives); the two are disjoint."""
    pred, gt = _as_mask(pred), _as_mask(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return gt & ~pred, pred & ~gt


def sample_uniform(mask: np.ndarray, rng) -> tuple[int, int] | None:
    """Pick one set pixel uniformly at random; None if the mask is empty."""
    mask = _as_mask(mask)
    flat = np.flatnonzero(mask)
    if flat.size == 0:
        return None
    rng = _as_rng(rng)
    idx = int(flat[rng.integers(flat.size)])
    return idx // mask.shape[1], idx % mask.shape[1]


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(int(rng), "maskops")


# --- run-length encoding -----------------------------------------------------
#
# Wire format: a list of [start, length] runs of set pixels over row-major
# pixel order. Starts are ascending and runs never touch, so decoding is a
# plain scatter.


def rle_encode(mask: np.ndarray) -> list[list[int]]:
    mask = _as_mask(mask)
    flat = mask.ravel()
    padded = np.concatenate(([False], flat, [False]))
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = changes[0::2], changes[1::2]
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs: list[list[int]], shape: tuple[int, int]) -> np.ndarray:
    height, width = shape
    flat = np.zeros(height * width, dtype=bool)
    for start, length in runs:
        if start < 0 or length < 0 or start + length > flat.size:
            raise ValueError(f"run ({start},{length}) out of bounds for {shape}")
        flat[start : start + length] = True
    return flat.reshape(height, width)
