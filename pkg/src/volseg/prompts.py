"""Prompt generation from ground-truth masks: interior points, perturbed
boxes, noisy low-res masks, and labeled correction points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import maskops
from .maskops import AffineRanges, Box

POSITIVE = 1
NEGATIVE = 0

BOX_DELTA_LO = -5  # inward slack per side, px
BOX_DELTA_HI = 20  # outward slack per side, px


@dataclass(frozen=True)
class PointPrompt:
    row: int
    col: int
    label: int = POSITIVE  # POSITIVE or NEGATIVE

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"label must be {POSITIVE} or {NEGATIVE}")


@dataclass(frozen=True)
class PromptSet:
    """Conditioning input for one slice: any combination of box, points, mask.

    The mask, when present, lives on the model's low-resolution prompt grid
    and is strictly binary.
    """

    box: Box | None = None
    points: tuple[PointPrompt, ...] = ()
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.box is None and not self.points and self.mask is None:
            raise ValueError("prompt set must contain at least one prompt")
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.ndim != 2:
                raise ValueError(f"mask prompt must be 2D, got {m.shape}")
            object.__setattr__(self, "mask", m.astype(bool))

    def with_points(self, extra: tuple[PointPrompt, ...]) -> "PromptSet":
        return PromptSet(box=self.box, points=self.points + tuple(extra), mask=self.mask)


def downsample_mask(mask: np.ndarray, lowres: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor downsample onto the low-res prompt grid (binary in, binary out)."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    lh, lw = lowres
    rows = np.rint(np.linspace(0, h - 1, lh)).astype(int) if lh > 1 else [h // 2]
    cols = np.rint(np.linspace(0, w - 1, lw)).astype(int) if lw > 1 else [w // 2]
    return mask[np.ix_(rows, cols)]


def gen_point(gt: np.ndarray, rng: np.random.Generator) -> PointPrompt:
    """Positive point sampled uniformly from the ground truth, 2 px off the contour.

    Thin masks whose 2-px erosion is empty fall back to sampling the mask itself.
    """
    gt = np.asarray(gt).astype(bool)
    if not gt.any():
        raise ValueError("cannot generate a point prompt from an empty mask")
    interior = maskops.erode(gt, 2)
    base = interior if interior.any() else gt
    pos = maskops.sample_uniform(base, rng)
    return PointPrompt(pos[0], pos[1], POSITIVE)


def gen_box(gt: np.ndarray, rng: np.random.Generator) -> Box:
    """Tight box around the mask, each side moved by a uniform integer delta
    in [-5, +20] (positive = outward), clipped to the image."""
    gt = np.asarray(gt).astype(bool)
    tight = maskops.bbox_of(gt)
    if tight is None:
        raise ValueError("cannot generate a box prompt from an empty mask")
    d = rng.integers(BOX_DELTA_LO, BOX_DELTA_HI + 1, size=4)
    r0 = tight.row_min - int(d[0])
    c0 = tight.col_min - int(d[1])
    r1 = tight.row_max + int(d[2])
    c1 = tight.col_max + int(d[3])
    h, w = gt.shape
    r0, r1 = sorted((max(0, min(r0, h - 1)), max(0, min(r1, h - 1))))
    c0, c1 = sorted((max(0, min(c0, w - 1)), max(0, min(c1, w - 1))))
    return Box(r0, c0, r1, c1)


def gen_noisy_mask(
    gt: np.ndarray,
    lowres: tuple[int, int],
    rng: np.random.Generator,
    ranges: AffineRanges = AffineRanges(),
    max_tries: int = 8,
) -> np.ndarray:
    """Randomly perturbed copy of gt on the low-res grid, binary.

    Empty perturbations are resampled up to max_tries; the unperturbed
    downsampled gt is the last resort.
    """
    gt = np.asarray(gt).astype(bool)
    if not gt.any():
        raise ValueError("cannot generate a noisy mask from an empty mask")
    for _ in range(max_tries):
        noisy = maskops.random_affine(gt, ranges, rng)
        low = downsample_mask(noisy, lowres)
        if low.any():
            return low
    return downsample_mask(gt, lowres)


def gen_correction_point(
    pred: np.ndarray, gt: np.ndarray, rng: np.random.Generator
) -> PointPrompt | None:
    """Labeled click sampled uniformly over the error mask (FN union FP).

    False negatives get a positive label, false positives a negative one.
    None when the prediction already matches.
    """
    fn, fp = maskops.error_mask(pred, gt)
    union = fn | fp
    pos = maskops.sample_uniform(union, rng)
    if pos is None:
        return None
    label = POSITIVE if fn[pos] else NEGATIVE
    return PointPrompt(pos[0], pos[1], label)
