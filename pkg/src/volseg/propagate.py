"""Slice-by-slice 3D segmentation from a single prompt: boundary-limited
propagation, mask- or bbox-forwarding, editing, and mask alternatives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Protocol

import numpy as np

from . import maskops
from .maskops import Box
from .nn.autodiff import Tensor
from .nn.model import ModelConfig, ModelOutput, forward
from .prompts import PointPrompt, PromptSet, downsample_mask
from .volume import (
    DEFAULT_WINDOW,
    Volume,
    WindowSpec,
    resize_pad,
    resize_pad_mask,
    unpad_mask,
    window_normalize,
)

ForwardingMode = Literal["mask", "bbox"]


@dataclass(frozen=True)
class Boundaries:
    """Bottom and top slice indices (inclusive) that stop the propagation."""

    bottom: int
    top: int

    def __post_init__(self):
        if self.bottom > self.top:
            raise ValueError(f"boundaries require bottom <= top, got {self}")
        if self.bottom < 0:
            raise ValueError("boundaries must be non-negative slice indices")

    def contains(self, k: int) -> bool:
        return self.bottom <= k <= self.top

    def check_within(self, n_slices: int) -> None:
        if self.top >= n_slices:
            raise ValueError(f"boundary top {self.top} outside volume of {n_slices} slices")


class SliceSegmenter(Protocol):
    """Segments one slice of a volume given native-grid prompts."""

    lowres_size: int

    def predict(self, volume: Volume, k: int, prompt_set: PromptSet) -> "SlicePrediction":
        ...


@dataclass
class SlicePrediction:
    """Binarized masks on the native slice grid: primary + 3 secondaries."""

    primary: np.ndarray  # (Y, X) bool
    secondaries: np.ndarray  # (3, Y, X) bool


class NetSegmenter:
    """Adapter running the trained network on windowed, resized slices."""

    def __init__(
        self,
        params: dict[str, Tensor],
        config: ModelConfig,
        window: WindowSpec = DEFAULT_WINDOW,
    ):
        self.params = params
        self.config = config
        self.window = window
        self.lowres_size = config.lowres_size
        self._cache_key = None
        self._cache_img = None

    def _slice_image(self, volume: Volume, k: int):
        key = (id(volume), k)
        if self._cache_key != key:
            normalized = window_normalize(volume.voxels[k], self.window)
            self._cache_img = resize_pad(normalized, self.config.image_size)
            self._cache_key = key
        return self._cache_img

    def _prompts_to_model(self, prompt_set: PromptSet, pad_info) -> PromptSet:
        box = None
        if prompt_set.box is not None:
            r0, c0 = pad_info.to_model(prompt_set.box.row_min, prompt_set.box.col_min)
            r1, c1 = pad_info.to_model(prompt_set.box.row_max, prompt_set.box.col_max)
            size = self.config.image_size
            box = Box(
                max(0, min(round(r0), size - 1)),
                max(0, min(round(c0), size - 1)),
                max(0, min(round(r1), size - 1)),
                max(0, min(round(c1), size - 1)),
            )
        points = []
        for p in prompt_set.points:
            r, c = pad_info.to_model(p.row, p.col)
            size = self.config.image_size
            points.append(
                PointPrompt(
                    max(0, min(round(r), size - 1)),
                    max(0, min(round(c), size - 1)),
                    p.label,
                )
            )
        return PromptSet(box=box, points=tuple(points), mask=prompt_set.mask)

    def predict(self, volume: Volume, k: int, prompt_set: PromptSet) -> SlicePrediction:
        img = self._slice_image(volume, k)
        model_prompts = self._prompts_to_model(prompt_set, img.pad_info)
        output: ModelOutput = forward(img.values, model_prompts, self.params, self.config)
        primary = unpad_mask(output.binary(0), img.pad_info)
        secondaries = np.stack(
            [unpad_mask(output.binary(i), img.pad_info) for i in (1, 2, 3)]
        )
        return SlicePrediction(primary, secondaries)


class PerfectOracleSegmenter:
    """Test double that returns the ground-truth slice regardless of prompts."""

    def __init__(self, labels: np.ndarray, class_id: int, lowres_size: int = 32):
        self.gt = np.asarray(labels) == class_id
        self.lowres_size = lowres_size

    def predict(self, volume: Volume, k: int, prompt_set: PromptSet) -> SlicePrediction:
        gt_slice = self.gt[k]
        return SlicePrediction(gt_slice.copy(), np.stack([gt_slice] * 3))


def segment_slice(model: SliceSegmenter, volume: Volume, k: int, prompt_set: PromptSet):
    """Binarized primary mask for one slice on the native grid."""
    return model.predict(volume, k, prompt_set).primary


def _forward_prompt(
    prev_mask: np.ndarray, mode: ForwardingMode, lowres: int, extra_points=()
) -> PromptSet | None:
    """Build the next slice's prompt from the previous prediction.

    Returns None when bbox mode cannot form a box from an empty mask (the
    caller then emits empty masks out to the boundary).
    """
    if mode == "mask":
        low = downsample_mask(prev_mask, (lowres, lowres))
        return PromptSet(mask=low, points=tuple(extra_points))
    box = maskops.bbox_of(prev_mask)
    if box is None:
        return None
    return PromptSet(box=box, points=tuple(extra_points))


@dataclass
class Session:
    """Propagation state: one object in one volume, editable and re-runnable."""

    volume: Volume
    boundaries: Boundaries
    mode: ForwardingMode
    model: SliceSegmenter
    masks: np.ndarray | None = None  # (Z, Y, X) bool
    secondaries: dict[int, np.ndarray] = field(default_factory=dict)  # k -> (3, Y, X)
    points: dict[int, tuple[PointPrompt, ...]] = field(default_factory=dict)
    initial: tuple[int, PromptSet] | None = None
    revision: int = 0
    empty_bbox_slices: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.boundaries.check_within(self.volume.dims[0])
        if self.masks is None:
            self.masks = np.zeros(self.volume.dims, dtype=bool)

    def _predict(self, k: int, prompt_set: PromptSet) -> np.ndarray:
        pred = self.model.predict(self.volume, k, prompt_set)
        self.masks[k] = pred.primary
        self.secondaries[k] = pred.secondaries
        return pred.primary

    def _sweep(self, start: int, stop: int, step: int, prev: np.ndarray) -> None:
        """Propagate from start (exclusive) towards stop (inclusive)."""
        emit_empty = False
        for k in range(start + step, stop + step, step):
            if emit_empty:
                self.masks[k] = False
                self.secondaries.pop(k, None)
                continue
            prompt = _forward_prompt(
                prev, self.mode, self.model.lowres_size, self.points.get(k, ())
            )
            if prompt is None:  # bbox mode, empty previous mask
                self.empty_bbox_slices.append(k)
                emit_empty = True
                self.masks[k] = False
                self.secondaries.pop(k, None)
                continue
            prev = self._predict(k, prompt)

    def _propagate_from(self, k: int, seed_mask: np.ndarray) -> None:
        self._sweep(k, self.boundaries.top, +1, seed_mask)
        self._sweep(k, self.boundaries.bottom, -1, seed_mask)

    def prompt(self, k: int, prompt_set: PromptSet) -> None:
        """Initial prompt on slice k, then propagation to both boundaries."""
        if not self.boundaries.contains(k):
            raise ValueError(f"slice {k} outside boundaries {self.boundaries}")
        self.initial = (k, prompt_set)
        self.masks[:] = False
        self.points = {}
        self.empty_bbox_slices = []
        seed = self._predict(k, prompt_set)
        self._propagate_from(k, seed)
        self.revision += 1

    def apply_edit(self, k: int, point: PointPrompt) -> None:
        """Correction point on slice k; re-run k, then restart the propagation.

        The slice's stored points are all re-applied together with its
        previous mask; revisited slices re-use their own stored points.
        """
        if not self.boundaries.contains(k):
            raise ValueError(f"slice {k} outside boundaries {self.boundaries}")
        if self.initial is None:
            raise ValueError("session has no prediction to edit yet")
        self.points[k] = self.points.get(k, ()) + (point,)
        low = downsample_mask(self.masks[k], (self.model.lowres_size,) * 2)
        prompt = PromptSet(mask=low, points=self.points[k])
        corrected = self._predict(k, prompt)
        self._propagate_from(k, corrected)
        self.revision += 1

    def select_alternative(self, k: int, mask_index: int) -> None:
        """Replace slice k's mask with secondary #mask_index and re-propagate."""
        if not self.boundaries.contains(k):
            raise ValueError(f"slice {k} outside boundaries {self.boundaries}")
        if k not in self.secondaries:
            raise ValueError(f"slice {k} has no stored alternatives")
        if mask_index not in (0, 1, 2):
            raise ValueError("mask_index must be 0, 1, or 2")
        chosen = self.secondaries[k][mask_index].copy()
        self.masks[k] = chosen
        self._propagate_from(k, chosen)
        self.revision += 1


def propagate_volume(
    model: SliceSegmenter,
    volume: Volume,
    initial: tuple[int, PromptSet],
    boundaries: Boundaries,
    mode: ForwardingMode = "mask",
) -> np.ndarray:
    """One-shot volume segmentation from a single prompt; returns (Z,Y,X) bool."""
    k, prompt_set = initial
    if not boundaries.contains(k):
        raise ValueError(f"start slice {k} outside boundaries {boundaries}")
    session = Session(volume, boundaries, mode, model)
    session.prompt(k, prompt_set)
    return session.masks.copy()


def oracle_select(pred: SlicePrediction, gt: np.ndarray) -> tuple[int, np.ndarray]:
    """Best secondary mask by dice against gt; ties break to the lowest index."""
    gt = np.asarray(gt).astype(bool)
    best_idx, best_dice = 0, -1.0
    for i in range(3):
        m = pred.secondaries[i]
        total = int(m.sum()) + int(gt.sum())
        dice = 1.0 if total == 0 else 2.0 * int(np.logical_and(m, gt).sum()) / total
        if dice > best_dice:
            best_idx, best_dice = i, dice
    return best_idx, pred.secondaries[best_idx]
