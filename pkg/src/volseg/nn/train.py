"""Training loop: prompt sampling, augmentation, and iterative edit-step
training with correction points."""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .. import prompts as prompt_gen
from ..maskops import AffineRanges
from ..phantom import ManifestEntry
from ..rng import stream
from ..volume import (
    WindowSpec,
    keep_slice,
    parse_labels_nifti,
    parse_nifti,
    resize_pad,
    resize_pad_mask,
    window_normalize,
)
from . import autodiff as ad
from . import losses
from .model import ModelConfig, encode_prompts, forward_batch, init_params
from .optim import Adam


@dataclass(frozen=True)
class AugmentConfig:
    """Geometric + intensity augmentation ranges (degenerate ranges = off)."""

    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    translation_px: tuple[float, float] = (-4.0, 4.0)
    shear_deg: tuple[float, float] = (-8.0, 8.0)
    zoom: tuple[float, float] = (0.9, 1.1)
    noise_sigma_hu: tuple[float, float] = (0.0, 20.0)
    window_lo: tuple[float, float] = (-700.0, -300.0)
    window_hi: tuple[float, float] = (800.0, 1200.0)

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(
            (0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 1.0), (0.0, 0.0),
            (-500.0, -500.0), (1000.0, 1000.0),
        )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr: float = 1e-3
    steps: int = 2000
    edit_steps: tuple[int, int] = (0, 4)  # inclusive range for E per sample
    use_mask_prompt: bool = True
    use_edit_training: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    noisy_mask_ranges: AffineRanges = field(default_factory=AffineRanges)
    min_fg_pixels: int = 15
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.edit_steps[0] < 0 or self.edit_steps[1] < self.edit_steps[0]:
            raise ValueError("edit step range must be 0 <= lo <= hi")


def augment_slice(
    hu: np.ndarray, mask: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Shared affine on HU (bilinear) and mask (nearest), HU noise, then a
    jittered window producing image values in [0, 1]."""
    rot = np.deg2rad(rng.uniform(*cfg.rotation_deg))
    shear = np.deg2rad(rng.uniform(*cfg.shear_deg))
    zoom = rng.uniform(*cfg.zoom)
    ty = rng.uniform(*cfg.translation_px)
    tx = rng.uniform(*cfg.translation_px)
    identity = rot == 0.0 and shear == 0.0 and zoom == 1.0 and ty == 0.0 and tx == 0.0
    hu = np.asarray(hu, dtype=np.float32)
    mask = np.asarray(mask).astype(bool)
    if not identity:
        c, s = np.cos(rot), np.sin(rot)
        rot_m = np.array([[c, -s], [s, c]])
        shear_m = np.array([[1.0, np.tan(shear)], [0.0, 1.0]])
        fwd = zoom * rot_m @ shear_m
        inv = np.linalg.inv(fwd)
        center = (np.array(hu.shape) - 1) / 2.0
        offset = center - inv @ (center + np.array([ty, tx]))
        hu = ndimage.affine_transform(
            hu, inv, offset=offset, order=1, mode="constant", cval=hu.min()
        )
        mask = ndimage.affine_transform(
            mask.astype(np.uint8), inv, offset=offset, order=0, mode="constant", cval=0
        ).astype(bool)
    sigma = rng.uniform(*cfg.noise_sigma_hu)
    if sigma > 0:
        hu = hu + rng.normal(0.0, sigma, size=hu.shape).astype(np.float32)
    window = WindowSpec(rng.uniform(*cfg.window_lo), rng.uniform(*cfg.window_hi))
    return window_normalize(hu, window), mask


@dataclass
class TrainingData:
    """In-memory slice pool: (volume, class, z) triplets with enough foreground."""

    hu_volumes: list[np.ndarray]
    label_volumes: list[np.ndarray]
    index: list[tuple[int, int, int]]  # (volume idx, class id, z)

    def __post_init__(self):
        if not self.index:
            raise ValueError("no training slices with enough foreground")

    @classmethod
    def load(cls, entries: list[ManifestEntry], root: Path, min_fg_pixels: int = 15):
        hu_volumes, label_volumes, index = [], [], []
        for entry in entries:
            vol, _ = parse_nifti((root / entry.volume_path).read_bytes())
            lab, _ = parse_labels_nifti((root / entry.label_path).read_bytes())
            if vol.dims != lab.dims:
                raise ValueError(
                    f"{entry.volume_path}: volume dims {vol.dims} != label dims {lab.dims}"
                )
            vi = len(hu_volumes)
            hu_volumes.append(vol.voxels)
            label_volumes.append(lab.labels.astype(np.uint8))
            for class_id in entry.class_ids:
                fg = lab.labels == class_id
                for z in range(fg.shape[0]):
                    if keep_slice(fg[z], min_fg_pixels):
                        index.append((vi, class_id, z))
        return cls(hu_volumes, label_volumes, index)

    def fetch(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        vi, class_id, z = self.index[i]
        return self.hu_volumes[vi][z], self.label_volumes[vi][z] == class_id


def _initial_prompt(
    gt_model: np.ndarray,
    lowres: tuple[int, int],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> prompt_gen.PromptSet:
    kinds = ["point", "box"] + (["mask"] if cfg.use_mask_prompt else [])
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "point":
        return prompt_gen.PromptSet(points=(prompt_gen.gen_point(gt_model, rng),))
    if kind == "box":
        return prompt_gen.PromptSet(box=prompt_gen.gen_box(gt_model, rng))
    noisy = prompt_gen.gen_noisy_mask(gt_model, lowres, rng, cfg.noisy_mask_ranges)
    return prompt_gen.PromptSet(mask=noisy)


@dataclass
class StepMetrics:
    step: int
    loss: float
    dice_step0: float
    dice_after_edits: float | None
    skipped: int
    corrections: int

    def to_json(self) -> str:
        rec = {
            "step": self.step,
            "loss": round(self.loss, 6),
            "dice_step0": round(self.dice_step0, 6),
        }
        if self.dice_after_edits is not None:
            rec["dice_after_edits"] = round(self.dice_after_edits, 6)
        return json.dumps(rec)


def _dice_score(pred: np.ndarray, gt: np.ndarray) -> float:
    inter = np.logical_and(pred, gt).sum()
    total = pred.sum() + gt.sum()
    return 1.0 if total == 0 else 2.0 * inter / total


class Trainer:
    """Owns parameters and optimizer state across steps (single writer)."""

    def __init__(self, data: TrainingData, mcfg: ModelConfig, tcfg: TrainConfig,
                 params=None, start_step: int = 0):
        self.data = data
        self.mcfg = mcfg
        self.tcfg = tcfg
        self.params = init_params(mcfg) if params is None else params
        self.opt = Adam(self.params, lr=tcfg.lr, grad_clip=tcfg.grad_clip)
        self.step_num = start_step
        self.skipped_total = 0
        self._order: list[int] = []
        self._cursor = 0

    def _next_batch_indices(self, rng: np.random.Generator) -> list[int]:
        out = []
        while len(out) < self.tcfg.batch_size:
            if self._cursor >= len(self._order):
                epoch_rng = stream(self.tcfg.seed, "epoch", self.step_num, len(self._order))
                self._order = list(epoch_rng.permutation(len(self.data.index)))
                self._cursor = 0
            out.append(self._order[self._cursor])
            self._cursor += 1
        return out

    def train_step(self) -> StepMetrics:
        mcfg, tcfg = self.mcfg, self.tcfg
        size = mcfg.image_size
        lowres = (mcfg.lowres_size, mcfg.lowres_size)
        rng = stream(tcfg.seed, "train_step", self.step_num)

        images, gts, prompt_sets, edit_counts = [], [], [], []
        skipped = 0
        for i in self._next_batch_indices(rng):
            hu, gt = self.data.fetch(i)
            img01, gt_aug = augment_slice(hu, gt, tcfg.augment, rng)
            if not gt_aug.any():
                skipped += 1
                continue
            img = resize_pad(img01, size)
            gt_model, _ = resize_pad_mask(gt_aug, size)
            if not gt_model.any():
                skipped += 1
                continue
            images.append(img.values)
            gts.append(gt_model)
            prompt_sets.append(_initial_prompt(gt_model, lowres, tcfg, rng))
            if tcfg.use_edit_training:
                edit_counts.append(int(rng.integers(tcfg.edit_steps[0], tcfg.edit_steps[1] + 1)))
            else:
                edit_counts.append(0)
        self.skipped_total += skipped
        if not images:
            raise ValueError("entire batch skipped (all-background after augmentation)")

        n = len(images)
        image_arr = np.stack(images)[:, None, :, :]
        gt_arr = np.stack(gts).astype(np.float32)
        weights = 1.0 / (np.array(edit_counts) + 1.0) / n

        loss_total = None
        active = list(range(n))
        current_prompts = list(prompt_sets)
        accum_points: list[tuple] = [() for _ in range(n)]
        preds_step0 = [None] * n
        preds_last = [None] * n
        corrections = 0
        max_e = max(edit_counts)
        for e in range(max_e + 1):
            if e > 0:
                active = [i for i in active if edit_counts[i] >= e]
                if not active:
                    break
            pcs = np.stack([encode_prompts(current_prompts[i], mcfg) for i in active])
            logits = forward_batch(self.params, image_arr[active], pcs, mcfg)
            probs = ad.sigmoid(logits)
            per = losses.multimask_per_sample(probs, gt_arr[active])
            contrib = ad.tsum(per * weights[active])
            loss_total = contrib if loss_total is None else loss_total + contrib

            binary = logits.data[:, 0] > 0.0
            for j, i in enumerate(active):
                pred = binary[j]
                if e == 0:
                    preds_step0[i] = pred
                preds_last[i] = pred
                if edit_counts[i] > e:
                    point_rng = stream(tcfg.seed, "correction", self.step_num, i, e)
                    point = prompt_gen.gen_correction_point(pred, gts[i], point_rng)
                    if point is not None:
                        accum_points[i] = accum_points[i] + (point,)
                        corrections += 1
                    current_prompts[i] = prompt_gen.PromptSet(
                        mask=prompt_gen.downsample_mask(pred, lowres),
                        points=accum_points[i],
                    )

        self.opt.zero_grad()
        loss_total.backward()
        self.opt.step()
        self.step_num += 1

        dice0 = float(np.mean([_dice_score(preds_step0[i], gts[i]) for i in range(n)]))
        if tcfg.use_edit_training:
            dice_last = float(np.mean([_dice_score(preds_last[i], gts[i]) for i in range(n)]))
        else:
            dice_last = None
        return StepMetrics(
            step=self.step_num,
            loss=float(loss_total.data),
            dice_step0=dice0,
            dice_after_edits=dice_last,
            skipped=skipped,
            corrections=corrections,
        )


def run_training(
    data: TrainingData,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    metrics_out=None,
    log_every: int = 25,
    params=None,
    start_step: int = 0,
):
    """Run tcfg.steps optimizer updates; returns (params, last metrics)."""
    trainer = Trainer(data, mcfg, tcfg, params=params, start_step=start_step)
    t0 = time.time()
    metrics = None
    for _ in range(tcfg.steps):
        metrics = trainer.train_step()
        if metrics_out is not None:
            metrics_out.write(metrics.to_json() + "\n")
        if log_every and trainer.step_num % log_every == 0:
            edit_part = (
                f" dice_edit={metrics.dice_after_edits:.3f}"
                if metrics.dice_after_edits is not None
                else ""
            )
            print(
                f"step {trainer.step_num}: loss={metrics.loss:.4f} "
                f"dice0={metrics.dice_step0:.3f}{edit_part} "
                f"({time.time() - t0:.0f}s)",
                file=sys.stderr,
            )
    if trainer.skipped_total:
        print(f"skipped {trainer.skipped_total} all-background samples", file=sys.stderr)
    return trainer.params, metrics
