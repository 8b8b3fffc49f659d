"""Benchmark protocols and metrics: 3D dice, volume-level vs slice-level
prompting, automated edit budgets, and oracle mask selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from . import prompts as prompt_gen
from .maskops import error_mask
from .phantom import ManifestEntry
from .propagate import (
    Boundaries,
    ForwardingMode,
    Session,
    SliceSegmenter,
    oracle_select,
)
from .prompts import PromptSet, downsample_mask
from .rng import stream
from .volume import LabelVolume, Volume, parse_labels_nifti, parse_nifti


def dice3d(m: np.ndarray, g: np.ndarray) -> float:
    """2|M n G| / (|M| + |G|); defined as 1.0 when both masks are empty."""
    m = np.asarray(m).astype(bool)
    g = np.asarray(g).astype(bool)
    if m.shape != g.shape:
        raise ValueError(f"dim mismatch: {m.shape} vs {g.shape}")
    total = int(m.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(m, g).sum()) / total


@dataclass(frozen=True)
class BenchmarkConfig:
    protocol: Literal["volume", "slice"] = "volume"
    prompt_type: Literal["point", "box"] = "box"
    edit_budget: int = 0  # total points (volume) or points per slice (slice)
    mode: ForwardingMode = "mask"
    oracle_pick: bool = False  # slice protocol: also score best-secondary picks
    seed: int = 0

    def __post_init__(self):
        if self.edit_budget < 0:
            raise ValueError("edit budget must be >= 0")
        if self.protocol == "slice" and self.mode == "bbox":
            raise ValueError("bbox forwarding only applies to the volume protocol")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "prompt_type": self.prompt_type,
            "edit_budget": self.edit_budget,
            "mode": self.mode,
            "oracle_pick": self.oracle_pick,
            "seed": self.seed,
        }


@dataclass
class VolumeRow:
    volume_id: str
    class_id: int
    dice: float
    trajectory: list[float] = field(default_factory=list)  # dice after 0..budget edits
    dice_oracle: float | None = None


@dataclass
class ClassSummary:
    class_id: int
    n_volumes: int
    mean_dice: float
    ci95: float
    mean_dice_oracle: float | None = None


@dataclass
class BenchmarkReport:
    config: dict
    rows: list[VolumeRow]
    summaries: list[ClassSummary]
    skipped: int
    runtime_seconds: float | None = None

    @property
    def mean_dice(self) -> float:
        if not self.rows:
            return float("nan")
        return float(np.mean([r.dice for r in self.rows]))

    def edit_curve(self) -> tuple[list[int], list[float]]:
        """Mean dice after k edits, averaged over all rows with trajectories."""
        trajs = [r.trajectory for r in self.rows if r.trajectory]
        if not trajs:
            return [], []
        length = max(len(t) for t in trajs)
        padded = [t + [t[-1]] * (length - len(t)) for t in trajs]
        means = np.mean(padded, axis=0)
        return list(range(length)), [float(v) for v in means]


def _summarize(rows: list[VolumeRow], oracle: bool) -> list[ClassSummary]:
    by_class: dict[int, list[VolumeRow]] = {}
    for r in rows:
        by_class.setdefault(r.class_id, []).append(r)
    out = []
    for class_id in sorted(by_class):
        group = by_class[class_id]
        dices = np.array([r.dice for r in group], dtype=float)
        n = len(dices)
        ci = 1.96 * float(dices.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
        mean_oracle = None
        if oracle:
            mean_oracle = float(np.mean([r.dice_oracle for r in group]))
        out.append(ClassSummary(class_id, n, float(dices.mean()), ci, mean_oracle))
    return out


# Builds a segmenter for one (volume, labels, class); the labels argument
# lets test doubles cheat while real models ignore it.
SegmenterFactory = Callable[[Volume, LabelVolume, int], SliceSegmenter]


@dataclass
class EvalCase:
    volume_id: str
    volume: Volume
    labels: LabelVolume
    class_ids: list[int]


def load_cases(entries: list[ManifestEntry], root: Path) -> list[EvalCase]:
    cases = []
    for entry in entries:
        vol, _ = parse_nifti((Path(root) / entry.volume_path).read_bytes())
        lab, _ = parse_labels_nifti((Path(root) / entry.label_path).read_bytes())
        if vol.dims != lab.dims:
            raise ValueError(f"{entry.volume_path}: volume/label dims differ")
        cases.append(EvalCase(Path(entry.volume_path).stem, vol, lab, entry.class_ids))
    return cases


def _initial_prompt_for(
    gt_slice: np.ndarray, prompt_type: str, rng: np.random.Generator
) -> PromptSet:
    if prompt_type == "point":
        return PromptSet(points=(prompt_gen.gen_point(gt_slice, rng),))
    return PromptSet(box=prompt_gen.gen_box(gt_slice, rng))


def _worst_slice(masks: np.ndarray, gt: np.ndarray, bounds: Boundaries) -> int | None:
    """Slice with the largest error area inside the boundaries; None if exact."""
    err = np.logical_xor(masks, gt)
    err[: bounds.bottom] = False
    err[bounds.top + 1 :] = False
    per_slice = err.sum(axis=(1, 2))
    if per_slice.max() == 0:
        return None
    return int(per_slice.argmax())


def run_volume_benchmark(
    make_segmenter: SegmenterFactory,
    cases: list[EvalCase],
    config: BenchmarkConfig,
) -> BenchmarkReport:
    """One prompt + two boundaries per (volume, class), then budgeted edits.

    Edits go one at a time to the slice with the largest remaining error,
    uniformly within that slice's error mask.
    """
    rows: list[VolumeRow] = []
    skipped = 0
    for case in cases:
        for class_id in case.class_ids:
            gt = case.labels.class_mask(class_id)
            zs = np.flatnonzero(gt.any(axis=(1, 2)))
            if zs.size == 0:
                skipped += 1
                continue
            bounds = Boundaries(int(zs[0]), int(zs[-1]))
            areas = gt.sum(axis=(1, 2))
            start = int(areas.argmax())
            rng = stream(config.seed, case.volume_id, class_id, "initial")
            prompt = _initial_prompt_for(gt[start], config.prompt_type, rng)
            segmenter = make_segmenter(case.volume, case.labels, class_id)
            session = Session(case.volume, bounds, config.mode, segmenter)
            session.prompt(start, prompt)
            trajectory = [dice3d(session.masks, gt)]
            for e in range(1, config.edit_budget + 1):
                k = _worst_slice(session.masks, gt, bounds)
                if k is None:
                    trajectory.append(trajectory[-1])
                    continue
                edit_rng = stream(config.seed, case.volume_id, class_id, "edit", e)
                point = prompt_gen.gen_correction_point(session.masks[k], gt[k], edit_rng)
                session.apply_edit(k, point)
                trajectory.append(dice3d(session.masks, gt))
            rows.append(
                VolumeRow(case.volume_id, class_id, trajectory[-1], trajectory)
            )
    return BenchmarkReport(config.to_dict(), rows, _summarize(rows, False), skipped)


def _segment_slice_with_edits(
    segmenter: SliceSegmenter,
    volume: Volume,
    z: int,
    gt_slice: np.ndarray,
    config: BenchmarkConfig,
    rng: np.random.Generator,
):
    prompt = _initial_prompt_for(gt_slice, config.prompt_type, rng)
    pred = segmenter.predict(volume, z, prompt)
    points: tuple = ()
    for _ in range(config.edit_budget):
        point = prompt_gen.gen_correction_point(pred.primary, gt_slice, rng)
        if point is None:
            break
        points = points + (point,)
        low = downsample_mask(pred.primary, (segmenter.lowres_size,) * 2)
        pred = segmenter.predict(volume, z, PromptSet(mask=low, points=points))
    return pred


def run_slice_benchmark(
    make_segmenter: SegmenterFactory,
    cases: list[EvalCase],
    config: BenchmarkConfig,
) -> BenchmarkReport:
    """Independent prompt per foreground slice; dice on the stacked 3D object."""
    rows: list[VolumeRow] = []
    skipped = 0
    for case in cases:
        for class_id in case.class_ids:
            gt = case.labels.class_mask(class_id)
            zs = np.flatnonzero(gt.any(axis=(1, 2)))
            if zs.size == 0:
                skipped += 1
                continue
            segmenter = make_segmenter(case.volume, case.labels, class_id)
            stacked = np.zeros_like(gt)
            stacked_oracle = np.zeros_like(gt) if config.oracle_pick else None
            for z in zs:
                rng = stream(config.seed, case.volume_id, class_id, int(z), "slice")
                pred = _segment_slice_with_edits(
                    segmenter, case.volume, int(z), gt[z], config, rng
                )
                stacked[z] = pred.primary
                if config.oracle_pick:
                    _, best = oracle_select(pred, gt[z])
                    stacked_oracle[z] = best
            row = VolumeRow(case.volume_id, class_id, dice3d(stacked, gt))
            if config.oracle_pick:
                row.dice_oracle = dice3d(stacked_oracle, gt)
            rows.append(row)
    return BenchmarkReport(
        config.to_dict(), rows, _summarize(rows, config.oracle_pick), skipped
    )


def run_benchmark(
    make_segmenter: SegmenterFactory,
    cases: list[EvalCase],
    config: BenchmarkConfig,
) -> BenchmarkReport:
    if config.protocol == "volume":
        return run_volume_benchmark(make_segmenter, cases, config)
    return run_slice_benchmark(make_segmenter, cases, config)


def run_oracle_eval(
    make_segmenter: SegmenterFactory,
    cases: list[EvalCase],
    config: BenchmarkConfig,
) -> BenchmarkReport:
    """Slice-level protocol reporting primary vs oracle-selected dice."""
    cfg = BenchmarkConfig(
        protocol="slice",
        prompt_type=config.prompt_type,
        edit_budget=config.edit_budget,
        mode="mask",
        oracle_pick=True,
        seed=config.seed,
    )
    return run_slice_benchmark(make_segmenter, cases, cfg)
