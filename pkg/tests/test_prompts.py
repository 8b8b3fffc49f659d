import numpy as np
import pytest

from conftest import square_mask
from volseg.maskops import AffineRanges, Box, bbox_of
from volseg.prompts import (
    NEGATIVE,
    POSITIVE,
    PointPrompt,
    PromptSet,
    downsample_mask,
    gen_box,
    gen_correction_point,
    gen_noisy_mask,
    gen_point,
)
from volseg.rng import stream


class FixedDeltaRng:
    """Stub generator forcing gen_box deltas."""

    def __init__(self, deltas):
        self.deltas = np.asarray(deltas)

    def integers(self, lo, hi, size=None):
        return self.deltas


class TestPromptSet:
    def test_requires_something(self):
        with pytest.raises(ValueError):
            PromptSet()

    def test_mask_coerced_binary(self):
        ps = PromptSet(mask=np.array([[0, 2], [1, 0]]))
        assert ps.mask.dtype == bool

    def test_bad_point_label(self):
        with pytest.raises(ValueError):
            PointPrompt(1, 1, label=5)


class TestGenPoint:
    def test_five_square_center(self):
        # 2-px erosion of a 5x5 square leaves exactly the center
        m = square_mask((11, 11), 3, 3, 7, 7)
        p = gen_point(m, stream(0, "p"))
        assert (p.row, p.col) == (5, 5)
        assert p.label == POSITIVE

    def test_single_pixel_fallback(self):
        m = np.zeros((9, 9), dtype=bool)
        m[4, 6] = True
        p = gen_point(m, stream(0, "p"))
        assert (p.row, p.col) == (4, 6)

    def test_always_inside_gt(self):
        rng_mask = stream(5, "masks")
        for trial in range(30):
            m = rng_mask.uniform(size=(24, 24)) > 0.7
            if not m.any():
                continue
            p = gen_point(m, stream(6, "p", trial))
            assert m[p.row, p.col]

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            gen_point(np.zeros((5, 5), bool), stream(0, "p"))


class TestGenBox:
    def test_zero_deltas_tight(self):
        m = square_mask((40, 40), 10, 12, 20, 25)
        box = gen_box(m, FixedDeltaRng([0, 0, 0, 0]))
        assert box == bbox_of(m)

    def test_clipping(self):
        m = square_mask((64, 64), 10, 10, 20, 20)
        box = gen_box(m, FixedDeltaRng([20, 20, 20, 20]))
        assert box == Box(0, 0, 40, 40)

    def test_delta_range_observed(self):
        # gt far from borders so clipping never hides a delta
        m = square_mask((128, 128), 50, 50, 70, 70)
        tight = bbox_of(m)
        rng = stream(7, "box")
        seen = set()
        for _ in range(3000):
            b = gen_box(m, rng)
            deltas = (
                tight.row_min - b.row_min,
                tight.col_min - b.col_min,
                b.row_max - tight.row_max,
                b.col_max - tight.col_max,
            )
            for d in deltas:
                assert -5 <= d <= 20
                seen.add(d)
        assert min(seen) == -5 and max(seen) == 20

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            gen_box(np.zeros((5, 5), bool), stream(0, "b"))


class TestGenNoisyMask:
    def test_identity_ranges_equal_downsample(self):
        m = square_mask((64, 64), 10, 10, 40, 44)
        out = gen_noisy_mask(m, (16, 16), stream(0, "n"), AffineRanges.identity())
        assert (out == downsample_mask(m, (16, 16))).all()

    def test_binary_any_seed(self):
        m = square_mask((64, 64), 12, 12, 44, 44)
        for s in range(5):
            out = gen_noisy_mask(m, (16, 16), stream(s, "n"))
            assert out.dtype == bool and set(np.unique(out)) <= {False, True}

    def test_mean_iou_at_least_half(self):
        m = square_mask((64, 64), 16, 14, 46, 48)
        low_gt = downsample_mask(m, (16, 16))
        ious = []
        for s in range(1000):
            out = gen_noisy_mask(m, (16, 16), stream(s, "iou"))
            inter = (out & low_gt).sum()
            union = (out | low_gt).sum()
            ious.append(inter / union if union else 1.0)
        assert np.mean(ious) >= 0.5

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            gen_noisy_mask(np.zeros((8, 8), bool), (4, 4), stream(0, "n"))


class TestGenCorrectionPoint:
    def test_only_fn(self):
        g = square_mask((12, 12), 3, 3, 8, 8)
        p = gen_correction_point(np.zeros_like(g), g, stream(0, "c"))
        assert p.label == POSITIVE and g[p.row, p.col]

    def test_only_fp(self):
        g = square_mask((12, 12), 4, 4, 6, 6)
        pred = square_mask((12, 12), 3, 3, 7, 7)
        p = gen_correction_point(pred, g, stream(0, "c"))
        assert p.label == NEGATIVE
        assert pred[p.row, p.col] and not g[p.row, p.col]

    def test_exact_match_none(self):
        g = square_mask((12, 12), 3, 3, 8, 8)
        assert gen_correction_point(g.copy(), g, stream(0, "c")) is None

    def test_label_consistency_random(self):
        rng_mask = stream(8, "cmask")
        for trial in range(40):
            g = rng_mask.uniform(size=(16, 16)) > 0.6
            pred = rng_mask.uniform(size=(16, 16)) > 0.6
            p = gen_correction_point(pred, g, stream(9, "c", trial))
            if p is None:
                assert (pred == g).all()
                continue
            if p.label == POSITIVE:
                assert g[p.row, p.col] and not pred[p.row, p.col]
            else:
                assert pred[p.row, p.col] and not g[p.row, p.col]
