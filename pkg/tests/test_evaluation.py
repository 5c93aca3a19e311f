import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smolder.errors import ConfigError, InputError
from smolder.evaluation import (
    EvalConfig,
    MetricsReport,
    blob_precision,
    classify_clip,
    dice_score,
    evaluate_masks,
    extract_blobs,
)

from . import oracles


def square(shape, top, left, size):
    m = np.zeros(shape, np.uint8)
    m[top : top + size, left : left + size] = 1
    return m


class TestDice:
    def test_identical(self):
        m = square((20, 20), 2, 2, 5)
        assert dice_score(m, m) == 1.0

    def test_disjoint(self):
        assert dice_score(square((20, 20), 0, 0, 3), square((20, 20), 10, 10, 3)) == 0.0

    def test_shifted_square(self):
        assert dice_score(square((30, 30), 5, 5, 10), square((30, 30), 5, 10, 10)) == 0.5

    def test_both_empty(self):
        z = np.zeros((4, 4), np.uint8)
        assert dice_score(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            dice_score(np.zeros((3, 3)), np.zeros((3, 4)))

    @given(arrays(np.uint8, (8, 8), elements=st.integers(0, 1)), arrays(np.uint8, (8, 8), elements=st.integers(0, 1)),
           st.randoms())
    def test_symmetric_and_permutation_invariant(self, p, g, rnd):
        assert dice_score(p, g) == dice_score(g, p)
        perm = list(range(64))
        rnd.shuffle(perm)
        pp, gg = p.ravel()[perm].reshape(8, 8), g.ravel()[perm].reshape(8, 8)
        assert dice_score(pp, gg) == pytest.approx(dice_score(p, g), abs=1e-12)


class TestBlobs:
    def test_empty(self):
        assert extract_blobs(np.zeros((5, 5), np.uint8)) == []

    def test_diagonal_pixels_connect(self):
        m = np.zeros((4, 4), np.uint8)
        m[1, 1] = m[2, 2] = 1
        assert len(extract_blobs(m)) == 1

    def test_checkerboard_is_one_blob(self):
        m = (np.indices((4, 4)).sum(axis=0) % 2).astype(np.uint8)
        blobs = extract_blobs(m)
        assert len(blobs) == 1 and blobs[0].area == 8

    def test_order_and_geometry(self):
        m = square((20, 20), 10, 1, 3) | square((20, 20), 2, 12, 2)
        blobs = extract_blobs(m)
        assert [b.bbox for b in blobs] == [(2, 12, 3, 13), (10, 1, 12, 3)]
        assert blobs[1].centroid == (11.0, 2.0) and blobs[1].area == 9

    @settings(max_examples=50)
    @given(arrays(np.uint8, (12, 12), elements=st.integers(0, 1)))
    def test_partition(self, m):
        blobs = extract_blobs(m)
        seen = np.zeros(m.size, int)
        for b in blobs:
            seen[b.flat] += 1
        assert (seen == m.ravel()).all()
        assert sorted(map(len, oracles.set_components(oracles.to_set(m)))) == sorted(b.area for b in blobs)


class TestBlobPrecision:
    def test_identical_two_blobs(self):
        m = square((30, 30), 0, 0, 5) | square((30, 30), 20, 20, 5)
        b = extract_blobs(m)
        assert blob_precision(b, b) == (2, 0, 1.0)

    def test_one_spurious(self):
        gt = square((40, 40), 5, 5, 6)
        pred = gt | square((40, 40), 30, 30, 4)
        assert blob_precision(extract_blobs(pred), extract_blobs(gt)) == (1, 1, 0.5)
        assert oracles.pairwise_blob_precision(pred, gt) == (1, 1, 0.5)

    def test_exactly_30_percent_is_fp(self):
        gt = np.zeros((20, 20), np.uint8)
        gt[5, 0:10] = 1  # 10 px
        pred = np.zeros_like(gt)
        pred[5, 0:3] = 1  # covers 3/10
        assert blob_precision(extract_blobs(pred), extract_blobs(gt))[:2] == (0, 1)
        pred[5, 3] = 1
        assert blob_precision(extract_blobs(pred), extract_blobs(gt))[:2] == (1, 0)

    def test_no_predictions_undefined(self):
        assert blob_precision([], extract_blobs(square((9, 9), 0, 0, 3))) == (0, 0, None)

    def test_iou_normalizer(self):
        gt = square((30, 30), 0, 0, 4)  # 16 px
        pred = square((30, 30), 0, 0, 10)  # covers all of gt, IoU 0.16
        pb, gb = extract_blobs(pred), extract_blobs(gt)
        assert blob_precision(pb, gb)[0] == 1
        assert blob_precision(pb, gb, EvalConfig(normalizer="iou"))[0] == 0

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            EvalConfig(normalizer="dice")


class TestClassify:
    @staticmethod
    def spots(n):
        m = np.zeros((10, 40), np.uint8)
        for k in range(n):
            m[1, 4 * k] = 1
        return m

    @pytest.mark.parametrize("matched,expected", [(4, True), (3, False), (10, True), (0, False)])
    def test_fraction_rule(self, matched, expected):
        gt = self.spots(10)
        pred = self.spots(matched)
        assert classify_clip(extract_blobs(pred), extract_blobs(gt)) == (True, expected)

    def test_non_fire_clip(self):
        empty = np.zeros((10, 10), np.uint8)
        assert classify_clip([], []) == (False, False)
        assert classify_clip(extract_blobs(square((10, 10), 0, 0, 2)), extract_blobs(empty)) == (False, True)


class TestReport:
    def test_perfect_predictions(self):
        rng = np.random.default_rng(0)
        items = []
        for i in range(5):
            g = (rng.random((32, 32)) > 0.8).astype(np.uint8)
            items.append((f"c{i}", g, g))
        r = evaluate_masks(items)
        assert r.mean_dice == 1.0 and r.precision == 1.0 and r.accuracy == 1.0

    def test_empty_predictions_on_fire(self):
        g = square((32, 32), 4, 4, 8)
        r = evaluate_masks([("a", np.zeros_like(g), g), ("b", np.zeros_like(g), g)])
        assert r.mean_dice == 0.0 and r.accuracy == 0.0 and r.precision is None

    def test_missing_prediction_names_clip(self):
        with pytest.raises(InputError, match="clip7"):
            evaluate_masks([("clip7", None, np.zeros((4, 4)))])

    def test_roundtrip_and_recompute(self, tmp_path):
        rng = np.random.default_rng(1)
        items = [(f"c{i}", (rng.random((32, 32)) > 0.7).astype(np.uint8),
                  (rng.random((32, 32)) > 0.9).astype(np.uint8)) for i in range(6)]
        r = evaluate_masks(items)
        r.write_jsonl(tmp_path / "r.jsonl")
        back = MetricsReport.read_jsonl(tmp_path / "r.jsonl")
        assert back.aggregate() == r.aggregate()
        stored = back.aggregate()
        assert back.recompute().aggregate() == stored
        assert "mean dice" in r.table()


@settings(max_examples=200, deadline=None)
@given(arrays(np.uint8, (32, 32), elements=st.integers(0, 1)), arrays(np.uint8, (32, 32), elements=st.integers(0, 1)))
def test_blob_precision_matches_pairwise_oracle(pred, gt):
    tp, fp, prec = blob_precision(extract_blobs(pred), extract_blobs(gt))
    assert (tp, fp, prec) == oracles.pairwise_blob_precision(pred, gt)
