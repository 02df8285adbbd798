import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cracknet.evaluation import (Tolerance, confusion_counts, degenerate_accuracy, evaluate_corpus, evaluate_pair,
                                 format_table, scores, write_csv)

from oracles import brute_force_counts


@st.composite
def pairs(draw):
    shape = draw(st.tuples(st.integers(1, 24), st.integers(1, 24)))
    a = draw(arrays(np.uint8, shape, elements=st.integers(0, 1)))
    b = draw(arrays(np.uint8, shape, elements=st.integers(0, 1)))
    return a, b


def line_mask(shape=(20, 20), col=8):
    m = np.zeros(shape, np.uint8)
    m[2:18, col] = 1
    return m


class TestTolerance:
    def test_defaults(self):
        t = Tolerance()
        assert (t.d, t.metric) == (2.0, "euclidean")

    def test_invalid(self):
        with pytest.raises(ValueError):
            Tolerance(-1)
        with pytest.raises(ValueError):
            Tolerance(2, "manhattan")


class TestPair:
    @pytest.mark.parametrize("d", [0, 1, 2, 5])
    def test_identical(self, d):
        m = line_mask()
        r = evaluate_pair(m, m, Tolerance(d))
        assert r.precision == r.recall == r.f1 == 1.0

    def test_shift_two_within_tolerance(self):
        r = evaluate_pair(line_mask(col=10), line_mask(col=8), Tolerance(2))
        assert r.precision == r.recall == 1.0

    def test_shift_three_outside(self):
        r = evaluate_pair(line_mask(col=11), line_mask(col=8), Tolerance(2))
        assert r.precision == r.recall == 0.0

    def test_diagonal_metric(self):
        gt = np.zeros((9, 9), np.uint8)
        gt[4, 4] = 1
        pred = np.zeros_like(gt)
        pred[6, 6] = 1  # euclidean 2.83, chebyshev 2
        assert evaluate_pair(pred, gt, Tolerance(2, "euclidean")).precision == 0.0
        assert evaluate_pair(pred, gt, Tolerance(2, "chebyshev")).precision == 1.0

    def test_empty_prediction(self):
        r = evaluate_pair(np.zeros((5, 5)), line_mask((5, 5), 2), Tolerance())
        assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)

    def test_both_empty(self):
        r = evaluate_pair(np.zeros((5, 5)), np.zeros((5, 5)))
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_empty_gt(self):
        pred = np.zeros((5, 5))
        pred[1, 1] = 1
        r = evaluate_pair(pred, np.zeros((5, 5)))
        assert (r.precision, r.recall, r.f1) == (0.0, 1.0, 0.0)

    def test_asymmetric_counts(self):
        # two predicted pixels near one GT pixel: TP=2 on the prediction side, 1 GT pixel covered
        gt = np.zeros((7, 7), np.uint8)
        gt[3, 3] = 1
        pred = np.zeros_like(gt)
        pred[3, 2] = pred[3, 4] = 1
        assert confusion_counts(pred, gt, Tolerance(1)) == (2, 0, 0, 1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_pair(np.zeros((3, 3)), np.zeros((3, 4)))

    def test_accepts_binary_prediction(self):
        from cracknet.inference import BinaryPrediction
        m = line_mask()
        assert evaluate_pair(BinaryPrediction(m, 0.5), m).f1 == 1.0


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(pairs(), st.sampled_from([0, 1, 1.5, 2, 3, 5]), st.sampled_from(["euclidean", "chebyshev"]))
    def test_brute_force(self, pair, d, metric):
        pred, gt = pair
        assert confusion_counts(pred, gt, Tolerance(d, metric)) == brute_force_counts(pred, gt, d, metric)

    @settings(max_examples=40, deadline=None)
    @given(pairs())
    def test_monotone_in_d(self, pair):
        pred, gt = pair
        prev = None
        for d in (0, 1, 2, 3, 5):
            tp, fp, fn, tp_gt = confusion_counts(pred, gt, Tolerance(d))
            pr, re, f1 = scores(tp, fp, fn, tp_gt)
            if prev is not None:
                assert tp >= prev[0] and fp <= prev[1] and fn <= prev[2]
                assert pr >= prev[3] and re >= prev[4] and f1 >= prev[5] - 1e-12
            prev = (tp, fp, fn, pr, re, f1)

    @settings(max_examples=40, deadline=None)
    @given(pairs())
    def test_d0_is_exact(self, pair):
        pred, gt = pair
        p, g = pred.astype(bool), gt.astype(bool)
        tp = int((p & g).sum())
        assert confusion_counts(pred, gt, Tolerance(0)) == (tp, int((p & ~g).sum()), int((g & ~p).sum()), tp)

    @settings(max_examples=30, deadline=None)
    @given(pairs(), st.integers(-3, 3), st.integers(-3, 3))
    def test_translation_invariant(self, pair, dy, dx):
        pred, gt = pair
        h, w = pred.shape
        big_p = np.zeros((h + 12, w + 12), np.uint8)
        big_g = np.zeros_like(big_p)
        big_p[6:6 + h, 6:6 + w] = pred
        big_g[6:6 + h, 6:6 + w] = gt
        moved_p = np.roll(big_p, (dy, dx), axis=(0, 1))
        moved_g = np.roll(big_g, (dy, dx), axis=(0, 1))
        assert confusion_counts(big_p, big_g, Tolerance(2)) == confusion_counts(moved_p, moved_g, Tolerance(2))

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_f1_symmetric(self, pr, re):
        def f1(a, b):
            return 2 * a * b / (a + b) if a + b > 0 else 0.0
        assert f1(pr, re) == pytest.approx(f1(re, pr))
        assert f1(pr, pr) == pytest.approx(pr)

    @settings(max_examples=40, deadline=None)
    @given(pairs())
    def test_score_formulas(self, pair):
        pred, gt = pair
        r = evaluate_pair(pred, gt)
        if r.tp + r.fp:
            assert r.precision == r.tp / (r.tp + r.fp)
        if r.tp_gt + r.fn:
            assert r.recall == r.tp_gt / (r.tp_gt + r.fn)
        assert 0 <= r.f1 <= 1


class TestCorpus:
    def test_single_pair(self):
        rng = np.random.default_rng(0)
        pred, gt = rng.integers(0, 2, (12, 12)), rng.integers(0, 2, (12, 12))
        out = evaluate_corpus([("a", pred, gt)], Tolerance(1), "both")
        single = evaluate_pair(pred, gt, Tolerance(1))
        for rep in out.values():
            assert (rep.precision, rep.recall, rep.f1) == pytest.approx((single.precision, single.recall, single.f1))

    def test_identical_images_macro(self):
        m = line_mask()
        p = np.roll(m, 3, axis=1)
        out = evaluate_corpus([("a", p, m), ("b", p, m)], Tolerance(2), "both")
        one = evaluate_pair(p, m)
        assert out["macro"].f1 == pytest.approx(one.f1)

    def test_micro_pools_counts(self):
        m = line_mask()
        empty = np.zeros_like(m)
        out = evaluate_corpus([("a", m, m), ("b", empty, m)], Tolerance(2), "both")
        assert out["micro"].recall == pytest.approx(0.5)
        assert out["macro"].precision == pytest.approx(0.5)
        assert out["micro"].precision == 1.0

    def test_empty_list(self):
        with pytest.raises(ValueError):
            evaluate_corpus([], Tolerance())

    def test_table_and_csv(self, tmp_path):
        m = line_mask()
        out = evaluate_corpus([("img_a", m, m)], Tolerance(), "both")
        table = format_table(out)
        assert "img_a" in table and "micro" in table and "macro" in table
        write_csv(out, tmp_path / "r.csv")
        rows = (tmp_path / "r.csv").read_text().splitlines()
        assert rows[0] == "stem,Pr,Re,F1" and rows[-1].startswith("macro,1.000000")


class TestDegenerate:
    def test_one_to_65(self):
        m = np.zeros((66, 10), np.uint8)
        m[0] = 1
        assert degenerate_accuracy([m]) == pytest.approx(65 / 66)
        assert round(degenerate_accuracy([m]), 4) == 0.9848

    def test_extremes(self):
        assert degenerate_accuracy([np.ones((4, 4))]) == 0.0
        assert degenerate_accuracy([np.zeros((4, 4))]) == 1.0

    def test_pooled_over_images(self):
        a = np.zeros((2, 2))
        b = np.ones((2, 2))
        assert degenerate_accuracy([a, b]) == 0.5
