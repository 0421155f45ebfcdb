import json

import numpy as np
import pytest

from fdkdnn.data.dataset import DatasetManifest, ImageRecord, Split
from fdkdnn.errors import EmptySplit
from fdkdnn.evaluate import ReportFormat, evaluate, parse_report, predict, render_report, tally
from fdkdnn.head.cache import EmbeddingCache
from fdkdnn.head.softmax import SoftmaxHead, init_head

TAXONOMY = ("damaged_kernel", "leaf", "normal_kernel", "spike")


def one_hot(k, K, p=0.9):
    probs = np.full(K, (1 - p) / (K - 1))
    probs[k] = p
    return probs


def ten_record_profile():
    """10 validation records, 2 wrong: one predicted leaf, one predicted spike."""
    truth = [0, 0, 1, 1, 2, 2, 2, 3, 3, 3]
    preds = [0, 1, 1, 1, 2, 2, 3, 3, 3, 3]
    return [(f"img_{i:02d}.ppm", t, one_hot(p, 4)) for i, (t, p) in enumerate(zip(truth, preds))]


def hand_tally(truth, preds, K):
    cm = [[0] * K for _ in range(K)]
    for t, p in zip(truth, preds):
        cm[t][p] += 1
    return cm


class TestPredict:
    def test_zero_head_picks_first(self):
        k, probs = predict(init_head(3, 4, "abc"), np.ones(4, np.float32))
        assert k == 0 and np.allclose(probs, 1 / 3)

    def test_callable_model(self):
        k, probs = predict(lambda x: np.array([0.1, 0.7, 0.2]), None)
        assert k == 1 and probs[k] == pytest.approx(0.7)

    def test_bias_shift_invariant(self, rs):
        head = SoftmaxHead(rs.standard_normal((4, 6)), rs.standard_normal(4), "abcd")
        shifted = SoftmaxHead(head.W, head.b + np.float32(3.0), "abcd")
        e = rs.standard_normal(6).astype(np.float32)
        assert predict(head, e)[0] == predict(shifted, e)[0]


class TestTally:
    def test_perfect(self):
        r = tally("abc", [(f"p{i}", i % 3, one_hot(i % 3, 3)) for i in range(9)])
        assert r.micro_accuracy == r.macro_accuracy == 1.0
        assert r.misclassification_rate == 0.0 and r.misclassified_as == {}

    def test_ten_record_profile(self):
        r = tally(TAXONOMY, ten_record_profile())
        assert r.total == 10 and r.correct == 8
        assert r.misclassification_rate == pytest.approx(0.2)
        assert r.misclassified_as == {"leaf": 1, "spike": 1}
        assert r.misclassified_as["leaf"] / r.total == pytest.approx(0.1)
        assert [m.path for m in r.misclassifications] == ["img_01.ppm", "img_06.ppm"]
        assert r.misclassifications[0].true_label == "damaged_kernel"

    def test_matches_hand_tally(self, rs):
        truth = rs.integers(0, 3, 30)
        preds = np.where(rs.random(30) < 0.3, rs.integers(0, 3, 30), truth)
        r = tally("xyz", [(f"r{i}", int(t), one_hot(int(p), 3)) for i, (t, p) in enumerate(zip(truth, preds))])
        cm = hand_tally(truth, preds, 3)
        assert [list(row) for row in r.confusion] == cm
        assert r.correct == sum(t == p for t, p in zip(truth, preds))
        per = [cm[k][k] / sum(cm[k]) for k in range(3) if sum(cm[k])]
        assert r.macro_accuracy == pytest.approx(sum(per) / len(per))

    def test_order_invariant(self, rs):
        items = ten_record_profile()
        shuffled = [items[i] for i in rs.permutation(len(items))]
        assert tally(TAXONOMY, items) == tally(TAXONOMY, shuffled)

    def test_zero_support_class_absent(self):
        r = tally("abc", [("p", 0, one_hot(0, 3)), ("q", 1, one_hot(0, 3))])
        assert r.per_class_accuracy == {"a": 1.0, "b": 0.0}
        assert r.macro_accuracy == 0.5

    def test_ties_lowest_index(self):
        r = tally("ab", [("p", 1, np.array([0.5, 0.5]))])
        assert r.confusion == ((0, 0), (1, 0))

    def test_empty(self):
        with pytest.raises(EmptySplit):
            tally("ab", [])


class TestRender:
    def test_text_percentages(self):
        items = [(f"p{i}", 0, one_hot(0, 2)) for i in range(18)] + [("q", 0, one_hot(1, 2))]
        text = render_report(tally("ab", items))
        assert "micro accuracy: 94.7%" in text
        assert "Misclassified as" in text and "q: a -> b" in text

    def test_no_misclassification_sections_when_perfect(self):
        text = render_report(tally("ab", [("p", 0, one_hot(0, 2))]))
        assert "Misclassified" not in text

    def test_structured_round_trip(self):
        r = tally(TAXONOMY, ten_record_profile())
        text = render_report(r, ReportFormat.STRUCTURED)
        assert parse_report(text) == r
        doc = json.loads(text)
        assert doc["misclassified_as"]["leaf"] == {"count": 1, "share_of_total": 0.1}

    def test_tampered_summary_rejected(self):
        doc = tally(TAXONOMY, ten_record_profile()).to_json()
        doc["correct"] = 9
        with pytest.raises(ValueError):
            parse_report(json.dumps(doc))


class TestEvaluate:
    def _setup(self, rs):
        cache = EmbeddingCache(bytes(32), 2)
        records = []
        for i in range(12):
            k = i % 2
            cache.add(i + 1, np.array([1.0, -1.0]) if k == 0 else np.array([-1.0, 1.0]))
            split = Split.VALIDATION if i < 8 else Split.TEST
            records.append(ImageRecord(f"p{i}", "ab"[k], split, i + 1))
        head = SoftmaxHead(np.eye(2), np.zeros(2), "ab")
        return head, cache, DatasetManifest(("a", "b"), tuple(records))

    def test_by_split(self, rs):
        head, cache, m = self._setup(rs)
        r = evaluate(head, cache, m)
        assert r.total == 8 and r.micro_accuracy == 1.0 and r.split == "VALIDATION"
        assert evaluate(head, cache, m, Split.TEST).total == 4

    def test_empty_split(self, rs):
        head, cache, m = self._setup(rs)
        with pytest.raises(EmptySplit):
            evaluate(head, cache, m, Split.TRAIN)

    def test_unknown_label(self, rs):
        head, cache, m = self._setup(rs)
        with pytest.raises(ValueError):
            evaluate(SoftmaxHead(np.eye(2), np.zeros(2), ["a", "c"]), cache, m)
