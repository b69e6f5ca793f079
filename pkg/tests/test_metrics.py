import numpy as np
import pytest

from eegadapter.metrics import MetricError, auroc, f1_score


def brute_force_f1(preds, labels):
    tp = sum(1 for p, l in zip(preds, labels) if p == 1 and l == 1)
    fp = sum(1 for p, l in zip(preds, labels) if p == 1 and l == 0)
    fn = sum(1 for p, l in zip(preds, labels) if p == 0 and l == 1)
    return 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0


def brute_force_auroc(scores, labels):
    # mean over positive-negative pairs; ties count half
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


class TestF1:
    def test_perfect(self):
        assert f1_score([1, 0, 1], [1, 0, 1]) == 1.0

    def test_confusion_matrix_oracle_case(self):
        # TP=3, FP=1, FN=2
        preds = [1, 1, 1, 1, 0, 0, 0]
        labels = [1, 1, 1, 0, 1, 1, 0]
        assert f1_score(preds, labels) == pytest.approx(6 / 9, abs=1e-15)

    def test_degenerate_zero_by_convention(self):
        assert f1_score([0, 0], [0, 0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(MetricError, match="mismatch"):
            f1_score([1, 0], [1])


class TestAuroc:
    def test_perfect_ranking(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties_give_half(self):
        assert auroc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_pairwise_oracle_case(self):
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-15)

    def test_single_class_rejected(self):
        with pytest.raises(MetricError, match="both classes"):
            auroc([0.1, 0.2], [1, 1])


class TestAgainstBruteForce:
    def test_f1_exact_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(1, 30))
            preds = rng.integers(0, 2, size=n)
            labels = rng.integers(0, 2, size=n)
            assert f1_score(preds, labels) == brute_force_f1(preds, labels)

    def test_auroc_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n = int(rng.integers(2, 30))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # coarse grid forces plenty of ties
            scores = rng.integers(0, 5, size=n) / 4.0
            assert auroc(scores, labels) == pytest.approx(
                brute_force_auroc(scores, labels), abs=1e-12)
