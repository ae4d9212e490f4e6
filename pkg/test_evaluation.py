#!/usr/bin/env python3
"""
Tests for triplet ranking and the recall metrics
"""

import itertools
import math

import numpy as np
import pytest

from components.errors import ContractError, ShapeError
from components.evaluation import (
    FrameGroundTruth, FramePrediction, GroundTruthGraph, SceneGraphPrediction,
    enumerate_predictions, evaluate_task, mean_recall_at_k, recall_at_k, triplet_score,
)

OFF = 1e-3


def all_pairs(n):
    return [(s, o) for s, o in itertools.permutations(range(n), 2)]


def test_triplet_score():
    assert triplet_score(1.0, 1.0, 1.0) == 1.0
    assert triplet_score(0.9, 0.8, 0.7) == pytest.approx(0.504, abs=1e-12)
    assert triplet_score(1e-300, 0.5, 1.0) < 1e-299
    for bad in ((0.0, 0.5, 0.5), (0.5, 1.5, 0.5), (0.5, 0.5, -1.0)):
        with pytest.raises(ContractError):
            triplet_score(*bad)


def test_with_and_no_constraint_counts():
    rng = np.random.default_rng(0)
    one = FramePrediction(0, [0, 1], [1.0, 1.0], [(0, 1)], rng.uniform(0.01, 1, size=(1, 26)))
    assert len(enumerate_predictions(one, "with")) == 1
    assert len(enumerate_predictions(one, "no")) == 26


def test_no_constraint_keeps_the_top_100():
    rng = np.random.default_rng(1)
    pairs = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2)]
    frame = FramePrediction(0, [0, 1, 2], rng.uniform(0.5, 1, size=3), pairs,
                            rng.uniform(0.01, 1, size=(5, 26)))
    ranked = enumerate_predictions(frame, "no")
    assert len(ranked) == 100
    kept = {(t.subject, t.object, t.predicate) for t in ranked}
    every = [(frame.object_scores[s] * frame.predicate_scores[r, p] * frame.object_scores[o],
              (s, o, p)) for r, (s, o) in enumerate(pairs) for p in range(26)]
    excluded = [score for score, key in every if key not in kept]
    assert len(excluded) == 30
    assert min(t.score for t in ranked) >= max(excluded)
    assert [t.score for t in ranked] == sorted((t.score for t in ranked), reverse=True)


def test_ties_break_by_index():
    frame = FramePrediction(0, [0, 0, 0], [1.0] * 3, [(1, 0), (0, 2), (0, 1)],
                            np.full((3, 2), 0.5))
    ranked = enumerate_predictions(frame, "no")
    keys = [(t.subject, t.object, t.predicate) for t in ranked]
    assert keys == sorted(keys)


def test_per_group_constraint_keeps_one_per_group():
    frame = FramePrediction(0, [0, 1], [1.0, 1.0], [(0, 1)], [[0.9, 0.2, 0.4, 0.8]])
    ranked = enumerate_predictions(frame, "with", predicate_groups=[0, 0, 1, 1],
                                   per_group_constraint=True)
    assert sorted(t.predicate for t in ranked) == [0, 3]
    assert len(enumerate_predictions(frame, "with", [0, 0, 1, 1])) == 1


def test_unknown_mode():
    frame = FramePrediction(0, [0, 1], [1.0, 1.0], [(0, 1)], [[0.5]])
    with pytest.raises(ContractError):
        enumerate_predictions(frame, "both")


def test_prediction_row_mismatch():
    with pytest.raises(ShapeError):
        FramePrediction(0, [0, 1], [1.0, 1.0], [(0, 1), (1, 0)], np.ones((1, 3)))


def test_ground_truth_validation():
    with pytest.raises(ContractError):
        FrameGroundTruth([0, 1], [(0, 1, 2), (0, 1, 2)])
    with pytest.raises(ContractError):
        FrameGroundTruth([0, 1], [(0, 1, 5), (0, 2, 1)])


def _two_class_case(total_a, total_b):
    """Predicate 0 is always ranked first; predicate 1 never makes the top 1"""
    ranked, gts = [], []
    for i in range(total_a + total_b):
        predicate = 0 if i < total_a else 1
        frame = FramePrediction(i, [0, 1], [1.0, 1.0], [(0, 1)], [[0.9, OFF]])
        ranked.append(enumerate_predictions(frame, "with"))
        gts.append(FrameGroundTruth([0, 1], [(0, predicate, 1)]))
    return ranked, gts


def test_recall_separates_from_mean_recall():
    ranked, gts = _two_class_case(1, 1)
    assert recall_at_k(ranked, gts, 1) == pytest.approx(50.0)
    assert mean_recall_at_k(ranked, gts, 1, 2) == pytest.approx(50.0)
    ranked, gts = _two_class_case(9, 1)
    assert recall_at_k(ranked, gts, 1) == pytest.approx(90.0)
    assert mean_recall_at_k(ranked, gts, 1, 2) == pytest.approx(50.0)


def test_frames_without_ground_truth_are_skipped():
    frame = FramePrediction(0, [0, 1], [1.0, 1.0], [(0, 1)], [[0.9]])
    ranked = [enumerate_predictions(frame, "with")] * 2
    gts = [FrameGroundTruth([0, 1], [(0, 0, 1)]), FrameGroundTruth([0, 1], [])]
    assert recall_at_k(ranked, gts, 1) == 100.0
    assert math.isnan(recall_at_k(ranked[1:], gts[1:], 1))


# ---------------------------------------------------------------------------
# Brute-force reference
# ---------------------------------------------------------------------------

def random_instance(rng, frames=None):
    num_predicates = int(rng.integers(1, 7))
    gts, preds = [], []
    for f in range(frames or int(rng.integers(1, 6))):
        n = int(rng.integers(2, 5))
        labels = rng.integers(0, 3, size=n).tolist()
        pairs = all_pairs(n)
        candidates = [(s, p, o) for s, o in pairs for p in range(num_predicates)]
        take = int(rng.integers(0, min(len(candidates), 6) + 1))
        chosen = rng.choice(len(candidates), size=take, replace=False)
        gts.append(FrameGroundTruth(labels, [candidates[i] for i in sorted(chosen)]))
        predicted = np.where(rng.uniform(size=n) < 0.7, labels, rng.integers(0, 3, size=n))
        preds.append(FramePrediction(f, predicted, rng.uniform(0.05, 1.0, size=n), pairs,
                                     rng.uniform(0.01, 1.0, size=(len(pairs), num_predicates))))
    return preds, gts, num_predicates


def reference_metrics(preds, gts, k, mode, num_predicates, check_labels):
    frame_recalls = []
    class_hits = [0] * num_predicates
    class_totals = [0] * num_predicates
    for pred, gt in zip(preds, gts):
        candidates = []
        for row, (s, o) in enumerate(pred.pairs):
            options = range(num_predicates)
            if mode == "with":
                best = max(options, key=lambda p: (pred.predicate_scores[row, p], -p))
                options = [best]
            for p in options:
                score = pred.object_scores[s] * pred.predicate_scores[row, p] * pred.object_scores[o]
                candidates.append((-score, s, o, p))
        candidates.sort()
        if mode == "no":
            candidates = candidates[:100]
        top = candidates[:k]
        found = 0
        for s, p, o in gt.triplets:
            hit = any(c[1] == s and c[2] == o and c[3] == p for c in top)
            if check_labels:
                hit = hit and pred.object_labels[s] == gt.labels[s] and \
                    pred.object_labels[o] == gt.labels[o]
            found += hit
            class_hits[p] += hit
            class_totals[p] += 1
        if gt.triplets:
            frame_recalls.append(found / len(gt.triplets))
    recall = 100.0 * sum(frame_recalls) / len(frame_recalls) if frame_recalls else float("nan")
    present = [100.0 * h / t for h, t in zip(class_hits, class_totals) if t]
    mean_recall = sum(present) / len(present) if present else float("nan")
    return recall, mean_recall


def _close(a, b):
    return (math.isnan(a) and math.isnan(b)) or abs(a - b) <= 1e-9


@pytest.mark.parametrize("seed", range(500))
def test_metrics_match_reference(seed):
    rng = np.random.default_rng(seed)
    preds, gts, num_predicates = random_instance(rng)
    video = SceneGraphPrediction("v", preds)
    truth = GroundTruthGraph("v", gts)
    for task in ("predcls", "sgcls"):
        report = evaluate_task([video], [truth], task, ["with", "no"], [1, 3, 10],
                               num_predicates)
        for mode in ("with", "no"):
            for k in (1, 3, 10):
                if task == "predcls":
                    forced = [FramePrediction(p.frame_index, g.labels, np.ones(len(g.labels)),
                                              p.pairs, p.predicate_scores)
                              for p, g in zip(preds, gts)]
                    expected = reference_metrics(forced, gts, k, mode, num_predicates, False)
                else:
                    expected = reference_metrics(preds, gts, k, mode, num_predicates, True)
                got = report["metrics"][mode][k]
                assert _close(got["recall"], expected[0]), (task, mode, k)
                assert _close(got["mean_recall"], expected[1]), (task, mode, k)


@pytest.mark.parametrize("seed", range(50))
def test_metrics_monotone_in_k(seed):
    rng = np.random.default_rng(1000 + seed)
    preds, gts, num_predicates = random_instance(rng, frames=4)
    report = evaluate_task([SceneGraphPrediction("v", preds)], [GroundTruthGraph("v", gts)],
                           "sgcls", ["with", "no"], [1, 2, 5, 10, 20, 50], num_predicates)
    for mode in ("with", "no"):
        values = list(report["metrics"][mode].values())
        for metric in ("recall", "mean_recall"):
            series = [v[metric] for v in values]
            if any(math.isnan(x) for x in series):
                continue
            assert all(a <= b + 1e-12 for a, b in zip(series, series[1:]))


@pytest.mark.parametrize("seed", range(50))
def test_no_constraint_covers_with_constraint_when_k_spans_the_pool(seed):
    """With K at least the candidate pool size, No Constraint never recalls less"""
    rng = np.random.default_rng(2000 + seed)
    preds, gts, num_predicates = random_instance(rng, frames=3)
    report = evaluate_task([SceneGraphPrediction("v", preds)], [GroundTruthGraph("v", gts)],
                           "predcls", ["with", "no"], [100], num_predicates)
    with_c, no_c = report["metrics"]["with"][100], report["metrics"]["no"][100]
    if not math.isnan(with_c["recall"]):
        assert no_c["recall"] >= with_c["recall"]
        assert no_c["mean_recall"] >= with_c["mean_recall"]


def test_predcls_oracle_scores_reach_full_recall():
    gts, preds = [], []
    for f in range(3):
        labels = [0, 1, 2]
        triplets = [(0, 1, 1), (0, 3, 1), (2, 0, 0)]
        pairs = all_pairs(3)
        scores = np.full((len(pairs), 4), OFF)
        for s, p, o in triplets:
            scores[pairs.index((s, o)), p] = 1.0
        gts.append(FrameGroundTruth(labels, triplets))
        preds.append(FramePrediction(f, [2, 2, 2], [0.3, 0.3, 0.3], pairs, scores))
    report = evaluate_task([SceneGraphPrediction("v", preds)], [GroundTruthGraph("v", gts)],
                           "predcls", ["with", "no"], [10, 20], 4)
    for k in (10, 20):
        assert report["metrics"]["no"][k]["recall"] == 100.0
        assert report["metrics"]["no"][k]["mean_recall"] == 100.0
        # One predicate per pair cannot recall both predicates of pair (0, 1)
        assert report["metrics"]["with"][k]["recall"] == pytest.approx(200.0 / 3.0)
        assert report["metrics"]["no"][k]["recall"] >= report["metrics"]["with"][k]["recall"]
    assert report["object_accuracy"] == 100.0
    assert report["per_class"]["no"][10][2] is None


def test_predcls_ranks_by_predicate_score_alone():
    rng = np.random.default_rng(3)
    pairs = all_pairs(3)
    scores = rng.uniform(0.01, 1.0, size=(len(pairs), 5))
    frame = FramePrediction(0, [1, 0, 2], [0.2, 0.9, 0.5], pairs, scores)
    gt = FrameGroundTruth([1, 0, 2], [(0, 1, 2)])
    report_ranked = evaluate_task([SceneGraphPrediction("v", [frame])], [GroundTruthGraph("v", [gt])],
                                  "predcls", ["no"], [1, 2, 3, 4, 5, 6, 7, 8], 5)
    order = sorted(((-scores[r, p], s, o, p) for r, (s, o) in enumerate(pairs) for p in range(5)))
    position = next(i for i, c in enumerate(order) if (c[1], c[3], c[2]) == (0, 1, 2))
    for k, values in report_ranked["metrics"]["no"].items():
        assert values["recall"] == (100.0 if k > position else 0.0)


def test_mean_recall_unchanged_by_duplicating_videos():
    rng = np.random.default_rng(4)
    preds, gts, num_predicates = random_instance(rng, frames=4)
    single = evaluate_task([SceneGraphPrediction("a", preds)], [GroundTruthGraph("a", gts)],
                           "sgcls", ["with"], [5], num_predicates)
    double = evaluate_task([SceneGraphPrediction("a", preds), SceneGraphPrediction("b", preds)],
                           [GroundTruthGraph("a", gts), GroundTruthGraph("b", gts)],
                           "sgcls", ["with"], [5], num_predicates)
    a, b = single["metrics"]["with"][5]["mean_recall"], double["metrics"]["with"][5]["mean_recall"]
    assert _close(a, b)


def test_task_and_mode_errors():
    preds = [SceneGraphPrediction("v", [])]
    gts = [GroundTruthGraph("v", [])]
    with pytest.raises(ContractError):
        evaluate_task(preds, gts, "sgdet", ["with"], [10], 3)
    with pytest.raises(ContractError):
        evaluate_task(preds, gts, "predcls", ["strict"], [10], 3)
    with pytest.raises(ContractError):
        evaluate_task(preds, [GroundTruthGraph("w", [])], "predcls", ["with"], [10], 3)
