#!/usr/bin/env python3
"""
Evaluation Component - triplet ranking and Recall@K / mean-Recall@K

Triplets are scored as s_sub * s_p * s_obj and ranked per frame. With
Constraint keeps one predicate per ordered pair; No Constraint pools every
(pair, predicate) candidate of a frame and keeps the top 100. Recall@K is the
per-frame recall averaged over frames that have ground truth; mean-Recall@K is
the per-predicate recall over all frames averaged over predicates that occur.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from components.errors import ContractError, ShapeError

logger = logging.getLogger(__name__)

WITH_CONSTRAINT = "with"
NO_CONSTRAINT = "no"
MODES = (WITH_CONSTRAINT, NO_CONSTRAINT)
TASKS = ("predcls", "sgcls")
NO_CONSTRAINT_TOP_N = 100


@dataclass
class FrameGroundTruth:
    """Object classes and (subject, predicate, object) triplets of one frame"""

    labels: List[int]
    triplets: List[Tuple[int, int, int]]

    def __post_init__(self):
        n = len(self.labels)
        seen = set()
        for s, p, o in self.triplets:
            if not (0 <= s < n and 0 <= o < n) or p < 0:
                raise ContractError(f"triplet {(s, p, o)} out of range for {n} objects")
            if (s, p, o) in seen:
                raise ContractError(f"duplicate triplet {(s, p, o)}")
            seen.add((s, p, o))


@dataclass
class GroundTruthGraph:
    """Per-frame ground truth of one video"""

    video_id: str
    frames: List[FrameGroundTruth]


@dataclass
class FramePrediction:
    """
    Model output for one frame

    predicate_scores has one row per entry of pairs.
    """

    frame_index: int
    object_labels: np.ndarray
    object_scores: np.ndarray
    pairs: List[Tuple[int, int]]
    predicate_scores: np.ndarray

    def __post_init__(self):
        self.object_labels = np.asarray(self.object_labels, dtype=np.int64)
        self.object_scores = np.asarray(self.object_scores, dtype=np.float64)
        self.predicate_scores = np.asarray(self.predicate_scores, dtype=np.float64)
        self.pairs = [(int(s), int(o)) for s, o in self.pairs]
        if self.predicate_scores.ndim != 2 or self.predicate_scores.shape[0] != len(self.pairs):
            if not (len(self.pairs) == 0 and self.predicate_scores.size == 0):
                raise ShapeError("frame prediction", (len(self.pairs),),
                                 self.predicate_scores.shape)


@dataclass
class SceneGraphPrediction:
    """Per-frame predictions of one video"""

    video_id: str
    frames: List[FramePrediction] = field(default_factory=list)


@dataclass(frozen=True)
class PredictedTriplet:
    frame_index: int
    subject: int
    object: int
    predicate: int
    score: float


def triplet_score(s_sub: float, s_p: float, s_obj: float) -> float:
    """
    s_rel = s_sub * s_p * s_obj

    Raises:
        ContractError: If a factor is outside (0, 1]
    """
    for name, value in (("subject", s_sub), ("predicate", s_p), ("object", s_obj)):
        if not (0.0 < value <= 1.0):
            raise ContractError(f"{name} score {value} outside (0, 1]")
    return s_sub * s_p * s_obj


def _rank_key(t: PredictedTriplet):
    return (-t.score, t.subject, t.object, t.predicate)


def enumerate_predictions(frame: FramePrediction, mode: str,
                          predicate_groups: Optional[Sequence[int]] = None,
                          per_group_constraint: bool = False,
                          top_n: int = NO_CONSTRAINT_TOP_N) -> List[PredictedTriplet]:
    """
    Ranked candidate triplets of one frame

    Args:
        frame (FramePrediction): scores for every candidate pair
        mode (str): "with" (one predicate per pair) or "no" (top_n pooled candidates)
        predicate_groups: group id per predicate; used with per_group_constraint
        per_group_constraint (bool): keep one predicate per group per pair in "with" mode

    Returns:
        list: triplets by descending score, ties by (subject, object, predicate)
    """
    if mode not in MODES:
        raise ContractError(f"unknown evaluation mode '{mode}' (expected one of {MODES})")
    triplets = []
    for row, (s, o) in enumerate(frame.pairs):
        scores = frame.predicate_scores[row]
        pair_factor = (float(frame.object_scores[s]), float(frame.object_scores[o]))
        if mode == WITH_CONSTRAINT:
            if per_group_constraint and predicate_groups is not None:
                groups = np.asarray(predicate_groups)
                chosen = []
                for g in sorted(set(groups.tolist())):
                    members = np.flatnonzero(groups == g)
                    chosen.append(int(members[np.argmax(scores[members])]))
            else:
                chosen = [int(np.argmax(scores))]
        else:
            chosen = range(len(scores))
        for p in chosen:
            score = triplet_score(pair_factor[0], float(scores[p]), pair_factor[1])
            triplets.append(PredictedTriplet(frame.frame_index, s, o, int(p), score))
    triplets.sort(key=_rank_key)
    if mode == NO_CONSTRAINT:
        triplets = triplets[:top_n]
    return triplets


def frame_hits(ranked: Sequence[PredictedTriplet], gt: FrameGroundTruth, k: int,
               predicted_labels: Optional[Sequence[int]] = None) -> List[bool]:
    """Whether each ground-truth triplet appears in the top k predictions"""
    labels_ok = predicted_labels is None or list(map(int, predicted_labels)) == list(gt.labels)
    top = {(t.subject, t.predicate, t.object) for t in ranked[:k]}
    hits = []
    for s, p, o in gt.triplets:
        hit = (s, p, o) in top
        if hit and not labels_ok:
            hit = int(predicted_labels[s]) == gt.labels[s] and int(predicted_labels[o]) == gt.labels[o]
        hits.append(hit)
    return hits


def recall_at_k(ranked_frames: Sequence[Sequence[PredictedTriplet]],
                gt_frames: Sequence[FrameGroundTruth], k: int,
                predicted_labels: Optional[Sequence[Sequence[int]]] = None) -> float:
    """Per-frame recall averaged over frames with ground truth, in percent"""
    if len(ranked_frames) != len(gt_frames):
        raise ContractError("predictions and ground truth cover different frames")
    recalls = []
    for f, (ranked, gt) in enumerate(zip(ranked_frames, gt_frames)):
        if not gt.triplets:
            continue
        labels = None if predicted_labels is None else predicted_labels[f]
        hits = frame_hits(ranked, gt, k, labels)
        recalls.append(sum(hits) / len(hits))
    if not recalls:
        return float("nan")
    return 100.0 * float(np.mean(recalls))


def per_class_recall(ranked_frames, gt_frames, k: int, num_predicates: int,
                     predicted_labels=None) -> List[Optional[float]]:
    """Recall of every predicate class over all frames (None for absent classes), in percent"""
    hits = np.zeros(num_predicates)
    totals = np.zeros(num_predicates)
    for f, (ranked, gt) in enumerate(zip(ranked_frames, gt_frames)):
        if not gt.triplets:
            continue
        labels = None if predicted_labels is None else predicted_labels[f]
        for (s, p, o), hit in zip(gt.triplets, frame_hits(ranked, gt, k, labels)):
            if p >= num_predicates:
                raise ContractError(f"predicate {p} out of range for {num_predicates} classes")
            totals[p] += 1
            hits[p] += hit
    return [100.0 * hits[c] / totals[c] if totals[c] > 0 else None for c in range(num_predicates)]


def mean_recall_at_k(ranked_frames, gt_frames, k: int, num_predicates: int,
                     predicted_labels=None) -> float:
    """Per-predicate recall averaged over predicates with ground truth, in percent"""
    if len(ranked_frames) != len(gt_frames):
        raise ContractError("predictions and ground truth cover different frames")
    present = [r for r in per_class_recall(ranked_frames, gt_frames, k, num_predicates,
                                           predicted_labels) if r is not None]
    if not present:
        return float("nan")
    return float(np.mean(present))


def _task_frame(frame: FramePrediction, gt: FrameGroundTruth, task: str) -> FramePrediction:
    if task == "predcls":
        # Ground-truth classes are given: subject and object scores are 1
        return FramePrediction(frame.frame_index, np.asarray(gt.labels), np.ones(len(gt.labels)),
                               frame.pairs, frame.predicate_scores)
    return frame


def evaluate_task(predictions: Sequence[SceneGraphPrediction], ground_truth: Sequence[GroundTruthGraph],
                  task: str, modes: Sequence[str], k_list: Sequence[int], num_predicates: int,
                  predicate_groups: Optional[Sequence[int]] = None,
                  per_group_constraint: bool = False) -> Dict:
    """
    Full metric report for one task

    Args:
        predictions: one SceneGraphPrediction per video
        ground_truth: matching GroundTruthGraphs, same order
        task (str): "predcls" or "sgcls"
        modes: subset of ("with", "no")
        k_list: K values for R@K and mR@K
        num_predicates (int): number of predicate classes

    Returns:
        dict: {"task", "num_frames", "metrics": {mode: {K: {"recall", "mean_recall"}}},
               "per_class": {mode: {K: [...]}}, "object_accuracy"}
    """
    if task not in TASKS:
        raise ContractError(f"unknown task '{task}' (expected one of {TASKS})")
    for mode in modes:
        if mode not in MODES:
            raise ContractError(f"unknown evaluation mode '{mode}' (expected one of {MODES})")
    if len(predictions) != len(ground_truth):
        raise ContractError(f"{len(predictions)} predicted videos vs {len(ground_truth)} annotated")

    frames, gts, labels = [], [], []
    correct = total = 0
    for pred, gt in zip(predictions, ground_truth):
        if pred.video_id != gt.video_id or len(pred.frames) != len(gt.frames):
            raise ContractError(f"prediction for '{pred.video_id}' does not match ground truth "
                                f"'{gt.video_id}'")
        for frame, gt_frame in zip(pred.frames, gt.frames):
            frame = _task_frame(frame, gt_frame, task)
            frames.append(frame)
            gts.append(gt_frame)
            labels.append(frame.object_labels)
            correct += int(np.sum(frame.object_labels == np.asarray(gt_frame.labels)))
            total += len(gt_frame.labels)

    report = {"task": task, "num_frames": len(frames), "metrics": {}, "per_class": {},
              "object_accuracy": 100.0 * correct / total if total else float("nan")}
    for mode in modes:
        ranked = [enumerate_predictions(f, mode, predicate_groups, per_group_constraint)
                  for f in frames]
        report["metrics"][mode] = {}
        report["per_class"][mode] = {}
        for k in k_list:
            report["metrics"][mode][int(k)] = {
                "recall": recall_at_k(ranked, gts, k, labels),
                "mean_recall": mean_recall_at_k(ranked, gts, k, num_predicates, labels),
            }
            report["per_class"][mode][int(k)] = per_class_recall(ranked, gts, k, num_predicates,
                                                                 labels)
    logger.debug("Evaluated %d frames for %s", len(frames), task)
    return report
