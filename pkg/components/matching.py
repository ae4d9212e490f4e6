#!/usr/bin/env python3
"""
Matching Component - link object proposals across frames into tracklets

Two proposals in different frames are scored by the cosine similarity of their
class-score vectors plus the IoU of their boxes. Consecutive frames are linked
greedily and one-to-one on that score; each target object's neighborhood is the
rest of its tracklet.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from components.errors import ContractError, ShapeError

# Pairs scoring below this are never linked
DEFAULT_LINK_THRESHOLD = 0.5
CLASS_SCORE_TOL = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in normalized image coordinates"""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ContractError(f"invalid box {self.as_list()}: need x1 <= x2 and y1 <= y2")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(eq=False)
class ObjectProposal:
    """
    One detected object in one frame

    Args:
        frame_index (int): frame the proposal belongs to
        appearance (np.ndarray): appearance feature x_i of length D
        box (Box): spatial extent b_i
        class_scores (np.ndarray): non-negative class distribution p_i
        label (int, optional): ground-truth object class
        track_id (int, optional): ground-truth identity (generator bookkeeping only)
        corrupted (bool): whether the generator corrupted this appearance
    """

    frame_index: int
    appearance: np.ndarray
    box: Box
    class_scores: np.ndarray
    label: Optional[int] = None
    track_id: Optional[int] = None
    corrupted: bool = False

    def __post_init__(self):
        if self.frame_index < 0:
            raise ContractError(f"frame index must be >= 0, got {self.frame_index}")
        self.appearance = np.asarray(self.appearance)
        self.class_scores = np.asarray(self.class_scores, dtype=np.float64)
        if self.appearance.ndim != 1:
            raise ShapeError("proposal appearance", self.appearance.shape)
        if np.any(self.class_scores < 0) or abs(self.class_scores.sum() - 1.0) > CLASS_SCORE_TOL:
            raise ContractError("class scores must be non-negative and sum to 1")


@dataclass
class Tracklet:
    """Proposals of one object linked across consecutive frames, in frame order"""

    members: List[ObjectProposal] = field(default_factory=list)

    def __len__(self):
        return len(self.members)


@dataclass
class Neighborhood:
    """Aligned objects of a target with their appearance rows and signed frame offsets"""

    target: ObjectProposal
    aligned: List[ObjectProposal]
    Z: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return len(self.aligned)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union has zero area"""
    inter_w = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    inter_h = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def cosine_similarity(p, q) -> float:
    """Cosine of the angle between two vectors; 0 if either has zero norm"""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError("cosine_similarity", p.shape, q.shape)
    norm = np.linalg.norm(p) * np.linalg.norm(q)
    if norm == 0.0:
        return 0.0
    return float(np.dot(p, q) / norm)


def match_score(i: ObjectProposal, j: ObjectProposal) -> float:
    """g_ij = cos(p_i, p_j) + IoU(b_i, b_j) for proposals of different frames"""
    if i.frame_index == j.frame_index:
        raise ContractError(f"match_score needs proposals from different frames "
                            f"(both in frame {i.frame_index})")
    return cosine_similarity(i.class_scores, j.class_scores) + iou(i.box, j.box)


def greedy_frame_matches(prev: Sequence[ObjectProposal], nxt: Sequence[ObjectProposal],
                         threshold: float = DEFAULT_LINK_THRESHOLD) -> List[Tuple[int, int, float]]:
    """
    One-to-one greedy assignment between two frames

    Candidates are taken by descending score, ties broken by (prev index, next index);
    candidates scoring below threshold are never linked.

    Returns:
        list: (prev index, next index, score) in the order they were linked
    """
    candidates = []
    for a, pa in enumerate(prev):
        for b, pb in enumerate(nxt):
            score = match_score(pa, pb)
            if score >= threshold:
                candidates.append((-score, a, b))
    candidates.sort()

    used_prev, used_next = set(), set()
    matches = []
    for neg_score, a, b in candidates:
        if a in used_prev or b in used_next:
            continue
        used_prev.add(a)
        used_next.add(b)
        matches.append((a, b, -neg_score))
    return matches


def link_objects(frames: Sequence[Sequence[ObjectProposal]],
                 threshold: float = DEFAULT_LINK_THRESHOLD) -> List[Tracklet]:
    """
    Link proposals frame by frame into tracklets

    Args:
        frames: per-frame proposal lists, in temporal order
        threshold (float): minimum score for a link

    Returns:
        list: tracklets ordered by their first proposal (frame, then index)

    Raises:
        ContractError: If no frames are given
    """
    if len(frames) == 0:
        raise ContractError("link_objects needs at least one frame")

    tracklets: List[Tracklet] = []
    owner: List[int] = []
    for proposal in frames[0]:
        owner.append(len(tracklets))
        tracklets.append(Tracklet([proposal]))

    for t in range(1, len(frames)):
        prev_owner = owner
        owner = [-1] * len(frames[t])
        for a, b, _ in greedy_frame_matches(frames[t - 1], frames[t], threshold):
            owner[b] = prev_owner[a]
            tracklets[owner[b]].members.append(frames[t][b])
        for b, proposal in enumerate(frames[t]):
            if owner[b] < 0:
                owner[b] = len(tracklets)
                tracklets.append(Tracklet([proposal]))
    return tracklets


def tracklet_index(tracklets: Sequence[Tracklet]) -> Dict[int, int]:
    """Map id(proposal) -> position of its tracklet"""
    return {id(p): t for t, tracklet in enumerate(tracklets) for p in tracklet.members}


def _neighborhood(target: ObjectProposal, aligned: List[ObjectProposal]) -> Neighborhood:
    aligned = sorted(aligned, key=lambda p: p.frame_index)
    dim = target.appearance.shape[0]
    if aligned:
        Z = np.stack([np.asarray(p.appearance, dtype=np.float64) for p in aligned])
    else:
        Z = np.zeros((0, dim))
    offsets = np.array([p.frame_index - target.frame_index for p in aligned], dtype=np.int64)
    return Neighborhood(target, aligned, Z, offsets)


def build_neighborhood(tracklets: Sequence[Tracklet], target: ObjectProposal) -> Neighborhood:
    """
    Neighborhood of a target: the other members of its tracklet, in frame order

    Raises:
        ContractError: If the target is in no tracklet
    """
    for tracklet in tracklets:
        if any(member is target for member in tracklet.members):
            return _neighborhood(target, [m for m in tracklet.members if m is not target])
    raise ContractError("target proposal does not belong to any tracklet")


def build_open_neighborhood(frames: Sequence[Sequence[ObjectProposal]],
                            target: ObjectProposal) -> Neighborhood:
    """Neighborhood without linking: every proposal from every other frame"""
    aligned = [p for frame in frames for p in frame if p.frame_index != target.frame_index]
    return _neighborhood(target, aligned)
