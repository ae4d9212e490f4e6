#!/usr/bin/env python3
"""
Model Component - one forward pass over a video

proposals -> input projection -> tracklets/neighborhoods -> Top-K selection
-> temporal attention -> spatial attention -> object classifier
-> pair features -> relationship head
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from components.autodiff import Tensor, gather, matmul, softmax
from components.dtrans import (
    DTransConfig, ModelParams, RelationPairFeature, gumbel_topk_select, positional_encoding,
    relation_head, spatial_mha, temporal_mha,
)
from components.errors import ContractError, ShapeError
from components.evaluation import TASKS, FramePrediction, SceneGraphPrediction
from components.matching import (
    Box, ObjectProposal, build_neighborhood, build_open_neighborhood, iou, link_objects,
    tracklet_index,
)
from components.synthdata import VideoSample

logger = logging.getLogger(__name__)

GEOMETRY_EPS = 1e-6


@dataclass
class ModelOutput:
    """
    Outputs for every proposal and candidate pair of a video, flattened in frame order

    frame_rows[f] lists the proposal rows of frame f; pair_slices[f] is the
    range of pair rows belonging to frame f.
    """

    object_logits: Tensor
    object_labels: np.ndarray
    object_scores: np.ndarray
    predicate_scores: Optional[Tensor]
    predicate_targets: np.ndarray
    frame_rows: List[List[int]]
    pair_slices: List[Tuple[int, int]]
    num_selected: int = 0

    def to_prediction(self, video: VideoSample) -> SceneGraphPrediction:
        frames = []
        scores = None if self.predicate_scores is None else self.predicate_scores.data
        for f, frame in enumerate(video.frames):
            rows = self.frame_rows[f]
            lo, hi = self.pair_slices[f]
            frame_scores = scores[lo:hi] if scores is not None else np.zeros((0, 0))
            frames.append(FramePrediction(frame.frame_index, self.object_labels[rows],
                                          self.object_scores[rows], list(frame.pairs),
                                          frame_scores))
        return SceneGraphPrediction(video.video_id, frames)


def pair_geometry(subject: Box, obj: Box) -> np.ndarray:
    """[IoU, dx, dy, log width ratio, log height ratio] of a subject/object box pair"""
    (sx, sy), (ox, oy) = subject.center, obj.center
    sw, sh = max(subject.width, GEOMETRY_EPS), max(subject.height, GEOMETRY_EPS)
    ow, oh = max(obj.width, GEOMETRY_EPS), max(obj.height, GEOMETRY_EPS)
    return np.array([iou(subject, obj), (ox - sx) / sw, (oy - sy) / sh,
                     np.log(ow / sw), np.log(oh / sh)])


def union_inputs(video: VideoSample, feature_dim: int) -> np.ndarray:
    """
    Constant input of the union projection per pair

    [subject appearance, object appearance, geometry, precomputed union feature];
    the last block is zero when the dataset carries no precomputed features.
    """
    rows = []
    for frame in video.frames:
        for k, (s, o) in enumerate(frame.pairs):
            subject, obj = frame.proposals[s], frame.proposals[o]
            pre = np.zeros(feature_dim) if frame.union_features is None \
                else np.asarray(frame.union_features[k], dtype=np.float64)
            rows.append(np.concatenate([np.asarray(subject.appearance, dtype=np.float64),
                                        np.asarray(obj.appearance, dtype=np.float64),
                                        pair_geometry(subject.box, obj.box), pre]))
    return np.array(rows)


def _contexts(proposals: List[ObjectProposal], frames: List[List[ObjectProposal]],
              X0: Tensor, config: DTransConfig, rng: Optional[np.random.Generator],
              tracklets) -> Tuple[List[Tensor], int]:
    row_of = {id(p): r for r, p in enumerate(proposals)}
    dim = config.feature_dim
    contexts, selected = [], 0
    for r, proposal in enumerate(proposals):
        if config.use_matching:
            hood = build_neighborhood(tracklets, proposal)
        else:
            hood = build_open_neighborhood(frames, proposal)
        x_i = gather(X0, [r])
        if len(hood) == 0:
            contexts.append(gather(x_i, [0] * (config.top_k if config.use_selector else 1)))
            continue
        Z = gather(X0, [row_of[id(p)] for p in hood.aligned])
        E = positional_encoding(hood.offsets, dim)
        if config.use_selector:
            context = gumbel_topk_select(x_i, Z, E, config.top_k, config.tau, rng)
            contexts.append(context.F)
            selected += config.top_k
        else:
            contexts.append(Z + E)
            selected += len(hood)
    return contexts, selected


def forward_video(video: VideoSample, params: ModelParams, task: str,
                  rng: Optional[np.random.Generator] = None) -> ModelOutput:
    """
    Run the full model on one video

    Args:
        video (VideoSample): proposals, candidate pairs and (for training) relations
        params (ModelParams): learnable tensors and the DTransConfig
        task (str): "predcls" uses ground-truth classes, "sgcls" predicts them
        rng (np.random.Generator): Gumbel noise stream

    Raises:
        ContractError: On an unknown task, an empty video, or missing labels in PredCLS
    """
    config = params.config
    if task not in TASKS:
        raise ContractError(f"unknown task '{task}' (expected one of {TASKS})")
    frames = [frame.proposals for frame in video.frames]
    proposals = [p for frame in frames for p in frame]
    if not proposals:
        raise ContractError(f"video '{video.video_id}' has no object proposals")
    dim = config.feature_dim

    appearance = np.stack([np.asarray(p.appearance, dtype=np.float64) for p in proposals])
    if appearance.shape[1] != dim:
        raise ShapeError("forward_video appearance", appearance.shape, (len(proposals), dim))
    frame_of_row = np.array([p.frame_index for p in proposals])
    frame_rows, start = [], 0
    for frame in frames:
        frame_rows.append(list(range(start, start + len(frame))))
        start += len(frame)

    X0 = matmul(Tensor(appearance), params["input.w"]) + params["input.b"]
    tracklets = link_objects(frames, config.link_threshold) if config.use_matching else None
    if tracklets is not None:
        owner = tracklet_index(tracklets)
        track_of_row = np.array([owner[id(p)] for p in proposals])
    else:
        track_of_row = np.arange(len(proposals))

    selected = 0
    if config.use_dtrans:
        contexts, selected = _contexts(proposals, frames, X0, config, rng, tracklets)
        E_q = positional_encoding(frame_of_row, dim)
        X = temporal_mha(X0, E_q, contexts, params, config.temporal_depth, config.num_heads)
        X = spatial_mha(X, params, config.spatial_depth, config.num_heads, groups=frame_of_row)
    else:
        X = X0

    object_logits = matmul(X, params["object_cls.w"]) + params["object_cls.b"]
    if task == "predcls":
        if any(p.label is None for p in proposals):
            raise ContractError(f"video '{video.video_id}' lacks ground-truth classes for predcls")
        labels = np.array([p.label for p in proposals], dtype=np.int64)
        scores = np.ones(len(proposals))
    else:
        probs = softmax(object_logits.detach(), axis=1).data
        labels = np.argmax(probs, axis=1)
        scores = probs[np.arange(len(proposals)), labels]
    embeddings = gather(params["embed"], labels)

    subjects, objects, groups_t, groups_s, positions, slices = [], [], [], [], [], []
    targets = []
    for f, frame in enumerate(video.frames):
        lo = len(subjects)
        positive = {}
        for s, p, o in frame.relations:
            positive.setdefault((s, o), []).append(p)
        for s, o in frame.pairs:
            rs, ro = frame_rows[f][s], frame_rows[f][o]
            subjects.append(rs)
            objects.append(ro)
            groups_t.append(int(track_of_row[rs]) * len(proposals) + int(track_of_row[ro]))
            groups_s.append(frame.frame_index)
            positions.append(frame.frame_index)
            row = np.zeros(params.num_predicates)
            row[positive.get((s, o), [])] = 1.0
            targets.append(row)
        slices.append((lo, len(subjects)))

    predicate_scores = None
    if subjects:
        union = matmul(Tensor(union_inputs(video, dim)), params["rel.union.w"]) + params["rel.union.b"]
        pair = RelationPairFeature(gather(X, subjects), gather(X, objects), union,
                                   gather(embeddings, subjects), gather(embeddings, objects))
        predicate_scores = relation_head(pair, params, config.relation_depth, config.num_heads,
                                         temporal_groups=groups_t, spatial_groups=groups_s,
                                         frame_positions=positions)
    target_matrix = np.array(targets) if targets else np.zeros((0, params.num_predicates))
    return ModelOutput(object_logits, labels, scores, predicate_scores, target_matrix,
                       frame_rows, slices, selected)


def video_rng(seed: int, *stream) -> np.random.Generator:
    """Gumbel noise stream keyed by the seed and (epoch, video index) or (video index,)"""
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])
