#!/usr/bin/env python3
"""
Synthetic Data Component - long-tailed video scene-graph datasets

Every video has one actor (identity 0, class 0) and a few other objects that
persist across frames with smoothly moving boxes. Each actor/object pair gets a
persistent predicate set: positive with probability positive_rate, with classes
drawn from a Zipf distribution over predicates. The predicate signal is carried
by the object's appearance and by the union feature, so the task is learnable.
A noise_rate fraction of (object, frame) appearances is pushed noise_scale away
from the prototype; the object's other frames stay clean.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from components.errors import ContractError
from components.evaluation import FrameGroundTruth, GroundTruthGraph
from components.matching import Box, ObjectProposal

logger = logging.getLogger(__name__)

ACTOR_CLASS = 0
BOX_MARGIN = 0.01


@dataclass
class GeneratorConfig:
    """Generator settings; every count is >= 1 and every rate lies in [0, 1]"""

    num_videos: int = 20
    test_fraction: float = 0.25
    frames_per_video: int = 8
    min_objects: int = 2
    max_objects: int = 4
    presence_rate: float = 0.9
    num_object_classes: int = 10
    num_predicates: int = 20
    num_predicate_groups: int = 3
    feature_dim: int = 32
    alpha: float = 1.2
    positive_rate: float = 0.7
    multi_label_rate: float = 0.2
    noise_rate: float = 0.0
    noise_scale: float = 4.0
    jitter: float = 0.1
    signal_strength: float = 1.0
    union_noise: float = 0.1
    box_motion: float = 0.02
    emit_union_features: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("num_videos", "frames_per_video", "min_objects", "max_objects",
                     "num_object_classes", "num_predicates", "num_predicate_groups", "feature_dim"):
            if getattr(self, name) < 1:
                raise ContractError(f"generator.{name} must be >= 1, got {getattr(self, name)}")
        if self.min_objects > self.max_objects:
            raise ContractError(f"generator.min_objects ({self.min_objects}) exceeds "
                                f"max_objects ({self.max_objects})")
        for name in ("test_fraction", "presence_rate", "positive_rate", "multi_label_rate",
                     "noise_rate"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ContractError(f"generator.{name} must lie in [0, 1], got {value}")
        if self.alpha < 0:
            raise ContractError(f"generator.alpha must be >= 0, got {self.alpha}")
        if self.num_predicate_groups > self.num_predicates:
            raise ContractError("more predicate groups than predicates")
        if self.feature_dim % 2:
            raise ContractError(f"generator.feature_dim must be even, got {self.feature_dim}")
        if self.noise_scale <= 0 or self.jitter < 0 or self.union_noise < 0 or self.box_motion < 0:
            raise ContractError("noise_scale must be positive; jitter, union_noise and "
                                "box_motion must be >= 0")

    @property
    def num_test_videos(self) -> int:
        return int(round(self.num_videos * self.test_fraction))


@dataclass
class FrameAnnotation:
    """
    Proposals of one frame with candidate pairs and ground-truth relations

    pairs and relations use frame-local proposal indices; union_features has
    one row per pair when precomputed features are available.
    """

    frame_index: int
    proposals: List[ObjectProposal]
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    relations: List[Tuple[int, int, int]] = field(default_factory=list)
    union_features: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.proposals)
        for s, o in self.pairs:
            if not (0 <= s < n and 0 <= o < n):
                raise ContractError(f"pair {(s, o)} out of range in frame {self.frame_index}")
        pair_set = set(self.pairs)
        for s, p, o in self.relations:
            if (s, o) not in pair_set:
                raise ContractError(f"relation {(s, p, o)} has no candidate pair in frame "
                                    f"{self.frame_index}")
        if self.union_features is not None and len(self.union_features) != len(self.pairs):
            raise ContractError(f"frame {self.frame_index}: {len(self.union_features)} union "
                                f"features for {len(self.pairs)} pairs")

    @property
    def labels(self) -> List[int]:
        return [p.label for p in self.proposals]


@dataclass
class VideoSample:
    video_id: str
    frames: List[FrameAnnotation]

    def ground_truth(self) -> GroundTruthGraph:
        return GroundTruthGraph(self.video_id, [
            FrameGroundTruth(frame.labels, list(frame.relations)) for frame in self.frames
        ])


@dataclass
class SceneGraphDataset:
    """One split plus the class inventory shared by both splits"""

    num_object_classes: int
    num_predicates: int
    feature_dim: int
    predicate_groups: List[int]
    videos: List[VideoSample] = field(default_factory=list)

    def __len__(self):
        return len(self.videos)

    def ground_truth(self) -> List[GroundTruthGraph]:
        return [video.ground_truth() for video in self.videos]

    def predicate_counts(self) -> List[int]:
        """Positive annotations per predicate class over every frame"""
        counts = np.zeros(self.num_predicates, dtype=np.int64)
        for video in self.videos:
            for frame in video.frames:
                for _, p, _ in frame.relations:
                    counts[p] += 1
        return counts.tolist()


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

def zipf_probabilities(num_classes: int, alpha: float) -> np.ndarray:
    """Mass proportional to 1 / (k + 1)^alpha over classes 0..num_classes-1"""
    if num_classes < 1 or alpha < 0:
        raise ContractError("zipf needs >= 1 class and alpha >= 0")
    weights = 1.0 / np.power(np.arange(1, num_classes + 1, dtype=np.float64), alpha)
    return weights / weights.sum()


def sample_predicates(rng: np.random.Generator, probs: np.ndarray, size: int) -> np.ndarray:
    return rng.choice(len(probs), size=size, replace=True, p=probs)


def predicate_groups(num_predicates: int, num_groups: int) -> List[int]:
    """Contiguous group id per predicate, in the spirit of attention/spatial/contacting"""
    return [p * num_groups // num_predicates for p in range(num_predicates)]


def histogram_fit(counts: Sequence[int], probs: Sequence[float]) -> float:
    """Chi-square goodness-of-fit p-value of observed counts against class probabilities"""
    counts = np.asarray(counts, dtype=np.float64)
    expected = np.asarray(probs, dtype=np.float64) * counts.sum()
    return float(stats.chisquare(counts, expected).pvalue)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass
class _Prototypes:
    objects: np.ndarray      # (C, D)
    predicates: np.ndarray   # (P, D)


def _make_prototypes(config: GeneratorConfig, rng: np.random.Generator) -> _Prototypes:
    d = config.feature_dim
    return _Prototypes(rng.normal(0.0, 1.0, size=(config.num_object_classes, d)),
                       rng.normal(0.0, 1.0, size=(config.num_predicates, d)))


def _class_scores(label: int, num_classes: int, corrupted: bool,
                  rng: np.random.Generator) -> np.ndarray:
    confidence = 1.0 if corrupted else 4.0
    logits = rng.normal(0.0, 0.5, size=num_classes)
    logits[label] += confidence
    scores = np.exp(logits - logits.max())
    return scores / scores.sum()


def _predicate_set(config: GeneratorConfig, probs: np.ndarray,
                   rng: np.random.Generator) -> List[int]:
    if rng.random() >= config.positive_rate:
        return []
    chosen = [int(sample_predicates(rng, probs, 1)[0])]
    if config.num_predicates > 1 and rng.random() < config.multi_label_rate:
        rest = probs.copy()
        rest[chosen[0]] = 0.0
        chosen.append(int(sample_predicates(rng, rest / rest.sum(), 1)[0]))
    return sorted(chosen)


def _random_box(rng: np.random.Generator) -> np.ndarray:
    cx, cy = rng.uniform(0.2, 0.8, size=2)
    w, h = rng.uniform(0.1, 0.3, size=2)
    return np.array([cx, cy, w, h])


def _step_box(state: np.ndarray, motion: float, rng: np.random.Generator) -> np.ndarray:
    cx, cy, w, h = state
    cx = float(np.clip(cx + rng.normal(0.0, motion), w / 2 + BOX_MARGIN, 1 - w / 2 - BOX_MARGIN))
    cy = float(np.clip(cy + rng.normal(0.0, motion), h / 2 + BOX_MARGIN, 1 - h / 2 - BOX_MARGIN))
    return np.array([cx, cy, w, h])


def _as_box(state: np.ndarray) -> Box:
    cx, cy, w, h = state
    return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _appearance(base: np.ndarray, config: GeneratorConfig, corrupted: bool,
                rng: np.random.Generator) -> np.ndarray:
    if corrupted:
        direction = rng.normal(size=base.shape)
        direction /= np.linalg.norm(direction)
        return (base + config.noise_scale * direction).astype(np.float32)
    jitter = np.clip(rng.normal(0.0, config.jitter, size=base.shape),
                     -3 * config.jitter, 3 * config.jitter)
    return (base + jitter).astype(np.float32)


def generate_video(config: GeneratorConfig, prototypes: _Prototypes, video_index: int,
                   rng: np.random.Generator) -> VideoSample:
    """One video from its own random stream"""
    probs = zipf_probabilities(config.num_predicates, config.alpha)
    num_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    classes = [ACTOR_CLASS]
    if config.num_object_classes > 1:
        classes += rng.integers(1, config.num_object_classes, size=num_objects - 1).tolist()
    else:
        classes += [0] * (num_objects - 1)
    predicates = [[]] + [_predicate_set(config, probs, rng) for _ in range(num_objects - 1)]
    bases = []
    for identity, label in enumerate(classes):
        base = prototypes.objects[label].copy()
        if predicates[identity]:
            signal = prototypes.predicates[predicates[identity]].mean(axis=0)
            base += config.signal_strength * signal
        bases.append(base)
    boxes = [_random_box(rng) for _ in range(num_objects)]

    frames = []
    for t in range(config.frames_per_video):
        if t > 0:
            boxes = [_step_box(b, config.box_motion, rng) for b in boxes]
        present = [0] + [i for i in range(1, num_objects) if rng.random() < config.presence_rate]
        proposals = []
        for identity in present:
            corrupted = bool(rng.random() < config.noise_rate)
            proposals.append(ObjectProposal(
                frame_index=t,
                appearance=_appearance(bases[identity], config, corrupted, rng),
                box=_as_box(boxes[identity]),
                class_scores=_class_scores(classes[identity], config.num_object_classes,
                                           corrupted, rng),
                label=int(classes[identity]),
                track_id=identity,
                corrupted=corrupted,
            ))
        pairs, relations, unions = [], [], []
        for local, identity in enumerate(present):
            if identity == 0:
                continue
            pairs.append((0, local))
            relations.extend((0, p, local) for p in predicates[identity])
            union = rng.normal(0.0, config.union_noise, size=config.feature_dim)
            if predicates[identity]:
                union += config.signal_strength * prototypes.predicates[predicates[identity]].mean(axis=0)
            unions.append(union)
        union_features = None
        if config.emit_union_features:
            union_features = (np.array(unions, dtype=np.float32) if unions
                              else np.zeros((0, config.feature_dim), dtype=np.float32))
        frames.append(FrameAnnotation(t, proposals, pairs, relations, union_features))
    return VideoSample(f"video_{video_index:04d}", frames)


def generate_dataset(config: GeneratorConfig, rng: Optional[np.random.Generator] = None,
                     workers: int = 1,
                     progress_callback: Optional[Callable[[str], None]] = None
                     ) -> Tuple[SceneGraphDataset, SceneGraphDataset]:
    """
    Generate train and test splits

    Each video draws from its own stream spawned from the seed, so serial and
    parallel generation give identical results.

    Args:
        config (GeneratorConfig): generator settings
        rng (np.random.Generator, optional): root stream; config.seed when omitted
        workers (int): thread count for per-video generation

    Returns:
        tuple: (train split, test split)
    """
    entropy = config.seed if rng is None else int(rng.integers(0, 2 ** 63 - 1))
    streams = np.random.SeedSequence(entropy).spawn(config.num_videos + 1)
    prototypes = _make_prototypes(config, np.random.default_rng(streams[0]))

    def build(index: int) -> VideoSample:
        return generate_video(config, prototypes, index, np.random.default_rng(streams[index + 1]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            videos = list(pool.map(build, range(config.num_videos)))
    else:
        videos = [build(v) for v in range(config.num_videos)]

    groups = predicate_groups(config.num_predicates, config.num_predicate_groups)
    n_test = config.num_test_videos
    n_train = config.num_videos - n_test

    def split(items):
        return SceneGraphDataset(config.num_object_classes, config.num_predicates,
                                 config.feature_dim, list(groups), items)

    train, test = split(videos[:n_train]), split(videos[n_train:])
    message = f"Generated {len(train)} training and {len(test)} test videos"
    if progress_callback:
        progress_callback(message)
    else:
        logger.info(message)
    return train, test


def empirical_positive_rate(dataset: SceneGraphDataset) -> float:
    """Fraction of candidate pair occurrences with at least one positive predicate"""
    total = positive = 0
    for video in dataset.videos:
        for frame in video.frames:
            positive_pairs = {(s, o) for s, _, o in frame.relations}
            total += len(frame.pairs)
            positive += sum(1 for pair in frame.pairs if pair in positive_pairs)
    return positive / total if total else float("nan")


def empirical_noise_rate(dataset: SceneGraphDataset) -> float:
    flags = [p.corrupted for video in dataset.videos for frame in video.frames
             for p in frame.proposals]
    return float(np.mean(flags)) if flags else float("nan")
