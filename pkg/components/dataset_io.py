#!/usr/bin/env python3
"""
Dataset I/O Component - YAML manifest plus a TDSG tensor blob

The manifest holds everything small and inspectable (objects, boxes, class
scores, pairs, relations). Dense tensors live in a sidecar blob as a sequence
of self-describing records, referenced from the manifest by byte offset:

    b"TDSG" | uint16 version | uint8 dtype tag | uint8 rank | uint32 dims[rank] | data

All integers and data are little-endian. Dataset features use float32; model
checkpoints and prediction dumps use float64 so they round-trip exactly.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from components.errors import ContractError, ParseError, VersionError
from components.evaluation import FramePrediction, SceneGraphPrediction
from components.matching import Box, ObjectProposal
from components.synthdata import FrameAnnotation, SceneGraphDataset, VideoSample

logger = logging.getLogger(__name__)

MAGIC = b"TDSG"
FORMAT_VERSION = 1
DATASET_FORMAT = "tdsg-dataset"
PREDICTION_FORMAT = "tdsg-predictions"

DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_OF = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_HEADER = struct.Struct("<4sHBB")


# ---------------------------------------------------------------------------
# Tensor blob
# ---------------------------------------------------------------------------

class TensorBlobWriter:
    """Accumulates tensor records in memory; offsets are known as soon as a record is added"""

    def __init__(self):
        self._chunks: List[bytes] = []
        self._size = 0

    def add(self, array: np.ndarray, dtype=np.float32) -> int:
        dtype = np.dtype(dtype).newbyteorder("<")
        if dtype not in _TAG_OF:
            raise ContractError(f"unsupported tensor dtype {dtype}")
        array = np.ascontiguousarray(np.asarray(array), dtype=dtype)
        header = _HEADER.pack(MAGIC, FORMAT_VERSION, _TAG_OF[dtype], array.ndim)
        dims = struct.pack(f"<{array.ndim}I", *array.shape)
        record = header + dims + array.tobytes()
        offset = self._size
        self._chunks.append(record)
        self._size += len(record)
        return offset

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)

    def write(self, path: Path):
        Path(path).write_bytes(self.getvalue())


class TensorBlobReader:
    """Reads records from blob bytes by offset"""

    def __init__(self, data: bytes, name: str = "blob"):
        self.data = data
        self.name = name

    @classmethod
    def open(cls, path: Path) -> "TensorBlobReader":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Tensor blob not found: {path}")
        return cls(path.read_bytes(), path.name)

    def read(self, offset: int, field: str = "tensor") -> np.ndarray:
        """
        Decode the record starting at a byte offset

        Raises:
            ParseError: On a bad magic, unknown dtype or truncated record
            VersionError: On a record written by another format version
        """
        if not isinstance(offset, int) or offset < 0 or offset + _HEADER.size > len(self.data):
            raise ParseError(f"truncated tensor header in {self.name}", offset, field)
        magic, version, tag, rank = _HEADER.unpack_from(self.data, offset)
        if magic != MAGIC:
            raise ParseError(f"bad magic {magic!r} in {self.name}", offset, field)
        if version != FORMAT_VERSION:
            raise VersionError(version, FORMAT_VERSION)
        if tag not in DTYPE_TAGS:
            raise ParseError(f"unknown dtype tag {tag}", offset + 6, field)
        pos = offset + _HEADER.size
        if pos + 4 * rank > len(self.data):
            raise ParseError(f"truncated tensor dimensions in {self.name}", pos, field)
        dims = struct.unpack_from(f"<{rank}I", self.data, pos)
        pos += 4 * rank
        dtype = DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(self.data):
            raise ParseError(f"truncated tensor data in {self.name} (need {nbytes} bytes)",
                             pos, field)
        return np.frombuffer(self.data, dtype=dtype, count=nbytes // dtype.itemsize,
                             offset=pos).reshape(dims).copy()


# ---------------------------------------------------------------------------
# Manifest helpers
# ---------------------------------------------------------------------------

def load_manifest(path: Path, expected_format: str) -> Dict:
    """Parse a YAML manifest and check its format tag and version"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    text = path.read_bytes()
    try:
        manifest = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ParseError(f"invalid YAML in {path.name}: {getattr(e, 'problem', e)}",
                         mark.index if mark is not None else None) from e
    if not isinstance(manifest, dict):
        raise ParseError(f"{path.name} is not a mapping", 0)
    if manifest.get("format") != expected_format:
        raise ParseError(f"expected format '{expected_format}', found '{manifest.get('format')}'",
                         field="format")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(manifest.get("format_version"), FORMAT_VERSION)
    return manifest


def _require(node: Dict, key: str, where: str):
    if not isinstance(node, dict) or key not in node:
        raise ParseError("missing required field", field=f"{where}.{key}" if where else key)
    return node[key]


def _blob_path(manifest_path: Path, manifest: Dict) -> Path:
    name = _require(manifest, "blob", "")
    return Path(manifest_path).parent / name


def _dump_yaml(path: Path, manifest: Dict):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def write_dataset(path, dataset: SceneGraphDataset) -> Path:
    """
    Write a dataset split as <path> (manifest) plus <path stem>.tdsg (blob)

    Returns:
        Path: the manifest path
    """
    path = Path(path)
    blob = TensorBlobWriter()
    videos = []
    for video in dataset.videos:
        frames = []
        for frame in video.frames:
            appearance = np.stack([p.appearance for p in frame.proposals]) if frame.proposals \
                else np.zeros((0, dataset.feature_dim))
            frames.append({
                "index": int(frame.frame_index),
                "appearance": blob.add(appearance),
                "union": None if frame.union_features is None else blob.add(frame.union_features),
                "objects": [{
                    "box": [float(v) for v in p.box.as_list()],
                    "class_scores": [float(v) for v in p.class_scores],
                    "label": None if p.label is None else int(p.label),
                    "track_id": None if p.track_id is None else int(p.track_id),
                    "corrupted": bool(p.corrupted),
                } for p in frame.proposals],
                "pairs": [[int(s), int(o)] for s, o in frame.pairs],
                "relations": [[int(s), int(p), int(o)] for s, p, o in frame.relations],
            })
        videos.append({"id": video.video_id, "frames": frames})

    manifest = {
        "format": DATASET_FORMAT,
        "format_version": FORMAT_VERSION,
        "blob": path.with_suffix(".tdsg").name,
        "num_object_classes": int(dataset.num_object_classes),
        "num_predicates": int(dataset.num_predicates),
        "feature_dim": int(dataset.feature_dim),
        "predicate_groups": [int(g) for g in dataset.predicate_groups],
        "videos": videos,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob.write(path.with_suffix(".tdsg"))
    _dump_yaml(path, manifest)
    logger.info("Wrote %d videos to %s", len(dataset.videos), path)
    return path


def _read_frame(node: Dict, where: str, blob: TensorBlobReader, feature_dim: int) -> FrameAnnotation:
    objects = _require(node, "objects", where)
    appearance = blob.read(_require(node, "appearance", where), f"{where}.appearance")
    if appearance.shape != (len(objects), feature_dim):
        raise ParseError(f"appearance tensor shape {appearance.shape} does not match "
                         f"{len(objects)} objects of dim {feature_dim}", field=f"{where}.appearance")
    union_offset = node.get("union")
    union = None if union_offset is None else blob.read(union_offset, f"{where}.union")
    frame_index = int(_require(node, "index", where))
    try:
        proposals = []
        for i, obj in enumerate(objects):
            box = _require(obj, "box", f"{where}.objects[{i}]")
            proposals.append(ObjectProposal(
                frame_index=frame_index,
                appearance=appearance[i],
                box=Box(*[float(v) for v in box]),
                class_scores=np.array(_require(obj, "class_scores", f"{where}.objects[{i}]"),
                                      dtype=np.float64),
                label=obj.get("label"),
                track_id=obj.get("track_id"),
                corrupted=bool(obj.get("corrupted", False)),
            ))
        pairs = [(int(s), int(o)) for s, o in node.get("pairs", [])]
        relations = [(int(s), int(p), int(o)) for s, p, o in node.get("relations", [])]
        return FrameAnnotation(frame_index, proposals, pairs, relations, union)
    except (ContractError, TypeError, ValueError) as e:
        raise ParseError(str(e), field=where) from e


def read_dataset(path) -> SceneGraphDataset:
    """
    Read a dataset split written by write_dataset (or authored by hand)

    Raises:
        FileNotFoundError: If the manifest or blob is missing
        ParseError: On malformed content, with the field and byte offset when known
        VersionError: On an unsupported format version
    """
    path = Path(path)
    manifest = load_manifest(path, DATASET_FORMAT)
    blob = TensorBlobReader.open(_blob_path(path, manifest))
    feature_dim = int(_require(manifest, "feature_dim", ""))
    videos = []
    for v, node in enumerate(_require(manifest, "videos", "")):
        where = f"videos[{v}]"
        frames = [_read_frame(frame, f"{where}.frames[{f}]", blob, feature_dim)
                  for f, frame in enumerate(_require(node, "frames", where))]
        videos.append(VideoSample(str(_require(node, "id", where)), frames))
    num_predicates = int(_require(manifest, "num_predicates", ""))
    groups = manifest.get("predicate_groups") or [0] * num_predicates
    if len(groups) != num_predicates:
        raise ParseError(f"{len(groups)} predicate groups for {num_predicates} predicates",
                         field="predicate_groups")
    return SceneGraphDataset(int(_require(manifest, "num_object_classes", "")), num_predicates,
                             feature_dim, [int(g) for g in groups], videos)


def _arrays_equal(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.asarray(a).shape == np.asarray(b).shape and np.array_equal(a, b)


def proposals_equal(a: ObjectProposal, b: ObjectProposal) -> bool:
    return (a.frame_index == b.frame_index and a.box == b.box and a.label == b.label
            and a.track_id == b.track_id and a.corrupted == b.corrupted
            and _arrays_equal(a.appearance, b.appearance)
            and _arrays_equal(a.class_scores, b.class_scores))


def datasets_equal(a: SceneGraphDataset, b: SceneGraphDataset) -> bool:
    """Exact structural and numeric equality"""
    if (a.num_object_classes, a.num_predicates, a.feature_dim, list(a.predicate_groups)) != \
            (b.num_object_classes, b.num_predicates, b.feature_dim, list(b.predicate_groups)):
        return False
    if len(a.videos) != len(b.videos):
        return False
    for va, vb in zip(a.videos, b.videos):
        if va.video_id != vb.video_id or len(va.frames) != len(vb.frames):
            return False
        for fa, fb in zip(va.frames, vb.frames):
            if (fa.frame_index != fb.frame_index or list(fa.pairs) != list(fb.pairs)
                    or list(fa.relations) != list(fb.relations)
                    or not _arrays_equal(fa.union_features, fb.union_features)
                    or len(fa.proposals) != len(fb.proposals)):
                return False
            if not all(proposals_equal(pa, pb) for pa, pb in zip(fa.proposals, fb.proposals)):
                return False
    return True


# ---------------------------------------------------------------------------
# Prediction dumps
# ---------------------------------------------------------------------------

def write_predictions(path, predictions: Sequence[SceneGraphPrediction], task: str,
                      num_predicates: int) -> Path:
    """Write model outputs as predictions.yaml + predictions.tdsg (float64 scores)"""
    path = Path(path)
    blob = TensorBlobWriter()
    videos = []
    for video in predictions:
        frames = []
        for frame in video.frames:
            scores = frame.predicate_scores if frame.predicate_scores.size \
                else np.zeros((0, num_predicates))
            frames.append({
                "index": int(frame.frame_index),
                "labels": [int(v) for v in frame.object_labels],
                "object_scores": [float(v) for v in frame.object_scores],
                "pairs": [[int(s), int(o)] for s, o in frame.pairs],
                "predicate_scores": blob.add(scores, np.float64),
            })
        videos.append({"id": video.video_id, "frames": frames})
    manifest = {
        "format": PREDICTION_FORMAT,
        "format_version": FORMAT_VERSION,
        "blob": path.with_suffix(".tdsg").name,
        "task": task,
        "num_predicates": int(num_predicates),
        "videos": videos,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob.write(path.with_suffix(".tdsg"))
    _dump_yaml(path, manifest)
    return path


def read_predictions(path) -> Tuple[str, int, List[SceneGraphPrediction]]:
    """
    Read a prediction dump

    Returns:
        tuple: (task, num_predicates, per-video predictions)
    """
    path = Path(path)
    manifest = load_manifest(path, PREDICTION_FORMAT)
    blob = TensorBlobReader.open(_blob_path(path, manifest))
    predictions = []
    for v, node in enumerate(_require(manifest, "videos", "")):
        where = f"videos[{v}]"
        frames = []
        for f, frame in enumerate(_require(node, "frames", where)):
            fwhere = f"{where}.frames[{f}]"
            try:
                frames.append(FramePrediction(
                    int(_require(frame, "index", fwhere)),
                    np.array(_require(frame, "labels", fwhere), dtype=np.int64),
                    np.array(_require(frame, "object_scores", fwhere), dtype=np.float64),
                    [(int(s), int(o)) for s, o in _require(frame, "pairs", fwhere)],
                    blob.read(_require(frame, "predicate_scores", fwhere),
                              f"{fwhere}.predicate_scores"),
                ))
            except (ContractError, TypeError, ValueError) as e:
                raise ParseError(str(e), field=fwhere) from e
        predictions.append(SceneGraphPrediction(str(_require(node, "id", where)), frames))
    return str(_require(manifest, "task", "")), int(_require(manifest, "num_predicates", "")), \
        predictions
