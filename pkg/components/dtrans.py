#!/usr/bin/env python3
"""
Denoising Transformer Component

Differentiable Top-K neighbor selection by Gumbel-Softmax sampling with
replacement, temporal attention from each object to its selected context,
spatial attention among the objects of a frame, and the relationship head that
turns subject/object pairs into predicate scores.

All attention here is computed for every object (or pair) at once: ragged
groups are handled with an additive block mask, so masked weights are exactly 0.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from components.autodiff import (
    Tensor, concat, gather, layer_norm, matmul, relu, reshape, sigmoid, softmax,
    straight_through, transpose,
)
from components.errors import ContractError, ShapeError

MASK_VALUE = -1e9
UNION_GEOMETRY_DIM = 5


@dataclass
class DTransConfig:
    """
    Model hyperparameters and ablation switches

    feature_dim must equal the appearance dimension of the dataset.
    """

    feature_dim: int = 32
    num_heads: int = 8
    temporal_depth: int = 3
    spatial_depth: int = 3
    relation_depth: int = 1
    top_k: int = 8
    tau: float = 1.0
    ffn_multiplier: int = 2
    link_threshold: float = 0.5
    use_dtrans: bool = True
    use_matching: bool = True
    use_selector: bool = True

    def __post_init__(self):
        if self.feature_dim < 2 or self.feature_dim % 2:
            raise ContractError(f"feature_dim must be even and >= 2, got {self.feature_dim}")
        if self.num_heads < 1 or self.feature_dim % self.num_heads:
            raise ContractError(f"feature_dim {self.feature_dim} is not divisible by "
                                f"num_heads {self.num_heads}")
        if self.temporal_depth < 1 or self.spatial_depth < 1 or self.relation_depth < 1:
            raise ContractError("attention depths must be >= 1")
        if self.top_k < 1:
            raise ContractError(f"top_k must be >= 1, got {self.top_k}")
        if self.tau <= 0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.ffn_multiplier < 1:
            raise ContractError("ffn_multiplier must be >= 1")

    @property
    def embedding_dim(self) -> int:
        return self.feature_dim // 2

    @property
    def relation_dim(self) -> int:
        # [W_s x_i, W_o x_j, x_ij, c_i, c_j]
        return 3 * self.feature_dim + 2 * self.embedding_dim


@dataclass
class SelectedContext:
    """Result of Top-K selection for one target object"""

    F: Tensor
    selection_indices: np.ndarray
    soft_weights: np.ndarray
    fallback: bool = False


@dataclass
class RelationPairFeature:
    """Row-aligned inputs of the relationship head, one row per subject/object pair"""

    subject_feature: Tensor
    object_feature: Tensor
    union_feature: Tensor
    subject_embedding: Tensor
    object_embedding: Tensor

    @property
    def num_pairs(self) -> int:
        return self.subject_feature.shape[0]


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class ModelParams:
    """
    Named learnable tensors

    Args:
        config (DTransConfig): model hyperparameters
        num_object_classes (int): object categories C
        num_predicates (int): predicate categories P
        rng (np.random.Generator): initialization stream
    """

    def __init__(self, config: DTransConfig, num_object_classes: int, num_predicates: int,
                 rng: np.random.Generator):
        if num_object_classes < 1 or num_predicates < 1:
            raise ContractError("need at least one object class and one predicate")
        self.config = config
        self.num_object_classes = num_object_classes
        self.num_predicates = num_predicates
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()

        d = config.feature_dim
        r = config.relation_dim
        self._linear("input", d, d, rng, bias=True)
        for layer in range(config.temporal_depth):
            self._attention_layer(f"temporal.{layer}", d, config.ffn_multiplier, rng)
        for layer in range(config.spatial_depth):
            self._attention_layer(f"spatial.{layer}", d, config.ffn_multiplier, rng)
        self._linear("object_cls", d, num_object_classes, rng, bias=True)
        self._add("embed", rng.normal(0.0, 0.1, size=(num_object_classes, config.embedding_dim)))
        self._linear("rel.ws", d, d, rng)
        self._linear("rel.wo", d, d, rng)
        self._linear("rel.union", 3 * d + UNION_GEOMETRY_DIM, d, rng, bias=True)
        for layer in range(config.relation_depth):
            self._attention_layer(f"rtrans.temporal.{layer}", r, config.ffn_multiplier, rng)
            self._attention_layer(f"rtrans.spatial.{layer}", r, config.ffn_multiplier, rng)
        self._linear("rel_cls", r, num_predicates, rng, bias=True)

    def _add(self, name: str, values: np.ndarray):
        self._tensors[name] = Tensor(values, requires_grad=True, name=name)

    def _linear(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                bias: bool = False):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        self._add(f"{name}.w", rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        if bias:
            self._add(f"{name}.b", np.zeros(fan_out))

    def _attention_layer(self, prefix: str, dim: int, ffn_multiplier: int,
                         rng: np.random.Generator):
        for proj in ("wq", "wk", "wv", "wo"):
            self._linear(f"{prefix}.{proj}", dim, dim, rng)
        self._add(f"{prefix}.ln1.g", np.ones(dim))
        self._add(f"{prefix}.ln1.b", np.zeros(dim))
        self._linear(f"{prefix}.ff1", dim, ffn_multiplier * dim, rng, bias=True)
        self._linear(f"{prefix}.ff2", ffn_multiplier * dim, dim, rng, bias=True)
        self._add(f"{prefix}.ln2.g", np.ones(dim))
        self._add(f"{prefix}.ln2.b", np.zeros(dim))

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def tensors(self) -> Mapping[str, Tensor]:
        return self._tensors

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        missing = set(self._tensors) - set(state)
        extra = set(state) - set(self._tensors)
        if missing or extra:
            raise ContractError(f"parameter mismatch: missing {sorted(missing)}, "
                                f"unexpected {sorted(extra)}")
        for name, values in state.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != self._tensors[name].shape:
                raise ShapeError(f"load {name}", values.shape, self._tensors[name].shape)
            self._tensors[name].data = values.copy()


# ---------------------------------------------------------------------------
# Positional encodings
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4096)
def _encoding_row(offset: int, dim: int) -> Tuple[float, ...]:
    row = np.empty(dim)
    freqs = np.power(10000.0, -np.arange(0, dim, 2) / dim)
    row[0::2] = np.sin(offset * freqs)
    row[1::2] = np.cos(offset * freqs)
    return tuple(row)


def positional_encoding(offsets: Sequence[int], dim: int) -> np.ndarray:
    """
    Sinusoidal encodings for signed integer offsets

    Returns:
        np.ndarray: (len(offsets), dim) matrix; row for offset 0 is [0, 1, 0, 1, ...]

    Raises:
        ContractError: If dim is odd
    """
    if dim < 2 or dim % 2:
        raise ContractError(f"positional encoding dimension must be even, got {dim}")
    offsets = [int(o) for o in offsets]
    if not offsets:
        return np.zeros((0, dim))
    return np.array([_encoding_row(o, dim) for o in offsets])


# ---------------------------------------------------------------------------
# Differentiable Top-K selector
# ---------------------------------------------------------------------------

def gumbel_softmax_sample(logits: Tensor, k: int, tau: float, rng: Optional[np.random.Generator] = None,
                          noise: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray, Tensor]:
    """
    K independent straight-through Gumbel-Softmax draws over one row of logits

    Args:
        logits (Tensor): (1, n) unnormalized scores
        k (int): number of draws (with replacement)
        tau (float): temperature of the soft relaxation
        rng (np.random.Generator): noise source when `noise` is not given
        noise (np.ndarray, optional): (k, n) Gumbel noise to use instead of sampling

    Returns:
        tuple: (selection matrix with one-hot forward values, sampled indices, soft samples)
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if logits.data.ndim != 2 or logits.shape[0] != 1:
        raise ShapeError("gumbel_softmax_sample", logits.shape, (1, "n"))
    n = logits.shape[1]
    if noise is None:
        if rng is None:
            raise ContractError("gumbel sampling needs an rng or explicit noise")
        noise = rng.gumbel(size=(k, n))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (k, n):
        raise ShapeError("gumbel noise", noise.shape, (k, n))

    soft = softmax((logits + noise) * (1.0 / tau), axis=1)
    indices = np.argmax(logits.data + noise, axis=1)
    hard = np.zeros((k, n))
    hard[np.arange(k), indices] = 1.0
    return straight_through(hard, soft), indices, soft


def gumbel_topk_select(x_i: Tensor, Z: Optional[Tensor], E: Optional[np.ndarray], k: int,
                       tau: float, rng: Optional[np.random.Generator] = None,
                       noise: Optional[np.ndarray] = None) -> SelectedContext:
    """
    Select K context rows for one target object

    Keys and values are Z + E; the query is x_i. Each of the K draws picks one
    value row in the forward pass while gradients follow the soft sample.
    An empty neighborhood yields K copies of x_i.

    Args:
        x_i (Tensor): (1, D) query
        Z (Tensor, optional): (n, D) neighborhood features, None when empty
        E (np.ndarray, optional): (n, D) positional encodings of the neighbors
        k (int): number of selections
        tau (float): Gumbel-Softmax temperature
        rng (np.random.Generator): noise source
        noise (np.ndarray, optional): explicit (k, n) Gumbel noise

    Returns:
        SelectedContext: F flattened to length K*D plus the sampled indices
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    dim = x_i.shape[-1]
    if Z is None or Z.shape[0] == 0:
        rows = gather(x_i, [0] * k)
        return SelectedContext(reshape(rows, (k * dim,)), np.zeros(k, dtype=np.int64),
                               np.ones(1), fallback=True)
    if Z.shape[1] != dim or (E is not None and np.shape(E) != Z.shape):
        raise ShapeError("gumbel_topk_select", x_i.shape, Z.shape, np.shape(E))

    values = Z + E if E is not None else Z
    logits = matmul(x_i, transpose(values)) * (1.0 / math.sqrt(dim))
    selection, indices, _ = gumbel_softmax_sample(logits, k, tau, rng, noise)
    rows = matmul(selection, values)
    weights = softmax(logits.detach(), axis=1).data[0]
    return SelectedContext(reshape(rows, (k * dim,)), indices, weights)


# ---------------------------------------------------------------------------
# Attention stacks
# ---------------------------------------------------------------------------

def _columns(t: Tensor, start: int, stop: int) -> Tensor:
    return transpose(gather(transpose(t), range(start, stop)))


def group_mask(query_groups: Sequence, key_groups: Sequence) -> Optional[np.ndarray]:
    """Additive mask allowing attention only between equal group keys"""
    q = np.asarray(query_groups)
    kk = np.asarray(key_groups)
    allowed = q[:, None] == kk[None, :]
    if allowed.all():
        return None
    return np.where(allowed, 0.0, MASK_VALUE)


def multi_head_attention(query_in: Tensor, kv_in: Tensor, params: Mapping[str, Tensor],
                         prefix: str, num_heads: int, mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product attention with bias-free projections"""
    dim = query_in.shape[1]
    if kv_in.shape[1] != dim or dim % num_heads:
        raise ShapeError("multi_head_attention", query_in.shape, kv_in.shape)
    head_dim = dim // num_heads
    q = matmul(query_in, params[f"{prefix}.wq.w"])
    k = matmul(kv_in, params[f"{prefix}.wk.w"])
    v = matmul(kv_in, params[f"{prefix}.wv.w"])
    scale = 1.0 / math.sqrt(head_dim)

    heads = []
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        scores = matmul(_columns(q, lo, hi), transpose(_columns(k, lo, hi))) * scale
        if mask is not None:
            scores = scores + mask
        heads.append(matmul(softmax(scores, axis=1), _columns(v, lo, hi)))
    joined = heads[0] if num_heads == 1 else concat(heads, axis=1)
    return matmul(joined, params[f"{prefix}.wo.w"])


def attention_layer(residual: Tensor, query_in: Tensor, kv_in: Tensor,
                    params: Mapping[str, Tensor], prefix: str, num_heads: int,
                    mask: Optional[np.ndarray] = None) -> Tensor:
    """Attention + residual + norm, then feed-forward + residual + norm"""
    attended = multi_head_attention(query_in, kv_in, params, prefix, num_heads, mask)
    h = layer_norm(residual + attended) * params[f"{prefix}.ln1.g"] + params[f"{prefix}.ln1.b"]
    ff = relu(matmul(h, params[f"{prefix}.ff1.w"]) + params[f"{prefix}.ff1.b"])
    ff = matmul(ff, params[f"{prefix}.ff2.w"]) + params[f"{prefix}.ff2.b"]
    return layer_norm(h + ff) * params[f"{prefix}.ln2.g"] + params[f"{prefix}.ln2.b"]


def temporal_mha(X: Tensor, E: np.ndarray, contexts: Sequence[Tensor], params: Mapping[str, Tensor],
                 depth: int, num_heads: int, prefix: str = "temporal") -> Tensor:
    """
    Each object attends to its own selected context rows

    Args:
        X (Tensor): (n, D) object features (the residual stream)
        E (np.ndarray): (n, D) query-side positional encodings
        contexts: per-object context tensors, each (k_i, D) or flattened (k_i * D,)
        params: model parameters
        depth (int): number of stacked layers
        num_heads (int): attention heads

    Returns:
        Tensor: (n, D) refined features
    """
    n, dim = X.shape
    if len(contexts) != n or np.shape(E) != (n, dim):
        raise ShapeError("temporal_mha", X.shape, np.shape(E), (len(contexts), dim))
    if depth < 1:
        raise ContractError("temporal depth must be >= 1")
    blocks, owner = [], []
    for i, context in enumerate(contexts):
        if context.data.ndim == 1:
            if context.size % dim:
                raise ShapeError("temporal_mha context", context.shape, (dim,))
            context = reshape(context, (context.size // dim, dim))
        elif context.shape[1] != dim:
            raise ShapeError("temporal_mha context", context.shape, (dim,))
        blocks.append(context)
        owner.extend([i] * context.shape[0])
    F_all = blocks[0] if n == 1 else concat(blocks, axis=0)
    mask = group_mask(range(n), owner)

    out = X
    for layer in range(depth):
        out = attention_layer(out, out + E, F_all, params, f"{prefix}.{layer}", num_heads, mask)
    return out


def spatial_mha(X: Tensor, params: Mapping[str, Tensor], depth: int, num_heads: int,
                groups: Optional[Sequence] = None, prefix: str = "spatial") -> Tensor:
    """
    Self-attention among objects sharing a frame

    Args:
        X (Tensor): (n, D) features
        groups: frame key per row; rows with different keys never attend to each other

    Raises:
        ContractError: If there are no objects
    """
    if X is None or X.shape[0] == 0:
        raise ContractError("spatial attention needs at least one object")
    if depth < 1:
        raise ContractError("spatial depth must be >= 1")
    mask = None if groups is None else group_mask(groups, groups)
    out = X
    for layer in range(depth):
        out = attention_layer(out, out, out, params, f"{prefix}.{layer}", num_heads, mask)
    return out


def relation_head(pair: RelationPairFeature, params: Mapping[str, Tensor], depth: int,
                  num_heads: int, temporal_groups: Optional[Sequence] = None,
                  spatial_groups: Optional[Sequence] = None,
                  frame_positions: Optional[Sequence[int]] = None) -> Tensor:
    """
    Predicate scores for subject/object pairs

    The fused pair feature [W_s x_i, W_o x_j, x_ij, c_i, c_j] is refined by
    `depth` rounds of temporal attention (pairs sharing a tracklet pair) and
    spatial attention (pairs sharing a frame), then classified with a sigmoid.

    Returns:
        Tensor: (num_pairs, P) scores in (0, 1)
    """
    n = pair.num_pairs
    fused = concat([
        matmul(pair.subject_feature, params["rel.ws.w"]),
        matmul(pair.object_feature, params["rel.wo.w"]),
        pair.union_feature,
        pair.subject_embedding,
        pair.object_embedding,
    ], axis=1)
    rel_dim = params["rel_cls.w"].shape[0]
    if fused.shape != (n, rel_dim):
        raise ShapeError("relation_head", fused.shape, (n, rel_dim))

    positions = frame_positions if frame_positions is not None else [0] * n
    encoding = positional_encoding(positions, rel_dim)
    t_mask = None if temporal_groups is None else group_mask(temporal_groups, temporal_groups)
    s_mask = None if spatial_groups is None else group_mask(spatial_groups, spatial_groups)

    out = fused
    for layer in range(depth):
        prefix = f"rtrans.temporal.{layer}"
        encoded = out + encoding
        out = attention_layer(out, encoded, encoded, params, prefix, num_heads, t_mask)
        prefix = f"rtrans.spatial.{layer}"
        out = attention_layer(out, out, out, params, prefix, num_heads, s_mask)
    logits = matmul(out, params["rel_cls.w"]) + params["rel_cls.b"]
    return sigmoid(logits)
