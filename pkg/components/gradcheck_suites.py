#!/usr/bin/env python3
"""
Finite-difference suites for every differentiable piece of the model

Importing this module registers the suites with gradcheck.DEFAULT_REGISTRY.
Each suite draws fresh random instances and returns (analytic, numeric)
gradient pairs; inputs are kept away from the kinks of relu and clip.
"""

from typing import Callable, Dict, List, Tuple

import numpy as np

from components import autodiff as ad
from components.autodiff import Tensor
from components.dtrans import (
    DTransConfig, ModelParams, RelationPairFeature, attention_layer, gumbel_softmax_sample,
    group_mask, relation_head, spatial_mha, temporal_mha,
)
from components.gradcheck import DEFAULT_REGISTRY, CheckRegistry, compare_parameter_gradients
from components.losses import (
    LossConfig, ar_loss, bce_loss, focal_loss, mlm_margin_loss, object_cross_entropy,
)

INSTANCES = 50
SEED = 20240

Pairs = List[Tuple[np.ndarray, np.ndarray]]


def _leaf(values, name: str) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _away_from_zero(rng: np.random.Generator, shape, low: float = 0.2) -> np.ndarray:
    magnitude = rng.uniform(low, 1.5, size=shape)
    return magnitude * rng.choice([-1.0, 1.0], size=shape)


def _readout(out: Tensor, weights: np.ndarray) -> Tensor:
    """Random linear functional so every output entry matters"""
    return ad.tensor_sum(ad.mul(out, weights))


def _small_params(rng: np.random.Generator, num_predicates: int = 2) -> ModelParams:
    config = DTransConfig(feature_dim=4, num_heads=2, temporal_depth=1, spatial_depth=1,
                          relation_depth=1, top_k=2)
    params = ModelParams(config, num_object_classes=3, num_predicates=num_predicates, rng=rng)
    # Non-trivial norm gains and biases
    for name, tensor in params.items():
        if name.endswith((".g", ".b")):
            tensor.data = tensor.data + rng.normal(0.0, 0.3, size=tensor.shape)
    return params


def _subset(params: ModelParams, names) -> Dict[str, Tensor]:
    return {name: params[name] for name in names}


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def _unary_cases(rng: np.random.Generator) -> List[Tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    x = rng.normal(size=(3, 4))
    return [
        ("log", ad.log, rng.uniform(0.5, 2.0, size=(3, 4))),
        ("exp", ad.exp, x),
        ("sigmoid", ad.sigmoid, x),
        ("softmax", lambda t: ad.softmax(t, axis=1), x),
        ("softmax0", lambda t: ad.softmax(t, axis=0), x),
        ("layer_norm", ad.layer_norm, x),
        ("relu", ad.relu, _away_from_zero(rng, (3, 4))),
        ("clip", lambda t: ad.clip(t, -0.5, 0.5), _away_from_zero(rng, (3, 4))),
        ("power", lambda t: ad.power(t, 2.5), rng.uniform(0.5, 2.0, size=(3, 4))),
        ("scalar_mul", lambda t: ad.scalar_mul(t, -1.7), x),
        ("transpose", ad.transpose, x),
        ("reshape", lambda t: ad.reshape(t, (2, 6)), x),
        ("gather", lambda t: ad.gather(t, [2, 0, 2]), x),
        ("sum_axis", lambda t: ad.tensor_sum(t, axis=0), x),
        ("mean_axis", lambda t: ad.tensor_mean(t, axis=1), x),
    ]


def check_unary_ops() -> Pairs:
    rng = np.random.default_rng(SEED)
    pairs = []
    for _ in range(INSTANCES):
        for _, fn, values in _unary_cases(rng):
            x = _leaf(values, "x")
            weights = rng.normal(size=fn(x).shape)
            pairs += compare_parameter_gradients(lambda: _readout(fn(x), weights), {"x": x})
    return pairs


def check_binary_ops() -> Pairs:
    rng = np.random.default_rng(SEED + 1)
    pairs = []
    for _ in range(INSTANCES):
        a = _leaf(rng.normal(size=(3, 4)), "a")
        row = _leaf(rng.normal(size=(4,)), "row")
        b = _leaf(rng.normal(size=(4, 2)), "b")
        c = _leaf(rng.normal(size=(3, 1)), "c")
        w1, w2 = rng.normal(size=(3, 4)), rng.normal(size=(3, 2))
        w3 = rng.normal(size=(3, 9))
        leaves = {"a": a, "row": row, "b": b, "c": c}
        pairs += compare_parameter_gradients(lambda: _readout(ad.add(a, row), w1)
                                             + _readout(ad.sub(c, a), w1)
                                             + _readout(ad.mul(a, row), w1)
                                             + _readout(ad.matmul(a, b), w2)
                                             + _readout(ad.concat([a, ad.matmul(a, b), c], axis=1), w3),
                                             leaves)
    return pairs


# ---------------------------------------------------------------------------
# Attention stacks
# ---------------------------------------------------------------------------

def check_attention_layer() -> Pairs:
    rng = np.random.default_rng(SEED + 2)
    pairs = []
    names = ["spatial.0.wq.w", "spatial.0.wv.w", "spatial.0.ff1.w", "spatial.0.ln1.g",
             "spatial.0.ln2.b"]
    for _ in range(INSTANCES):
        params = _small_params(rng)
        x = _leaf(rng.normal(size=(3, 4)), "x")
        kv = _leaf(rng.normal(size=(5, 4)), "kv")
        mask = group_mask([0, 1, 1], [0, 0, 1, 1, 1])
        weights = rng.normal(size=(3, 4))
        leaves = {"x": x, "kv": kv, **_subset(params, names)}
        pairs += compare_parameter_gradients(
            lambda: _readout(attention_layer(x, x, kv, params, "spatial.0", 2, mask), weights),
            leaves)
    return pairs


def check_temporal_spatial_stacks() -> Pairs:
    rng = np.random.default_rng(SEED + 3)
    pairs = []
    names = ["temporal.0.wk.w", "temporal.0.ff2.w", "spatial.0.wo.w", "spatial.0.ln2.g"]
    for _ in range(INSTANCES):
        params = _small_params(rng)
        x = _leaf(rng.normal(size=(3, 4)), "x")
        contexts = [_leaf(rng.normal(size=(8,)), "f0"), _leaf(rng.normal(size=(1, 4)), "f1"),
                    _leaf(rng.normal(size=(3, 4)), "f2")]
        E = rng.normal(size=(3, 4))
        weights = rng.normal(size=(3, 4))

        def build():
            out = temporal_mha(x, E, contexts, params, 1, 2)
            return _readout(spatial_mha(out, params, 1, 2, groups=[0, 0, 1]), weights)

        leaves = {"x": x, "f0": contexts[0], "f2": contexts[2], **_subset(params, names)}
        pairs += compare_parameter_gradients(build, leaves)
    return pairs


def check_relation_head() -> Pairs:
    rng = np.random.default_rng(SEED + 4)
    pairs = []
    names = ["rel.ws.w", "rtrans.temporal.0.wq.w", "rtrans.spatial.0.ln1.g", "rel_cls.w",
             "rel_cls.b"]
    for _ in range(INSTANCES):
        params = _small_params(rng)
        subject = _leaf(rng.normal(size=(3, 4)), "subject")
        obj = _leaf(rng.normal(size=(3, 4)), "object")
        union = _leaf(rng.normal(size=(3, 4)), "union")
        c_s = _leaf(rng.normal(size=(3, 2)), "c_s")
        c_o = _leaf(rng.normal(size=(3, 2)), "c_o")
        weights = rng.normal(size=(3, 2))

        def build():
            pair = RelationPairFeature(subject, obj, union, c_s, c_o)
            scores = relation_head(pair, params, 1, 2, temporal_groups=[0, 1, 0],
                                   spatial_groups=[0, 0, 1], frame_positions=[0, 0, 1])
            return _readout(scores, weights)

        leaves = {"subject": subject, "object": obj, "union": union, "c_s": c_s,
                  **_subset(params, names)}
        pairs += compare_parameter_gradients(build, leaves)
    return pairs


# ---------------------------------------------------------------------------
# Losses (gradients taken through a sigmoid so scores stay in (0, 1))
# ---------------------------------------------------------------------------

def _loss_case(rng: np.random.Generator, shape=(3, 5)):
    logits = _leaf(rng.normal(0.0, 1.5, size=shape), "logits")
    targets = (rng.random(shape) < 0.3).astype(np.float64)
    return logits, targets


def check_bce_focal() -> Pairs:
    rng = np.random.default_rng(SEED + 5)
    pairs = []
    for _ in range(INSTANCES):
        logits, y = _loss_case(rng)
        gamma = float(rng.uniform(0.0, 3.0))
        pairs += compare_parameter_gradients(lambda: bce_loss(ad.sigmoid(logits), y),
                                             {"logits": logits})
        pairs += compare_parameter_gradients(lambda: focal_loss(ad.sigmoid(logits), y, gamma),
                                             {"logits": logits})
    return pairs


def check_ar_loss() -> Pairs:
    rng = np.random.default_rng(SEED + 6)
    pairs = []
    for _ in range(INSTANCES):
        logits, y = _loss_case(rng)
        gamma_pos = float(rng.uniform(0.0, 2.0))
        config = LossConfig(kind="ar", gamma_pos=gamma_pos,
                            gamma_neg=gamma_pos + float(rng.uniform(0.0, 3.0)),
                            beta=0.999, class_counts=rng.integers(1, 500, size=5).tolist())
        pairs += compare_parameter_gradients(lambda: ar_loss(ad.sigmoid(logits), y, config),
                                             {"logits": logits})
    return pairs


def check_mlm_and_object_ce() -> Pairs:
    rng = np.random.default_rng(SEED + 7)
    pairs = []
    for _ in range(INSTANCES):
        scores = _leaf(rng.uniform(0.0, 1.0, size=(6,)), "scores")
        positives, negatives = [0, 3], [1, 2, 4, 5]
        # Keep every hinge term strictly active or inactive
        margins = scores.data[np.repeat(negatives, 2)] - scores.data[np.tile(positives, 4)]
        margin = 1.0 if np.all(np.abs(margins + 1.0) > 1e-3) else 1.01
        pairs += compare_parameter_gradients(
            lambda: mlm_margin_loss(scores, positives, negatives, margin), {"scores": scores})
        logits = _leaf(rng.normal(size=(4, 3)), "object_logits")
        labels = rng.integers(0, 3, size=4)
        pairs += compare_parameter_gradients(lambda: object_cross_entropy(logits, labels),
                                             {"object_logits": logits})
    return pairs


# ---------------------------------------------------------------------------
# Gumbel-Softmax soft path
# ---------------------------------------------------------------------------

def check_gumbel_soft_path() -> Pairs:
    rng = np.random.default_rng(SEED + 8)
    pairs = []
    for _ in range(INSTANCES):
        x_i = _leaf(rng.normal(size=(1, 4)), "x_i")
        Z = _leaf(rng.normal(size=(5, 4)), "Z")
        E = rng.normal(size=(5, 4))
        tau = float(rng.uniform(0.5, 2.0))
        noise = rng.gumbel(size=(3, 5))
        weights = rng.normal(size=(3, 5))

        def build():
            values = Z + E
            logits = ad.matmul(x_i, ad.transpose(values)) * 0.5
            _, _, soft = gumbel_softmax_sample(logits, 3, tau, noise=noise)
            return _readout(soft, weights)

        pairs += compare_parameter_gradients(build, {"x_i": x_i, "Z": Z})
    return pairs


SUITES = {
    "unary ops": check_unary_ops,
    "binary ops": check_binary_ops,
    "attention layer": check_attention_layer,
    "temporal + spatial attention": check_temporal_spatial_stacks,
    "relation head": check_relation_head,
    "bce + focal loss": check_bce_focal,
    "ar loss": check_ar_loss,
    "mlm + object cross-entropy": check_mlm_and_object_ce,
    "gumbel-softmax soft path": check_gumbel_soft_path,
}


def register_all(registry: CheckRegistry):
    for name, fn in SUITES.items():
        registry.register(name)(fn)


register_all(DEFAULT_REGISTRY)
