#!/usr/bin/env python3
"""
Checkpoint Component - model parameters, optimizer moments and config snapshot

Stored like a dataset: a YAML manifest and a TDSG blob of float64 tensors, so
a checkpoint loads back bit-identically and its bytes are reproducible.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from components.config import RunConfig, config_from_dict
from components.dataset_io import (
    FORMAT_VERSION, TensorBlobReader, TensorBlobWriter, load_manifest,
)
from components.dtrans import ModelParams
from components.errors import ParseError
from components.optim import OptimizerState

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tdsg-checkpoint"


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: OptimizerState
    config: RunConfig
    epoch: int
    version: int = FORMAT_VERSION


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    """
    Write <path> (manifest) and <path stem>.tdsg (tensors)

    Returns:
        Path: the manifest path
    """
    path = Path(path)
    blob = TensorBlobWriter()
    params = {name: blob.add(t.data, np.float64) for name, t in checkpoint.params.items()}
    state = checkpoint.optimizer
    exp_avg = {name: blob.add(v, np.float64) for name, v in sorted(state.exp_avg.items())}
    exp_avg_sq = {name: blob.add(v, np.float64) for name, v in sorted(state.exp_avg_sq.items())}
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "format_version": FORMAT_VERSION,
        "blob": path.with_suffix(".tdsg").name,
        "epoch": int(checkpoint.epoch),
        "num_object_classes": int(checkpoint.params.num_object_classes),
        "num_predicates": int(checkpoint.params.num_predicates),
        "config": checkpoint.config.to_dict(),
        "base_dir": str(Path(checkpoint.config.base_dir).resolve()),
        "optimizer": {
            "lr": float(state.lr),
            "betas": [float(b) for b in state.betas],
            "eps": float(state.eps),
            "weight_decay": float(state.weight_decay),
            "max_grad_norm": float(state.max_grad_norm),
            "step": int(state.step),
            "exp_avg": exp_avg,
            "exp_avg_sq": exp_avg_sq,
        },
        "params": params,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob.write(path.with_suffix(".tdsg"))
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    logger.info("Saved checkpoint for epoch %d to %s", checkpoint.epoch, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint

    Raises:
        FileNotFoundError: If the manifest or blob is missing
        ParseError: On malformed content
        VersionError: On an unsupported format version
    """
    path = Path(path)
    manifest = load_manifest(path, CHECKPOINT_FORMAT)
    try:
        blob = TensorBlobReader.open(path.parent / manifest["blob"])
        config = config_from_dict(manifest["config"],
                                  base_dir=manifest.get("base_dir", str(path.parent)))
        params = ModelParams(config.model, int(manifest["num_object_classes"]),
                             int(manifest["num_predicates"]), np.random.default_rng(0))
        params.load_state_dict({name: blob.read(offset, f"params.{name}")
                                for name, offset in manifest["params"].items()})
        opt = manifest["optimizer"]
        state = OptimizerState(
            lr=opt["lr"], betas=tuple(opt["betas"]), eps=opt["eps"],
            weight_decay=opt["weight_decay"], max_grad_norm=opt["max_grad_norm"], step=opt["step"],
            exp_avg={n: blob.read(o, f"optimizer.exp_avg.{n}") for n, o in opt["exp_avg"].items()},
            exp_avg_sq={n: blob.read(o, f"optimizer.exp_avg_sq.{n}")
                        for n, o in opt["exp_avg_sq"].items()},
        )
        epoch = int(manifest["epoch"])
    except (KeyError, TypeError) as e:
        raise ParseError(f"malformed checkpoint {path.name}: {e}", field=str(e)) from e
    return Checkpoint(params, state, config, epoch)
