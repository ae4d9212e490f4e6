#!/usr/bin/env python3
"""
Training Component - one video per step

forward -> total loss -> backward -> global-norm clipping -> AdamW, with
per-epoch checkpoints, periodic evaluation and a JSONL training log.
"""

import dataclasses
import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from components.autodiff import backward
from components.checkpoint import Checkpoint, save_checkpoint
from components.config import RunConfig
from components.dtrans import ModelParams
from components.errors import ContractError, DynSggError, NumericsError
from components.eval_worker import EvalWorker
from components.losses import class_weights, total_loss
from components.model import forward_video, video_rng
from components.optim import adamw_step, clip_grad_norm
from components.runtime_utils import JsonlLog
from components.synthdata import SceneGraphDataset

logger = logging.getLogger(__name__)

# Extra stream key separating parameter initialization from per-video noise
INIT_STREAM = 7919


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:03d}.yaml"


class Trainer:
    """
    Owns the parameters, optimizer state and epoch counter of one run

    Args:
        config (RunConfig): run configuration
        train (SceneGraphDataset): training split; fixes class inventory and class counts
        test (SceneGraphDataset, optional): split for periodic evaluation
        progress_callback: Optional callable that takes a string message to report progress
    """

    def __init__(self, config: RunConfig, train: SceneGraphDataset,
                 test: Optional[SceneGraphDataset] = None,
                 progress_callback: Optional[Callable[[str], None]] = None):
        if train.feature_dim != config.model.feature_dim:
            raise ContractError(f"model.feature_dim ({config.model.feature_dim}) does not match "
                                f"the dataset feature dimension ({train.feature_dim})")
        if len(train) == 0:
            raise ContractError("training split has no videos")
        counts = train.predicate_counts()
        loss = dataclasses.replace(config.loss, class_counts=counts)
        self.config = config.replace(loss=loss)
        self.train_set = train
        self.test_set = test
        self.progress_callback = progress_callback
        self.params = ModelParams(config.model, train.num_object_classes, train.num_predicates,
                                  np.random.default_rng([config.seed, INIT_STREAM]))
        self.state = config.optimizer.new_state()
        self.weights = class_weights(self.config.loss, train.num_predicates)
        self.epoch = 0

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, train: SceneGraphDataset,
                        test: Optional[SceneGraphDataset] = None,
                        progress_callback: Optional[Callable[[str], None]] = None) -> "Trainer":
        """Resume where a checkpoint left off"""
        trainer = cls(checkpoint.config, train, test, progress_callback)
        trainer.params.load_state_dict(checkpoint.params.state_dict())
        trainer.state = checkpoint.optimizer
        trainer.epoch = checkpoint.epoch
        return trainer

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.params, self.state, self.config, self.epoch)

    def train_video(self, video_index: int) -> float:
        """
        One optimization step on one video

        Raises:
            NumericsError: If the loss is not finite (names the video)
        """
        video = self.train_set.videos[video_index]
        task = self.config.task
        rng = video_rng(self.config.seed, self.epoch, video_index)
        output = forward_video(video, self.params, task, rng)
        loss = total_loss(output.object_logits if task == "sgcls" else None,
                          [p.label for frame in video.frames for p in frame.proposals],
                          output.predicate_scores, output.predicate_targets,
                          self.config.loss, self.weights)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericsError(f"non-finite loss {value} on video '{video.video_id}'")
        grads = backward(loss, self.params.tensors)
        grads = clip_grad_norm(grads, self.state.max_grad_norm)
        adamw_step(self.state, self.params.tensors, grads)
        return value

    def train_epoch(self, log: Optional[JsonlLog] = None) -> float:
        """Train on every video once, in dataset order; returns the mean loss"""
        losses = []
        for index, video in enumerate(self.train_set.videos):
            value = self.train_video(index)
            losses.append(value)
            if log is not None:
                log.record("step", self.epoch + 1, video.video_id, value)
        self.epoch += 1
        return float(np.mean(losses))

    def evaluate(self, dataset: Optional[SceneGraphDataset] = None) -> Optional[Dict]:
        dataset = dataset if dataset is not None else self.test_set
        if dataset is None:
            return None
        errors: List[str] = []
        worker = EvalWorker(self.params, dataset, self.config.task, self.config.seed,
                            self.config.eval.modes, self.config.eval.k_list,
                            self.config.eval.workers, self.config.eval.per_group_constraint,
                            progress=self._log, error=errors.append)
        report = worker.run()
        if report is None:
            raise DynSggError(errors[0] if errors else "evaluation failed")
        return report

    def fit(self, epochs: Optional[int] = None, checkpoint_dir: Optional[Path] = None,
            log: Optional[JsonlLog] = None) -> List[float]:
        """
        Train until `epochs` total epochs have run

        Returns:
            list: mean loss of each epoch run by this call
        """
        target = epochs if epochs is not None else self.config.optimizer.epochs
        eval_every = self.config.eval.eval_every
        history = []
        while self.epoch < target:
            mean_loss = self.train_epoch(log)
            history.append(mean_loss)
            self._log(f"Epoch {self.epoch}/{target}: loss {mean_loss:.6f}")
            if log is not None:
                log.record("epoch", self.epoch, None, mean_loss)
            if checkpoint_dir is not None:
                path = save_checkpoint(Path(checkpoint_dir) / checkpoint_name(self.epoch),
                                       self.checkpoint())
                if log is not None:
                    log.record("checkpoint", self.epoch, None, None, {"path": path.name})
            if eval_every and self.epoch % eval_every == 0 and self.test_set is not None:
                report = self.evaluate()
                if log is not None:
                    log.record("eval", self.epoch, None, None, summarize(report))
        return history

    def _log(self, message: str):
        if self.progress_callback:
            self.progress_callback(message)
        else:
            logger.info(message)


def summarize(report: Dict) -> Dict[str, float]:
    """Flat {"<mode>/R@K": value, "<mode>/mR@K": value} view of an evaluation report"""
    flat = {}
    for mode, per_k in report["metrics"].items():
        for k, values in per_k.items():
            flat[f"{mode}/R@{k}"] = values["recall"]
            flat[f"{mode}/mR@{k}"] = values["mean_recall"]
    if report.get("task") == "sgcls":
        flat["object_accuracy"] = report["object_accuracy"]
    return flat
