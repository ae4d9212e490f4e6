#!/usr/bin/env python3
"""
Ablation Component - train and evaluate model variants on identical seeds

Axes:
    module    without/with D-Trans crossed with BCE/AR
    topk      one row per K
    loss      bce, focal, mlm, ar without class weights, ar
    matching  no D-Trans, linking only, selector only, linking + selector
"""

import dataclasses
import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from components.config import RunConfig
from components.errors import ContractError
from components.runtime_utils import write_csv, write_json
from components.synthdata import SceneGraphDataset
from components.trainer import Trainer, summarize

logger = logging.getLogger(__name__)

AXES = ("module", "topk", "loss", "matching")

Variant = Tuple[str, Dict[str, dict]]


def _variants(axis: str, config: RunConfig) -> List[Variant]:
    """(name, {section: overrides}) per row"""
    if axis == "module":
        return [
            ("baseline", {"model": {"use_dtrans": False}, "loss": {"kind": "bce"}}),
            ("dtrans", {"model": {"use_dtrans": True}, "loss": {"kind": "bce"}}),
            ("ar", {"model": {"use_dtrans": False}, "loss": {"kind": "ar"}}),
            ("dtrans+ar", {"model": {"use_dtrans": True}, "loss": {"kind": "ar"}}),
        ]
    if axis == "topk":
        return [(f"K={k}", {"model": {"top_k": int(k)}}) for k in config.ablation.topk_values]
    if axis == "loss":
        return [
            ("bce", {"loss": {"kind": "bce"}}),
            ("focal", {"loss": {"kind": "focal"}}),
            ("mlm", {"loss": {"kind": "mlm"}}),
            ("ar (no class weight)", {"loss": {"kind": "ar", "use_class_weight": False}}),
            ("ar", {"loss": {"kind": "ar", "use_class_weight": True}}),
        ]
    if axis == "matching":
        return [
            ("no dtrans", {"model": {"use_dtrans": False}}),
            ("linking only", {"model": {"use_dtrans": True, "use_matching": True,
                                        "use_selector": False}}),
            ("selector only", {"model": {"use_dtrans": True, "use_matching": False,
                                         "use_selector": True}}),
            ("linking + selector", {"model": {"use_dtrans": True, "use_matching": True,
                                              "use_selector": True}}),
        ]
    raise ContractError(f"unknown ablation axis '{axis}' (expected one of {AXES})")


def variant_config(config: RunConfig, overrides: Dict[str, dict], seed: int) -> RunConfig:
    sections = {name: dataclasses.replace(getattr(config, name), **values)
                for name, values in overrides.items()}
    if config.ablation.epochs is not None:
        sections["optimizer"] = dataclasses.replace(config.optimizer, epochs=config.ablation.epochs)
    return config.replace(seed=seed, **sections)


def run_ablation(config: RunConfig, axis: str, train: SceneGraphDataset, test: SceneGraphDataset,
                 output_dir: Optional[Path] = None,
                 progress_callback: Optional[Callable[[str], None]] = None) -> Dict:
    """
    Train and evaluate every variant of an axis for every configured seed

    Returns:
        dict: {"axis", "task", "seeds", "rows": [{"variant", "metrics" (seed means),
               "per_seed", "runtime_s"}]}

    Raises:
        ContractError: On an unknown axis
    """
    variants = _variants(axis, config)
    rows = []
    for name, overrides in variants:
        per_seed, runtimes = [], []
        for seed in config.ablation.seeds:
            _log(f"[{axis}] {name}: seed {seed}", progress_callback)
            run = variant_config(config, overrides, seed)
            start = time.perf_counter()
            trainer = Trainer(run, train, test)
            trainer.fit()
            per_seed.append(summarize(trainer.evaluate(test)))
            runtimes.append(time.perf_counter() - start)
        keys = per_seed[0].keys()
        means = {k: float(np.nanmean([m[k] for m in per_seed])) for k in keys}
        rows.append({"variant": name, "metrics": means, "per_seed": per_seed,
                     "runtime_s": runtimes})
        _log(f"[{axis}] {name}: " + ", ".join(f"{k}={v:.2f}" for k, v in means.items()),
             progress_callback)

    result = {"axis": axis, "task": config.task, "seeds": list(config.ablation.seeds), "rows": rows}
    if output_dir is not None:
        write_ablation(Path(output_dir), result)
    return result


def write_ablation(output_dir: Path, result: Dict):
    """ablation_<axis>.json with every seed, ablation_<axis>.csv with seed means"""
    axis = result["axis"]
    write_json(output_dir / f"ablation_{axis}.json", result)
    columns = list(result["rows"][0]["metrics"].keys()) if result["rows"] else []
    write_csv(output_dir / f"ablation_{axis}.csv", ["variant", *columns, "mean_runtime_s"],
              [[row["variant"], *[row["metrics"][c] for c in columns],
                float(np.mean(row["runtime_s"]))] for row in result["rows"]])


def _log(message: str, callback=None):
    if callback:
        callback(message)
    else:
        logger.info(message)
