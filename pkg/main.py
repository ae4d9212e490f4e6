#!/usr/bin/env python3
"""
DynSGG - Command-Line Entry Point
Desk-scale dynamic scene graph generation: data generation, training,
evaluation, gradient checks and ablation sweeps
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from components.config import RunConfig, load_config
from components.errors import (
    ContractError, DynSggError, GradcheckError, ParseError, VersionError,
)
from components.evaluation import MODES, evaluate_task
from components.runtime_utils import (
    JsonlLog, file_sha256, prepare_output_dir, setup_logging, write_csv, write_json,
)

logger = logging.getLogger("dynsgg")

ERROR_PREFIX = "dynsgg-error"
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors surface as ContractError so they share the single-line error path"""

    def error(self, message):
        raise ContractError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="dynsgg", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)
    sub.required = True

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", help="YAML run configuration")
            p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")

    common(sub.add_parser("gen", help="generate a synthetic dataset"))
    train = sub.add_parser("train", help="train a model")
    common(train)
    train.add_argument("--checkpoint", help="resume from this checkpoint")
    ev = sub.add_parser("eval", help="evaluate a checkpoint or a prediction dump")
    common(ev)
    ev.add_argument("--checkpoint", help="checkpoint to evaluate")
    ev.add_argument("--predictions", help="prediction dump to evaluate instead of a model")
    ev.add_argument("--mode", choices=["with", "no", "both"], help="graph constraint mode")
    ev.add_argument("--k", help="comma-separated K values, e.g. 10,20,50")
    ev.add_argument("--task", choices=["predcls", "sgcls"], help="expected task")
    common(sub.add_parser("gradcheck", help="run the finite-difference suites"), with_config=False)
    ablate = sub.add_parser("ablate", help="train and compare model variants")
    common(ablate)
    ablate.add_argument("--axis", required=True, help="module, topk, loss or matching")
    return parser


def parse_k_list(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ContractError(f"--k expects comma-separated integers, got '{text}'") from None
    if not values or any(k < 1 for k in values):
        raise ContractError(f"--k expects positive integers, got '{text}'")
    return values


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "seed", None), args.out)


def _check(message: str):
    print(f"  ✓ {message}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    from components.dataset_io import write_dataset
    from components.synthdata import generate_dataset, histogram_fit, zipf_probabilities

    config = _config(args)
    train, test = generate_dataset(config.generator, progress_callback=logger.info)
    for split, path in ((train, config.train_path), (test, config.test_path)):
        write_dataset(path, split)
        _check(f"{path} ({len(split)} videos, sha256 {file_sha256(path)[:12]})")
    counts = train.predicate_counts()
    if sum(counts):
        probs = zipf_probabilities(config.generator.num_predicates, config.generator.alpha)
        logger.info("Predicate histogram vs Zipf(%.2f): chi-square p = %.3g",
                    config.generator.alpha, histogram_fit(counts, probs))
    return EXIT_OK


def _load_splits(config: RunConfig, need_test: bool = False):
    from components.dataset_io import read_dataset

    train = read_dataset(config.train_path)
    test = None
    if config.test_path.exists():
        test = read_dataset(config.test_path)
    elif need_test:
        raise FileNotFoundError(f"Test split not found: {config.test_path}")
    return train, test


def cmd_train(args) -> int:
    from components.checkpoint import load_checkpoint
    from components.trainer import Trainer, checkpoint_name, summarize

    config = _config(args)
    train, test = _load_splits(config)
    out = prepare_output_dir(config.output_path, logger.info)
    logger.info("Seed %d, task %s, %d training videos", config.seed, config.task, len(train))
    if args.checkpoint:
        trainer = Trainer.from_checkpoint(load_checkpoint(args.checkpoint), train, test,
                                          logger.info)
        logger.info("Resuming after epoch %d", trainer.epoch)
    else:
        trainer = Trainer(config, train, test, logger.info)
    log = JsonlLog(out / "train_log.jsonl", trainer.config.logging.timestamps,
                   append=bool(args.checkpoint))
    history = trainer.fit(checkpoint_dir=out / "checkpoints", log=log)
    if history:
        _check(f"trained {len(history)} epochs, final loss {history[-1]:.6f}")
    _check(f"checkpoint {out / 'checkpoints' / checkpoint_name(trainer.epoch)}")
    if test is not None:
        report = trainer.evaluate(test)
        log.record("eval", trainer.epoch, None, None, summarize(report))
        write_reports(out, report)
        print_summary(report)
    return EXIT_OK


def cmd_eval(args) -> int:
    from components.checkpoint import load_checkpoint
    from components.dataset_io import read_dataset, read_predictions, write_predictions
    from components.eval_worker import EvalWorker

    k_list = parse_k_list(args.k)
    if args.predictions:
        config = _config(args)
        task, _, predictions = read_predictions(args.predictions)
        if args.task and args.task != task:
            raise ContractError(f"prediction dump is for '{task}', requested '{args.task}'")
        dataset = read_dataset(config.test_path)
        report = evaluate_task(predictions, dataset.ground_truth(), task,
                               _modes(args, config), k_list or config.eval.k_list,
                               dataset.num_predicates, dataset.predicate_groups,
                               config.eval.per_group_constraint)
    else:
        if not args.checkpoint:
            raise ContractError("eval needs --checkpoint or --predictions")
        checkpoint = load_checkpoint(args.checkpoint)
        config = _config(args) if args.config else checkpoint.config
        if args.out and not args.config:
            config = config.replace(output_dir=str(Path(args.out).resolve()))
        requested = args.task or config.task
        if requested != checkpoint.config.task:
            raise ContractError(f"checkpoint was trained for '{checkpoint.config.task}', "
                                f"requested '{requested}'")
        dataset = read_dataset(config.test_path)
        errors = []
        worker = EvalWorker(checkpoint.params, dataset, requested, config.seed,
                            _modes(args, config), k_list or config.eval.k_list,
                            config.eval.workers, config.eval.per_group_constraint,
                            progress=logger.info, error=errors.append)
        report = worker.run()
        if report is None:
            raise DynSggError(errors[0] if errors else "evaluation failed")
    out = prepare_output_dir(config.output_path, logger.info)
    if not args.predictions:
        write_predictions(out / "predictions.yaml", worker.predictions, requested,
                          dataset.num_predicates)
    write_reports(out, report)
    print_summary(report)
    return EXIT_OK


def _modes(args, config: RunConfig) -> List[str]:
    if args.mode is None:
        return list(config.eval.modes)
    return list(MODES) if args.mode == "both" else [args.mode]


def cmd_gradcheck(args, registry=None) -> int:
    from components.gradcheck import DEFAULT_REGISTRY

    if registry is None:
        import components.gradcheck_suites  # noqa: F401  (registers the suites)
        registry = DEFAULT_REGISTRY
    results = registry.run(progress_callback=logger.info)
    for result in results:
        mark = "✓" if result.passed else "✗"
        detail = f" ({result.message})" if result.message else ""
        print(f"  {mark} {result.name}: worst relative error {result.worst_error:.3e} "
              f"over {result.instances} gradients{detail}")
    if args.out:
        out = prepare_output_dir(args.out)
        write_json(out / "gradcheck.json", {"checks": [vars(r) for r in results]})
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradcheckError(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from components.ablation import run_ablation

    config = _config(args)
    train, test = _load_splits(config, need_test=True)
    out = prepare_output_dir(config.output_path, logger.info)
    result = run_ablation(config, args.axis, train, test, out, logger.info)
    for row in result["rows"]:
        metrics = ", ".join(f"{k} {v:.2f}" for k, v in row["metrics"].items())
        print(f"  {row['variant']:<22} {metrics}")
    _check(f"ablation_{args.axis}.csv and ablation_{args.axis}.json in {out}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_reports(out: Path, report: dict):
    """metrics.json/.csv and per_class.json/.csv"""
    write_json(out / "metrics.json", {k: v for k, v in report.items() if k != "per_class"})
    rows = []
    for mode, per_k in report["metrics"].items():
        for k, values in per_k.items():
            rows.append([report["task"], mode, k, values["recall"], values["mean_recall"]])
    write_csv(out / "metrics.csv", ["task", "mode", "k", "recall", "mean_recall"], rows)
    write_json(out / "per_class.json", {"task": report["task"], "per_class": report["per_class"]})
    per_class_rows = []
    for mode, per_k in report["per_class"].items():
        for k, recalls in per_k.items():
            for predicate, value in enumerate(recalls):
                per_class_rows.append([mode, k, predicate, value])
    write_csv(out / "per_class.csv", ["mode", "k", "predicate", "recall"], per_class_rows)


def print_summary(report: dict):
    print(f"\n  {report['task']} ({report['num_frames']} frames)")
    for mode, per_k in report["metrics"].items():
        cells = "  ".join(f"R@{k} {v['recall']:6.2f}  mR@{k} {v['mean_recall']:6.2f}"
                          for k, v in per_k.items())
        print(f"  {mode + ' constraint':<16} {cells}")
    if report["task"] == "sgcls":
        print(f"  object accuracy  {report['object_accuracy']:.2f}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ContractError, ParseError, VersionError, FileNotFoundError)):
        return EXIT_USAGE
    return EXIT_FAILURE


def report_error(error: BaseException):
    message = " ".join(str(error).split())
    print(f"{ERROR_PREFIX}: {type(error).__name__}: {message}", file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    try:
        args = build_parser().parse_args(argv)
        level = "INFO"
        if getattr(args, "config", None) and Path(args.config).exists():
            try:
                level = load_config(args.config).logging.level
            except DynSggError:
                pass
        setup_logging(level)

        print("\n" + "=" * 60)
        print(f"DynSGG - {args.command}")
        print("=" * 60 + "\n")
        return COMMANDS[args.command](args)
    except Exception as error:
        report_error(error)
        return exit_code_for(error)


if __name__ == "__main__":
    sys.exit(main())
