"""
Evaluation Worker - runs inference and scoring off the caller's thread
"""

import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence

from components.dtrans import ModelParams
from components.errors import DynSggError
from components.evaluation import SceneGraphPrediction, evaluate_task
from components.model import forward_video, video_rng
from components.synthdata import SceneGraphDataset

logger = logging.getLogger(__name__)


def predict_dataset(params: ModelParams, dataset: SceneGraphDataset, task: str, seed: int,
                    workers: int = 1,
                    progress_callback: Optional[Callable[[str], None]] = None
                    ) -> List[SceneGraphPrediction]:
    """
    Model predictions for every video, in dataset order

    Each video draws its Gumbel noise from (seed, video index), so the result
    does not depend on the number of workers.
    """
    def predict(index: int) -> SceneGraphPrediction:
        video = dataset.videos[index]
        output = forward_video(video, params, task, video_rng(seed, index))
        return output.to_prediction(video)

    indices = range(len(dataset.videos))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = list(pool.map(predict, indices))
    else:
        predictions = [predict(i) for i in indices]
    message = f"Predicted {len(predictions)} videos"
    if progress_callback:
        progress_callback(message)
    else:
        logger.info(message)
    return predictions


class EvalWorker:
    """Run prediction and evaluation, reporting through callbacks"""

    def __init__(self, params: ModelParams, dataset: SceneGraphDataset, task: str, seed: int,
                 modes: Sequence[str], k_list: Sequence[int], workers: int = 1,
                 per_group_constraint: bool = False,
                 progress: Optional[Callable[[str], None]] = None,
                 finished: Optional[Callable[[Dict], None]] = None,
                 error: Optional[Callable[[str], None]] = None):
        self.params = params
        self.dataset = dataset
        self.task = task
        self.seed = seed
        self.modes = list(modes)
        self.k_list = list(k_list)
        self.workers = workers
        self.per_group_constraint = per_group_constraint
        self.progress = progress or (lambda message: logger.info(message))
        self.finished = finished or (lambda report: None)
        self.error = error or (lambda message: logger.error(message))
        self.predictions: List[SceneGraphPrediction] = []
        self.report: Optional[Dict] = None

    def run(self) -> Optional[Dict]:
        """
        Execute prediction and scoring

        Returns:
            dict: the metric report, or None after an unexpected failure

        Raises:
            DynSggError: Contract, shape and numerics errors are reported and re-raised
        """
        try:
            self.progress(f"Evaluating {len(self.dataset)} videos ({self.task})...")
            self.predictions = predict_dataset(self.params, self.dataset, self.task, self.seed,
                                               self.workers, self.progress)
            self.report = evaluate_task(
                self.predictions, self.dataset.ground_truth(), self.task, self.modes,
                self.k_list, self.dataset.num_predicates, self.dataset.predicate_groups,
                self.per_group_constraint,
            )
            self.finished(self.report)
            return self.report
        except DynSggError as e:
            self.error(f"{type(e).__name__}: {str(e)}")
            raise
        except FileNotFoundError as e:
            self.error(f"File not found: {str(e)}")
        except ValueError as e:
            self.error(f"Invalid input: {str(e)}")
        except Exception as e:
            error_details = traceback.format_exc()
            self.error(f"Evaluation failed: {str(e)}\n\nDetails:\n{error_details}")
        return None
