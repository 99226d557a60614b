"""
Side-by-side MLE vs SEARNN comparison over a fixed seed set.

The improvement is reported, never asserted: at desk scale the direction of
the effect is what matters.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from .engine import MLE, SEARNN, TrainResult

logger = logging.getLogger(__name__)

RunFn = Callable[[str, int], TrainResult]


@dataclass
class ObjectiveSummary:
    objective: str
    test_bleu: Dict[int, float] = field(default_factory=dict)
    wall_clock: Dict[int, float] = field(default_factory=dict)

    @property
    def mean_test_bleu(self) -> float:
        return float(np.mean(list(self.test_bleu.values()))) if self.test_bleu else 0.0

    @property
    def mean_wall_clock(self) -> float:
        return float(np.mean(list(self.wall_clock.values()))) if self.wall_clock else 0.0

    def to_dict(self) -> Dict:
        return {
            'test_bleu': {str(seed): bleu for seed, bleu in self.test_bleu.items()},
            'mean_test_bleu': self.mean_test_bleu,
            'mean_wall_clock': self.mean_wall_clock,
        }


@dataclass
class ComparisonReport:
    seeds: List[int]
    summaries: Dict[str, ObjectiveSummary]

    @property
    def relative_improvement(self) -> float:
        """(SEARNN - MLE) / MLE on mean test BLEU; 0.0 when MLE scores 0."""
        baseline = self.summaries[MLE].mean_test_bleu
        if baseline == 0.0:
            return 0.0
        return (self.summaries[SEARNN].mean_test_bleu - baseline) / baseline

    @property
    def searnn_not_worse(self) -> bool:
        return self.summaries[SEARNN].mean_test_bleu >= self.summaries[MLE].mean_test_bleu

    def to_dict(self) -> Dict:
        return {
            'seeds': list(self.seeds),
            'objectives': {name: summary.to_dict() for name, summary in self.summaries.items()},
            'relative_improvement': self.relative_improvement,
            'searnn_not_worse': self.searnn_not_worse,
        }


def compare_objectives(run_fn: RunFn, seeds: Sequence[int]) -> ComparisonReport:
    """Run `run_fn(objective, seed)` for both objectives and every seed."""
    if not seeds:
        raise ValueError("compare_objectives needs at least one seed")
    summaries = {objective: ObjectiveSummary(objective) for objective in (MLE, SEARNN)}
    for seed in seeds:
        for objective, summary in summaries.items():
            logger.info(f"Comparison run: objective={objective} seed={seed}")
            result = run_fn(objective, seed)
            summary.test_bleu[seed] = result.test_bleu
            summary.wall_clock[seed] = result.wall_clock

    report = ComparisonReport(seeds=list(seeds), summaries=summaries)
    logger.info(
        f"MLE mean test BLEU {summaries[MLE].mean_test_bleu:.4f}, "
        f"SEARNN {summaries[SEARNN].mean_test_bleu:.4f} "
        f"(relative improvement {report.relative_improvement:+.2%})"
    )
    return report
