"""Fixed-pattern mixtures used by the all-concord and full-motif baselines."""

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from core.errors import PatternLimitExceededError


# 2^12 = 4096 classes
FULL_MOTIF_MAX_STUDIES = 12


@dataclass(frozen=True, eq=False)
class PatternMixture:
    """M fixed differential configurations and their mixing weights."""
    patterns: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.patterns.ndim != 2 or self.weights.shape != (self.patterns.shape[0],):
            raise ValueError(f"patterns {self.patterns.shape} and weights {self.weights.shape} are inconsistent")
        if not np.isin(self.patterns, (0, 1)).all():
            raise ValueError("patterns must be binary")
        if len({tuple(row) for row in self.patterns.tolist()}) != self.patterns.shape[0]:
            raise ValueError("pattern rows must be distinct")
        if np.any(self.weights <= 0.0) or abs(float(self.weights.sum()) - 1.0) > 1e-10:
            raise ValueError("weights must be a strictly positive probability vector")

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def n_studies(self) -> int:
        return self.patterns.shape[1]

    def to_dict(self) -> dict:
        return {"patterns": self.patterns.tolist(), "weights": self.weights.tolist()}


def all_concord_patterns(n_studies: int) -> np.ndarray:
    """Non-differential everywhere or differential everywhere."""
    return np.array([[0] * n_studies, [1] * n_studies], dtype=int)


def full_motif_patterns(n_studies: int) -> np.ndarray:
    """All 2^D configurations, all-zero first."""
    if n_studies > FULL_MOTIF_MAX_STUDIES:
        raise PatternLimitExceededError(
            f"full-motif needs 2^{n_studies} classes; at most {FULL_MOTIF_MAX_STUDIES} studies are supported"
        )
    return np.array(list(itertools.product((0, 1), repeat=n_studies)), dtype=int)


PATTERN_PRESETS: dict[str, Callable[[int], np.ndarray]] = {
    "all-concord": all_concord_patterns,
    "full-motif": full_motif_patterns,
}
