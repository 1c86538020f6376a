"""Shared fixtures: small simulated datasets and synthetic t-statistic matrices."""

import math

import numpy as np
import pytest

from core.ingest import write_design, write_expression
from core.limma import TStatMatrix
from core.simulation import SimulationConfig, simulate_model_based, write_truth


SQRT7 = math.sqrt(7.0)


def synthetic_t_stats(
    seed: int,
    n_genes: int,
    n_studies: int,
    df: float = 8.0,
    scale: float = SQRT7,
    differential: float = 0.2,
) -> TStatMatrix:
    """Draw t from the two-component model directly (no expression matrix)."""
    rng = np.random.default_rng(seed)
    t = rng.standard_t(df, size=(n_genes, n_studies))
    alt = rng.random((n_genes, n_studies)) < differential
    t = np.where(alt, t * scale, t)
    return TStatMatrix.from_arrays(t, [df] * n_studies, [scale] * n_studies)


@pytest.fixture
def t_stats_factory():
    return synthetic_t_stats


@pytest.fixture(scope="session")
def small_config() -> SimulationConfig:
    return SimulationConfig.model_validate({
        "G": 600,
        "studies": [{"n_case": 3, "n_control": 3}] * 3,
        "classes": [
            {"pattern": [0, 0, 0], "count": 420},
            {"pattern": [1, 1, 1], "count": 60},
            {"pattern": [1, 1, 0], "count": 60},
            {"pattern": [0, 1, 1], "count": 60},
        ],
        "seed": 11,
    })


@pytest.fixture(scope="session")
def small_simulation(small_config):
    return simulate_model_based(small_config)


@pytest.fixture
def small_files(tmp_path, small_simulation):
    """The small simulation written in the CLI's file formats."""
    dataset, truth = small_simulation
    paths = {
        "matrix": tmp_path / "small.matrix.tsv",
        "design": tmp_path / "small.design.json",
        "truth": tmp_path / "small.truth.tsv",
    }
    write_expression(dataset, paths["matrix"])
    write_design(dataset.design, paths["design"])
    write_truth(truth, paths["truth"])
    return paths
