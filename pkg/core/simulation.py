"""
Ground-truthed synthetic datasets.

Two generators are provided: draws from the hierarchical model itself, and
spike-ins that add signal to the case samples of a real replicate background.
All randomness comes from numpy SeedSequence substreams keyed by gene, so a
given seed reproduces the same data regardless of how the work is scheduled.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from core.errors import (
    DimensionMismatchError,
    InputFormatError,
    InvalidConfigError,
    PatternDimensionMismatchError,
    TooFewReplicatesError,
)
from core.ingest import GENE_ID_COLUMN, ExpressionDataset, Study, StudyDesign


logger = logging.getLogger(__name__)

CLASS_COLUMN = "class"
SPIKE_MIN_CASES = 3

# substream keys
_GENE_STREAM = 0
_LABEL_STREAM = 1
_SPIKE_STREAM = 2


class StudyShape(BaseModel):
    n_case: int = Field(ge=1)
    n_control: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_df(self) -> "StudyShape":
        if self.n_case + self.n_control < 3:
            raise ValueError("a study needs at least 3 samples")
        return self


class ClassSpec(BaseModel):
    """A block of genes sharing one differential configuration."""
    pattern: list[int]
    count: int = Field(ge=0)
    name: Optional[str] = None

    @field_validator("pattern")
    @classmethod
    def _binary(cls, pattern: list[int]) -> list[int]:
        if not pattern or any(a not in (0, 1) for a in pattern):
            raise ValueError(f"pattern must be a non-empty binary vector, got {pattern}")
        return pattern


class SimulationConfig(BaseModel):
    """Model-based simulation settings."""
    G: int = Field(gt=0)
    studies: list[StudyShape] = Field(min_length=1)
    classes: list[ClassSpec] = Field(min_length=1)
    n0: float = Field(default=4.0, gt=0.0)
    s0sq: float = Field(default=0.02, gt=0.0)
    w0: float = Field(default=4.0, gt=0.0)
    seed: int = Field(default=0, ge=0)
    # set when the pattern layout is inferred rather than documented
    reconstructed: bool = False

    @model_validator(mode="after")
    def _check_classes(self) -> "SimulationConfig":
        n_studies = len(self.studies)
        for spec in self.classes:
            if len(spec.pattern) != n_studies:
                raise ValueError(f"pattern {spec.pattern} has length {len(spec.pattern)}, expected {n_studies}")
        patterns = [tuple(spec.pattern) for spec in self.classes]
        if len(set(patterns)) != len(patterns):
            raise ValueError("class patterns must be distinct")
        total = sum(spec.count for spec in self.classes)
        if total != self.G:
            raise ValueError(f"class counts sum to {total}, expected G={self.G}")
        return self

    @property
    def n_studies(self) -> int:
        return len(self.studies)

    def pattern_matrix(self) -> np.ndarray:
        return np.array([spec.pattern for spec in self.classes], dtype=int)


def _grouped_pattern(n_studies: int, studies: Sequence[int]) -> list[int]:
    """Binary pattern with ones at the given 1-based study numbers."""
    chosen = set(studies)
    return [1 if d + 1 in chosen else 0 for d in range(n_studies)]


def _preset_sim1() -> dict:
    return {
        "G": 10000,
        "studies": [{"n_case": 3, "n_control": 3}] * 4,
        "classes": [
            {"pattern": [0, 0, 0, 0], "count": 9100, "name": "null"},
            {"pattern": [1, 1, 1, 1], "count": 100},
            {"pattern": [1, 1, 0, 0], "count": 400},
            {"pattern": [0, 1, 1, 0], "count": 400},
        ],
    }


def _preset_sim2() -> dict:
    return {
        "G": 10000,
        "studies": [{"n_case": 3, "n_control": 3}] * 4,
        "classes": [
            {"pattern": [0, 0, 0, 0], "count": 9100, "name": "null"},
            {"pattern": [1, 1, 1, 1], "count": 300},
            {"pattern": [1, 1, 0, 0], "count": 300},
            {"pattern": [0, 0, 1, 1], "count": 300},
        ],
    }


def _grouped_preset(n_studies: int, groups: Sequence[Sequence[int]]) -> dict:
    classes = [{"pattern": [0] * n_studies, "count": 9200, "name": "null"}]
    for group in groups:
        classes.append({"pattern": _grouped_pattern(n_studies, group), "count": 200})
    classes.append({"pattern": [1] * n_studies, "count": 200})
    return {
        "G": 10000,
        "studies": [{"n_case": 3, "n_control": 3}] * n_studies,
        "classes": classes,
        "reconstructed": True,
    }


def _preset_sim3() -> dict:
    return _grouped_preset(8, [(1, 2), (3, 4, 5, 6), (7, 8)])


def _preset_sim4() -> dict:
    return _grouped_preset(20, [range(1, 6), range(6, 16), range(16, 21)])


PRESETS = {
    "sim1": _preset_sim1,
    "sim2": _preset_sim2,
    "sim3": _preset_sim3,
    "sim4": _preset_sim4,
}


def preset(name: str, seed: int = 0) -> SimulationConfig:
    """
    Build a named simulation layout.

    Args:
        name: One of sim1, sim2, sim3, sim4.
        seed: RNG seed stored in the config.

    Returns:
        SimulationConfig; sim3 and sim4 are flagged reconstructed.
    """
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    config = SimulationConfig.model_validate({**PRESETS[name](), "seed": seed})
    if config.reconstructed:
        logger.warning("preset %s uses a reconstructed pattern layout", name)
    return config


@dataclass(frozen=True, eq=False)
class SimulationTruth:
    """Ground-truth differential states and class labels."""
    A: np.ndarray
    labels: np.ndarray
    gene_ids: tuple[str, ...]
    study_ids: tuple[str, ...]
    class_patterns: np.ndarray

    def __post_init__(self):
        if self.A.shape != (len(self.gene_ids), len(self.study_ids)):
            raise DimensionMismatchError("A does not match gene_ids x study_ids")
        if self.labels.shape != (len(self.gene_ids),):
            raise DimensionMismatchError("one label per gene is required")
        if not np.array_equal(self.A, self.class_patterns[self.labels]):
            raise ValueError("rows of A must equal the pattern of their class")

    @property
    def n_genes(self) -> int:
        return self.A.shape[0]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_patterns.shape[0])


def _gene_ids(n_genes: int) -> tuple[str, ...]:
    width = max(5, len(str(n_genes)))
    return tuple(f"gene{g + 1:0{width}d}" for g in range(n_genes))


def _simulated_design(studies: Sequence[StudyShape]) -> StudyDesign:
    return StudyDesign(studies=tuple(
        Study(
            study_id=f"study{d + 1}",
            case_columns=tuple(f"s{d + 1}_case{j + 1}" for j in range(shape.n_case)),
            control_columns=tuple(f"s{d + 1}_ctrl{j + 1}" for j in range(shape.n_control)),
        )
        for d, shape in enumerate(studies)
    ))


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _assign_labels(counts: Sequence[int], seed: int) -> np.ndarray:
    labels = np.repeat(np.arange(len(counts)), counts)
    return _substream(seed, _LABEL_STREAM).permutation(labels)


def simulate_model_based(config: SimulationConfig) -> tuple[ExpressionDataset, SimulationTruth]:
    """
    Draw expression values from the hierarchical model.

    For every gene and study: sigma^2 ~ n0 s0^2 / chi^2(n0), all samples ~ N(0, sigma^2),
    and when the gene is differential there, mu ~ N(0, w0 sigma^2) is added to the cases.
    Each (gene, study) pair draws from its own seeded substream.

    Args:
        config: Validated simulation settings.

    Returns:
        (dataset, truth).
    """
    design = _simulated_design(config.studies)
    patterns = config.pattern_matrix()
    labels = _assign_labels([spec.count for spec in config.classes], config.seed)
    A = patterns[labels]

    sample_names = tuple(
        column for study in design.studies for column in study.case_columns + study.control_columns
    )
    values = np.empty((config.G, len(sample_names)))
    for g in range(config.G):
        offset = 0
        for d, shape in enumerate(config.studies):
            rng = _substream(config.seed, _GENE_STREAM, g, d)
            n = shape.n_case + shape.n_control
            sigma2 = config.n0 * config.s0sq / rng.chisquare(config.n0)
            block = rng.normal(0.0, np.sqrt(sigma2), size=n)
            # always drawn so the stream does not depend on the truth
            mu = rng.normal(0.0, np.sqrt(config.w0 * sigma2))
            if A[g, d]:
                block[: shape.n_case] += mu
            values[g, offset: offset + n] = block
            offset += n

    gene_ids = _gene_ids(config.G)
    dataset = ExpressionDataset(gene_ids=gene_ids, sample_names=sample_names, values=values, design=design)
    truth = SimulationTruth(
        A=A,
        labels=labels,
        gene_ids=gene_ids,
        study_ids=tuple(design.study_ids),
        class_patterns=patterns,
    )
    logger.info(
        "simulated model-based genes=%d studies=%d classes=%d seed=%d",
        config.G, config.n_studies, len(config.classes), config.seed,
    )
    return dataset, truth


def spike_in(
    background: ExpressionDataset,
    classes: Sequence[ClassSpec | dict],
    seed: int,
    effect_sd: float = 1.0,
) -> tuple[ExpressionDataset, SimulationTruth]:
    """
    Add N(0, effect_sd^2) signal to the case samples of a replicate background.

    Genes not claimed by any class form an implicit null class. One draw per
    differential (gene, study) is added to every case sample of that study.

    Args:
        background: Real replicate data split into pseudo cases and controls.
        classes: Non-null classes; counts may not exceed G in total.
        seed: RNG seed.
        effect_sd: Standard deviation of the spiked effect.

    Returns:
        (spiked dataset, truth).
    """
    if effect_sd <= 0:
        raise InvalidConfigError(f"effect_sd must be positive, got {effect_sd}")
    specs = [ClassSpec.model_validate(spec) if isinstance(spec, dict) else spec for spec in classes]
    n_studies = background.design.n_studies
    for spec in specs:
        if len(spec.pattern) != n_studies:
            raise PatternDimensionMismatchError(
                f"pattern {spec.pattern} has length {len(spec.pattern)}, background has {n_studies} studies"
            )
    for study in background.design.studies:
        if study.n_case < SPIKE_MIN_CASES:
            raise TooFewReplicatesError(
                f"study {study.study_id}: spike-in needs >= {SPIKE_MIN_CASES} cases, got {study.n_case}"
            )

    spiked_total = sum(spec.count for spec in specs)
    if spiked_total > background.n_genes:
        raise InvalidConfigError(f"classes claim {spiked_total} genes, background has {background.n_genes}")

    null_pattern = [0] * n_studies
    explicit_null = any(spec.pattern == null_pattern for spec in specs)
    if explicit_null:
        if spiked_total != background.n_genes:
            raise InvalidConfigError("with an explicit null class the counts must sum to G")
        all_specs = specs
    else:
        all_specs = [ClassSpec(pattern=null_pattern, count=background.n_genes - spiked_total, name="null")] + specs
    patterns = np.array([spec.pattern for spec in all_specs], dtype=int)
    labels = _assign_labels([spec.count for spec in all_specs], seed)
    A = patterns[labels]

    values = background.values.copy()
    case_indices = [background.column_indices(study.case_columns) for study in background.design.studies]
    for g in np.flatnonzero(A.any(axis=1)):
        for d in np.flatnonzero(A[g]):
            rng = _substream(seed, _SPIKE_STREAM, int(g), int(d))
            values[g, case_indices[d]] += rng.normal(0.0, effect_sd)

    dataset = ExpressionDataset(
        gene_ids=background.gene_ids,
        sample_names=background.sample_names,
        values=values,
        design=background.design,
    )
    truth = SimulationTruth(
        A=A,
        labels=labels,
        gene_ids=background.gene_ids,
        study_ids=tuple(background.design.study_ids),
        class_patterns=patterns,
    )
    logger.info("spiked genes=%d of %d seed=%d effect_sd=%g", int(A.any(axis=1).sum()), background.n_genes, seed, effect_sd)
    return dataset, truth


def non_null_classes(config: SimulationConfig) -> list[ClassSpec]:
    """Classes of a preset other than the all-zero one, for reuse as a spike-in layout."""
    return [spec for spec in config.classes if any(spec.pattern)]


def write_truth(truth: SimulationTruth, path: str | Path) -> None:
    """gene_id, one binary column per study, then the class index."""
    frame = pd.DataFrame(truth.A, columns=list(truth.study_ids))
    frame.insert(0, GENE_ID_COLUMN, list(truth.gene_ids))
    frame[CLASS_COLUMN] = truth.labels
    frame.to_csv(path, sep="\t", index=False, lineterminator="\n")


def read_truth(path: str | Path) -> SimulationTruth:
    """
    Read a truth TSV written by `write_truth`.

    Class patterns are recovered from the rows; a class index with two
    different rows is rejected.
    """
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    columns = list(frame.columns)
    if len(columns) < 3 or columns[0] != GENE_ID_COLUMN or columns[-1] != CLASS_COLUMN:
        raise InputFormatError(f"{path}: expected columns gene_id, studies..., {CLASS_COLUMN}")
    try:
        A = frame[columns[1:-1]].astype(int).to_numpy()
        labels = frame[CLASS_COLUMN].astype(int).to_numpy()
    except ValueError as exc:
        raise InputFormatError(f"{path}: truth cells must be integers") from exc
    if not np.isin(A, (0, 1)).all() or np.any(labels < 0):
        raise InputFormatError(f"{path}: truth must be binary with non-negative class labels")

    n_classes = int(labels.max()) + 1 if labels.size else 0
    patterns = np.zeros((n_classes, A.shape[1]), dtype=int)
    for k in range(n_classes):
        rows = A[labels == k]
        if rows.size and not (rows == rows[0]).all():
            raise InputFormatError(f"{path}: class {k} has inconsistent patterns")
        if rows.size:
            patterns[k] = rows[0]
    return SimulationTruth(
        A=A,
        labels=labels,
        gene_ids=tuple(frame[GENE_ID_COLUMN].tolist()),
        study_ids=tuple(columns[1:-1]),
        class_patterns=patterns,
    )
