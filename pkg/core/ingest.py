"""Expression matrix and study-design ingestion, plus per-study summaries."""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from core.errors import (
    DuplicateGeneError,
    InputFormatError,
    InvalidDesignError,
    MissingColumnError,
    NonNumericCellError,
    TooFewReplicatesError,
)


logger = logging.getLogger(__name__)

GENE_ID_COLUMN = "gene_id"
EXPRESSION_FORMAT = "%.17g"


@dataclass(frozen=True)
class Study:
    """One two-condition study: which samples are cases and which are controls."""
    study_id: str
    case_columns: tuple[str, ...]
    control_columns: tuple[str, ...]

    @property
    def n_case(self) -> int:
        return len(self.case_columns)

    @property
    def n_control(self) -> int:
        return len(self.control_columns)


@dataclass(frozen=True)
class StudyDesign:
    """Ordered collection of studies; study order defines the study index d."""
    studies: tuple[Study, ...]

    def __post_init__(self):
        ids = [study.study_id for study in self.studies]
        if len(set(ids)) != len(ids):
            raise InvalidDesignError(f"study ids must be unique, got {ids}")
        for study in self.studies:
            overlap = set(study.case_columns) & set(study.control_columns)
            if overlap:
                raise InvalidDesignError(
                    f"study {study.study_id}: columns {sorted(overlap)} claimed by both conditions"
                )
            for role, columns in (("case", study.case_columns), ("control", study.control_columns)):
                if len(set(columns)) != len(columns):
                    raise InvalidDesignError(f"study {study.study_id}: duplicate {role} column")
            if study.n_case < 1 or study.n_control < 1 or study.n_case + study.n_control < 3:
                raise TooFewReplicatesError(
                    f"study {study.study_id}: needs >=1 case, >=1 control and >=3 samples "
                    f"(got {study.n_case} case, {study.n_control} control)"
                )

    @property
    def n_studies(self) -> int:
        return len(self.studies)

    @property
    def study_ids(self) -> list[str]:
        return [study.study_id for study in self.studies]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "StudyDesign":
        """
        Build a design from decoded JSON records.

        Args:
            records: Sequence of {"study_id", "case", "control"} mappings.

        Returns:
            The validated StudyDesign.
        """
        if not isinstance(records, (list, tuple)) or not records:
            raise InvalidDesignError("design must be a non-empty JSON array")
        studies = []
        for record in records:
            try:
                studies.append(Study(
                    study_id=str(record["study_id"]),
                    case_columns=tuple(str(c) for c in record["case"]),
                    control_columns=tuple(str(c) for c in record["control"]),
                ))
            except (KeyError, TypeError) as exc:
                raise InvalidDesignError(f"malformed design record {record!r}") from exc
        return cls(studies=tuple(studies))

    def to_records(self) -> list[dict]:
        return [
            {
                "study_id": study.study_id,
                "case": list(study.case_columns),
                "control": list(study.control_columns),
            }
            for study in self.studies
        ]


@dataclass(frozen=True, eq=False)
class ExpressionDataset:
    """G genes by all samples, in file column order, plus the design mapping."""
    gene_ids: tuple[str, ...]
    sample_names: tuple[str, ...]
    values: np.ndarray
    design: StudyDesign

    def __post_init__(self):
        if len(self.gene_ids) < 1:
            raise InputFormatError("expression matrix has no genes")
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise DuplicateGeneError(_first_duplicate(self.gene_ids))
        if self.values.shape != (len(self.gene_ids), len(self.sample_names)):
            raise InputFormatError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.gene_ids)} genes x {len(self.sample_names)} samples"
            )
        if not np.all(np.isfinite(self.values)):
            raise NonNumericCellError("expression values must all be finite")
        known = set(self.sample_names)
        for study in self.design.studies:
            for column in study.case_columns + study.control_columns:
                if column not in known:
                    raise MissingColumnError(
                        f"study {study.study_id} references unknown sample {column!r}"
                    )

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    def column_indices(self, names: Sequence[str]) -> np.ndarray:
        lookup = {name: i for i, name in enumerate(self.sample_names)}
        return np.array([lookup[name] for name in names], dtype=int)

    def study_values(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (case block, control block) for study d, each G x n_dl."""
        study = self.design.studies[d]
        cases = self.values[:, self.column_indices(study.case_columns)]
        controls = self.values[:, self.column_indices(study.control_columns)]
        return cases, controls


@dataclass(frozen=True, eq=False)
class StudySummary:
    """Per-gene sufficient statistics of one study."""
    study_id: str
    y: np.ndarray
    s2: np.ndarray
    n_case: int
    n_control: int

    @property
    def n(self) -> int:
        return self.n_case + self.n_control

    @property
    def v(self) -> float:
        return 1.0 / self.n_case + 1.0 / self.n_control

    @property
    def df(self) -> int:
        return self.n - 2


def _first_duplicate(items: Sequence[str]) -> str:
    seen = set()
    for item in items:
        if item in seen:
            return f"duplicate gene id {item!r}"
        seen.add(item)
    return "duplicate gene id"


def _parse_cell(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def parse_numeric_cells(raw: pd.DataFrame) -> np.ndarray:
    """Convert string cells with `float`; cells that do not parse become NaN."""
    return raw.apply(lambda column: column.map(_parse_cell)).to_numpy(dtype=float)


def read_design(
design_path: str | Path) -> StudyDesign:
    try:
        with open(design_path, encoding="utf-8") as fh:
            records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidDesignError(f"design file {design_path} is not valid JSON: {exc}") from exc
    return StudyDesign.from_records(records)


def _read_header(matrix_path: str | Path) -> list[str]:
    with open(matrix_path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
    if not header or header[0] != GENE_ID_COLUMN:
        raise InputFormatError(f"first header column must be {GENE_ID_COLUMN!r}")
    samples = header[1:]
    if len(set(samples)) != len(samples):
        dupes = sorted({s for s in samples if samples.count(s) > 1})
        raise InputFormatError(f"duplicate sample names in header: {dupes}")
    return samples


def load_expression(matrix_path: str | Path, design_path: str | Path) -> ExpressionDataset:
    """
    Parse a gene-by-sample TSV and a JSON design into a validated dataset.

    Args:
        matrix_path: UTF-8 TSV, first column `gene_id`, then one column per sample.
        design_path: JSON array of {"study_id", "case", "control"}.

    Returns:
        ExpressionDataset with file column order preserved.

    Raises:
        MissingColumnError, DuplicateGeneError, NonNumericCellError,
        TooFewReplicatesError, InputFormatError.
    """
    design = read_design(design_path)
    samples = _read_header(matrix_path)

    frame = pd.read_csv(
        matrix_path,
        sep="\t",
        dtype=str,
        keep_default_na=False,
        na_filter=False,
        encoding="utf-8",
    )
    if frame.shape[1] != len(samples) + 1:
        raise InputFormatError("rows do not match the header width")
    gene_ids = tuple(frame[GENE_ID_COLUMN].tolist())
    if len(set(gene_ids)) != len(gene_ids):
        raise DuplicateGeneError(_first_duplicate(gene_ids))

    raw = frame.iloc[:, 1:]
    values = parse_numeric_cells(raw)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonNumericCellError(
            f"gene {gene_ids[row]!r}, sample {samples[col]!r}: "
            f"cell {raw.iat[row, col]!r} is not a finite number"
        )

    dataset = ExpressionDataset(
        gene_ids=gene_ids,
        sample_names=tuple(samples),
        values=values,
        design=design,
    )
    logger.info(
        "loaded expression genes=%d samples=%d studies=%d",
        dataset.n_genes, len(samples), design.n_studies,
    )
    return dataset


def summarize_study(dataset: ExpressionDataset, d: int) -> StudySummary:
    """
    Reduce study d to mean difference and pooled variance per gene.

    Args:
        dataset: The validated dataset.
        d: Zero-based study index.

    Returns:
        StudySummary with y = case mean - control mean and the two-pass pooled s2.
    """
    if not 0 <= d < dataset.design.n_studies:
        raise IndexError(f"study index {d} out of range")
    study = dataset.design.studies[d]
    cases, controls = dataset.study_values(d)

    case_mean = cases.mean(axis=1)
    control_mean = controls.mean(axis=1)
    ss = ((cases - case_mean[:, None]) ** 2).sum(axis=1)
    ss += ((controls - control_mean[:, None]) ** 2).sum(axis=1)

    return StudySummary(
        study_id=study.study_id,
        y=case_mean - control_mean,
        s2=ss / (study.n_case + study.n_control - 2),
        n_case=study.n_case,
        n_control=study.n_control,
    )


def write_expression(dataset: ExpressionDataset, matrix_path: str | Path) -> None:
    """Write the matrix back in the same TSV layout `load_expression` reads."""
    frame = pd.DataFrame(dataset.values, columns=list(dataset.sample_names))
    frame.insert(0, GENE_ID_COLUMN, list(dataset.gene_ids))
    frame.to_csv(matrix_path, sep="\t", index=False, float_format=EXPRESSION_FORMAT, lineterminator="\n")


def write_design(design: StudyDesign, design_path: str | Path) -> None:
    with open(design_path, "w", encoding="utf-8") as fh:
        json.dump(design.to_records(), fh, indent=2)
        fh.write("\n")
