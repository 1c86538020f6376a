"""Per-gene, per-study posterior matrices and the TSV files that carry them."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from core.errors import DimensionMismatchError, DuplicateGeneError, InputFormatError, NonNumericCellError
from core.ingest import GENE_ID_COLUMN, parse_numeric_cells


logger = logging.getLogger(__name__)

PROBABILITY_FORMAT = "%.6g"
TSTAT_FORMAT = "%.17g"


@dataclass(frozen=True, eq=False)
class PosteriorMatrix:
    """
    G x D matrix of Pr(a_gd = 1 | data) for one method.

    External score files are carried in the same container with
    is_probability=False; they can be ranked but not thresholded.
    """
    P: np.ndarray
    gene_ids: tuple[str, ...]
    study_ids: tuple[str, ...]
    method: str
    abs_t: Optional[np.ndarray] = None
    is_probability: bool = True

    def __post_init__(self):
        if self.P.ndim != 2 or self.P.shape != (len(self.gene_ids), len(self.study_ids)):
            raise DimensionMismatchError(
                f"posterior shape {self.P.shape} does not match "
                f"{len(self.gene_ids)} genes x {len(self.study_ids)} studies"
            )
        if self.abs_t is not None and self.abs_t.shape != self.P.shape:
            raise DimensionMismatchError("abs_t must have the same shape as P")
        if not np.all(np.isfinite(self.P)):
            raise ValueError("posterior entries must be finite")
        if self.is_probability and (np.any(self.P < 0.0) or np.any(self.P > 1.0)):
            raise ValueError("posterior probabilities must lie in [0, 1]")

    @property
    def n_genes(self) -> int:
        return self.P.shape[0]

    @property
    def n_studies(self) -> int:
        return self.P.shape[1]

    def with_abs_t(self, abs_t: np.ndarray) -> "PosteriorMatrix":
        """Attach |t| values for the ranking tie-break."""
        return PosteriorMatrix(
            P=self.P,
            gene_ids=self.gene_ids,
            study_ids=self.study_ids,
            method=self.method,
            abs_t=np.abs(np.asarray(abs_t, dtype=float)),
            is_probability=self.is_probability,
        )


def _write_gene_matrix(
    values: np.ndarray,
    gene_ids: Sequence[str],
    study_ids: Sequence[str],
    path: str | Path,
    float_format: str,
) -> None:
    frame = pd.DataFrame(values, columns=list(study_ids))
    frame.insert(0, GENE_ID_COLUMN, list(gene_ids))
    frame.to_csv(path, sep="\t", index=False, float_format=float_format, lineterminator="\n")


def read_gene_matrix(path: str | Path) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    """
    Read a `gene_id<TAB>study...` TSV of numbers.

    Args:
        path: TSV file written by this toolkit or by an external method.

    Returns:
        (gene_ids, study_ids, values).
    """
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    if frame.columns.empty or frame.columns[0] != GENE_ID_COLUMN:
        raise InputFormatError(f"{path}: first header column must be {GENE_ID_COLUMN!r}")
    gene_ids = tuple(frame[GENE_ID_COLUMN].tolist())
    if len(set(gene_ids)) != len(gene_ids):
        raise DuplicateGeneError(f"{path}: duplicate gene ids")
    values = parse_numeric_cells(frame.iloc[:, 1:])
    if not np.all(np.isfinite(values)):
        raise NonNumericCellError(f"{path}: every score must be a finite number")
    return gene_ids, tuple(str(c) for c in frame.columns[1:]), values


def write_posterior(posterior: PosteriorMatrix, path: str | Path) -> None:
    """Write probabilities with 6 significant digits."""
    _write_gene_matrix(posterior.P, posterior.gene_ids, posterior.study_ids, path, PROBABILITY_FORMAT)
    logger.info("wrote posterior path=%s method=%s genes=%d", path, posterior.method, posterior.n_genes)


def read_posterior(path: str | Path, method: Optional[str] = None) -> PosteriorMatrix:
    """
    Read a posterior TSV or an external per-study score file.

    Args:
        path: TSV with header `gene_id<TAB>study1...studyD`.
        method: Method tag; defaults to the file stem.

    Returns:
        PosteriorMatrix; values outside [0, 1] mark it as a score file.
    """
    gene_ids, study_ids, values = read_gene_matrix(path)
    is_probability = bool(np.all((values >= 0.0) & (values <= 1.0)))
    if not is_probability:
        logger.info("treating %s as an external score file (values outside [0, 1])", path)
    return PosteriorMatrix(
        P=values,
        gene_ids=gene_ids,
        study_ids=study_ids,
        method=method or _method_from_path(path),
        is_probability=is_probability,
    )


def _method_from_path(path: str | Path) -> str:
    name = Path(path).name
    for suffix in (".posterior.tsv", ".tsv"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def write_tstats(t: np.ndarray, gene_ids: Sequence[str], study_ids: Sequence[str], path: str | Path) -> None:
    """Write moderated t-statistics at full precision so tie-breaks survive the round trip."""
    _write_gene_matrix(t, gene_ids, study_ids, path, TSTAT_FORMAT)


def read_abs_tstats(path: str | Path, posterior: PosteriorMatrix) -> np.ndarray:
    """Load |t| aligned to the posterior's gene and study order."""
    gene_ids, study_ids, values = read_gene_matrix(path)
    if tuple(study_ids) != posterior.study_ids:
        raise DimensionMismatchError(f"{path}: studies {study_ids} do not match {posterior.study_ids}")
    lookup = {gene: i for i, gene in enumerate(gene_ids)}
    missing = [gene for gene in posterior.gene_ids if gene not in lookup]
    if missing:
        raise DimensionMismatchError(f"{path}: {len(missing)} genes missing, e.g. {missing[0]!r}")
    order = np.array([lookup[gene] for gene in posterior.gene_ids], dtype=int)
    return np.abs(values[order])
