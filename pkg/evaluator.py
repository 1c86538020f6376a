"""Evaluation of posterior matrices against simulation ground truth."""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from core.errors import DimensionMismatchError, InvalidConfigError, UnknownGeneError
from core.posterior import PosteriorMatrix
from core.simulation import SimulationTruth


logger = logging.getLogger(__name__)

OTHER_LABEL = "other"
DEFAULT_CUTOFF = 0.5
TP_CHECKPOINTS = (500, 1000)
# above this many rows the Hungarian solver replaces exhaustive search
EXHAUSTIVE_MATCH_LIMIT = 8
MAX_MATCH_ROWS = 12


def pattern_label(pattern: Sequence[int]) -> str:
    return "".join(str(int(a)) for a in pattern)


def call_differential(posterior: PosteriorMatrix | np.ndarray, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """
    Binary calls, 1 iff P > cutoff.

    Args:
        posterior: PosteriorMatrix or raw G x D probabilities.
        cutoff: Threshold in (0, 1); equality is not a call.

    Returns:
        G x D integer matrix.
    """
    if not 0.0 < cutoff < 1.0:
        raise InvalidConfigError(f"cutoff must lie in (0, 1), got {cutoff}")
    if isinstance(posterior, PosteriorMatrix):
        if not posterior.is_probability:
            raise InvalidConfigError(f"{posterior.method}: scores are not probabilities and cannot be thresholded")
        P = posterior.P
    else:
        P = np.asarray(posterior, dtype=float)
    return (P > cutoff).astype(int)


@dataclass
class ConfusionTable:
    """Called configurations (rows, plus `other`) against true classes (columns)."""
    row_labels: list[str]
    column_labels: list[str]
    counts: np.ndarray

    def column_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def count(self, called: str, true: str) -> int:
        return int(self.counts[self.row_labels.index(called), self.column_labels.index(true)])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.counts, columns=self.column_labels)
        frame.insert(0, "called", self.row_labels)
        return frame


def confusion(
    calls: np.ndarray,
    truth: SimulationTruth,
    report_patterns: Optional[Sequence[Sequence[int]]] = None,
) -> ConfusionTable:
    """
    Cross-tabulate each gene's full called configuration against its true class.

    Args:
        calls: G x D binary calls in the truth's gene order.
        truth: Ground truth.
        report_patterns: Configurations given their own row; defaults to the true class patterns.

    Returns:
        ConfusionTable whose column sums equal the class sizes.
    """
    calls = np.asarray(calls, dtype=int)
    if calls.shape != truth.A.shape:
        raise DimensionMismatchError(f"calls shape {calls.shape} does not match truth {truth.A.shape}")
    if report_patterns is None:
        report_patterns = truth.class_patterns
    report = [tuple(int(a) for a in pattern) for pattern in report_patterns]
    if any(len(pattern) != calls.shape[1] for pattern in report):
        raise DimensionMismatchError("report patterns must have one entry per study")

    row_of = {pattern: i for i, pattern in enumerate(report)}
    other = len(report)
    rows = np.array([row_of.get(tuple(call), other) for call in calls.tolist()], dtype=int)

    n_classes = truth.class_patterns.shape[0]
    counts = np.zeros((len(report) + 1, n_classes), dtype=int)
    np.add.at(counts, (rows, truth.labels), 1)
    return ConfusionTable(
        row_labels=[pattern_label(pattern) for pattern in report] + [OTHER_LABEL],
        column_labels=[pattern_label(pattern) for pattern in truth.class_patterns],
        counts=counts,
    )


def rank_order(scores: np.ndarray, abs_t: Optional[np.ndarray] = None) -> np.ndarray:
    """Gene indices by score desc, then |t| desc, then index asc."""
    scores = np.asarray(scores, dtype=float)
    index = np.arange(scores.shape[0])
    tie_break = np.zeros_like(scores) if abs_t is None else np.abs(np.asarray(abs_t, dtype=float))
    # lexsort sorts by the last key first
    return np.lexsort((index, -tie_break, -scores))


def gene_ranks(scores: np.ndarray, abs_t: Optional[np.ndarray] = None) -> np.ndarray:
    """1-based rank of every gene under `rank_order`."""
    order = rank_order(scores, abs_t)
    ranks = np.empty(order.shape[0], dtype=int)
    ranks[order] = np.arange(1, order.shape[0] + 1)
    return ranks


def tp_curve(
    scores: np.ndarray,
    truth_column: np.ndarray,
    abs_t: Optional[np.ndarray] = None,
) -> list[tuple[int, int]]:
    """
    True positives among the top r genes of one study, for every r.

    Args:
        scores: Posterior column of study d.
        truth_column: Binary ground truth of study d.
        abs_t: Optional |t| column for the tie-break.

    Returns:
        [(r, TP_d(r)) for r = 1..G].
    """
    truth_column = np.asarray(truth_column, dtype=int)
    if truth_column.shape != np.shape(scores):
        raise DimensionMismatchError("scores and truth column must have the same length")
    hits = np.cumsum(truth_column[rank_order(scores, abs_t)])
    return [(r, int(tp)) for r, tp in enumerate(hits, start=1)]


@dataclass
class MotifMatch:
    assignment: list[tuple[int, int]]
    max_abs_error: float


def match_motifs(Q_hat: np.ndarray, Q_true: np.ndarray) -> MotifMatch:
    """
    Pair estimated motif rows with true ones.

    The assignment minimizes the summed per-row max-abs error; it is
    exhaustive for small K and uses the Hungarian solver otherwise.

    Returns:
        MotifMatch with (estimated row, true row) pairs and the worst entry error.
    """
    Q_hat = np.atleast_2d(np.asarray(Q_hat, dtype=float))
    Q_true = np.atleast_2d(np.asarray(Q_true, dtype=float))
    if Q_hat.shape[1] != Q_true.shape[1]:
        raise DimensionMismatchError(f"motif matrices have {Q_hat.shape[1]} and {Q_true.shape[1]} studies")
    if max(Q_hat.shape[0], Q_true.shape[0]) > MAX_MATCH_ROWS:
        raise InvalidConfigError(f"motif matching supports at most {MAX_MATCH_ROWS} rows")

    cost = np.abs(Q_hat[:, None, :] - Q_true[None, :, :]).max(axis=2)
    n_hat, n_true = cost.shape
    if max(n_hat, n_true) <= EXHAUSTIVE_MATCH_LIMIT:
        best_pairs, best_cost = None, np.inf
        if n_hat <= n_true:
            for perm in itertools.permutations(range(n_true), n_hat):
                total = cost[np.arange(n_hat), perm].sum()
                if total < best_cost:
                    best_pairs, best_cost = list(zip(range(n_hat), perm)), total
        else:
            for perm in itertools.permutations(range(n_hat), n_true):
                total = cost[perm, np.arange(n_true)].sum()
                if total < best_cost:
                    best_pairs, best_cost = sorted(zip(perm, range(n_true))), total
        pairs = [(int(i), int(j)) for i, j in best_pairs]
    else:
        rows, cols = linear_sum_assignment(cost)
        pairs = [(int(i), int(j)) for i, j in zip(rows, cols)]

    max_error = max(float(cost[i, j]) for i, j in pairs)
    return MotifMatch(assignment=pairs, max_abs_error=max_error)


def rank_table(posterior: PosteriorMatrix, gene_ids: Sequence[str]) -> pd.DataFrame:
    """
    Per-study ranks of named genes.

    Args:
        posterior: Scores, with |t| attached when available.
        gene_ids: Genes to report.

    Returns:
        DataFrame indexed by gene_id with one rank column per study.
    """
    lookup = {gene: g for g, gene in enumerate(posterior.gene_ids)}
    missing = [gene for gene in gene_ids if gene not in lookup]
    if missing:
        raise UnknownGeneError(f"unknown gene ids: {', '.join(missing)}")

    rows = [lookup[gene] for gene in gene_ids]
    columns = {}
    for d, study_id in enumerate(posterior.study_ids):
        abs_t = posterior.abs_t[:, d] if posterior.abs_t is not None else None
        columns[study_id] = gene_ranks(posterior.P[:, d], abs_t)[rows]
    frame = pd.DataFrame(columns, index=pd.Index(list(gene_ids), name="gene_id"))
    return frame


def align_truth(posterior: PosteriorMatrix, truth: SimulationTruth) -> SimulationTruth:
    """Reorder the truth to the posterior's gene order."""
    if posterior.n_studies != truth.A.shape[1]:
        raise DimensionMismatchError(
            f"{posterior.method}: {posterior.n_studies} studies, truth has {truth.A.shape[1]}"
        )
    if posterior.gene_ids == truth.gene_ids:
        return truth
    lookup = {gene: g for g, gene in enumerate(truth.gene_ids)}
    if len(posterior.gene_ids) != len(lookup) or any(gene not in lookup for gene in posterior.gene_ids):
        raise DimensionMismatchError(f"{posterior.method}: genes do not match the truth file")
    order = np.array([lookup[gene] for gene in posterior.gene_ids], dtype=int)
    return SimulationTruth(
        A=truth.A[order],
        labels=truth.labels[order],
        gene_ids=posterior.gene_ids,
        study_ids=truth.study_ids,
        class_patterns=truth.class_patterns,
    )


@dataclass
class MethodScore:
    """Scores of one method."""
    method: str
    tp_curves: np.ndarray
    confusion: Optional[ConfusionTable] = None
    exact_correct: Optional[int] = None
    null_correct: Optional[int] = None
    tp_at: dict[int, list[int]] = field(default_factory=dict)


@dataclass
class EvaluationReport:
    """Evaluation of several methods on the same truth."""
    study_ids: tuple[str, ...]
    n_genes: int
    cutoff: float
    class_sizes: dict[str, int]
    positives: list[int]
    methods: list[MethodScore] = field(default_factory=list)

    def tp_frame(self) -> pd.DataFrame:
        """r, then one TP column per method and study."""
        data = {"r": np.arange(1, self.n_genes + 1)}
        for score in self.methods:
            for d, study_id in enumerate(self.study_ids):
                data[f"{score.method}.{study_id}"] = score.tp_curves[:, d]
        return pd.DataFrame(data)

    def confusion_frame(self) -> pd.DataFrame:
        """Confusion tables stacked with a leading method column."""
        blocks = []
        for score in self.methods:
            if score.confusion is None:
                continue
            block = score.confusion.to_frame()
            block.insert(0, "method", score.method)
            blocks.append(block)
        if not blocks:
            return pd.DataFrame(columns=["method", "called"])
        return pd.concat(blocks, ignore_index=True)


def evaluate(
    posteriors: Sequence[PosteriorMatrix],
    truth: SimulationTruth,
    report_patterns: Optional[Sequence[Sequence[int]]] = None,
    cutoff: float = DEFAULT_CUTOFF,
    checkpoints: Sequence[int] = TP_CHECKPOINTS,
) -> EvaluationReport:
    """
    Score every method against the same truth.

    Args:
        posteriors: One PosteriorMatrix per method; score files skip the confusion step.
        truth: Ground truth.
        report_patterns: Confusion rows; defaults to the true class patterns.
        cutoff: Call threshold.
        checkpoints: Rank cutoffs reported in the text summary.

    Returns:
        EvaluationReport.
    """
    if not posteriors:
        raise InvalidConfigError("at least one posterior file is required")
    report = EvaluationReport(
        study_ids=tuple(posteriors[0].study_ids),
        n_genes=truth.n_genes,
        cutoff=cutoff,
        class_sizes={
            pattern_label(pattern): int(size)
            for pattern, size in zip(truth.class_patterns, truth.class_sizes())
        },
        positives=[int(n) for n in truth.A.sum(axis=0)],
    )
    for posterior in posteriors:
        aligned = align_truth(posterior, truth)
        curves = np.empty(aligned.A.shape, dtype=int)
        for d in range(posterior.n_studies):
            abs_t = posterior.abs_t[:, d] if posterior.abs_t is not None else None
            curves[:, d] = np.cumsum(aligned.A[rank_order(posterior.P[:, d], abs_t), d])
        score = MethodScore(
            method=posterior.method,
            tp_curves=curves,
            tp_at={r: curves[r - 1].tolist() for r in checkpoints if r <= truth.n_genes},
        )
        if posterior.is_probability:
            calls = call_differential(posterior, cutoff)
            score.confusion = confusion(calls, aligned, report_patterns)
            score.exact_correct = int((calls == aligned.A).all(axis=1).sum())
            true_null = ~aligned.A.any(axis=1)
            score.null_correct = int((true_null & ~calls.any(axis=1)).sum())
        else:
            logger.warning("method=%s is a score file; confusion table skipped", posterior.method)
        logger.info(
            "evaluated method=%s exact_correct=%s null_correct=%s",
            score.method, score.exact_correct, score.null_correct,
        )
        report.methods.append(score)
    return report


def format_report(report: EvaluationReport) -> str:
    """
    Format an evaluation report as a readable string.

    Args:
        report: The EvaluationReport to format.

    Returns:
        Formatted string report.
    """
    lines = [
        "",
        "=" * 60,
        "EVALUATION REPORT",
        "=" * 60,
        "",
        f"Genes: {report.n_genes}",
        f"Studies: {', '.join(report.study_ids)}",
        f"Cutoff: P > {report.cutoff:g}",
        "True classes:",
    ]
    for label, size in report.class_sizes.items():
        lines.append(f"   {label}: {size}")
    lines.append(f"Positives per study: {', '.join(str(n) for n in report.positives)}")

    for score in report.methods:
        lines.extend(["", "-" * 60, f"METHOD: {score.method}"])
        if score.exact_correct is not None:
            lines.append(f"   Exactly-correct configurations: {score.exact_correct}")
            lines.append(f"   True nulls called all-zero: {score.null_correct}")
        else:
            lines.append("   (score file: no calls)")
        for r, tps in score.tp_at.items():
            lines.append(f"   TP({r}): {', '.join(str(tp) for tp in tps)}")

    lines.extend(["", "=" * 60, ""])
    return "\n".join(lines)


def print_report(report: EvaluationReport) -> EvaluationReport:
    """Print a formatted report and hand it back."""
    print(format_report(report))
    return report
