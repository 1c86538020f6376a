"""BIC and the K sweep that picks the number of motifs."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.errors import InvalidConfigError
from core.limma import TStatMatrix
from methods.cormotif.em import fit, observed_log_likelihood
from methods.cormotif.state import FitOptions, FitResult


logger = logging.getLogger(__name__)

DEFAULT_K_RANGE = (1, 10)


def n_parameters(K: int, n_studies: int) -> int:
    """K - 1 free weights plus K x D motif entries."""
    return K - 1 + K * n_studies


def bic(fit_result: FitResult, t_stats: TStatMatrix) -> float:
    """-2 log Pr(T | pi, Q) + (K - 1 + K D) log G."""
    loglik = observed_log_likelihood(t_stats, fit_result.model)
    penalty = n_parameters(fit_result.K, t_stats.n_studies) * math.log(t_stats.n_genes)
    return -2.0 * loglik + penalty


@dataclass
class SelectionEntry:
    K: int
    fit: FitResult
    bic: float
    log_likelihood: float


@dataclass
class SelectionReport:
    """Every fit of a K sweep and the BIC-minimizing choice."""
    entries: list[SelectionEntry] = field(default_factory=list)
    master_seed: int = 0

    @property
    def chosen(self) -> SelectionEntry:
        # smaller K wins exact ties
        return min(self.entries, key=lambda entry: (entry.bic, entry.K))

    @property
    def chosen_k(self) -> int:
        return self.chosen.K

    def bic_table(self) -> list[dict]:
        return [
            {
                "K": entry.K,
                "bic": entry.bic,
                "log_likelihood": entry.log_likelihood,
                "log_posterior": entry.fit.log_posterior,
                "converged": entry.fit.converged,
            }
            for entry in self.entries
        ]

    def to_dict(self) -> dict:
        return {
            "chosen_k": self.chosen_k,
            "master_seed": self.master_seed,
            "bic": self.bic_table(),
            "model": self.chosen.fit.to_dict(),
        }


def select_k(
    t_stats: TStatMatrix,
    k_range: tuple[int, int] = DEFAULT_K_RANGE,
    opts: Optional[FitOptions] = None,
) -> SelectionReport:
    """
    Fit every K in an inclusive range and pick the smallest BIC.

    Args:
        t_stats: Moderated t-statistics.
        k_range: Inclusive (lo, hi) with 1 <= lo <= hi.
        opts: Loop controls; opts.seed is the master seed from which per-K seeds are spawned.

    Returns:
        SelectionReport over the whole range.
    """
    opts = opts or FitOptions()
    lo, hi = k_range
    if lo < 1 or lo > hi:
        raise InvalidConfigError(f"k_range must satisfy 1 <= lo <= hi, got {lo}..{hi}")

    ks = list(range(lo, hi + 1))
    children = np.random.SeedSequence(opts.seed).spawn(len(ks))
    report = SelectionReport(master_seed=opts.seed)
    for K, child in zip(ks, children):
        k_seed = int(child.generate_state(1)[0])
        k_opts = FitOptions(
            max_iter=opts.max_iter,
            tol=opts.tol,
            restarts=opts.restarts,
            seed=k_seed,
            threads=opts.threads,
        )
        result = fit(t_stats, K, k_opts)
        loglik = observed_log_likelihood(t_stats, result.model)
        score = bic(result, t_stats)
        report.entries.append(SelectionEntry(K=K, fit=result, bic=score, log_likelihood=loglik))
        logger.info("select K=%d bic=%.6f log_likelihood=%.6f", K, score, loglik)

    logger.info("selected chosen_k=%d", report.chosen_k)
    return report
