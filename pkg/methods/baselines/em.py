"""EM for the comparison methods: fixed-pattern mixtures and per-study two-component mixtures."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from core.errors import PatternDimensionMismatchError
from core.limma import TStatMatrix
from core.posterior import PosteriorMatrix
from methods.baselines.state import PatternMixture
from methods.cormotif.em import has_converged
from methods.cormotif.state import FitOptions


logger = logging.getLogger(__name__)

SEPARATE_INITIAL_PROPORTION = 0.5


@dataclass
class PatternFit:
    """Converged pattern mixture with its per-gene outputs."""
    mixture: PatternMixture
    posterior: PosteriorMatrix
    class_responsibilities: np.ndarray
    log_posterior_trace: list[float]
    iterations: int
    converged: bool
    log_likelihood: float
    @property
    def log_posterior(self) -> float:
        return self.log_posterior_trace[-1]

    def to_dict(self) -> dict:
        return {
            "method": self.posterior.method,
            **self.mixture.to_dict(),
            "log_posterior": self.log_posterior,
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass
class StudyProportion:
    """Two-component fit of one study."""
    study_id: str
    proportion: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "p": self.proportion,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def pattern_class_log_likelihood(t_stats: TStatMatrix, patterns: np.ndarray) -> np.ndarray:
    """log prod_d f_{d, pattern_md}(t_gd) for every gene and pattern (G x M)."""
    patterns = np.asarray(patterns, dtype=float)
    if patterns.ndim != 2 or patterns.shape[1] != t_stats.n_studies:
        raise PatternDimensionMismatchError(
            f"patterns have {patterns.shape[-1]} columns, data has {t_stats.n_studies} studies"
        )
    return t_stats.log_f0.sum(axis=1)[:, None] + t_stats.log_ratio @ patterns.T


def _weights_expectation(class_loglik: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, float]:
    log_joint = class_loglik + np.log(weights)[None, :]
    log_norm = special.logsumexp(log_joint, axis=1)
    return np.exp(log_joint - log_norm[:, None]), float(log_norm.sum())


def pattern_log_likelihood(t_stats: TStatMatrix, mixture: PatternMixture) -> float:
    """Observed-data log-likelihood of a pattern mixture, without the prior."""
    _, loglik = _weights_expectation(pattern_class_log_likelihood(t_stats, mixture.patterns), mixture.weights)
    return loglik


def fit_pattern_mixture(
    t_stats: TStatMatrix,
    patterns: np.ndarray,
    opts: Optional[FitOptions] = None,
    method: str = "pattern-mixture",
) -> PatternFit:
    """
    EM over the weights of a mixture whose classes are fixed configurations.

    Args:
        t_stats: Moderated t-statistics.
        patterns: M x D binary matrix of distinct configurations.
        opts: Loop controls; only max_iter and tol apply since the start is uniform.
        method: Tag carried by the resulting PosteriorMatrix.

    Returns:
        PatternFit with weights, Pr(a_gd = 1) and class posteriors.
    """
    opts = opts or FitOptions()
    patterns = np.asarray(patterns, dtype=int)
    class_loglik = pattern_class_log_likelihood(t_stats, patterns)
    n_genes, n_patterns = class_loglik.shape

    weights = np.full(n_patterns, 1.0 / n_patterns)
    resp, loglik = _weights_expectation(class_loglik, weights)
    current = loglik + float(np.log(weights).sum())
    trace = [current]
    converged = False
    iterations = 0
    while iterations < opts.max_iter:
        iterations += 1
        weights = (resp.sum(axis=0) + 1.0) / (n_genes + n_patterns)
        resp, loglik = _weights_expectation(class_loglik, weights)
        previous, current = current, loglik + float(np.log(weights).sum())
        trace.append(current)
        if has_converged(previous, current, opts.tol):
            converged = True
            break

    logger.info(
        "pattern mixture method=%s patterns=%d iterations=%d log_posterior=%.6f converged=%s",
        method, n_patterns, iterations, current, converged,
    )
    posterior = PosteriorMatrix(
        P=np.clip(resp @ patterns, 0.0, 1.0),
        gene_ids=t_stats.gene_ids,
        study_ids=t_stats.study_ids,
        method=method,
        abs_t=np.abs(t_stats.t),
    )
    return PatternFit(
        mixture=PatternMixture(patterns=patterns, weights=weights),
        posterior=posterior,
        class_responsibilities=resp,
        log_posterior_trace=trace,
        iterations=iterations,
        converged=converged,
        log_likelihood=loglik,
    )


def _two_component(log_ratio: np.ndarray, max_iter: int, tol: float) -> tuple[float, np.ndarray, int, bool]:
    n_genes = log_ratio.shape[0]
    p = SEPARATE_INITIAL_PROPORTION

    def expectation(p: float) -> tuple[np.ndarray, float]:
        log_p, log_1mp = np.log(p), np.log1p(-p)
        posterior = special.expit(log_p - log_1mp + log_ratio)
        # f0 terms are shared by every p and drop out of the objective
        loglik = float(np.logaddexp(log_p + log_ratio, log_1mp).sum())
        return posterior, loglik + log_p + log_1mp

    posterior, current = expectation(p)
    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        p = (float(posterior.sum()) + 1.0) / (n_genes + 2.0)
        previous = current
        posterior, current = expectation(p)
        if has_converged(previous, current, tol):
            converged = True
            break
    return p, posterior, iterations, converged


def fit_study_proportions(
    t_stats: TStatMatrix,
    opts: Optional[FitOptions] = None,
) -> tuple[list[StudyProportion], np.ndarray]:
    """
    Fit p f_d1 + (1 - p) f_d0 in every study on its own.

    Returns:
        (per-study fits, G x D posterior matrix).
    """
    opts = opts or FitOptions()

    def one_study(d: int):
        return _two_component(t_stats.log_ratio[:, d], opts.max_iter, opts.tol)

    with ThreadPoolExecutor(max_workers=max(1, min(opts.threads, t_stats.n_studies))) as pool:
        results = list(pool.map(one_study, range(t_stats.n_studies)))

    fits = []
    for study_id, (p, _, iterations, converged) in zip(t_stats.study_ids, results):
        logger.info("separate-limma study=%s p=%.6g iterations=%d converged=%s", study_id, p, iterations, converged)
        fits.append(StudyProportion(study_id=study_id, proportion=p, iterations=iterations, converged=converged))
    return fits, np.column_stack([posterior for _, posterior, _, _ in results])


def separate_limma_model(t_stats: TStatMatrix, opts: Optional[FitOptions] = None) -> tuple[PosteriorMatrix, dict]:
    """
    Fit every study on its own.

    Returns:
        (posterior matrix, model record with the per-study proportions).
    """
    studies, P = fit_study_proportions(t_stats, opts)
    posterior = PosteriorMatrix(
        P=np.clip(P, 0.0, 1.0),
        gene_ids=t_stats.gene_ids,
        study_ids=t_stats.study_ids,
        method="separate-limma",
        abs_t=np.abs(t_stats.t),
    )
    return posterior, {"method": "separate-limma", "studies": [study.to_dict() for study in studies]}


def separate_limma_fit(t_stats: TStatMatrix, opts: Optional[FitOptions] = None) -> PosteriorMatrix:
    """Per-study posteriors Pr(a_gd = 1) ignoring every other study."""
    posterior, _ = separate_limma_model(t_stats, opts)
    return posterior
