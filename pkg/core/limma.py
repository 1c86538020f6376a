"""Empirical-Bayes variance moderation and moderated t-statistics per study.

Hyperparameters follow the moment procedure of limma: prior df and scale are
matched to the mean and variance of log sample variances, and the effect
variance ratio w is matched to the order statistics of the largest |t|.
"""

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from core.errors import (
    DegenerateVariancesError,
    DegenerateVariancesWarning,
    DimensionMismatchError,
    TooFewGenesError,
)
from core.ingest import ExpressionDataset, StudySummary, summarize_study


logger = logging.getLogger(__name__)

# Stand-in for an infinite prior df
DF_PRIOR_CAP = 1e6
MIN_GENES = 10
# Plausible range of log-fold-change standard deviations for differential genes
STDEV_COEF_LIM = (0.1, 4.0)
DEFAULT_PROPORTION = 0.01
# w fallback, as a multiple of v_d
FALLBACK_W_RATIO = 4.0


class DensityState(Enum):
    """Differential state selecting f_d0 or f_d1."""
    NULL = "null"
    ALT = "alt"


@dataclass(frozen=True)
class LimmaHyper:
    """Empirical-Bayes hyperparameters of one study."""
    study_id: str
    n0: float
    s0sq: float
    w: float
    n: int
    v: float

    @property
    def df_residual(self) -> int:
        return self.n - 2

    @property
    def df_total(self) -> float:
        return self.n0 + self.n - 2

    @property
    def scale(self) -> float:
        return math.sqrt(1.0 + self.w / self.v)

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "n0": self.n0,
            "s0sq": self.s0sq,
            "w": self.w,
            "df_total": self.df_total,
            "scale": self.scale,
        }


@dataclass(frozen=True, eq=False)
class TStatMatrix:
    """
    Moderated t-statistics (G x D) with the parameters of both densities.

    Log-densities are computed once on first access and cached.
    """
    t: np.ndarray
    df_total: np.ndarray
    scale: np.ndarray
    gene_ids: tuple[str, ...]
    study_ids: tuple[str, ...]
    hypers: tuple[LimmaHyper, ...] = field(default=())

    def __post_init__(self):
        if self.t.ndim != 2:
            raise DimensionMismatchError("t must be a G x D matrix")
        n_genes, n_studies = self.t.shape
        if self.df_total.shape != (n_studies,) or self.scale.shape != (n_studies,):
            raise DimensionMismatchError("df_total and scale need one entry per study")
        if len(self.gene_ids) != n_genes or len(self.study_ids) != n_studies:
            raise DimensionMismatchError("gene_ids/study_ids do not match t")
        if not np.all(np.isfinite(self.t)):
            raise ValueError("t-statistics must be finite")
        if np.any(self.df_total <= 0) or np.any(self.scale <= 1):
            raise ValueError("need df_total > 0 and scale > 1 for every study")

    @classmethod
    def from_arrays(
        cls,
        t: np.ndarray,
        df_total: Sequence[float],
        scale: Sequence[float],
        gene_ids: Optional[Sequence[str]] = None,
        study_ids: Optional[Sequence[str]] = None,
    ) -> "TStatMatrix":
        """Wrap raw arrays, generating ids when none are given."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        n_genes, n_studies = t.shape
        return cls(
            t=t,
            df_total=np.asarray(df_total, dtype=float).reshape(n_studies),
            scale=np.asarray(scale, dtype=float).reshape(n_studies),
            gene_ids=tuple(gene_ids) if gene_ids is not None else tuple(f"g{i + 1}" for i in range(n_genes)),
            study_ids=tuple(study_ids) if study_ids is not None else tuple(f"study{d + 1}" for d in range(n_studies)),
        )

    @property
    def n_genes(self) -> int:
        return self.t.shape[0]

    @property
    def n_studies(self) -> int:
        return self.t.shape[1]

    @cached_property
    def log_f0(self) -> np.ndarray:
        return stats.t.logpdf(self.t, self.df_total[None, :])

    @cached_property
    def log_ratio(self) -> np.ndarray:
        return log_likelihood_ratio(self.t, self.df_total[None, :], self.scale[None, :])

    @cached_property
    def log_f1(self) -> np.ndarray:
        return self.log_f0 + self.log_ratio

    def select_studies(self, indices: Sequence[int]) -> "TStatMatrix":
        idx = list(indices)
        return TStatMatrix(
            t=self.t[:, idx],
            df_total=self.df_total[idx],
            scale=self.scale[idx],
            gene_ids=self.gene_ids,
            study_ids=tuple(self.study_ids[d] for d in idx),
            hypers=tuple(self.hypers[d] for d in idx) if self.hypers else (),
        )


def trigamma_inverse(x: float, tol: float = 1e-12, max_iter: int = 50) -> float:
    """
    Solve trigamma(y) = x for y > 0 by Newton iteration.

    Args:
        x: Target value, must be positive.
        tol: Relative step size at which iteration stops.
        max_iter: Iteration cap.

    Returns:
        y with trigamma(y) = x.
    """
    if x <= 0:
        raise ValueError("trigamma_inverse needs a positive argument")
    # asymptotes of trigamma: 1/y^2 for small y, 1/y for large y
    if x > 1e7:
        return 1.0 / math.sqrt(x)
    if x < 1e-6:
        return 1.0 / x
    y = 0.5 + 1.0 / x
    for _ in range(max_iter):
        tri = float(special.polygamma(1, y))
        dif = tri * (1.0 - tri / x) / float(special.polygamma(2, y))
        y += dif
        if -dif / y < tol:
            break
    else:
        logger.warning("trigamma_inverse iteration limit reached x=%g", x)
    return y


def fit_variance_prior(s2: np.ndarray, df: int) -> tuple[float, float]:
    """
    Fit the scaled inverse chi-square prior (n0, s0^2) by moments of log s^2.

    Args:
        s2: Sample variances of one study.
        df: Residual degrees of freedom shared by every gene.

    Returns:
        (n0, s0sq); n0 is capped at DF_PRIOR_CAP.
    """
    s2 = np.asarray(s2, dtype=float)
    n_genes = s2.size
    if n_genes < MIN_GENES:
        raise TooFewGenesError(f"need at least {MIN_GENES} genes, got {n_genes}")

    if np.ptp(s2) == 0:
        if s2[0] <= 0:
            raise DegenerateVariancesError("all sample variances are zero")
        message = f"all sample variances equal {s2[0]:g}; prior df capped at {DF_PRIOR_CAP:g}"
        logger.warning(message)
        warnings.warn(message, DegenerateVariancesWarning, stacklevel=2)
        return DF_PRIOR_CAP, float(s2[0])

    # log(0) is undefined; floor as limma does
    median = np.median(s2)
    if median <= 0:
        median = np.median(s2[s2 > 0])
    floored = np.maximum(s2, 1e-5 * median)

    half_df = df / 2.0
    e = np.log(floored) - special.digamma(half_df) + math.log(half_df)
    e_mean = float(e.mean())
    e_var = float(((e - e_mean) ** 2).sum() / (n_genes - 1)) - float(special.polygamma(1, half_df))

    if e_var > 0:
        n0 = min(2.0 * trigamma_inverse(e_var), DF_PRIOR_CAP)
    else:
        n0 = DF_PRIOR_CAP
    if n0 >= DF_PRIOR_CAP:
        logger.info("variance dispersion at theoretical minimum; prior df capped n0=%g", DF_PRIOR_CAP)
    s0sq = math.exp(e_mean + float(special.digamma(n0 / 2.0)) - math.log(n0 / 2.0))
    return n0, s0sq


def _moderate(summary: StudySummary, n0: float, s0sq: float) -> np.ndarray:
    s2_post = (n0 * s0sq + summary.df * summary.s2) / (n0 + summary.df)
    return summary.y / np.sqrt(summary.v * s2_post)


def estimate_effect_variance(
    t: np.ndarray,
    v: float,
    df_total: float,
    s0sq: float,
    proportion: float = DEFAULT_PROPORTION,
) -> float:
    """
    Estimate w from the largest |t| by matching them to mixture order statistics.

    Args:
        t: Moderated t-statistics of one study.
        v: 1/n_case + 1/n_control.
        df_total: Degrees of freedom of the t-statistics.
        s0sq: Prior variance scale, used to bound the estimate.
        proportion: Assumed fraction of differential genes.

    Returns:
        The estimated w, or FALLBACK_W_RATIO * v when the estimate is unusable.
    """
    n_genes = t.size
    n_target = math.ceil(proportion / 2.0 * n_genes)
    fallback = FALLBACK_W_RATIO * v
    if n_target < 1:
        logger.warning("too few genes for w estimation; using fallback w=%g", fallback)
        return fallback

    p = max(n_target / n_genes, proportion)
    top = np.sort(np.abs(t))[::-1][:n_target]
    rank = np.arange(1, n_target + 1, dtype=float)
    p0 = 2.0 * stats.t.sf(top, df_total)
    p_target = ((rank - 0.5) / n_genes - (1.0 - p) * p0) / p

    w_values = np.zeros(n_target)
    pos = p_target > p0
    if not pos.any():
        logger.warning("no |t| above the null order statistics; using fallback w=%g", fallback)
        return fallback
    q_target = stats.t.isf(p_target[pos] / 2.0, df_total)
    w_values[pos] = v * ((top[pos] / q_target) ** 2 - 1.0)
    raw = float(np.mean(w_values))
    if not np.isfinite(raw) or raw <= 0:
        logger.warning("w estimate unusable (%g); using fallback w=%g", raw, fallback)
        return fallback

    lower, upper = np.square(STDEV_COEF_LIM) / s0sq
    return float(np.mean(np.clip(w_values, lower, upper)))


def estimate_hyperparams(
    summary: StudySummary,
    w: Optional[float] = None,
    proportion: float = DEFAULT_PROPORTION,
) -> LimmaHyper:
    """
    Fit n0, s0^2 and w for one study.

    Args:
        summary: Sufficient statistics of the study.
        w: Fixed effect-variance ratio; estimated when None.
        proportion: Assumed differential fraction for the w estimator.

    Returns:
        LimmaHyper for the study.
    """
    n0, s0sq = fit_variance_prior(summary.s2, summary.df)
    if w is None:
        t = _moderate(summary, n0, s0sq)
        w = estimate_effect_variance(t, summary.v, n0 + summary.df, s0sq, proportion)
    hyper = LimmaHyper(study_id=summary.study_id, n0=n0, s0sq=s0sq, w=float(w), n=summary.n, v=summary.v)
    logger.debug(
        "hyperparameters study=%s n0=%.6g s0sq=%.6g w=%.6g",
        hyper.study_id, hyper.n0, hyper.s0sq, hyper.w,
    )
    return hyper


def moderated_t(summary: StudySummary, hyper: LimmaHyper) -> np.ndarray:
    """
    Moderated t-statistics y / sqrt(v * s_tilde^2) of one study.

    Args:
        summary: Sufficient statistics of the study.
        hyper: Hyperparameters fitted on that study.

    Returns:
        Length-G array of t-statistics.
    """
    return _moderate(summary, hyper.n0, hyper.s0sq)


def log_likelihood_ratio(t, df, scale):
    """
    log f1(t) - log f0(t), written so it is monotone in |t| in floating point.

    Args:
        t: t-statistics (any broadcastable shape).
        df: Degrees of freedom of both densities.
        scale: Scale of the alternative density.

    Returns:
        Array of log ratios.
    """
    t = np.asarray(t, dtype=float)
    scale_sq = np.square(scale)
    a = scale_sq * df
    u = (scale_sq - 1.0) * (1.0 - a / (a + t * t))
    return -np.log(scale) + 0.5 * (np.asarray(df) + 1.0) * np.log1p(u)


def log_density(t, d: int, state: DensityState | str, params: TStatMatrix):
    """
    log f_d0(t) or log f_d1(t) for study d.

    Args:
        t: Scalar or array of t values.
        d: Study index.
        state: DensityState.NULL / "null" or DensityState.ALT / "alt".
        params: TStatMatrix providing df_total and scale.

    Returns:
        Log-density with the same shape as t.
    """
    state = DensityState(state)
    df = params.df_total[d]
    log_f0 = stats.t.logpdf(t, df)
    if state is DensityState.NULL:
        return log_f0
    return log_f0 + log_likelihood_ratio(t, df, params.scale[d])


def compute_t_stats(
    dataset: ExpressionDataset,
    w: Optional[float] = None,
    proportion: float = DEFAULT_PROPORTION,
    threads: int = 1,
) -> TStatMatrix:
    """
    Summarize every study, fit its hyperparameters and moderate its t-statistics.

    Args:
        dataset: Validated expression dataset.
        w: Fixed effect-variance ratio for every study; None estimates per study.
        proportion: Assumed differential fraction for the w estimator.
        threads: Worker count; studies are independent.

    Returns:
        TStatMatrix with one column per study in design order.
    """
    def one_study(d: int) -> tuple[LimmaHyper, np.ndarray]:
        summary = summarize_study(dataset, d)
        hyper = estimate_hyperparams(summary, w=w, proportion=proportion)
        return hyper, moderated_t(summary, hyper)

    n_studies = dataset.design.n_studies
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one_study, range(n_studies)))

    hypers = tuple(hyper for hyper, _ in results)
    for hyper in hypers:
        logger.info(
            "study=%s n0=%.4g s0sq=%.4g w=%.4g df_total=%.4g scale=%.4f",
            hyper.study_id, hyper.n0, hyper.s0sq, hyper.w, hyper.df_total, hyper.scale,
        )
    return TStatMatrix(
        t=np.column_stack([t for _, t in results]),
        df_total=np.array([hyper.df_total for hyper in hypers]),
        scale=np.array([hyper.scale for hyper in hypers]),
        gene_ids=dataset.gene_ids,
        study_ids=tuple(dataset.design.study_ids),
        hypers=hypers,
    )
