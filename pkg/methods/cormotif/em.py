"""EM inference for the correlation-motif mixture."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
from scipy import special

from core.errors import InvalidConfigError, PatternDimensionMismatchError
from core.limma import TStatMatrix
from core.posterior import PosteriorMatrix
from methods.cormotif.state import FitOptions, FitResult, MotifModel, Responsibilities


logger = logging.getLogger(__name__)

# Initial motif probabilities are drawn from U(Q_INIT_LOW, Q_INIT_HIGH)
Q_INIT_LOW = 0.05
Q_INIT_HIGH = 0.95
PI_INIT_CONCENTRATION = 2.0


def has_converged(previous: float, current: float, tol: float) -> bool:
    """Relative-change stopping rule shared by every EM loop."""
    return abs(current - previous) / (abs(current) + 1.0) < tol


def _log_terms(t_stats: TStatMatrix, model: MotifModel) -> tuple[np.ndarray, np.ndarray]:
    """
    Per (g, k, d) log of q f1 + (1 - q) f0, and the log-odds that a_gd = 1 within class k.

    Returns:
        (log_mix, log_odds), both G x K x D.
    """
    if model.n_studies != t_stats.n_studies:
        raise PatternDimensionMismatchError(
            f"model has {model.n_studies} studies, data has {t_stats.n_studies}"
        )
    log_q = np.log(model.Q)[None, :, :]
    log_1mq = np.log1p(-model.Q)[None, :, :]
    alt = log_q + t_stats.log_ratio[:, None, :]
    log_mix = t_stats.log_f0[:, None, :] + np.logaddexp(alt, log_1mq)
    return log_mix, alt - log_1mq


def _class_log_likelihood(t_stats: TStatMatrix, model: MotifModel) -> tuple[np.ndarray, np.ndarray]:
    log_mix, log_odds = _log_terms(t_stats, model)
    log_joint = np.log(model.pi)[None, :] + log_mix.sum(axis=2)
    return log_joint, log_odds


def _log_prior(model: MotifModel) -> float:
    return float(np.log(model.pi).sum() + (np.log(model.Q) + np.log1p(-model.Q)).sum())


def _expectation(t_stats: TStatMatrix, model: MotifModel) -> tuple[Responsibilities, float]:
    log_joint, log_odds = _class_log_likelihood(t_stats, model)
    log_norm = special.logsumexp(log_joint, axis=1)
    R = np.exp(log_joint - log_norm[:, None])
    S = R[:, :, None] * special.expit(log_odds)
    return Responsibilities(R=R, S=S), float(log_norm.sum())


def e_step(t_stats: TStatMatrix, model: MotifModel) -> Responsibilities:
    """
    Class and joint class/state posteriors for every gene.

    Args:
        t_stats: Moderated t-statistics with density parameters.
        model: Current mixture parameters.

    Returns:
        Responsibilities with R (G x K) and S (G x K x D).
    """
    resp, _ = _expectation(t_stats, model)
    return resp


def m_step(resp: Responsibilities) -> MotifModel:
    """MAP update under Dirichlet(2,...,2) on pi and Beta(2,2) on each q_kd."""
    n_genes, n_classes = resp.R.shape
    class_mass = resp.R.sum(axis=0)
    pi = (class_mass + 1.0) / (n_genes + n_classes)
    Q = (resp.S.sum(axis=0) + 1.0) / (class_mass[:, None] + 2.0)
    return MotifModel(pi=pi, Q=Q)


def observed_log_likelihood(t_stats: TStatMatrix, model: MotifModel) -> float:
    """sum_g log sum_k pi_k prod_d [q_kd f_d1 + (1 - q_kd) f_d0], without prior terms."""
    log_joint, _ = _class_log_likelihood(t_stats, model)
    return float(special.logsumexp(log_joint, axis=1).sum())


def log_posterior(t_stats: TStatMatrix, model: MotifModel) -> float:
    """Observed-data log-likelihood plus the log Dirichlet/Beta prior, up to a constant."""
    return observed_log_likelihood(t_stats, model) + _log_prior(model)


def initial_model(n_classes: int, n_studies: int, rng: np.random.Generator) -> MotifModel:
    pi = rng.dirichlet(np.full(n_classes, PI_INIT_CONCENTRATION))
    Q = rng.uniform(Q_INIT_LOW, Q_INIT_HIGH, size=(n_classes, n_studies))
    return MotifModel(pi=pi, Q=Q)


def run_chain(
    t_stats: TStatMatrix,
    model: MotifModel,
    max_iter: int,
    tol: float,
) -> tuple[MotifModel, list[float], int, bool]:
    """
    Iterate EM from a given start.

    Returns:
        (final model, log-posterior trace, iterations, converged).
    """
    resp, loglik = _expectation(t_stats, model)
    current = loglik + _log_prior(model)
    trace = [current]
    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        model = m_step(resp)
        resp, loglik = _expectation(t_stats, model)
        previous, current = current, loglik + _log_prior(model)
        trace.append(current)
        if has_converged(previous, current, tol):
            converged = True
            break
    return model, trace, iterations, converged


def fit(t_stats: TStatMatrix, K: int, opts: Optional[FitOptions] = None) -> FitResult:
    """
    Fit a K-motif model from several random starts and keep the best chain.

    Args:
        t_stats: Moderated t-statistics with density parameters.
        K: Number of motifs.
        opts: Loop controls; chain seeds are spawned from opts.seed.

    Returns:
        FitResult of the chain with the highest final log posterior
        (ties go to the lower chain index), motif rows sorted by abundance.
    """
    opts = opts or FitOptions()
    if K < 1:
        raise InvalidConfigError(f"K must be >= 1, got {K}")
    if opts.restarts < 1:
        raise InvalidConfigError(f"restarts must be >= 1, got {opts.restarts}")

    children = np.random.SeedSequence(opts.seed).spawn(opts.restarts)

    def one_chain(index: int):
        rng = np.random.default_rng(children[index])
        start = initial_model(K, t_stats.n_studies, rng)
        model, trace, iterations, converged = run_chain(t_stats, start, opts.max_iter, opts.tol)
        logger.debug(
            "chain K=%d restart=%d iterations=%d log_posterior=%.6f converged=%s",
            K, index, iterations, trace[-1], converged,
        )
        return model, trace, iterations, converged

    workers = max(1, min(opts.threads, opts.restarts))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        chains = list(pool.map(one_chain, range(opts.restarts)))

    finals = [trace[-1] for _, trace, _, _ in chains]
    best = min(range(opts.restarts), key=lambda i: (-finals[i], i))
    model, trace, iterations, converged = chains[best]
    if not converged:
        logger.warning("EM reached max_iter=%d without converging K=%d restart=%d", opts.max_iter, K, best)
    logger.info(
        "fit K=%d best_restart=%d iterations=%d log_posterior=%.6f converged=%s",
        K, best, iterations, trace[-1], converged,
    )
    return FitResult(
        model=model.sorted_by_abundance(),
        log_posterior_trace=trace,
        iterations=iterations,
        converged=converged,
        K=K,
        seed=opts.seed,
        restart_index=best,
        chain_log_posteriors=finals,
    )


def joint_config_prob(model: MotifModel, config: Sequence[int]) -> float:
    """
    Prior probability of a whole differential configuration.

    Args:
        model: Mixture parameters.
        config: Binary vector of length D.

    Returns:
        sum_k pi_k prod_d q_kd^a_d (1 - q_kd)^(1 - a_d).
    """
    config = np.asarray(config, dtype=int)
    if config.shape != (model.n_studies,):
        raise PatternDimensionMismatchError(
            f"configuration length {config.size} does not match D={model.n_studies}"
        )
    per_study = np.where(config[None, :] == 1, model.Q, 1.0 - model.Q)
    return float(model.pi @ per_study.prod(axis=1))


def marginal_config_prob(model: MotifModel) -> np.ndarray:
    """Pr(a_gd = 1) = sum_k pi_k q_kd for every study."""
    return model.pi @ model.Q


def posterior_matrix(t_stats: TStatMatrix, model: MotifModel, method: str = "cormotif") -> PosteriorMatrix:
    """Pr(a_gd = 1 | data) under a fitted model, with |t| attached for ranking."""
    P = e_step(t_stats, model).posterior()
    return PosteriorMatrix(
        P=np.clip(P, 0.0, 1.0),
        gene_ids=t_stats.gene_ids,
        study_ids=t_stats.study_ids,
        method=method,
        abs_t=np.abs(t_stats.t),
    )
