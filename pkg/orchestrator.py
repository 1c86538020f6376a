"""Analysis pipeline: ingestion, moderation, model fitting and posteriors as a LangGraph graph."""

import logging
from dataclasses import dataclass, field
from typing import Any, Literal, Optional

from langgraph.graph import END, START, StateGraph
from typing_extensions import TypedDict

from core.config import RunConfig, resolve_threads
from core.errors import InvalidConfigError
from core.ingest import ExpressionDataset, load_expression
from core.limma import TStatMatrix, compute_t_stats
from core.posterior import PosteriorMatrix
from methods.baselines.em import PatternFit, fit_pattern_mixture, separate_limma_model
from methods.baselines.state import PATTERN_PRESETS
from methods.cormotif.em import fit, marginal_config_prob, observed_log_likelihood, posterior_matrix
from methods.cormotif.selection import DEFAULT_K_RANGE, SelectionReport, select_k
from methods.cormotif.state import FitOptions, FitResult


logger = logging.getLogger(__name__)

Command = Literal["hyper", "fit", "select"]


class PipelineState(TypedDict, total=False):
    """
    Shared state of one analysis run.

    Nodes read what earlier nodes produced and return only the keys they add.
    """
    config: RunConfig
    command: Command
    dataset: ExpressionDataset
    t_stats: TStatMatrix
    fit_result: FitResult
    selection: SelectionReport
    pattern_fit: PatternFit
    posterior: PosteriorMatrix
    model_record: dict[str, Any]


def _fit_options(config: RunConfig) -> FitOptions:
    return FitOptions(
        max_iter=config.max_iter,
        tol=config.tol,
        restarts=config.restarts,
        seed=config.seed,
        threads=resolve_threads(config.threads),
    )


def ingest_node(state: PipelineState) -> dict:
    """Load and validate the expression matrix and design."""
    config = state["config"]
    if config.matrix is None or config.design is None:
        raise InvalidConfigError("both a matrix and a design file are required")
    return {"dataset": load_expression(config.matrix, config.design)}


def hyper_node(state: PipelineState) -> dict:
    """Fit per-study hyperparameters and moderate the t-statistics."""
    config = state["config"]
    t_stats = compute_t_stats(
        state["dataset"],
        w=config.w,
        proportion=config.proportion,
        threads=resolve_threads(config.threads),
    )
    return {"t_stats": t_stats}


def route_after_hyper(state: PipelineState) -> str:
    """Pick the model node for the command and method."""
    command = state.get("command", "fit")
    method = state["config"].method
    if command == "hyper":
        return "done"
    if command == "select":
        if method != "cormotif":
            raise InvalidConfigError(f"select only applies to method 'cormotif', got {method!r}")
        return "select"
    return "fit" if method == "cormotif" else "baseline"


def _motif_record(t_stats: TStatMatrix, result: FitResult) -> dict[str, Any]:
    model = result.model
    log_likelihood = observed_log_likelihood(t_stats, model)
    logger.info("cormotif K=%d log_likelihood=%.6f", result.K, log_likelihood)
    return {
        "method": "cormotif",
        **result.to_dict(),
        "log_likelihood": log_likelihood,
        "marginal_prob": marginal_config_prob(model).tolist(),
    }


def fit_node(state: PipelineState) -> dict:
    """Fit CorMotif with a fixed K."""
    config = state["config"]
    if config.k is None:
        raise InvalidConfigError("fit with method 'cormotif' needs k")
    result = fit(state["t_stats"], config.k, _fit_options(config))
    return {"fit_result": result, "model_record": _motif_record(state["t_stats"], result)}


def select_node(state: PipelineState) -> dict:
    """Sweep K and keep the BIC-minimizing fit."""
    config = state["config"]
    report = select_k(state["t_stats"], config.k_range or DEFAULT_K_RANGE, _fit_options(config))
    chosen = report.chosen.fit
    return {
        "selection": report,
        "fit_result": chosen,
        "model_record": _motif_record(state["t_stats"], chosen),
    }


def baseline_node(state: PipelineState) -> dict:
    """Fit one of the comparison methods."""
    config = state["config"]
    t_stats = state["t_stats"]
    opts = _fit_options(config)
    if config.method == "separate-limma":
        posterior, record = separate_limma_model(t_stats, opts)
        return {"posterior": posterior, "model_record": record}

    patterns = PATTERN_PRESETS[config.method](t_stats.n_studies)
    pattern_fit = fit_pattern_mixture(t_stats, patterns, opts, method=config.method)
    return {
        "pattern_fit": pattern_fit,
        "posterior": pattern_fit.posterior,
        "model_record": pattern_fit.to_dict(),
    }


def posterior_node(state: PipelineState) -> dict:
    """Turn the fitted motif model into Pr(a_gd = 1)."""
    return {"posterior": posterior_matrix(state["t_stats"], state["fit_result"].model)}


def create_pipeline():
    """
    Create and compile the analysis graph.

    Returns:
        A compiled graph that can be invoked with PipelineState.
    """
    graph = StateGraph(PipelineState)

    graph.add_node("ingest", ingest_node)
    graph.add_node("hyper", hyper_node)
    graph.add_node("fit", fit_node)
    graph.add_node("select", select_node)
    graph.add_node("baseline", baseline_node)
    graph.add_node("posterior", posterior_node)

    graph.add_edge(START, "ingest")
    graph.add_edge("ingest", "hyper")
    graph.add_conditional_edges(
        "hyper",
        route_after_hyper,
        {"done": END, "fit": "fit", "select": "select", "baseline": "baseline"},
    )
    graph.add_edge("fit", "posterior")
    graph.add_edge("select", "posterior")
    graph.add_edge("baseline", END)
    graph.add_edge("posterior", END)

    return graph.compile()


@dataclass
class AnalysisResult:
    """Everything a run produced; fields a command does not reach stay None."""
    command: Command
    method: str
    t_stats: TStatMatrix
    posterior: Optional[PosteriorMatrix] = None
    fit_result: Optional[FitResult] = None
    selection: Optional[SelectionReport] = None
    pattern_fit: Optional[PatternFit] = None
    model_record: dict[str, Any] = field(default_factory=dict)

    def hyper_records(self) -> list[dict]:
        return [hyper.to_dict() for hyper in self.t_stats.hypers]


@dataclass
class Orchestrator:
    """Runs the compiled pipeline for one configuration."""
    config: RunConfig
    command: Command = "fit"

    _pipeline: Optional[object] = field(default=None, init=False)

    def __post_init__(self):
        self._pipeline = create_pipeline()

    def run(self) -> AnalysisResult:
        logger.info(
            "pipeline start command=%s method=%s seed=%d",
            self.command, self.config.method, self.config.seed,
        )
        final = self._pipeline.invoke(PipelineState(config=self.config, command=self.command))
        return AnalysisResult(
            command=self.command,
            method=self.config.method,
            t_stats=final["t_stats"],
            posterior=final.get("posterior"),
            fit_result=final.get("fit_result"),
            selection=final.get("selection"),
            pattern_fit=final.get("pattern_fit"),
            model_record=final.get("model_record", {}),
        )


def run_analysis(config: RunConfig, command: Command = "fit") -> AnalysisResult:
    """
    Convenience function to run one analysis.

    Args:
        config: Validated run configuration.
        command: hyper, fit or select.

    Returns:
        AnalysisResult with the moderated statistics and, past `hyper`, the posterior.
    """
    return Orchestrator(config=config, command=command).run()
