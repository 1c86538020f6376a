"""State containers for the correlation-motif mixture."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class MotifModel:
    """
    Mixture parameters of the correlation-motif model.

    pi holds the K class abundances; Q[k, d] is the probability that a
    gene of class k is differential in study d.
    """
    pi: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        if self.pi.ndim != 1 or self.Q.ndim != 2 or self.Q.shape[0] != self.pi.shape[0]:
            raise ValueError(f"pi shape {self.pi.shape} and Q shape {self.Q.shape} are inconsistent")
        if np.any(self.pi <= 0.0) or abs(float(self.pi.sum()) - 1.0) > 1e-10:
            raise ValueError("pi must be a strictly positive probability vector")
        if np.any(self.Q <= 0.0) or np.any(self.Q >= 1.0):
            raise ValueError("every motif probability must lie strictly inside (0, 1)")

    @property
    def K(self) -> int:
        return self.pi.shape[0]

    @property
    def n_studies(self) -> int:
        return self.Q.shape[1]

    def sorted_by_abundance(self) -> "MotifModel":
        """Same model with rows ordered by descending pi; ties keep their order."""
        order = np.argsort(-self.pi, kind="stable")
        return MotifModel(pi=self.pi[order], Q=self.Q[order])

    def to_dict(self) -> dict:
        return {"pi": self.pi.tolist(), "Q": self.Q.tolist()}


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """
    E-step output.

    R[g, k] = Pr(b_g = k | data); S[g, k, d] = Pr(b_g = k, a_gd = 1 | data).
    """
    R: np.ndarray
    S: np.ndarray

    @property
    def n_genes(self) -> int:
        return self.R.shape[0]

    def posterior(self) -> np.ndarray:
        """Pr(a_gd = 1 | data) = sum_k S[g, k, d]."""
        return self.S.sum(axis=1)


@dataclass
class FitOptions:
    """EM loop controls shared by every mixture fit in the toolkit."""
    max_iter: int = 1000
    tol: float = 1e-10
    restarts: int = 5
    seed: int = 0
    threads: int = 1


@dataclass
class FitResult:
    """Best chain of a restart-managed motif fit."""
    model: MotifModel
    log_posterior_trace: list[float]
    iterations: int
    converged: bool
    K: int
    seed: int
    restart_index: int = 0
    chain_log_posteriors: list[float] = field(default_factory=list)

    @property
    def log_posterior(self) -> float:
        return self.log_posterior_trace[-1]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            **self.model.to_dict(),
            "log_posterior": self.log_posterior,
            "iterations": self.iterations,
            "converged": self.converged,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict, trace: Optional[list[float]] = None) -> "FitResult":
        """Rebuild from the JSON form; only the final log posterior survives serialization."""
        model = MotifModel(pi=np.asarray(data["pi"], dtype=float), Q=np.atleast_2d(np.asarray(data["Q"], dtype=float)))
        return cls(
            model=model,
            log_posterior_trace=list(trace) if trace is not None else [float(data["log_posterior"])],
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            K=int(data["K"]),
            seed=int(data["seed"]),
        )
