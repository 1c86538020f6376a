from methods.cormotif.em import e_step, fit, joint_config_prob, log_posterior, m_step, posterior_matrix
from methods.cormotif.selection import SelectionReport, bic, select_k
from methods.cormotif.state import FitOptions, FitResult, MotifModel, Responsibilities

__all__ = [
    "e_step",
    "m_step",
    "log_posterior",
    "fit",
    "joint_config_prob",
    "posterior_matrix",
    "bic",
    "select_k",
    "SelectionReport",
    "FitOptions",
    "FitResult",
    "MotifModel",
    "Responsibilities",
]
