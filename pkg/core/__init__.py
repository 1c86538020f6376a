from core.errors import CorMotifError
from core.ingest import ExpressionDataset, StudyDesign, load_expression, summarize_study
from core.limma import TStatMatrix, compute_t_stats

__all__ = [
    "CorMotifError",
    "ExpressionDataset",
    "StudyDesign",
    "load_expression",
    "summarize_study",
    "TStatMatrix",
    "compute_t_stats",
]
