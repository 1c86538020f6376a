from methods.baselines.em import PatternFit, fit_pattern_mixture, separate_limma_fit, separate_limma_model
from methods.baselines.state import PATTERN_PRESETS, PatternMixture, all_concord_patterns, full_motif_patterns

__all__ = [
    "PatternFit",
    "fit_pattern_mixture",
    "separate_limma_fit",
    "separate_limma_model",
    "PATTERN_PRESETS",
    "PatternMixture",
    "all_concord_patterns",
    "full_motif_patterns",
]
