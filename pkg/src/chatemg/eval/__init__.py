from .scenarios import (
    METHODS,
    HarnessConfig,
    IntentModelSet,
    Scenario,
    ScenarioReport,
    make_scenario,
    merge_reports,
    run_scenario,
    subject_scenarios,
)
from .stats import nrmse, wilcoxon_rank_sum_one_sided
from .tsne import tsne, tsne_embed

__all__ = [
    "METHODS",
    "HarnessConfig",
    "IntentModelSet",
    "Scenario",
    "ScenarioReport",
    "make_scenario",
    "merge_reports",
    "run_scenario",
    "subject_scenarios",
    "nrmse",
    "wilcoxon_rank_sum_one_sided",
    "tsne",
    "tsne_embed",
]
