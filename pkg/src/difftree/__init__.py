"""Citation-diffusion analysis: WoS parsing, LDA topics, diffusion stages,
evolution trees, growth forecasts and the Geodetector q-statistic."""

__version__ = "0.1.0"

from .corpus import (CitationRecord, Corpus, Gazetteer, GeoPoint, deduplicate, filter_year_window,
                     geocode_record, parse_wos_plaintext, read_wos_file)
from .diffusion import (DiffusionSeries, Stage, StageTimeline, classify_stage_timeline,
                        compute_diffusion_series, detect_decay_patterns)
from .errors import DifftreeError
from .forecast import cross_validate, fit_linear, fit_lr1, fit_lr2, fit_mixed, forecast_cumulative
from .qstat import StratifiedSample, q_permutation_test, q_statistic
from .topics import TopicModel, dominant_topic, fit_lda, perplexity, select_topic_count
from .tree import (EvolutionTree, build_discipline_direction_tree, build_factor_tree,
                   build_knowledge_evolution_tree, build_period_tree, serialize_tree)

__all__ = [
    "__version__",
    "CitationRecord",
    "Corpus",
    "Gazetteer",
    "GeoPoint",
    "deduplicate",
    "filter_year_window",
    "geocode_record",
    "parse_wos_plaintext",
    "read_wos_file",
    "DiffusionSeries",
    "Stage",
    "StageTimeline",
    "classify_stage_timeline",
    "compute_diffusion_series",
    "detect_decay_patterns",
    "DifftreeError",
    "cross_validate",
    "fit_linear",
    "fit_lr1",
    "fit_lr2",
    "fit_mixed",
    "forecast_cumulative",
    "StratifiedSample",
    "q_permutation_test",
    "q_statistic",
    "TopicModel",
    "dominant_topic",
    "fit_lda",
    "perplexity",
    "select_topic_count",
    "EvolutionTree",
    "build_discipline_direction_tree",
    "build_factor_tree",
    "build_knowledge_evolution_tree",
    "build_period_tree",
    "serialize_tree",
]
