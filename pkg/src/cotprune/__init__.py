"""Goal-gradient guided, uncertainty-regulated compression of scored
chain-of-thought token traces."""

from .analysis import (
    CapPreservationReport,
    DecisionSurface,
    LayerContribution,
    RetentionReport,
    UndefinedCorrelationError,
    cap_preservation,
    combine_preservation,
    correlation_matrix,
    decision_surface,
    layer_contribution_aggregate,
    retention_by_category,
    spearman,
)
from .mapping import (
    EntropyStats,
    MappingMode,
    estimate_global_stats,
    map_entropy,
    resolve_auto,
)
from .policy import (
    ConfigError,
    EngineConfig,
    adaptive_n,
    dynamic_threshold,
    refine_n,
    retention_rate,
    windowed_entropy,
)
from .pruner import (
    PruneOutcome,
    PruneVariant,
    ablation_prune,
    prune,
    static_prune,
)
from .trace import (
    ContractError,
    FunctionalCategory,
    KeepMask,
    TokenRecord,
    Trace,
    TraceParseError,
    TraceValidationError,
    classify_token,
    parse_trace,
    write_compressed,
    write_trace,
)
from .tuner import (
    DatasetFeatures,
    TunerError,
    estimate_target_ratio,
    extract_features,
    tune,
    update_params,
)

__version__ = "0.1.0"
