"""Simulation and detection library for code-division multiple access with
temporally correlated binary sources."""

__version__ = "0.1.0"

from .markov import (
    SourceStats,
    TransitionMatrix,
    estimate_transition,
    generate_block,
    hard_beliefs,
    iid_matrix,
    make_symmetric_matrix,
    perturb_element,
    source_stats,
)
from .channel import (
    ChannelConfig,
    SpreadingMatrix,
    generate_spreading,
    load_fixture,
    save_fixture,
    transmit,
)
from .detectors import (
    SCHEDULES,
    DetectionResult,
    DetectorDivergence,
    DetectorOptions,
    DetectorState,
    SoftField,
    correlated_mud_detect,
    correlated_sumf_detect,
    hard_decisions,
    local_bias,
    mud_detect,
    mud_step,
    soft_to_probs,
    sumf,
    sumf_biased_decide,
    sumf_detect,
)
from .baselines import (
    AMPLIFICATIONS,
    SATURATION_RULES,
    CompressionComparison,
    bandwidth_expansion_comparison,
    binary_entropy,
    bsc_residual_error,
    fit_loglog_slope,
    fixed_load_comparison,
    inverse_binary_entropy,
    saturation_position,
)
from .harness import (
    VARIANTS,
    BerReport,
    ExperimentConfig,
    LengthScalingResult,
    MismatchPoint,
    SweepPoint,
    default_workers,
    length_scaling_study,
    make_ber_runner,
    make_pair_runner,
    mismatch_study,
    monte_carlo,
    normalized_ber_sweep,
    read_csv_with_header,
    run_trial,
    write_ber_csv,
    write_comparison_csv,
    write_length_csv,
    write_mismatch_csv,
    write_sweep_csv,
)

__all__ = [
    "AMPLIFICATIONS",
    "BerReport",
    "ChannelConfig",
    "CompressionComparison",
    "DetectionResult",
    "DetectorDivergence",
    "DetectorOptions",
    "DetectorState",
    "ExperimentConfig",
    "LengthScalingResult",
    "MismatchPoint",
    "SATURATION_RULES",
    "SCHEDULES",
    "SoftField",
    "SourceStats",
    "SpreadingMatrix",
    "SweepPoint",
    "TransitionMatrix",
    "VARIANTS",
    "bandwidth_expansion_comparison",
    "binary_entropy",
    "bsc_residual_error",
    "correlated_mud_detect",
    "correlated_sumf_detect",
    "default_workers",
    "estimate_transition",
    "fit_loglog_slope",
    "fixed_load_comparison",
    "generate_block",
    "generate_spreading",
    "hard_beliefs",
    "hard_decisions",
    "iid_matrix",
    "inverse_binary_entropy",
    "length_scaling_study",
    "load_fixture",
    "local_bias",
    "make_ber_runner",
    "make_pair_runner",
    "make_symmetric_matrix",
    "mismatch_study",
    "monte_carlo",
    "mud_detect",
    "mud_step",
    "normalized_ber_sweep",
    "perturb_element",
    "read_csv_with_header",
    "run_trial",
    "saturation_position",
    "save_fixture",
    "soft_to_probs",
    "source_stats",
    "sumf",
    "sumf_biased_decide",
    "sumf_detect",
    "transmit",
    "write_ber_csv",
    "write_comparison_csv",
    "write_length_csv",
    "write_mismatch_csv",
    "write_sweep_csv",
]
