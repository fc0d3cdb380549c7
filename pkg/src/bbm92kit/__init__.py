"""Desk-scale entanglement QKD simulator and timing-analysis toolkit.

The package models a polarization-entangled pair source feeding two
four-detector polarization analyzers, reconstructs the shared state
from counting statistics, derives receiver measurement bases that
cancel static channel rotations without any physical compensator, and
turns raw detector timestamps into sifted key with QBER-constrained
coincidence windows.
"""

from .bases import (
    BasisPlan,
    BranchVanishesError,
    DegenerateTopError,
    MeasBasis,
    best_pauli_plan,
    conditional_states,
    fold_unitaries,
    nearest_pure,
    optimal_bases,
    pauli_plan,
    plan_from_text,
    plan_to_text,
    predicted_qber,
)
from .coincidence import (
    SAME_BASIS_PAIRS,
    CoincidenceWindow,
    CorrelationHistogram,
    NoCoincidencesError,
    OverlappingWindowsError,
    PairCounts,
    SiftResult,
    WindowForecast,
    WindowOptimization,
    classify_pairs,
    count_in_windows,
    cross_correlate,
    estimate_floor,
    find_peak,
    fixed_windows,
    forecast_windows,
    half_width_grid,
    histograms_from_text,
    histograms_to_text,
    optimize_windows,
    sift,
    windows_from_text,
    windows_to_text,
)
from .photonsim import (
    ChannelConfig,
    DetectorConfig,
    EmptySessionWarning,
    SourceConfig,
    TimestampStream,
    TtagFormatError,
    build_state,
    generate_session,
    read_ttag,
    write_ttag,
)
from .quantum import (
    bell_state,
    concurrence,
    eigh,
    fidelity_pure,
    purity,
    random_density_matrix,
    random_pure_state,
    random_unitary,
    rotation,
)
from .seeds import derive_seed
from .session import (
    ConfigError,
    RunConfig,
    parse_unitary_spec,
    replay,
    report_to_json,
    report_to_text,
    run_pipeline,
    sweep,
)
from .tomography import (
    CountsTable,
    TomographySetting,
    counts_from_text,
    counts_to_text,
    reconstruct,
    simulate_counts,
)

__version__ = "0.1.0"

__all__ = [
    "BasisPlan",
    "BranchVanishesError",
    "ChannelConfig",
    "CoincidenceWindow",
    "ConfigError",
    "CorrelationHistogram",
    "CountsTable",
    "DegenerateTopError",
    "DetectorConfig",
    "EmptySessionWarning",
    "MeasBasis",
    "NoCoincidencesError",
    "OverlappingWindowsError",
    "PairCounts",
    "RunConfig",
    "SAME_BASIS_PAIRS",
    "SiftResult",
    "SourceConfig",
    "TimestampStream",
    "TomographySetting",
    "TtagFormatError",
    "WindowForecast",
    "WindowOptimization",
    "bell_state",
    "best_pauli_plan",
    "build_state",
    "classify_pairs",
    "concurrence",
    "conditional_states",
    "count_in_windows",
    "counts_from_text",
    "counts_to_text",
    "cross_correlate",
    "derive_seed",
    "eigh",
    "estimate_floor",
    "fidelity_pure",
    "find_peak",
    "fixed_windows",
    "fold_unitaries",
    "forecast_windows",
    "generate_session",
    "half_width_grid",
    "histograms_from_text",
    "histograms_to_text",
    "nearest_pure",
    "optimal_bases",
    "optimize_windows",
    "parse_unitary_spec",
    "pauli_plan",
    "plan_from_text",
    "plan_to_text",
    "predicted_qber",
    "purity",
    "random_density_matrix",
    "random_pure_state",
    "random_unitary",
    "read_ttag",
    "replay",
    "report_to_json",
    "report_to_text",
    "rotation",
    "run_pipeline",
    "sift",
    "simulate_counts",
    "sweep",
    "windows_from_text",
    "windows_to_text",
    "write_ttag",
]
