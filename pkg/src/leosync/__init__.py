"""Uplink synchronization toolkit for LEO satellite random access.

Three layers: satellite/terminal geometry with Doppler-based positioning
(geometry, precomp), preamble construction and the two-stage
timing-advance detector (waveform, detector, interference), and Monte
Carlo studies tying them together (harness, cli).
"""

from .detector import (
    DetectionResult,
    DetectorConfig,
    assemble_ta,
    calibrate_threshold,
    detect_preamble,
    estimate_kf,
    estimate_ki,
    pdp,
)
from .geometry import (
    EARTH_RADIUS,
    SPEED_OF_LIGHT,
    ConstellationConfig,
    EcefVector,
    SatelliteState,
    UePosition,
    doppler_shift,
    elevation_angle,
    generate_constellation,
    propagation_ta,
    visible_satellites,
)
from .harness import (
    ScenarioConfig,
    TrialMetrics,
    apply_design,
    design_labels,
    load_config,
    run_format_comparison,
    run_precomp_study,
    run_scenario,
    save_config,
)
from .interference import (
    m2_bound,
    m3_bound,
    multi_ue_bound,
    prob_fixed,
    prob_flexible,
    q_constant,
)
from .precomp import (
    DownlinkMeasurement,
    EstimateVector,
    PrecompResult,
    SolverConfig,
    cfo_error_prediction,
    cfo_jacobian,
    precompensate,
    predicted_downlink_cfo,
    solve_position,
)
from .waveform import (
    Numerology,
    PreambleFormat,
    TimeDomainSignal,
    ZcSpec,
    assemble_preamble,
    table2_numerology,
    zc_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "ConstellationConfig",
    "DetectionResult",
    "DetectorConfig",
    "DownlinkMeasurement",
    "EARTH_RADIUS",
    "EcefVector",
    "EstimateVector",
    "Numerology",
    "PreambleFormat",
    "PrecompResult",
    "SPEED_OF_LIGHT",
    "SatelliteState",
    "ScenarioConfig",
    "SolverConfig",
    "TimeDomainSignal",
    "TrialMetrics",
    "UePosition",
    "ZcSpec",
    "apply_design",
    "assemble_preamble",
    "assemble_ta",
    "calibrate_threshold",
    "cfo_error_prediction",
    "cfo_jacobian",
    "design_labels",
    "detect_preamble",
    "doppler_shift",
    "elevation_angle",
    "estimate_kf",
    "estimate_ki",
    "generate_constellation",
    "load_config",
    "m2_bound",
    "m3_bound",
    "multi_ue_bound",
    "pdp",
    "precompensate",
    "predicted_downlink_cfo",
    "prob_fixed",
    "prob_flexible",
    "propagation_ta",
    "q_constant",
    "run_format_comparison",
    "run_precomp_study",
    "run_scenario",
    "save_config",
    "solve_position",
    "table2_numerology",
    "visible_satellites",
    "zc_sequence",
    "__version__",
]
