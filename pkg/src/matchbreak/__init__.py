"""Laboratory for template-reconstruction attacks on matching oracles.

Build a synthetic identity population, stand up a score-releasing or
decision-only matching oracle (in process or over TCP), run reconstruction
attacks against it, and measure how close the recovered templates get.
"""

from .attacks import (
    ATTACK_MODES,
    ATTACKS,
    AcceptAverageAttack,
    Attack,
    BoundarySearchAttack,
    CosineScoreAttack,
    HillClimbAttack,
    ReconstructionResult,
    SedScoreAttack,
    boundary_point,
    find_seed_match,
    make_attack,
)
from .errors import (
    AttackFailedError,
    DegenerateTemplateError,
    DimensionMismatchError,
    LockedOutError,
    MatchbreakError,
    NoFalseMatchError,
    OracleModeError,
    OutsidePointError,
    SingularSystemError,
    TemplateFormatError,
    UnknownIdentityError,
    WireProtocolError,
)
from .evaluation import (
    AggregateStats,
    ConvergenceCurve,
    ExperimentConfig,
    ExperimentReport,
    ExperimentRow,
    calibrate_for_model,
    load_report,
    passes_system,
    reconstruction_loss,
    report_fingerprint,
    run_experiment,
    scenario_disfe,
    write_report_csv,
    write_report_json,
)
from .linalg import solve_linear_system, sphere_center
from .matcher import (
    CalibrationResult,
    MatchScore,
    MatchingOracle,
    Metric,
    OracleConfig,
    OracleMode,
    QueryLedger,
    Threshold,
    calibrate_threshold,
    cosine_score,
    sed_score,
)
from .netoracle import OracleServer, RemoteOracle, WireMessage, remote_oracle, serve, server_from_config
from .rng import as_generator, make_rng, random_unit_vector
from .synth import (
    BreakingSet,
    IdentityModel,
    enrollment_template,
    gen_breaking_set,
    gen_identity_model,
    genuine_scores,
    impostor_scores,
    load_model,
    sample_template,
    save_model,
)
from .templates import (
    Template,
    l2_norm,
    normalize,
    read_template,
    read_template_json,
    write_template,
    write_template_json,
)

__version__ = "0.1.0"

__all__ = [
    "ATTACKS",
    "ATTACK_MODES",
    "AcceptAverageAttack",
    "AggregateStats",
    "Attack",
    "AttackFailedError",
    "BoundarySearchAttack",
    "BreakingSet",
    "CalibrationResult",
    "ConvergenceCurve",
    "CosineScoreAttack",
    "DegenerateTemplateError",
    "DimensionMismatchError",
    "ExperimentConfig",
    "ExperimentReport",
    "ExperimentRow",
    "HillClimbAttack",
    "IdentityModel",
    "LockedOutError",
    "MatchScore",
    "MatchbreakError",
    "MatchingOracle",
    "Metric",
    "NoFalseMatchError",
    "OracleConfig",
    "OracleMode",
    "OracleModeError",
    "OracleServer",
    "OutsidePointError",
    "QueryLedger",
    "ReconstructionResult",
    "RemoteOracle",
    "SedScoreAttack",
    "SingularSystemError",
    "Template",
    "TemplateFormatError",
    "Threshold",
    "UnknownIdentityError",
    "WireMessage",
    "WireProtocolError",
    "as_generator",
    "boundary_point",
    "calibrate_for_model",
    "calibrate_threshold",
    "cosine_score",
    "enrollment_template",
    "find_seed_match",
    "gen_breaking_set",
    "gen_identity_model",
    "genuine_scores",
    "impostor_scores",
    "l2_norm",
    "load_model",
    "load_report",
    "make_attack",
    "make_rng",
    "normalize",
    "passes_system",
    "random_unit_vector",
    "read_template",
    "read_template_json",
    "reconstruction_loss",
    "remote_oracle",
    "report_fingerprint",
    "run_experiment",
    "sample_template",
    "save_model",
    "scenario_disfe",
    "sed_score",
    "serve",
    "server_from_config",
    "solve_linear_system",
    "sphere_center",
    "write_report_csv",
    "write_report_json",
    "write_template",
    "write_template_json",
]
