"""Client/server delegation, trap verification and blindness checks."""

from ..patterns import ClientSecrets
from .blindness import BlindnessReport, bell_half_average, blindness_audit, phi_prime_histogram
from .roles import (
    AttackSpec,
    Client,
    HonestServer,
    PauliAttackServer,
    ProtocolError,
    adversary_apply,
    message_schedule,
)
from .run import RunResult, run_delegation, verify_traps
from .transcript import Transcript, TranscriptError
from .verification import (
    DetectionResult,
    aggregate_bound,
    detection_experiment,
    escape_probability_enumerated,
    escape_probability_exact,
    role_assignments,
    species_bound,
)

__all__ = [
    "AttackSpec",
    "BlindnessReport",
    "Client",
    "ClientSecrets",
    "DetectionResult",
    "HonestServer",
    "PauliAttackServer",
    "ProtocolError",
    "RunResult",
    "Transcript",
    "TranscriptError",
    "adversary_apply",
    "aggregate_bound",
    "bell_half_average",
    "blindness_audit",
    "detection_experiment",
    "escape_probability_enumerated",
    "escape_probability_exact",
    "message_schedule",
    "phi_prime_histogram",
    "role_assignments",
    "run_delegation",
    "species_bound",
    "verify_traps",
]
