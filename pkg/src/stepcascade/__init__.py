"""Event-driven, step-level model cascade for multi-step GUI agents.

A small default policy acts every step, lightweight monitors score rolling
reasoning-action windows, and a controller escalates to a strong policy on
stuck events or failed milestone verification. A deterministic synthetic
task environment with injected failure modes (progress stalls, silent
semantic drift) makes the whole control loop, labeling pipeline, detector
evaluation, and the cost/success frontier reproducible at desk scale.
"""

__version__ = "0.1.0"

from .trace import (
    Action,
    ActionKind,
    CanonicalAction,
    Episode,
    EpisodeOutcome,
    PolicyId,
    PolicyTier,
    Step,
    StepEvent,
    TaskSpec,
    Window,
    WindowEntry,
    build_window,
    canonicalize_action,
    parse_trace,
    serialize_trace,
)
