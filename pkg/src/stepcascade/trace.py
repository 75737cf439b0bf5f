"""Canonical data model for tasks, steps, episodes, and windows.

Everything in here is an immutable value after construction and safe to
share across threads. Serialization is line-delimited JSON with sorted
keys so that identical episodes always produce identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional


class TraceError(ValueError):
    """Malformed trace text or inconsistent trace fields."""


class ActionKind(str, Enum):
    CLICK = "click"
    TYPE = "type"
    HOTKEY = "hotkey"
    SCROLL = "scroll"
    DRAG = "drag"
    WAIT = "wait"
    DONE = "done"
    FAIL = "fail"
    OTHER = "other"


class PolicyTier(str, Enum):
    SMALL = "small"
    LARGE = "large"


class EpisodeOutcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    BUDGET_EXHAUSTED = "budget_exhausted"


class StepEvent(str, Enum):
    ESCALATED = "escalated"
    MILESTONE_TRIGGERED = "milestone_triggered"
    MILESTONE_COMMITTED = "milestone_committed"
    VERIFICATION_FAILED = "verification_failed"


@dataclass(frozen=True)
class TaskSpec:
    """A user goal plus its episode budget."""

    task_id: str
    instruction: str
    max_steps: int
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.instruction:
            raise ValueError("instruction must be non-empty")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "max_steps": self.max_steps,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TaskSpec":
        return cls(
            task_id=d["task_id"],
            instruction=d["instruction"],
            max_steps=int(d["max_steps"]),
            metadata=dict(d.get("metadata") or {}),
        )


@dataclass(frozen=True)
class Action:
    """One executable step action: a kind plus an ordered argument map."""

    kind: ActionKind
    args: dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None  # set only for kind=other

    def __post_init__(self) -> None:
        if self.kind in (ActionKind.DONE, ActionKind.FAIL) and self.args:
            raise ValueError(f"{self.kind.value} actions carry no args")
        if self.kind is ActionKind.OTHER and not self.name:
            raise ValueError("other actions require a name")
        for key, value in self.args.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"non-finite coordinate in arg {key!r}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value, "args": dict(self.args)}
        if self.name is not None:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Action":
        return cls(kind=ActionKind(d["kind"]), args=dict(d.get("args") or {}), name=d.get("name"))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Action):
            return NotImplemented
        return self.kind == other.kind and self.args == other.args and self.name == other.name

    def __hash__(self) -> int:
        return hash((self.kind, self.name, tuple(sorted((k, repr(v)) for k, v in self.args.items()))))


DEFAULT_GRID = 20.0


def _quantize(value: float, grid: float) -> float:
    # Snap to the nearest grid-cell center (cells are centered on integer
    # multiples of the grid size); ties go to the larger center.
    cell = math.floor(value / grid + 0.5)
    snapped = cell * grid
    if float(snapped).is_integer():
        return int(snapped)
    return snapped


def _normalize_value(value: Any, grid: float) -> Any:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return _quantize(float(value), grid)
    if isinstance(value, str):
        return value.strip().lower()
    if isinstance(value, list):
        return [_normalize_value(v, grid) for v in value]
    return value


@dataclass(frozen=True)
class CanonicalAction:
    """An Action with coordinates snapped to a grid and text lowercased/trimmed.

    Canonical equality is the action-equality proxy used by the repetition
    statistics and the stuck heuristic.
    """

    kind: ActionKind
    normalized_args: dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None

    def key(self) -> str:
        """Stable string identity; equal keys mean equal canonical actions."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value, "args": dict(self.normalized_args)}
        if self.name is not None:
            d["name"] = self.name
        return d

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CanonicalAction):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


def canonicalize_action(action: Action | CanonicalAction, grid: float = DEFAULT_GRID) -> CanonicalAction:
    """Normalize an action for equality comparisons. Total and idempotent."""
    if grid <= 0:
        raise ValueError("grid must be positive")
    if isinstance(action, CanonicalAction):
        args = action.normalized_args
    else:
        args = action.args
    normalized = {k: _normalize_value(v, grid) for k, v in args.items()}
    return CanonicalAction(kind=action.kind, normalized_args=normalized, name=action.name)


@dataclass(frozen=True)
class PolicyId:
    name: str
    tier: PolicyTier

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "tier": self.tier.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PolicyId":
        return cls(name=d["name"], tier=PolicyTier(d["tier"]))


@dataclass(frozen=True)
class Step:
    """One recorded interaction step.

    ``observation_digest`` is a stable summary of the observation after the
    action executed; ``cost`` is in integer micro-dollars to keep accounting
    exact.
    """

    index: int
    rationale: str
    action: Action
    policy: PolicyId
    observation_digest: str
    screenshot_ref: Optional[str] = None
    stuck_score: Optional[float] = None
    milestone_score: Optional[float] = None
    events: frozenset[StepEvent] = frozenset()
    latency: float = 0.0
    cost: int = 0
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("step index is 1-based")
        for label, score in (("stuck_score", self.stuck_score), ("milestone_score", self.milestone_score)):
            if score is not None and not (0.0 <= score <= 1.0):
                raise ValueError(f"{label} outside [0, 1]: {score}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "rationale": self.rationale,
            "action": self.action.to_dict(),
            "policy": self.policy.to_dict(),
            "observation_digest": self.observation_digest,
            "screenshot_ref": self.screenshot_ref,
            "stuck_score": self.stuck_score,
            "milestone_score": self.milestone_score,
            "events": sorted(e.value for e in self.events),
            "latency": self.latency,
            "cost": self.cost,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Step":
        return cls(
            index=int(d["index"]),
            rationale=d["rationale"],
            action=Action.from_dict(d["action"]),
            policy=PolicyId.from_dict(d["policy"]),
            observation_digest=d["observation_digest"],
            screenshot_ref=d.get("screenshot_ref"),
            stuck_score=d.get("stuck_score"),
            milestone_score=d.get("milestone_score"),
            events=frozenset(StepEvent(e) for e in d.get("events") or []),
            latency=float(d.get("latency", 0.0)),
            cost=int(d.get("cost", 0)),
            prompt_tokens=d.get("prompt_tokens"),
            completion_tokens=d.get("completion_tokens"),
        )


@dataclass(frozen=True)
class Episode:
    task: TaskSpec
    steps: tuple[Step, ...]
    outcome: EpisodeOutcome
    terminal_action: Optional[Action] = None

    def __post_init__(self) -> None:
        if len(self.steps) > self.task.max_steps:
            raise ValueError("episode exceeds its step budget")
        for prev, cur in zip(self.steps, self.steps[1:]):
            if cur.index <= prev.index:
                raise ValueError("step indices must be strictly increasing")

    @property
    def done_but_failed(self) -> bool:
        return (
            self.terminal_action is not None
            and self.terminal_action.kind is ActionKind.DONE
            and self.outcome is not EpisodeOutcome.SUCCESS
        )


@dataclass(frozen=True)
class WindowEntry:
    rationale: str
    action: Action

    def to_dict(self) -> dict[str, Any]:
        return {"rationale": self.rationale, "action": self.action.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WindowEntry":
        return cls(rationale=d["rationale"], action=Action.from_dict(d["action"]))


@dataclass(frozen=True)
class Window:
    """The last-K (rationale, action) pairs ending at ``end_index``."""

    entries: tuple[WindowEntry, ...]
    end_index: int

    def __len__(self) -> int:
        return len(self.entries)


def build_window(episode: Episode | Iterable[Step], t: int, k: int) -> Window:
    """Window of the last min(k, t) steps ending at step ``t`` (1-based)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    steps = episode.steps if isinstance(episode, Episode) else tuple(episode)
    if not 1 <= t <= len(steps):
        raise IndexError(f"step {t} out of range 1..{len(steps)}")
    lo = max(0, t - k)
    entries = tuple(WindowEntry(s.rationale, s.action) for s in steps[lo:t])
    return Window(entries=entries, end_index=t)


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------
#
# One UTF-8 line per record, keys sorted so serialization is bit-stable.
#
# Line 1 (header): format, task {task_id, instruction, max_steps, metadata},
#   outcome, terminal_action, config_digest, extra? (run metadata such as
#   seed, verifier_calls, monitor_calls, abort_reason, truth).
# Lines 2..n+1 (one per step): index, rationale, action {kind, args[, name]},
#   policy {name, tier}, observation_digest, screenshot_ref, stuck_score,
#   milestone_score, events, latency, cost, prompt_tokens, completion_tokens.

TRACE_FORMAT = "cascade-trace/1"


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def serialize_trace(episode: Episode, config_digest: str = "", extra: Optional[dict[str, Any]] = None) -> str:
    header: dict[str, Any] = {
        "format": TRACE_FORMAT,
        "task": episode.task.to_dict(),
        "outcome": episode.outcome.value,
        "terminal_action": episode.terminal_action.to_dict() if episode.terminal_action else None,
        "config_digest": config_digest,
    }
    if extra:
        header["extra"] = extra
    lines = [_dumps(header)]
    lines.extend(_dumps(s.to_dict()) for s in episode.steps)
    return "\n".join(lines) + "\n"


def parse_trace_full(text: str) -> tuple[Episode, dict[str, Any]]:
    """Parse a serialized trace, returning the episode and its header."""
    lines = text.splitlines()
    if not lines:
        raise TraceError("empty trace: missing header at line 1")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceError(f"line 1: malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != TRACE_FORMAT:
        raise TraceError("line 1: not a cascade trace header")
    try:
        task = TaskSpec.from_dict(header["task"])
        outcome = EpisodeOutcome(header["outcome"])
        terminal = header.get("terminal_action")
        terminal_action = Action.from_dict(terminal) if terminal else None
    except (KeyError, ValueError, TypeError) as exc:
        raise TraceError(f"line 1: bad header field: {exc}") from exc

    steps: list[Step] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            steps.append(Step.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise TraceError(f"line {lineno}: malformed step record: {exc}") from exc
    episode = Episode(task=task, steps=tuple(steps), outcome=outcome, terminal_action=terminal_action)
    return episode, header


def parse_trace(text: str) -> Episode:
    return parse_trace_full(text)[0]
