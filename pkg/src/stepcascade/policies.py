"""Uniform policy interface: one (rationale, action) per step.

Includes simple scripted policies for tests, the remote-endpoint adapter,
and the cross-model handoff serializer that re-serializes the small
model's recent history so the escalation policy can continue from the
current state with full local context.
"""

from __future__ import annotations

import base64
import logging
import time
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import requests

from .trace import (
    Action,
    ActionKind,
    PolicyId,
    PolicyTier,
    Step,
    TaskSpec,
    canonicalize_action,
)

log = logging.getLogger(__name__)


class PolicyError(RuntimeError):
    """Unreachable endpoint or malformed model output; the episode aborts."""


@dataclass(frozen=True)
class HandoffEntry:
    """One transcript line: canonical action rendered with stable key order."""

    step_index: int
    rationale: str
    action: dict[str, Any]
    observation_digest: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "rationale": self.rationale,
            "action": self.action,
            "observation_digest": self.observation_digest,
        }


@dataclass(frozen=True)
class PolicyRequest:
    task: TaskSpec
    transcript: tuple[HandoffEntry, ...]
    observation_digest: str
    screenshot_ref: Optional[bytes] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task.to_dict(),
            "transcript": [e.to_dict() for e in self.transcript],
            "observation_digest": self.observation_digest,
            "screenshot": base64.b64encode(self.screenshot_ref).decode("ascii")
            if self.screenshot_ref is not None
            else None,
        }


@dataclass(frozen=True)
class PolicyResponse:
    rationale: str
    action: Action
    latency: float = 0.0
    token_counts: Optional[tuple[int, int]] = None  # (prompt, completion)


def serialize_handoff(history: Sequence[Step], grid: float = 20.0) -> tuple[HandoffEntry, ...]:
    """Order-preserving transcript: exactly one entry per step.

    Actions are rendered canonically so both tiers see one representation;
    rationale text is passed through verbatim.
    """
    return tuple(
        HandoffEntry(
            step_index=s.index,
            rationale=s.rationale,
            action=canonicalize_action(s.action, grid).to_dict(),
            observation_digest=s.observation_digest,
        )
        for s in history
    )


class Policy:
    """Base adapter: subclasses implement next_step."""

    def __init__(self, policy_id: PolicyId):
        self.policy_id = policy_id

    def next_step(self, request: PolicyRequest) -> PolicyResponse:
        raise NotImplementedError


class AlwaysDonePolicy(Policy):
    """Scripted: finishes immediately. Useful as a degenerate baseline."""

    def __init__(self, policy_id: PolicyId | None = None):
        super().__init__(policy_id or PolicyId("always-done", PolicyTier.SMALL))

    def next_step(self, request: PolicyRequest) -> PolicyResponse:
        return PolicyResponse(rationale="finish", action=Action(ActionKind.DONE))


class LoopingPolicy(Policy):
    """Scripted: emits a fixed action while ``looping`` is set, else a fresh
    click per step. Pure function of the request and its own flags."""

    def __init__(self, policy_id: PolicyId | None = None, looping: bool = True):
        super().__init__(policy_id or PolicyId("looping", PolicyTier.SMALL))
        self.looping = looping

    def next_step(self, request: PolicyRequest) -> PolicyResponse:
        t = len(request.transcript) + 1
        if self.looping:
            action = Action(ActionKind.CLICK, {"x": 100, "y": 100})
            rationale = "the dialog is still open; dismissing it"
        else:
            action = Action(ActionKind.CLICK, {"x": 40 * t, "y": 40 * t})
            rationale = f"exploring step {t}"
        return PolicyResponse(rationale=rationale, action=action)


class SequencePolicy(Policy):
    """Scripted: replays a fixed list of (rationale, action) pairs."""

    def __init__(self, script: Sequence[tuple[str, Action]], policy_id: PolicyId | None = None):
        super().__init__(policy_id or PolicyId("sequence", PolicyTier.SMALL))
        self._script = list(script)

    def next_step(self, request: PolicyRequest) -> PolicyResponse:
        t = len(request.transcript)
        if t >= len(self._script):
            return PolicyResponse(rationale="script exhausted; finishing", action=Action(ActionKind.DONE))
        rationale, action = self._script[t]
        return PolicyResponse(rationale=rationale, action=action)


class RemotePolicy(Policy):
    """HTTP adapter: POST /act with the request, expect rationale + action.

    On malformed output the step fails closed (PolicyError) after the
    configured number of retries rather than retrying silently forever.
    """

    def __init__(
        self,
        policy_id: PolicyId,
        base_url: str,
        timeout: float = 30.0,
        retries: int = 1,
        session: Optional[requests.Session] = None,
    ):
        super().__init__(policy_id)
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def next_step(self, request: PolicyRequest) -> PolicyResponse:
        body = request.to_dict()
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            start = time.monotonic()
            try:
                resp = self._session.post(f"{self.base_url}/act", json=body, timeout=self.timeout)
                resp.raise_for_status()
                payload = resp.json()
                return self._parse_response(payload, latency=time.monotonic() - start)
            except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
                last_error = exc
                if attempt < self.retries:
                    log.warning("policy %s attempt %d failed: %s", self.policy_id.name, attempt + 1, exc)
        raise PolicyError(f"policy {self.policy_id.name} failed after {self.retries + 1} attempts: {last_error}")

    def _parse_response(self, payload: Any, latency: float) -> PolicyResponse:
        if not isinstance(payload, dict) or "action" not in payload or "rationale" not in payload:
            raise KeyError("response must carry 'rationale' and 'action'")
        action = Action.from_dict(payload["action"])
        tokens = payload.get("token_counts")
        token_counts = (int(tokens[0]), int(tokens[1])) if tokens else None
        return PolicyResponse(
            rationale=str(payload["rationale"]),
            action=action,
            latency=latency,
            token_counts=token_counts,
        )
