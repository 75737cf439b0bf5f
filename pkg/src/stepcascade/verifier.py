"""Milestone packet construction and the two-question verification contract.

A packet summarizes the transition from the last verified milestone tau to
the current step t: the task instruction, the rationale-action trace over
that segment, and before/after evidence. A verifier answers two questions:
is the segment plausibly advancing toward the goal (progress validity),
and does the state at t reflect the intended outcome (intent consistency).
"""

from __future__ import annotations

import base64
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import requests

from .trace import Episode, TaskSpec, WindowEntry

log = logging.getLogger(__name__)


class PacketError(ValueError):
    """Invalid (tau, t) bounds or missing checkpoint evidence."""


class VerifierError(RuntimeError):
    """Transport or schema failure from a remote verifier."""


@dataclass(frozen=True)
class Evidence:
    kind: str  # "digest" or "image"
    data: str  # digest string, or base64 image bytes

    def to_dict(self) -> dict:
        return {"kind": self.kind, "data": self.data}

    @classmethod
    def image(cls, raw: bytes) -> "Evidence":
        return cls(kind="image", data=base64.b64encode(raw).decode("ascii"))

    @classmethod
    def digest(cls, value: str) -> "Evidence":
        return cls(kind="digest", data=value)


@dataclass(frozen=True)
class Verdict:
    progress_valid: bool
    intent_consistent: bool
    reasoning: str = ""
    inferred_milestone: str = ""

    @property
    def success(self) -> bool:
        return self.progress_valid and self.intent_consistent


@dataclass(frozen=True)
class MilestonePacket:
    task: TaskSpec
    segment: tuple[WindowEntry, ...]
    before: Evidence
    after: Evidence
    tau: int
    t: int

    def __post_init__(self) -> None:
        if self.tau >= self.t:
            raise PacketError(f"tau ({self.tau}) must be strictly below t ({self.t})")
        if len(self.segment) != self.t - self.tau:
            raise PacketError(f"segment length {len(self.segment)} != t - tau = {self.t - self.tau}")
        if self.before.kind != self.after.kind:
            raise PacketError("before/after evidence kinds must match")


def build_milestone_packet(
    episode: Episode,
    task: TaskSpec,
    tau: int,
    t: int,
    initial_evidence: Optional[Evidence] = None,
) -> MilestonePacket:
    """Packet covering steps tau+1..t of the episode.

    Before-evidence is the checkpoint saved at step tau; for tau=0 (nothing
    committed yet) the caller supplies the initial-state evidence.
    """
    if tau >= t:
        raise PacketError(f"tau ({tau}) must be strictly below t ({t})")
    steps = episode.steps
    if tau < 0 or t > len(steps):
        raise PacketError(f"(tau={tau}, t={t}) out of range for a {len(steps)}-step episode")

    if tau == 0:
        if initial_evidence is None:
            raise PacketError("missing evidence: no checkpoint at tau=0 and no initial evidence supplied")
        before = initial_evidence
    else:
        before_step = steps[tau - 1]
        if before_step.screenshot_ref is not None:
            before = Evidence(kind="image", data=before_step.screenshot_ref)
        else:
            before = Evidence.digest(before_step.observation_digest)

    after_step = steps[t - 1]
    if after_step.screenshot_ref is not None:
        after = Evidence(kind="image", data=after_step.screenshot_ref)
    else:
        after = Evidence.digest(after_step.observation_digest)

    segment = tuple(WindowEntry(s.rationale, s.action) for s in steps[tau:t])
    return MilestonePacket(task=task, segment=segment, before=before, after=after, tau=tau, t=t)


class Verifier:
    def verify(self, packet: MilestonePacket) -> Verdict:
        raise NotImplementedError


class OracleVerifier(Verifier):
    """Answers from simulator ground truth.

    intent_consistent: the drift flag is not set at t. progress_valid:
    true subgoal progress strictly increased over tau..t.
    """

    def __init__(self, drift_at: Callable[[int], bool], progress_at: Callable[[int], int]):
        self._drift_at = drift_at
        self._progress_at = progress_at

    def verify(self, packet: MilestonePacket) -> Verdict:
        intent = not self._drift_at(packet.t)
        progress = self._progress_at(packet.t) > self._progress_at(packet.tau)
        reason = []
        reason.append("segment shows real progress" if progress else "no real progress over the segment")
        reason.append("state matches intent" if intent else "state has drifted from the task intent")
        return Verdict(
            progress_valid=progress,
            intent_consistent=intent,
            reasoning="; ".join(reason),
            inferred_milestone=f"checkpoint at step {packet.t}",
        )


class RemoteVerifier(Verifier):
    """HTTP adapter: POST /verify; the response carries a single ``success``
    boolean, which maps onto both checks uniformly.

    Transport or schema failure is treated as a failed verdict: verification
    exists to catch silent drift, so an unanswerable check is elevated risk.
    """

    def __init__(self, base_url: str, timeout: float = 60.0, session: Optional[requests.Session] = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def verify(self, packet: MilestonePacket) -> Verdict:
        body = {
            "task": packet.task.instruction,
            "trace": [{"rationale": e.rationale, "action": e.action.to_dict()} for e in packet.segment],
            "before": packet.before.to_dict(),
            "after": packet.after.to_dict(),
        }
        try:
            resp = self._session.post(f"{self.base_url}/verify", json=body, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
            success = bool(payload["success"])
            reasoning = str(payload.get("reasoning", ""))
            inferred = str(payload.get("inferred_milestone", ""))
        except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
            log.warning("verifier request failed, treating as failed verdict: %s", exc)
            return Verdict(
                progress_valid=False,
                intent_consistent=False,
                reasoning=f"verifier unavailable: {exc}",
                inferred_milestone="",
            )
        return Verdict(
            progress_valid=success,
            intent_consistent=success,
            reasoning=reasoning,
            inferred_milestone=inferred,
        )


def verify(verifier: Verifier, packet: MilestonePacket) -> Verdict:
    return verifier.verify(packet)
