"""Event-driven control loop: routing, escalation, milestone verification.

Two routing modes are exposed. ``basic`` is the memoryless indicator rule:
the large policy acts at step t+1 exactly when the stuck score at step t
cleared the threshold (or a failed verification forced escalation).
``hysteresis`` adds debounce and budget knobs: m consecutive fires to
escalate, at least R calm large steps (score below theta_s - delta) to
de-escalate, and an optional cap B on escalations per episode. With
m=1, R=1, delta=0, B unlimited, hysteresis reduces exactly to basic.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .metrics import PriceEntry
from .monitors import MilestoneMonitor, StuckMonitor, score_milestone, score_stuck
from .policies import Policy, PolicyError, PolicyRequest, serialize_handoff
from .synthenv import SynthEnv, StepTruth, evaluate_episode
from .trace import (
    Action,
    ActionKind,
    Episode,
    EpisodeOutcome,
    PolicyTier,
    Step,
    StepEvent,
    TaskSpec,
    Window,
    build_window,
    serialize_trace,
)
from .verifier import Evidence, Verifier, build_milestone_packet

log = logging.getLogger(__name__)

RUN_MODES = ("cascade", "small-only", "large-only", "periodic")


@dataclass(frozen=True)
class CascadeConfig:
    """Thresholds and stability knobs for the controller.

    Thresholds above 1.0 can never fire (monitor scores live in [0, 1]);
    that is the supported way to disable a trigger, and it is what the
    small-only equivalence checks rely on.
    """

    theta_s: float = 0.5
    theta_m: float = 0.5
    window_k: int = 6
    mode: str = "basic"  # "basic" or "hysteresis"
    fires_to_escalate: int = 1  # m: consecutive fires before escalating
    min_large_steps: int = 3  # R: calm large steps before de-escalating
    deescalate_gap: float = 0.1  # delta: calm means score < theta_s - delta
    recovery_budget: Optional[int] = None  # B: max escalations, None = unlimited
    verification_fail_steps: int = 3  # R_v: forced large steps after a failed check
    periodic_k: Optional[int] = None  # fixed-interval baseline cadence
    handoff_scope: str = "full"  # "full" or "window": transcript passed on handoff
    grid: float = 20.0

    def __post_init__(self) -> None:
        if self.theta_s < 0 or self.theta_m < 0:
            raise ValueError("thresholds must be non-negative")
        if self.mode not in ("basic", "hysteresis"):
            raise ValueError(f"unknown controller mode {self.mode!r}")
        if self.mode == "hysteresis" and self.theta_s - self.deescalate_gap < 0:
            raise ValueError("theta_s - deescalate_gap must be >= 0 in hysteresis mode")
        if self.window_k < 1 or self.fires_to_escalate < 1 or self.min_large_steps < 1:
            raise ValueError("window_k, fires_to_escalate, min_large_steps must be >= 1")
        if self.verification_fail_steps < 1:
            raise ValueError("verification_fail_steps must be >= 1")
        if self.periodic_k is not None and self.periodic_k < 1:
            raise ValueError("periodic_k must be >= 1")
        if self.handoff_scope not in ("full", "window"):
            raise ValueError(f"unknown handoff scope {self.handoff_scope!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta_s": self.theta_s,
            "theta_m": self.theta_m,
            "window_k": self.window_k,
            "mode": self.mode,
            "fires_to_escalate": self.fires_to_escalate,
            "min_large_steps": self.min_large_steps,
            "deescalate_gap": self.deescalate_gap,
            "recovery_budget": self.recovery_budget,
            "verification_fail_steps": self.verification_fail_steps,
            "periodic_k": self.periodic_k,
            "handoff_scope": self.handoff_scope,
            "grid": self.grid,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CascadeConfig":
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class ControllerState:
    escalated: bool = False
    consecutive_fires: int = 0
    steps_on_large: int = 0  # consecutive calm large steps (hysteresis)
    escalations_used: int = 0
    tau: int = 0  # last verified milestone index
    forced_escalation_until: int = 0

    def budget_left(self, cfg: CascadeConfig) -> bool:
        return cfg.recovery_budget is None or self.escalations_used < cfg.recovery_budget


@dataclass(frozen=True)
class ControlDecision:
    set_escalation: bool
    trigger_verification: bool


def decide_route(state: ControllerState, cfg: CascadeConfig, t: int) -> PolicyTier:
    """Tier for step t, from the state left by step t-1."""
    if t <= state.forced_escalation_until:
        return PolicyTier.LARGE
    if state.escalated:
        return PolicyTier.LARGE
    return PolicyTier.SMALL


def periodic_should_check(t: int, k: int) -> bool:
    if k < 1:
        raise ValueError("k must be >= 1")
    return t % k == 0


def on_step_end(
    state: ControllerState,
    cfg: CascadeConfig,
    window: Window,
    p_stuck: float,
    p_mile: float,
    t: int,
    acted_tier: PolicyTier = PolicyTier.SMALL,
) -> ControlDecision:
    """Update escalation state from step-t scores; returns what fired.

    Verification triggering is threshold-only; the caller runs the
    verification (if any) before applying the escalation outcome, because
    the packet must reflect the state before recovery actions.
    """
    trigger_verification = p_mile >= cfg.theta_m

    if cfg.mode == "basic":
        fired = p_stuck >= cfg.theta_s
        if fired and not state.escalated:
            if state.budget_left(cfg):
                state.escalations_used += 1
                state.escalated = True
            else:
                fired = False
        else:
            state.escalated = fired
        return ControlDecision(set_escalation=state.escalated, trigger_verification=trigger_verification)

    # hysteresis
    fired = p_stuck >= cfg.theta_s
    if not state.escalated:
        state.consecutive_fires = state.consecutive_fires + 1 if fired else 0
        if state.consecutive_fires >= cfg.fires_to_escalate and state.budget_left(cfg):
            state.escalated = True
            state.escalations_used += 1
            state.consecutive_fires = 0
            state.steps_on_large = 0
    else:
        calm = acted_tier is PolicyTier.LARGE and p_stuck < cfg.theta_s - cfg.deescalate_gap
        state.steps_on_large = state.steps_on_large + 1 if calm else 0
        if state.steps_on_large >= cfg.min_large_steps:
            state.escalated = False
            state.steps_on_large = 0
    return ControlDecision(set_escalation=state.escalated, trigger_verification=trigger_verification)


def apply_verdict(state: ControllerState, cfg: CascadeConfig, success: bool, t: int) -> ControllerState:
    """Commit the milestone on a pass; force escalated recovery on a fail."""
    if success:
        state.tau = t
    else:
        state.forced_escalation_until = max(state.forced_escalation_until, t + cfg.verification_fail_steps)
    return state


@dataclass(frozen=True)
class EpisodeRecord:
    episode: Episode
    verifier_calls: int
    monitor_calls: int
    config_digest: str
    seed: int
    truth: dict[int, StepTruth] = field(default_factory=dict)
    abort_reason: Optional[str] = None

    def serialize(self) -> str:
        extra: dict[str, Any] = {
            "seed": self.seed,
            "verifier_calls": self.verifier_calls,
            "monitor_calls": self.monitor_calls,
        }
        if self.abort_reason:
            extra["abort_reason"] = self.abort_reason
        if self.truth:
            extra["truth"] = [self.truth[k].to_dict() for k in sorted(self.truth)]
        return serialize_trace(self.episode, config_digest=self.config_digest, extra=extra)


def parse_record(text: str) -> EpisodeRecord:
    from .trace import parse_trace_full

    episode, header = parse_trace_full(text)
    extra = header.get("extra") or {}
    truth = {int(t["step"]): StepTruth.from_dict(t) for t in extra.get("truth", [])}
    return EpisodeRecord(
        episode=episode,
        verifier_calls=int(extra.get("verifier_calls", 0)),
        monitor_calls=int(extra.get("monitor_calls", 0)),
        config_digest=header.get("config_digest", ""),
        seed=int(extra.get("seed", 0)),
        truth=truth,
        abort_reason=extra.get("abort_reason"),
    )


class EpisodeRunner:
    """Runs one task per call; adapters are shared and must be stateless
    across episodes (scripted simulator policies are bound per episode by
    the caller via a factory)."""

    def __init__(
        self,
        cfg: CascadeConfig,
        run_mode: str = "cascade",
        stuck_monitor: Optional[StuckMonitor] = None,
        milestone_monitor: Optional[MilestoneMonitor] = None,
        verifier: Optional[Verifier] = None,
        prices: Optional[dict[str, PriceEntry]] = None,
        config_digest: Optional[str] = None,
    ):
        if run_mode not in RUN_MODES:
            raise ValueError(f"unknown run mode {run_mode!r}")
        if run_mode == "periodic" and cfg.periodic_k is None:
            raise ValueError("periodic run mode requires periodic_k")
        self.cfg = cfg
        self.run_mode = run_mode
        self.stuck_monitor = stuck_monitor
        self.milestone_monitor = milestone_monitor
        self.verifier = verifier
        self.prices = prices or {}
        self.config_digest = config_digest if config_digest is not None else cfg.digest()

    def _price(self, key: str) -> PriceEntry:
        return self.prices.get(key, PriceEntry())

    def run_episode(
        self,
        task: TaskSpec,
        policies: dict[PolicyTier, Policy],
        seed: int,
        env: Optional[SynthEnv] = None,
        initial_digest: Optional[str] = None,
    ) -> EpisodeRecord:
        cfg = self.cfg
        state = ControllerState()
        steps: list[Step] = []
        monitor_calls = 0
        verifier_calls = 0
        outcome = EpisodeOutcome.BUDGET_EXHAUSTED
        terminal_action: Optional[Action] = None
        abort_reason: Optional[str] = None
        observation = initial_digest if initial_digest is not None else (env.initial_digest if env else "")
        initial_evidence = Evidence.digest(observation)

        score_monitors = self.run_mode != "large-only"

        for t in range(1, task.max_steps + 1):
            if self.run_mode == "large-only":
                tier = PolicyTier.LARGE
            elif self.run_mode == "small-only":
                tier = PolicyTier.SMALL
            elif self.run_mode == "periodic":
                tier = PolicyTier.LARGE if t <= state.forced_escalation_until else PolicyTier.SMALL
            else:
                tier = decide_route(state, cfg, t)
            policy = policies[tier]

            history = steps if cfg.handoff_scope == "full" else steps[max(0, len(steps) - cfg.window_k):]
            request = PolicyRequest(
                task=task,
                transcript=serialize_handoff(history, cfg.grid),
                observation_digest=observation,
            )
            try:
                response = policy.next_step(request)
            except PolicyError as exc:
                abort_reason = str(exc)
                outcome = EpisodeOutcome.FAILURE
                break

            if env is not None:
                observation, _ = env.apply(response.action, tier.value)
            # (a real environment would execute the action here instead)

            events: set[StepEvent] = set()
            if tier is PolicyTier.LARGE and self.run_mode in ("cascade", "periodic"):
                events.add(StepEvent.ESCALATED)

            price = self._price(tier.value)
            latency = response.latency if response.latency > 0 else price.latency
            cost = price.per_call
            prompt_tokens = completion_tokens = None
            if response.token_counts:
                prompt_tokens, completion_tokens = response.token_counts
                cost += (prompt_tokens * price.per_1k_prompt_tokens) // 1000
                cost += (completion_tokens * price.per_1k_completion_tokens) // 1000

            step = Step(
                index=t,
                rationale=response.rationale,
                action=response.action,
                policy=policy.policy_id,
                observation_digest=observation,
                latency=latency,
                cost=cost,
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
            )
            steps.append(step)

            window = build_window(steps, t, cfg.window_k)
            p_stuck_val: Optional[float] = None
            p_mile_val: Optional[float] = None
            if score_monitors:
                mon_price = self._price("monitor")
                if self.stuck_monitor is not None:
                    p_stuck_val = score_stuck(self.stuck_monitor, window).value
                    monitor_calls += 1
                    latency += mon_price.latency
                if self.milestone_monitor is not None:
                    p_mile_val = score_milestone(self.milestone_monitor, task.instruction, window).value
                    monitor_calls += 1
                    latency += mon_price.latency

            # decide what fired at this step
            if self.run_mode == "cascade":
                decision = on_step_end(
                    state, cfg, window, p_stuck_val or 0.0, p_mile_val or 0.0, t, acted_tier=tier,
                )
                wants_verification = decision.trigger_verification and self.verifier is not None
            elif self.run_mode == "periodic":
                wants_verification = (
                    self.verifier is not None and periodic_should_check(t, cfg.periodic_k or 1)
                )
            else:
                wants_verification = False

            if wants_verification:
                events.add(StepEvent.MILESTONE_TRIGGERED)
                latency += self._price("verifier").latency
                interim = Episode(task=task, steps=tuple(steps), outcome=EpisodeOutcome.BUDGET_EXHAUSTED)
                packet = build_milestone_packet(
                    interim, task, state.tau, t,
                    initial_evidence=initial_evidence if state.tau == 0 else None,
                )
                verdict = self.verifier.verify(packet)
                verifier_calls += 1
                apply_verdict(state, cfg, verdict.success, t)
                if verdict.success:
                    events.add(StepEvent.MILESTONE_COMMITTED)
                else:
                    events.add(StepEvent.VERIFICATION_FAILED)

            steps[-1] = replace(step, stuck_score=p_stuck_val, milestone_score=p_mile_val,
                                events=frozenset(events), latency=latency)

            if response.action.kind is ActionKind.DONE:
                terminal_action = response.action
                outcome = EpisodeOutcome.SUCCESS  # provisional; evaluator decides below
                break
            if response.action.kind is ActionKind.FAIL:
                terminal_action = response.action
                outcome = EpisodeOutcome.FAILURE
                break

        episode = Episode(task=task, steps=tuple(steps), outcome=outcome, terminal_action=terminal_action)
        if terminal_action is not None and terminal_action.kind is ActionKind.DONE and env is not None:
            success = evaluate_episode(env.task, episode)
            episode = Episode(
                task=task,
                steps=tuple(steps),
                outcome=EpisodeOutcome.SUCCESS if success else EpisodeOutcome.FAILURE,
                terminal_action=terminal_action,
            )

        return EpisodeRecord(
            episode=episode,
            verifier_calls=verifier_calls,
            monitor_calls=monitor_calls,
            config_digest=self.config_digest,
            seed=seed,
            truth=dict(env.task.truth) if env is not None else {},
            abort_reason=abort_reason,
        )
