"""Deterministic synthetic task environment with injected failure modes.

Tasks are chains of named subgoals. The scripted default policy advances
with a tier-dependent per-step probability; two failure modes are injected
at the environment/policy boundary so ground truth is exact by
construction:

* progress stalls: the policy repeats one canonical action for a sampled
  number of steps (visible to repetition-based signals);
* silent semantic drift: the policy wanders down a plausible wrong branch,
  periodically claiming milestone-like completions (invisible to
  repetition signals, caught only by verification), and eventually issues
  ``done``.

Observation digests are readable summaries of (task id, step, displayed
progress, mode), so ground-truth flags can be reconstructed offline from a
serialized trace alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from .rng import SubStream, derive_seed
from .trace import Action, ActionKind, Episode, TaskSpec

SUBGOAL_POOL = (
    "billing profile",
    "report draft",
    "access policy",
    "export schedule",
    "team roster",
    "archive rule",
    "invoice template",
    "notification filter",
    "backup target",
    "dashboard layout",
)

DECOY_POOL = (
    "promotions page",
    "legacy settings tab",
    "help center article",
    "beta features panel",
    "survey form",
    "release notes view",
)

BLOCKER_POOL = (
    "notification popup",
    "cookie banner",
    "update dialog",
    "survey overlay",
)


class EnvMode(str, Enum):
    NORMAL = "normal"
    LOOPING = "looping"
    DRIFTING = "drifting"


class Fate(str, Enum):
    ADVANCE = "advance"
    EXPLORE = "explore"
    STALL_ENTER = "stall_enter"
    LOOP_CONTINUE = "loop_continue"
    DRIFT_ENTER = "drift_enter"
    DRIFT_CLAIM = "drift_claim"
    DRIFT_EXPLORE = "drift_explore"
    DRIFT_DONE = "drift_done"
    RECOVER = "recover"
    FINISH_DONE = "finish_done"


@dataclass(frozen=True)
class FailureProfile:
    """Per-step injection rates for the scripted small policy.

    The strong tier's edge is modeled as failure immunity plus recovery
    (it never stalls or drifts, and it exits loops and wrong branches),
    not as a faster per-step progress rate, so equal progress rates with
    different failure exposure are a legitimate configuration.
    """

    p_stall: float = 0.08
    loop_len_mean: float = 40.0
    p_drift: float = 0.05
    drift_len_mean: float = 24.0
    p_correct_small: float = 0.15
    p_correct_large: float = 0.15
    large_recovers: bool = True

    def __post_init__(self) -> None:
        for name in ("p_stall", "p_drift", "p_correct_small", "p_correct_large"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {value}")
        if self.p_correct_large < self.p_correct_small:
            raise ValueError("p_correct_large must be >= p_correct_small")

    def to_dict(self) -> dict[str, Any]:
        return {
            "p_stall": self.p_stall,
            "loop_len_mean": self.loop_len_mean,
            "p_drift": self.p_drift,
            "drift_len_mean": self.drift_len_mean,
            "p_correct_small": self.p_correct_small,
            "p_correct_large": self.p_correct_large,
            "large_recovers": self.large_recovers,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FailureProfile":
        return cls(**d)


@dataclass(frozen=True)
class StepTruth:
    """Ground truth emitted alongside each environment transition."""

    step: int
    in_stuck_region: bool
    completes_milestone: bool
    drift_active: bool
    true_progress: int
    displayed_progress: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "in_stuck_region": self.in_stuck_region,
            "completes_milestone": self.completes_milestone,
            "drift_active": self.drift_active,
            "true_progress": self.true_progress,
            "displayed_progress": self.displayed_progress,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StepTruth":
        return cls(
            step=int(d["step"]),
            in_stuck_region=bool(d["in_stuck_region"]),
            completes_milestone=bool(d["completes_milestone"]),
            drift_active=bool(d["drift_active"]),
            true_progress=int(d["true_progress"]),
            displayed_progress=int(d["displayed_progress"]),
        )


@dataclass
class SynthTask:
    task: TaskSpec
    subgoals: tuple[str, ...]
    seed: int
    truth: dict[int, StepTruth] = field(default_factory=dict)

    @property
    def num_subgoals(self) -> int:
        return len(self.subgoals)

    def truth_flag(self, kind: str):
        """Step-indexed ground-truth lookup for the oracle monitors."""
        def lookup(step: int) -> bool:
            record = self.truth.get(step)
            return bool(getattr(record, kind)) if record else False
        return lookup

    def progress_at(self, step: int) -> int:
        if step <= 0:
            return 0
        record = self.truth.get(step)
        return record.true_progress if record else 0


def generate_task(seed: int, num_subgoals: int, max_steps: int = 40) -> SynthTask:
    """Deterministic task with ``num_subgoals`` named subgoals."""
    if num_subgoals < 1:
        raise ValueError("a task needs at least one subgoal")
    picker = SubStream(seed, "subgoals")
    offset = picker.randint(0, 0, len(SUBGOAL_POOL) - 1)
    subgoals = tuple(
        f"configure the {SUBGOAL_POOL[(offset + i) % len(SUBGOAL_POOL)]}" for i in range(num_subgoals)
    )
    task_id = f"t{seed:016x}"
    instruction = "Complete the workflow: " + ", then ".join(subgoals) + "."
    spec = TaskSpec(
        task_id=task_id,
        instruction=instruction,
        max_steps=max_steps,
        metadata={"seed": str(seed), "subgoals": str(num_subgoals)},
    )
    return SynthTask(task=spec, subgoals=subgoals, seed=seed)


@dataclass(frozen=True)
class FateInfo:
    """A pre-committed environment outcome plus rendering context."""

    fate: Fate
    step: int
    tier: str
    subgoal: str = ""
    blocker: str = ""
    decoy: str = ""
    drift_age: int = 0
    drift_claims: int = 0
    ordinal: int = 0  # 1-based stall/drift event number


def _digest(task_id: str, step: int, displayed: int, mode: EnvMode) -> str:
    return f"{task_id}|s{step}|g{displayed}|m{mode.value}"


def parse_digest(digest: str) -> tuple[str, int, int, str]:
    """(task_id, step, displayed_progress, mode) from an observation digest."""
    task_id, s_part, g_part, m_part = digest.split("|")
    return task_id, int(s_part[1:]), int(g_part[1:]), m_part[1:]


class SynthEnv:
    """One environment instance per episode; instances are independent.

    The scripted policies call :meth:`peek_fate` before acting so their
    rationale text matches what the environment will do; :meth:`apply`
    consumes the pre-committed fate. All sampling uses named substreams
    indexed by stable counters, so stall, drift, and progress draws never
    perturb each other.
    """

    def __init__(self, task: SynthTask, profile: FailureProfile, seed: Optional[int] = None):
        self.task = task
        self.profile = profile
        self.seed = task.seed if seed is None else seed
        base = (self.seed, task.task.task_id)
        self._stall = SubStream(*base, "stall")
        self._loop_len = SubStream(*base, "loop_len")
        self._drift = SubStream(*base, "drift")
        self._drift_len = SubStream(*base, "drift_len")
        self._progress = SubStream(*base, "progress")

        self.mode = EnvMode.NORMAL
        self.subgoal_index = 0  # true completed subgoals
        self.drift_claims = 0
        self.steps_taken = 0
        self._loop_remaining = 0
        self._drift_age = 0
        self._drift_total = 0
        self._normal_ordinal = 0
        self._stall_events = 0
        self._drift_events = 0
        self._pending: Optional[FateInfo] = None

    # -- observation ----------------------------------------------------

    @property
    def displayed_progress(self) -> int:
        return self.subgoal_index + self.drift_claims

    @property
    def initial_digest(self) -> str:
        return _digest(self.task.task.task_id, 0, 0, EnvMode.NORMAL)

    def next_subgoal(self) -> str:
        if self.subgoal_index < len(self.task.subgoals):
            return self.task.subgoals[self.subgoal_index]
        return self.task.subgoals[-1]

    # -- dynamics --------------------------------------------------------

    def peek_fate(self, tier: str) -> FateInfo:
        step = self.steps_taken + 1
        if self._pending is not None and self._pending.step == step and self._pending.tier == tier:
            return self._pending
        self._pending = self._sample_fate(step, tier)
        return self._pending

    def _sample_fate(self, step: int, tier: str) -> FateInfo:
        p = self.profile
        large = tier == "large"
        if self.mode is EnvMode.LOOPING:
            if large and p.large_recovers:
                return FateInfo(Fate.RECOVER, step, tier, subgoal=self.next_subgoal())
            return FateInfo(
                Fate.LOOP_CONTINUE, step, tier,
                blocker=BLOCKER_POOL[(self._stall_events - 1) % len(BLOCKER_POOL)],
                ordinal=self._stall_events,
            )
        if self.mode is EnvMode.DRIFTING:
            if large and p.large_recovers:
                return FateInfo(Fate.RECOVER, step, tier, subgoal=self.next_subgoal())
            decoy = DECOY_POOL[(self._drift_events - 1) % len(DECOY_POOL)]
            age = self._drift_age + 1
            if age > self._drift_total:
                return FateInfo(Fate.DRIFT_DONE, step, tier, decoy=decoy, drift_age=age)
            fate = Fate.DRIFT_CLAIM if age % 2 == 1 else Fate.DRIFT_EXPLORE
            return FateInfo(fate, step, tier, decoy=decoy, drift_age=age, drift_claims=self.drift_claims + 1)

        # normal mode
        if self.subgoal_index >= len(self.task.subgoals):
            return FateInfo(Fate.FINISH_DONE, step, tier)
        if not large:
            ordinal = self._normal_ordinal + 1
            if self._stall.u(ordinal) < p.p_stall:
                return FateInfo(
                    Fate.STALL_ENTER, step, tier,
                    blocker=BLOCKER_POOL[self._stall_events % len(BLOCKER_POOL)],
                    ordinal=self._stall_events + 1,
                )
            if self._drift.u(ordinal) < p.p_drift:
                return FateInfo(
                    Fate.DRIFT_ENTER, step, tier,
                    decoy=DECOY_POOL[self._drift_events % len(DECOY_POOL)],
                    drift_age=1, drift_claims=self.drift_claims + 1,
                )
            advance = self._progress.u(step) < p.p_correct_small
        else:
            advance = self._progress.u(step) < p.p_correct_large
        if advance:
            return FateInfo(Fate.ADVANCE, step, tier, subgoal=self.next_subgoal())
        return FateInfo(Fate.EXPLORE, step, tier, subgoal=self.next_subgoal())

    def apply(self, action: Action, tier: str) -> tuple[str, StepTruth]:
        """Execute one step; returns (new observation digest, ground truth)."""
        info = self.peek_fate(tier)
        self._pending = None
        self.steps_taken = info.step
        fate = info.fate

        in_stuck = False
        milestone = False
        drifting = False

        if fate is Fate.ADVANCE:
            self.subgoal_index += 1
            milestone = True
            if tier == "small":
                self._normal_ordinal += 1
        elif fate is Fate.EXPLORE:
            if tier == "small":
                self._normal_ordinal += 1
        elif fate is Fate.FINISH_DONE:
            pass
        elif fate is Fate.STALL_ENTER:
            self._normal_ordinal += 1
            self._stall_events += 1
            length = self._loop_len.geometric(self._stall_events, self.profile.loop_len_mean)
            self.mode = EnvMode.LOOPING
            self._loop_remaining = length - 1
            in_stuck = True
            if self._loop_remaining <= 0:
                self.mode = EnvMode.NORMAL
        elif fate is Fate.LOOP_CONTINUE:
            self._loop_remaining -= 1
            in_stuck = True
            if self._loop_remaining <= 0:
                self.mode = EnvMode.NORMAL
        elif fate is Fate.DRIFT_ENTER:
            self._normal_ordinal += 1
            self._drift_events += 1
            self._drift_total = max(2, self._drift_len.geometric(self._drift_events, self.profile.drift_len_mean))
            self.mode = EnvMode.DRIFTING
            self._drift_age = 1
            self.drift_claims = 1
            milestone = True
            drifting = True
        elif fate is Fate.DRIFT_CLAIM:
            self._drift_age += 1
            self.drift_claims += 1
            milestone = True
            drifting = True
        elif fate is Fate.DRIFT_EXPLORE:
            self._drift_age += 1
            drifting = True
        elif fate is Fate.DRIFT_DONE:
            self._drift_age += 1
            drifting = True
        elif fate is Fate.RECOVER:
            self.mode = EnvMode.NORMAL
            self.drift_claims = 0
            self._drift_age = 0
            self._loop_remaining = 0

        truth = StepTruth(
            step=self.steps_taken,
            in_stuck_region=in_stuck,
            completes_milestone=milestone,
            drift_active=drifting,
            true_progress=self.subgoal_index,
            displayed_progress=self.displayed_progress,
        )
        self.task.truth[self.steps_taken] = truth
        # the digest records the mode that governed this step, so flags are
        # reconstructable from the trace alone (a loop's final step would
        # otherwise be indistinguishable from a normal one)
        label = EnvMode.LOOPING if in_stuck else EnvMode.DRIFTING if drifting else EnvMode.NORMAL
        digest = _digest(self.task.task.task_id, self.steps_taken, self.displayed_progress, label)
        return digest, truth


# ---------------------------------------------------------------------------
# Scripted policies bound to the environment
# ---------------------------------------------------------------------------

from .policies import Policy, PolicyRequest, PolicyResponse  # noqa: E402
from .trace import PolicyId, PolicyTier  # noqa: E402


class SimPolicy(Policy):
    """Scripted policy whose text mirrors the environment's committed fate.

    Milestone-completing steps (real or drift-claimed) share the
    "confirming to complete" phrasing, and loop steps repeat one canonical
    action with identical phrasing, so the textual signals the monitors
    rely on are present by construction.
    """

    def __init__(self, env: SynthEnv, policy_id: PolicyId):
        super().__init__(policy_id)
        self.env = env

    def next_step(self, request: PolicyRequest) -> PolicyResponse:
        info = self.env.peek_fate(self.policy_id.tier.value)
        rationale, action = self._render(info)
        return PolicyResponse(rationale=rationale, action=action)

    def _render(self, info: FateInfo) -> tuple[str, Action]:
        t = info.step
        fate = info.fate
        if fate is Fate.ADVANCE:
            idx = self.env.subgoal_index
            return (
                f"The {info.subgoal} form is filled in; confirming to complete {info.subgoal}.",
                Action(ActionKind.CLICK, {"x": 120 + 40 * idx, "y": 80 + 30 * idx}),
            )
        if fate is Fate.EXPLORE:
            return (
                f"Scanning section {t % 6 + 1} for the {info.subgoal} controls.",
                Action(ActionKind.SCROLL, {"dy": 60 * (1 + t % 6)}),
            )
        if fate in (Fate.STALL_ENTER, Fate.LOOP_CONTINUE):
            return (
                f"The {info.blocker} is still blocking the view; dismissing it again.",
                Action(ActionKind.CLICK, {"x": 400 + 40 * info.ordinal, "y": 360}),
            )
        if fate in (Fate.DRIFT_ENTER, Fate.DRIFT_CLAIM):
            return (
                f"Opened the {info.decoy}; confirming to complete the {info.decoy} setup.",
                Action(ActionKind.CLICK, {"x": 360 + 40 * info.drift_claims, "y": 240 + 20 * info.drift_age}),
            )
        if fate is Fate.DRIFT_EXPLORE:
            return (
                f"Reviewing the {info.decoy} options before continuing.",
                Action(ActionKind.TYPE, {"text": f"option {info.drift_age}"}),
            )
        if fate is Fate.DRIFT_DONE:
            return (
                "All requested changes appear complete; finishing the task.",
                Action(ActionKind.DONE),
            )
        if fate is Fate.RECOVER:
            return (
                f"The recent steps were off-track; backing out to resume {info.subgoal}.",
                Action(ActionKind.HOTKEY, {"keys": "escape"}),
            )
        # FINISH_DONE
        return ("All workflow subgoals are complete; finishing the task.", Action(ActionKind.DONE))


def make_sim_policies(env: SynthEnv) -> dict[PolicyTier, SimPolicy]:
    return {
        PolicyTier.SMALL: SimPolicy(env, PolicyId("sim-small", PolicyTier.SMALL)),
        PolicyTier.LARGE: SimPolicy(env, PolicyId("sim-large", PolicyTier.LARGE)),
    }


# ---------------------------------------------------------------------------
# Evaluation and offline truth reconstruction
# ---------------------------------------------------------------------------


def evaluate_episode(task: SynthTask, episode: Episode) -> bool:
    """Execution-based success check, computable from the trace alone.

    Success requires a terminal ``done``, all subgoals genuinely complete,
    and a final state that has not drifted off the real workflow.
    """
    if not episode.steps:
        return False
    if episode.terminal_action is None or episode.terminal_action.kind is not ActionKind.DONE:
        return False
    if len(episode.steps) > task.task.max_steps:
        return False
    _, _, displayed, mode = parse_digest(episode.steps[-1].observation_digest)
    return mode == EnvMode.NORMAL.value and displayed == task.num_subgoals


def reconstruct_truth(episode: Episode) -> dict[int, StepTruth]:
    """Re-derive ground-truth flags by scanning a recorded trace's digests."""
    flags: dict[int, StepTruth] = {}
    prev_displayed = 0
    true_progress = 0
    for step in episode.steps:
        _, s, displayed, mode = parse_digest(step.observation_digest)
        milestone = displayed > prev_displayed
        drifting = mode == EnvMode.DRIFTING.value
        if not drifting:
            true_progress = displayed
        flags[s] = StepTruth(
            step=s,
            in_stuck_region=mode == EnvMode.LOOPING.value,
            completes_milestone=milestone,
            drift_active=drifting,
            true_progress=true_progress,
            displayed_progress=displayed,
        )
        prev_displayed = displayed
    return flags


# ---------------------------------------------------------------------------
# Task-suite manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteManifest:
    """(seed, subgoal-count) pairs plus the shared profile and budget."""

    root_seed: int
    max_steps: int
    profile: FailureProfile
    tasks: tuple[tuple[int, int], ...]  # (seed, num_subgoals)

    def to_dict(self) -> dict[str, Any]:
        return {
            "root_seed": self.root_seed,
            "max_steps": self.max_steps,
            "profile": self.profile.to_dict(),
            "tasks": [{"seed": s, "subgoals": g} for s, g in self.tasks],
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SuiteManifest":
        try:
            tasks = tuple((int(t["seed"]), int(t["subgoals"])) for t in d["tasks"])
            return cls(
                root_seed=int(d["root_seed"]),
                max_steps=int(d["max_steps"]),
                profile=FailureProfile.from_dict(d["profile"]),
                tasks=tasks,
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid suite manifest: missing field {exc}") from exc

    @classmethod
    def load(cls, path: Path | str) -> "SuiteManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def build_task(self, index: int) -> SynthTask:
        seed, subgoals = self.tasks[index]
        return generate_task(seed, subgoals, self.max_steps)

    def __len__(self) -> int:
        return len(self.tasks)


def build_suite(
    root_seed: int,
    num_tasks: int = 500,
    g_min: int = 3,
    g_max: int = 6,
    max_steps: int = 64,
    profile: Optional[FailureProfile] = None,
    subgoal_cycle: Optional[tuple[int, ...]] = None,
) -> SuiteManifest:
    """Deterministic suite: subgoal counts follow ``subgoal_cycle`` when
    given, else cycle uniformly over [g_min, g_max]."""
    if num_tasks < 1:
        raise ValueError("suite needs at least one task")
    if subgoal_cycle:
        cycle = tuple(int(g) for g in subgoal_cycle)
        if min(cycle) < 1:
            raise ValueError("subgoal counts must be >= 1")
    else:
        if g_min < 1 or g_max < g_min:
            raise ValueError("bad subgoal range")
        cycle = tuple(range(g_min, g_max + 1))
    tasks = tuple(
        (derive_seed(root_seed, "task", i), cycle[i % len(cycle)]) for i in range(num_tasks)
    )
    return SuiteManifest(
        root_seed=root_seed,
        max_steps=max_steps,
        profile=profile or FailureProfile(),
        tasks=tasks,
    )
