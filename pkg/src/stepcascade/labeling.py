"""Training-data pipeline for the two detectors.

Windows are extracted per step (the step plus up to five predecessors),
labeled by a teacher over several independent runs, and filtered by
consensus: positive needs agreement in at least three of five runs,
negative needs zero flags, and low-agreement steps are discarded. The
aggregator is a pure function of votes; any spacing or short-trajectory
rules live in the teacher, not here.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema
import requests

from .rng import SubStream, derive_seed
from .synthenv import StepTruth
from .trace import Episode, WindowEntry, canonicalize_action

log = logging.getLogger(__name__)

DEFAULT_CONTEXT_LEN = 5
DEFAULT_RUNS = 5


class LabelKind(str, Enum):
    STUCK = "stuck"
    MILESTONE = "milestone"


class Consensus(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    DISCARD = "discard"


@dataclass(frozen=True)
class Provenance:
    trajectory_id: str
    step_index: int
    votes: int
    runs: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "trajectory_id": self.trajectory_id,
            "step_index": self.step_index,
            "votes": self.votes,
            "runs": self.runs,
        }


@dataclass(frozen=True)
class LabeledWindow:
    kind: LabelKind
    entries: tuple[WindowEntry, ...]
    provenance: Provenance
    label: Optional[bool] = None  # None while still an unlabeled candidate
    task_instruction: str = ""  # present only for milestone windows

    def __post_init__(self) -> None:
        if self.provenance.votes > self.provenance.runs:
            raise ValueError("votes cannot exceed runs")
        if self.kind is LabelKind.MILESTONE and not self.task_instruction:
            raise ValueError("milestone windows carry the task instruction")
        if self.kind is LabelKind.STUCK and self.task_instruction:
            raise ValueError("stuck windows carry no task instruction")

    def to_record(self, grid: float = 20.0) -> dict[str, Any]:
        """Dataset line; actions are exported in canonical rendering."""
        record: dict[str, Any] = {
            "kind": self.kind.value,
            "entries": [
                {"rationale": e.rationale, "action": canonicalize_action(e.action, grid).to_dict()}
                for e in self.entries
            ],
            "label": self.label,
            "provenance": self.provenance.to_dict(),
        }
        if self.kind is LabelKind.MILESTONE:
            record["task"] = self.task_instruction
        return record


def extract_windows(
    episode: Episode, kind: LabelKind, context_len: int = DEFAULT_CONTEXT_LEN
) -> list[LabeledWindow]:
    """One unlabeled candidate per step: the step plus up to ``context_len``
    preceding steps."""
    if not episode.steps:
        raise ValueError("cannot extract windows from an empty episode")
    instruction = episode.task.instruction if kind is LabelKind.MILESTONE else ""
    candidates = []
    steps = episode.steps
    for i, step in enumerate(steps):
        lo = max(0, i - context_len)
        entries = tuple(WindowEntry(s.rationale, s.action) for s in steps[lo:i + 1])
        candidates.append(
            LabeledWindow(
                kind=kind,
                entries=entries,
                provenance=Provenance(episode.task.task_id, step.index, votes=0, runs=0),
                label=None,
                task_instruction=instruction,
            )
        )
    return candidates


def aggregate_consensus(votes: int, runs: int = DEFAULT_RUNS) -> Consensus:
    """3-of-5 rule, generalized: positive iff votes >= ceil(runs * 3 / 5),
    negative iff zero votes, otherwise discard."""
    if not 0 <= votes <= runs:
        raise ValueError(f"votes must lie in 0..{runs}, got {votes}")
    positive_threshold = -(-runs * 3 // 5)  # ceil(runs * 3 / 5)
    if votes >= positive_threshold:
        return Consensus.POSITIVE
    if votes == 0:
        return Consensus.NEGATIVE
    return Consensus.DISCARD


# ---------------------------------------------------------------------------
# Teachers
# ---------------------------------------------------------------------------

STUCK_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["is_stuck", "stuck_steps", "reasons", "severity", "summary"],
    "properties": {
        "is_stuck": {"type": "boolean"},
        "stuck_steps": {"type": "array", "items": {"type": "integer"}},
        "reasons": {"type": "array", "items": {"type": "string"}},
        "severity": {"type": "string", "enum": ["none", "low", "medium", "high"]},
        "summary": {"type": "string"},
    },
}

MILESTONE_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["milestones"],
    "properties": {
        "milestones": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["step", "reasoning"],
                "properties": {
                    "step": {"type": "integer"},
                    "reasoning": {"type": "string"},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class TeacherRunResult:
    run_index: int
    stuck_steps: frozenset[int]
    milestone_steps: frozenset[int]
    raw: str
    valid: bool = True
    params: dict[str, Any] = field(default_factory=dict)


class Teacher:
    """Labels one trajectory per call; ``runs`` independent passes."""

    def label_episode(self, episode: Episode, run_index: int) -> TeacherRunResult:
        raise NotImplementedError


class OracleTeacher(Teacher):
    """Ground-truth teacher with optional symmetric label noise epsilon,
    used to exercise the consensus filter."""

    def __init__(self, truth: dict[int, StepTruth], noise: float = 0.0, seed: int = 0):
        if not 0.0 <= noise < 0.5:
            raise ValueError("noise must lie in [0, 0.5)")
        self.truth = truth
        self.noise = noise
        self.seed = seed

    def _flip(self, value: bool, episode_id: str, kind: str, run_index: int, step: int) -> bool:
        if self.noise == 0.0:
            return value
        stream = SubStream(self.seed, episode_id, kind, run_index)
        return (not value) if stream.u(step) < self.noise else value

    def label_episode(self, episode: Episode, run_index: int) -> TeacherRunResult:
        eid = episode.task.task_id
        stuck = frozenset(
            s.index for s in episode.steps
            if self._flip(bool(self.truth.get(s.index) and self.truth[s.index].in_stuck_region),
                          eid, "stuck", run_index, s.index)
        )
        milestones = frozenset(
            s.index for s in episode.steps
            if self._flip(bool(self.truth.get(s.index) and self.truth[s.index].completes_milestone),
                          eid, "milestone", run_index, s.index)
        )
        raw = json.dumps({"stuck_steps": sorted(stuck), "milestone_steps": sorted(milestones)})
        return TeacherRunResult(run_index=run_index, stuck_steps=stuck, milestone_steps=milestones, raw=raw)


class RemoteTeacher(Teacher):
    """HTTP adapter for an LLM labeling endpoint (POST /label).

    Responses must match the labeling JSON schemas; a schema-invalid
    response is recorded as an empty, flagged run. Per-run sampling
    parameters are sent along and stored with the result.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 120.0,
        run_params: Optional[Sequence[dict[str, Any]]] = None,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.run_params = list(run_params or [])
        self._session = session or requests.Session()

    def _params_for(self, run_index: int) -> dict[str, Any]:
        if run_index < len(self.run_params):
            return self.run_params[run_index]
        return {"temperature": 0.7, "run": run_index}

    def _ask(self, kind: str, episode: Episode, params: dict[str, Any]) -> tuple[frozenset[int], str, bool]:
        body = {
            "kind": kind,
            "task_id": episode.task.task_id,
            "task": episode.task.instruction,
            "params": params,
            "trajectory": [
                {"step": s.index, "rationale": s.rationale, "action": s.action.to_dict()}
                for s in episode.steps
            ],
        }
        raw = ""
        try:
            resp = self._session.post(f"{self.base_url}/label", json=body, timeout=self.timeout)
            resp.raise_for_status()
            raw = resp.text
            payload = json.loads(raw)
            if kind == "stuck":
                jsonschema.validate(payload, STUCK_RESPONSE_SCHEMA)
                return frozenset(payload["stuck_steps"]), raw, True
            jsonschema.validate(payload, MILESTONE_RESPONSE_SCHEMA)
            return frozenset(m["step"] for m in payload["milestones"]), raw, True
        except (requests.RequestException, json.JSONDecodeError, jsonschema.ValidationError) as exc:
            log.warning("teacher %s run invalid, recording empty run: %s", kind, exc)
            return frozenset(), raw or str(exc), False

    def label_episode(self, episode: Episode, run_index: int) -> TeacherRunResult:
        params = self._params_for(run_index)
        stuck, raw_stuck, ok_stuck = self._ask("stuck", episode, params)
        milestones, raw_mile, ok_mile = self._ask("milestone", episode, params)
        return TeacherRunResult(
            run_index=run_index,
            stuck_steps=stuck,
            milestone_steps=milestones,
            raw=json.dumps({"stuck": raw_stuck, "milestone": raw_mile}),
            valid=ok_stuck and ok_mile,
            params=params,
        )


def run_teacher(teacher: Teacher, episode: Episode, runs: int = DEFAULT_RUNS) -> list[TeacherRunResult]:
    """Exactly ``runs`` results; invalid runs are kept (empty, flagged)."""
    results = [teacher.label_episode(episode, i) for i in range(runs)]
    bad = sum(1 for r in results if not r.valid)
    if bad:
        log.warning(
            "trajectory %s: %d of %d teacher runs invalid", episode.task.task_id, bad, runs
        )
    return results


def consensus_label_episode(
    episode: Episode,
    results: Sequence[TeacherRunResult],
    kind: LabelKind,
    context_len: int = DEFAULT_CONTEXT_LEN,
) -> list[LabeledWindow]:
    """Fold teacher votes into kept windows (positives and negatives)."""
    runs = len(results)
    candidates = extract_windows(episode, kind, context_len)
    kept = []
    for candidate in candidates:
        step = candidate.provenance.step_index
        if kind is LabelKind.STUCK:
            votes = sum(1 for r in results if step in r.stuck_steps)
        else:
            votes = sum(1 for r in results if step in r.milestone_steps)
        verdict = aggregate_consensus(votes, runs)
        if verdict is Consensus.DISCARD:
            continue
        kept.append(
            LabeledWindow(
                kind=kind,
                entries=candidate.entries,
                provenance=Provenance(episode.task.task_id, step, votes=votes, runs=runs),
                label=verdict is Consensus.POSITIVE,
                task_instruction=candidate.task_instruction,
            )
        )
    return kept


# ---------------------------------------------------------------------------
# Dataset export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExportSummary:
    train_path: Path
    eval_path: Path
    train_counts: dict[str, int]
    eval_counts: dict[str, int]
    warnings: tuple[str, ...]


def _class_counts(samples: Sequence[LabeledWindow]) -> dict[str, int]:
    counts = {"positive": 0, "negative": 0}
    for s in samples:
        counts["positive" if s.label else "negative"] += 1
    return counts


def export_dataset(
    samples: Sequence[LabeledWindow],
    out_dir: Path | str,
    split: float = 0.8,
    seed: int = 0,
    prefix: str = "detector",
) -> ExportSummary:
    """Deterministic trajectory-level 80/20 split to line-delimited files.

    All windows of one trajectory land on the same side, so overlapping
    near-duplicate windows cannot leak across the split.
    """
    if not samples:
        raise ValueError("no samples to export")
    if not 0.0 < split < 1.0:
        raise ValueError("split must lie strictly between 0 and 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    trajectory_ids = sorted({s.provenance.trajectory_id for s in samples})
    stream = SubStream(seed, "dataset-split")
    keyed = sorted(trajectory_ids, key=lambda tid: (stream.u(derive_seed(tid)), tid))
    cut = int(round(len(keyed) * split))
    warnings: list[str] = []
    if len(keyed) < 2:
        warnings.append("single trajectory: cannot split; everything lands in train")
        cut = len(keyed)
    train_ids = set(keyed[:cut])

    train = [s for s in samples if s.provenance.trajectory_id in train_ids]
    evaluation = [s for s in samples if s.provenance.trajectory_id not in train_ids]

    train_counts = _class_counts(train)
    eval_counts = _class_counts(evaluation)
    for side, counts in (("train", train_counts), ("eval", eval_counts)):
        for cls, n in counts.items():
            if n == 0:
                warnings.append(f"{side} split has no {cls} samples")

    train_path = out / f"{prefix}_train.jsonl"
    eval_path = out / f"{prefix}_eval.jsonl"
    for path, part in ((train_path, train), (eval_path, evaluation)):
        lines = [json.dumps(s.to_record(), sort_keys=True, separators=(",", ":")) for s in part]
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    for message in warnings:
        log.warning("export: %s", message)
    return ExportSummary(
        train_path=train_path,
        eval_path=eval_path,
        train_counts=train_counts,
        eval_counts=eval_counts,
        warnings=tuple(warnings),
    )


def load_dataset(path: Path | str) -> list[dict[str, Any]]:
    """Parsed dataset lines (the exact input the detector trainer consumes)."""
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed dataset line: {exc}") from exc
    return records
