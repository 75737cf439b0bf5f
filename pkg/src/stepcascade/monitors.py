"""Scoring interfaces for the stuck and milestone monitors.

Monitors consume only textual (rationale, action) windows; no screenshots
enter monitor inputs, which keeps them cheap enough to run at every step.
Oracle variants read simulator ground truth, the heuristic variant is a
rule-based stand-in driven by action repetition, and the remote variant
speaks the monitor wire protocol (POST /score).
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import requests

from .trace import Window, canonicalize_action

log = logging.getLogger(__name__)


class MonitorError(RuntimeError):
    """Transport or schema failure from a remote monitor."""


class ScoreSource(str, Enum):
    HEURISTIC = "heuristic"
    ORACLE = "oracle"
    REMOTE = "remote"


@dataclass(frozen=True)
class MonitorScore:
    value: float
    source: ScoreSource

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"monitor score outside [0, 1]: {self.value}")


@dataclass(frozen=True)
class DetectorMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: tuple[int, int, int, int]  # (tp, fp, tn, fn)


def metrics_from_confusion(tp: int, fp: int, tn: int, fn: int) -> DetectorMetrics:
    """Accuracy/precision/recall/F1 with 0-denominator cases defined as 0."""
    n = tp + fp + tn + fn
    accuracy = (tp + tn) / n if n else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectorMetrics(accuracy=accuracy, precision=precision, recall=recall, f1=f1, confusion=(tp, fp, tn, fn))


def evaluate_detector(
    predictions: Sequence[float], labels: Sequence[bool], threshold: float = 0.5
) -> DetectorMetrics:
    """Threshold scores at >= threshold and tabulate against boolean labels."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not predictions:
        raise ValueError("empty prediction set")
    tp = fp = tn = fn = 0
    for score, label in zip(predictions, labels):
        fired = score >= threshold
        if fired and label:
            tp += 1
        elif fired and not label:
            fp += 1
        elif not fired and label:
            fn += 1
        else:
            tn += 1
    return metrics_from_confusion(tp, fp, tn, fn)


def heuristic_stuck_score(window: Window, grid: float = 20.0) -> float:
    """Repetition-based stuck score in [0, 1].

    With c = the highest multiplicity of any canonical action in the
    window, returns (c - 1) / (|w| - 1), clamped; a single-entry window
    scores 0 by definition.
    """
    n = len(window)
    if n < 1:
        raise ValueError("window must contain at least one entry")
    if n == 1:
        return 0.0
    counts = Counter(canonicalize_action(e.action, grid).key() for e in window.entries)
    top = max(counts.values())
    score = (top - 1) / (n - 1)
    return min(1.0, max(0.0, score))


class StuckMonitor:
    def score_stuck(self, window: Window) -> MonitorScore:
        raise NotImplementedError


class MilestoneMonitor:
    def score_milestone(self, instruction: str, window: Window) -> MonitorScore:
        raise NotImplementedError


class HeuristicStuckMonitor(StuckMonitor):
    def __init__(self, grid: float = 20.0):
        self.grid = grid

    def score_stuck(self, window: Window) -> MonitorScore:
        return MonitorScore(value=heuristic_stuck_score(window, self.grid), source=ScoreSource.HEURISTIC)


class OracleStuckMonitor(StuckMonitor):
    """Reads simulator ground truth: 1.0 inside an injected loop, else 0."""

    def __init__(self, lookup: Callable[[int], bool]):
        self._lookup = lookup

    def score_stuck(self, window: Window) -> MonitorScore:
        return MonitorScore(value=1.0 if self._lookup(window.end_index) else 0.0, source=ScoreSource.ORACLE)


class OracleMilestoneMonitor(MilestoneMonitor):
    """Reads simulator ground truth: 1.0 at milestone-completion steps."""

    def __init__(self, lookup: Callable[[int], bool]):
        self._lookup = lookup

    def score_milestone(self, instruction: str, window: Window) -> MonitorScore:
        if not instruction:
            raise ValueError("milestone scoring requires a task instruction")
        return MonitorScore(value=1.0 if self._lookup(window.end_index) else 0.0, source=ScoreSource.ORACLE)


def window_to_wire(window: Window, grid: float = 20.0) -> list[dict]:
    """Window entries as wire objects; actions go out in canonical form."""
    return [
        {"rationale": e.rationale, "action": canonicalize_action(e.action, grid).to_dict()}
        for e in window.entries
    ]


class RemoteMonitor(StuckMonitor, MilestoneMonitor):
    """HTTP adapter for the monitor wire protocol.

    On transport failure the default is to degrade: score 0 (no event) plus
    a warning, so a monitor outage yields small-only behavior instead of
    aborting the episode. Set fail_closed=True to raise instead.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 10.0,
        fail_closed: bool = False,
        grid: float = 20.0,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.fail_closed = fail_closed
        self.grid = grid
        self._session = session or requests.Session()

    def _post(self, kind: str, task: Optional[str], window: Window) -> MonitorScore:
        body = {"kind": kind, "task": task, "window": window_to_wire(window, self.grid)}
        try:
            resp = self._session.post(f"{self.base_url}/score", json=body, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
            value = float(payload["score"])
        except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
            if self.fail_closed:
                raise MonitorError(f"monitor request failed: {exc}") from exc
            log.warning("monitor request failed, scoring 0: %s", exc)
            return MonitorScore(value=0.0, source=ScoreSource.REMOTE)
        if not 0.0 <= value <= 1.0:
            if self.fail_closed:
                raise MonitorError(f"monitor returned out-of-range score {value}")
            log.warning("monitor returned out-of-range score %s, scoring 0", value)
            return MonitorScore(value=0.0, source=ScoreSource.REMOTE)
        return MonitorScore(value=value, source=ScoreSource.REMOTE)

    def score_stuck(self, window: Window) -> MonitorScore:
        return self._post("stuck", None, window)

    def score_milestone(self, instruction: str, window: Window) -> MonitorScore:
        if not instruction:
            raise ValueError("milestone scoring requires a task instruction")
        return self._post("milestone", instruction, window)


def score_stuck(monitor: StuckMonitor, window: Window) -> MonitorScore:
    if len(window) < 1:
        raise ValueError("window must contain at least one entry")
    return monitor.score_stuck(window)


def score_milestone(monitor: MilestoneMonitor, instruction: str, window: Window) -> MonitorScore:
    if len(window) < 1:
        raise ValueError("window must contain at least one entry")
    return monitor.score_milestone(instruction, window)
