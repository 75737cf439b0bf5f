"""Monitor wire-protocol contract checks.

POST /score accepts {"kind": "stuck"|"milestone", "task": string|null,
"window": [{"rationale", "action"}, ...]} and returns {"score": s} with
s in [0, 1]. "task" must be present iff kind is "milestone". These checks
run against any implementation of the protocol: the stub used in this
package's own tests, or a real scoring service.
"""

from __future__ import annotations

from dataclasses import dataclass

import requests

from .monitors import RemoteMonitor
from .trace import Action, ActionKind, Window, WindowEntry


@dataclass(frozen=True)
class ContractResult:
    name: str
    passed: bool
    detail: str = ""


def _sample_window(n: int = 6, repeated: bool = False) -> Window:
    entries = []
    for i in range(1, n + 1):
        if repeated:
            action = Action(ActionKind.CLICK, {"x": 100, "y": 100})
            rationale = "the dialog is still open; dismissing it again"
        else:
            action = Action(ActionKind.CLICK, {"x": 40 * i, "y": 60 * i})
            rationale = f"scanning section {i}"
        entries.append(WindowEntry(rationale, action))
    return Window(entries=tuple(entries), end_index=n)


def run_monitor_protocol_checks(base_url: str, timeout: float = 15.0) -> list[ContractResult]:
    """Full contract suite against a live endpoint; all must pass."""
    base = base_url.rstrip("/")
    session = requests.Session()
    results: list[ContractResult] = []

    def check(name: str, passed: bool, detail: str = "") -> None:
        results.append(ContractResult(name=name, passed=passed, detail=detail))

    monitor = RemoteMonitor(base, timeout=timeout, fail_closed=True, session=session)

    # 1. stuck scoring returns a score in [0, 1]
    try:
        score = monitor.score_stuck(_sample_window())
        check("stuck_score_in_range", 0.0 <= score.value <= 1.0, f"score={score.value}")
    except Exception as exc:  # noqa: BLE001 - contract result, not control flow
        check("stuck_score_in_range", False, str(exc))

    # 2. milestone scoring (task present) returns a score in [0, 1]
    try:
        score = monitor.score_milestone("configure the billing profile", _sample_window())
        check("milestone_score_in_range", 0.0 <= score.value <= 1.0, f"score={score.value}")
    except Exception as exc:  # noqa: BLE001
        check("milestone_score_in_range", False, str(exc))

    # 3. milestone without task is rejected with 400
    body = {"kind": "milestone", "task": None, "window": [
        {"rationale": "x", "action": {"kind": "click", "args": {"x": 0, "y": 0}}}
    ]}
    try:
        resp = session.post(f"{base}/score", json=body, timeout=timeout)
        check("milestone_requires_task", resp.status_code == 400, f"status={resp.status_code}")
    except requests.RequestException as exc:
        check("milestone_requires_task", False, str(exc))

    # 4. unknown kind is rejected with 400
    body = {"kind": "other", "task": None, "window": []}
    try:
        resp = session.post(f"{base}/score", json=body, timeout=timeout)
        check("unknown_kind_rejected", resp.status_code == 400, f"status={resp.status_code}")
    except requests.RequestException as exc:
        check("unknown_kind_rejected", False, str(exc))

    # 5. empty window is rejected with 400
    body = {"kind": "stuck", "task": None, "window": []}
    try:
        resp = session.post(f"{base}/score", json=body, timeout=timeout)
        check("empty_window_rejected", resp.status_code == 400, f"status={resp.status_code}")
    except requests.RequestException as exc:
        check("empty_window_rejected", False, str(exc))

    # 6. determinism: identical bodies give identical scores
    try:
        w = _sample_window(repeated=True)
        a = monitor.score_stuck(w).value
        b = monitor.score_stuck(w).value
        check("score_deterministic", a == b, f"{a} vs {b}")
    except Exception as exc:  # noqa: BLE001
        check("score_deterministic", False, str(exc))

    return results


def run_monitor_protocol_checks_or_raise(base_url: str, timeout: float = 15.0) -> None:
    results = run_monitor_protocol_checks(base_url, timeout=timeout)
    failures = [r for r in results if not r.passed]
    if failures:
        detail = "; ".join(f"{r.name}: {r.detail}" for r in failures)
        raise AssertionError(f"monitor protocol violations: {detail}")
