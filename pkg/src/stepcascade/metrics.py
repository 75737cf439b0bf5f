"""Failure-signature statistics, cost accounting, cascading statistics,
threshold-frontier sweeps, and report emission.

All money is integer micro-dollars so accounting is exact: the sum of
per-call costs over a run equals the reported total, with no float drift.
Action equality throughout uses grid canonicalization (a documented proxy;
the repetition lookback is a reported parameter, never a hidden constant).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Sequence

from .trace import Episode, EpisodeOutcome, PolicyTier, canonicalize_action


class AccountingError(ValueError):
    """A recorded call has no price-table entry."""


@dataclass(frozen=True)
class PriceEntry:
    """Per-call and token-rated prices (micro-dollars) plus simulated latency."""

    per_call: int = 0
    per_1k_prompt_tokens: int = 0
    per_1k_completion_tokens: int = 0
    latency: float = 0.0

    def __post_init__(self) -> None:
        if min(self.per_call, self.per_1k_prompt_tokens, self.per_1k_completion_tokens) < 0:
            raise ValueError("prices must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_call": self.per_call,
            "per_1k_prompt_tokens": self.per_1k_prompt_tokens,
            "per_1k_completion_tokens": self.per_1k_completion_tokens,
            "latency": self.latency,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PriceEntry":
        return cls(
            per_call=int(d.get("per_call", 0)),
            per_1k_prompt_tokens=int(d.get("per_1k_prompt_tokens", 0)),
            per_1k_completion_tokens=int(d.get("per_1k_completion_tokens", 0)),
            latency=float(d.get("latency", 0.0)),
        )


# Keys: "small", "large" (the tier determines which entry applies),
# plus "verifier" and "monitor".
PriceTable = dict[str, PriceEntry]


def price_table_from_dict(d: dict[str, Any]) -> PriceTable:
    return {k: PriceEntry.from_dict(v) for k, v in d.items()}


def compute_cost(record: Any, prices: PriceTable) -> int:
    """Exact cost of one episode record in micro-dollars.

    Sums policy calls (per-call plus token-rated), monitor calls, and
    verifier calls. Token-rated parts use floor division per call.
    """
    total = 0
    for step in record.episode.steps:
        tier = step.policy.tier.value
        entry = prices.get(tier)
        if entry is None:
            raise AccountingError(f"no price entry for policy {step.policy.name!r} (tier {tier!r})")
        total += entry.per_call
        if step.prompt_tokens:
            total += (step.prompt_tokens * entry.per_1k_prompt_tokens) // 1000
        if step.completion_tokens:
            total += (step.completion_tokens * entry.per_1k_completion_tokens) // 1000
    if record.monitor_calls:
        entry = prices.get("monitor")
        if entry is None:
            raise AccountingError("no price entry for 'monitor'")
        total += record.monitor_calls * entry.per_call
    if record.verifier_calls:
        entry = prices.get("verifier")
        if entry is None:
            raise AccountingError("no price entry for 'verifier'")
        total += record.verifier_calls * entry.per_call
    return total


def action_repetition_rate(episode: Episode, lookback: int = 3, grid: float = 20.0) -> float:
    """Fraction of steps (from the 2nd on) whose canonical action matches
    any of the preceding ``lookback`` steps. Episodes under 2 steps rate 0.
    """
    steps = episode.steps
    if len(steps) < 2:
        return 0.0
    keys = [canonicalize_action(s.action, grid).key() for s in steps]
    hits = 0
    for t in range(1, len(keys)):
        window = keys[max(0, t - lookback):t]
        if keys[t] in window:
            hits += 1
    return hits / (len(keys) - 1)


@dataclass(frozen=True)
class FailureSignatures:
    """Directional stats mirroring small-policy failure fingerprints.

    Fields tied to a missing class (no failures, or no successes) are None.
    """

    episodes: int
    successes: int
    failures: int
    avg_steps_success: Optional[float]
    avg_steps_failed: Optional[float]
    rep_rate_success: Optional[float]
    rep_rate_failed: Optional[float]
    done_but_failed_rate: Optional[float]

    @property
    def step_ratio(self) -> Optional[float]:
        if self.avg_steps_success and self.avg_steps_failed:
            return self.avg_steps_failed / self.avg_steps_success
        return None

    def render(self) -> str:
        lines = [f"episodes: {self.episodes} ({self.successes} success / {self.failures} failed)"]
        if self.avg_steps_success is not None:
            lines.append(f"avg steps (success): {self.avg_steps_success:.1f}")
        if self.avg_steps_failed is not None:
            lines.append(f"avg steps (failed):  {self.avg_steps_failed:.1f}")
        ratio = self.step_ratio
        if ratio is not None:
            lines.append(f"failed/success step ratio: {ratio:.1f}x")
        if self.rep_rate_success is not None:
            lines.append(f"action repetition rate (success): {self.rep_rate_success:.3f}")
        if self.rep_rate_failed is not None:
            lines.append(f"action repetition rate (failed):  {self.rep_rate_failed:.3f}")
        if self.done_but_failed_rate is not None:
            lines.append(f"done-but-failed rate: {self.done_but_failed_rate:.1%}")
        lines.append("(action equality = grid-canonical match, lookback as configured)")
        return "\n".join(lines)


def failure_signatures(episodes: Sequence[Episode], lookback: int = 3, grid: float = 20.0) -> FailureSignatures:
    if not episodes:
        raise ValueError("failure_signatures needs at least one episode")
    successes = [e for e in episodes if e.outcome is EpisodeOutcome.SUCCESS]
    failures = [e for e in episodes if e.outcome is not EpisodeOutcome.SUCCESS]

    def mean(xs: list[float]) -> Optional[float]:
        return sum(xs) / len(xs) if xs else None

    avg_success = mean([float(len(e.steps)) for e in successes])
    avg_failed = mean([float(len(e.steps)) for e in failures])
    rep_success = mean([action_repetition_rate(e, lookback, grid) for e in successes])
    rep_failed = mean([action_repetition_rate(e, lookback, grid) for e in failures])
    done_but_failed = mean([1.0 if e.done_but_failed else 0.0 for e in failures])
    return FailureSignatures(
        episodes=len(episodes),
        successes=len(successes),
        failures=len(failures),
        avg_steps_success=avg_success,
        avg_steps_failed=avg_failed,
        rep_rate_success=rep_success,
        rep_rate_failed=rep_failed,
        done_but_failed_rate=done_but_failed,
    )


@dataclass(frozen=True)
class RunReport:
    """One row of the efficiency/cascading-statistics table.

    Shares count policy-executed steps only (monitor and verifier
    invocations are priced but are not steps); that choice is stated next
    to every rendered report.
    """

    tasks: int
    accuracy: float
    avg_steps: float
    total_cost: int  # micro-dollars, exact
    cost_per_task: float  # dollars, for display
    latency_per_request: float
    switched_count: int
    switched_fraction: float
    a1_share: float
    a2_share: float
    verifier_calls_per_task: float

    def to_row(self) -> dict[str, Any]:
        return {
            "tasks": self.tasks,
            "accuracy": round(self.accuracy, 4),
            "avg_steps": round(self.avg_steps, 2),
            "cost_per_task": round(self.cost_per_task, 6),
            "total_cost_micro": self.total_cost,
            "latency_per_request": round(self.latency_per_request, 3),
            "switched": self.switched_count,
            "switched_pct": round(100.0 * self.switched_fraction, 1),
            "a1_share": round(self.a1_share, 4),
            "a2_share": round(self.a2_share, 4),
            "verifier_calls_per_task": round(self.verifier_calls_per_task, 3),
        }


def cascade_stats(records: Sequence[Any], prices: Optional[PriceTable] = None) -> RunReport:
    """Pooled run statistics over episode records.

    Accuracy is the evaluator-success fraction; switched counts tasks with
    at least one large-policy step; A1/A2 shares pool executed steps across
    tasks.
    """
    if not records:
        raise ValueError("cascade_stats needs at least one record")
    tasks = len(records)
    successes = sum(1 for r in records if r.episode.outcome is EpisodeOutcome.SUCCESS)
    total_steps = 0
    large_steps = 0
    switched = 0
    total_latency = 0.0
    total_cost = 0
    verifier_calls = 0
    for record in records:
        steps = record.episode.steps
        total_steps += len(steps)
        n_large = sum(1 for s in steps if s.policy.tier is PolicyTier.LARGE)
        large_steps += n_large
        if n_large:
            switched += 1
        total_latency += sum(s.latency for s in steps)
        verifier_calls += record.verifier_calls
        if prices is not None:
            total_cost += compute_cost(record, prices)
    a2 = large_steps / total_steps if total_steps else 0.0
    return RunReport(
        tasks=tasks,
        accuracy=successes / tasks,
        avg_steps=total_steps / tasks,
        total_cost=total_cost,
        cost_per_task=total_cost / tasks / 1_000_000,
        latency_per_request=total_latency / total_steps if total_steps else 0.0,
        switched_count=switched,
        switched_fraction=switched / tasks,
        a1_share=1.0 - a2 if total_steps else 0.0,
        a2_share=a2,
        verifier_calls_per_task=verifier_calls / tasks,
    )


REPORT_COLUMNS = [
    "Small", "Large", "Lat./Req.", "Cost/Task", "Acc.", "Avg Step",
    "Switched", "A1 Share", "A2 Share",
]


def render_report_table(rows: Sequence[tuple[str, str, RunReport]]) -> str:
    """Aligned-text table whose columns mirror the standard efficiency
    report layout (one row per (small, large, report) triple)."""
    table = [REPORT_COLUMNS]
    for small, large, r in rows:
        switched = "--" if r.switched_count == 0 and r.a2_share in (0.0, 1.0) else (
            f"{r.switched_count} ({100.0 * r.switched_fraction:.1f}%)"
        )
        table.append([
            small or "--",
            large or "--",
            f"{r.latency_per_request:.1f}s",
            f"${r.cost_per_task:.3f}",
            f"{100.0 * r.accuracy:.1f}%",
            f"{r.avg_steps:.1f}",
            switched,
            f"{100.0 * r.a1_share:.1f}%",
            f"{100.0 * r.a2_share:.1f}%",
        ])
    widths = [max(len(row[i]) for row in table) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in table]
    lines.append("(A1/A2 shares count policy-executed steps only.)")
    return "\n".join(lines)


def report_rows_to_csv(rows: Iterable[dict[str, Any]]) -> str:
    rows = list(rows)
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


@dataclass(frozen=True)
class FrontierPoint:
    theta_s: float
    theta_m: float
    report: RunReport
    pareto: bool = False

    def to_row(self) -> dict[str, Any]:
        row = {"theta_s": self.theta_s, "theta_m": self.theta_m}
        row.update(self.report.to_row())
        row["pareto"] = self.pareto
        return row


def mark_pareto(points: list[FrontierPoint]) -> list[FrontierPoint]:
    """Flag points not dominated in (cost lower-better, accuracy higher-better)."""
    flagged = []
    for p in points:
        dominated = any(
            (q.report.total_cost <= p.report.total_cost and q.report.accuracy >= p.report.accuracy)
            and (q.report.total_cost < p.report.total_cost or q.report.accuracy > p.report.accuracy)
            for q in points
        )
        flagged.append(FrontierPoint(p.theta_s, p.theta_m, p.report, pareto=not dominated))
    return flagged


def sweep_frontier(
    grid: Sequence[tuple[float, float]],
    runner: Callable[[float, float], Sequence[Any]],
    prices: Optional[PriceTable] = None,
) -> list[FrontierPoint]:
    """One report per (theta_s, theta_m) grid point, sorted by cost, with
    Pareto-dominant points flagged."""
    if not grid:
        raise ValueError("sweep grid is empty")
    points = []
    for theta_s, theta_m in grid:
        records = runner(theta_s, theta_m)
        points.append(FrontierPoint(theta_s, theta_m, cascade_stats(records, prices)))
    points = mark_pareto(points)
    points.sort(key=lambda p: (p.report.total_cost, p.theta_s, p.theta_m))
    return points
