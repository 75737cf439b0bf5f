"""Suite-level execution: one environment and one controller per task,
stateless adapters shared across episodes, order-stable aggregation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

from .controller import CascadeConfig, EpisodeRecord, EpisodeRunner
from .metrics import PriceTable
from .monitors import MilestoneMonitor, StuckMonitor, OracleMilestoneMonitor, OracleStuckMonitor
from .synthenv import SuiteManifest, SynthEnv, SynthTask, make_sim_policies
from .verifier import OracleVerifier, Verifier

StuckFactory = Callable[[SynthTask], StuckMonitor]
MilestoneFactory = Callable[[SynthTask], MilestoneMonitor]
VerifierFactory = Callable[[SynthTask], Verifier]


def oracle_stuck_factory(task: SynthTask) -> StuckMonitor:
    return OracleStuckMonitor(task.truth_flag("in_stuck_region"))


def oracle_milestone_factory(task: SynthTask) -> MilestoneMonitor:
    return OracleMilestoneMonitor(task.truth_flag("completes_milestone"))


def oracle_verifier_factory(task: SynthTask) -> Verifier:
    return OracleVerifier(drift_at=task.truth_flag("drift_active"), progress_at=task.progress_at)


def run_suite_episode(
    manifest: SuiteManifest,
    index: int,
    cfg: CascadeConfig,
    run_mode: str = "cascade",
    prices: Optional[PriceTable] = None,
    config_digest: Optional[str] = None,
    stuck_factory: Optional[StuckFactory] = oracle_stuck_factory,
    milestone_factory: Optional[MilestoneFactory] = oracle_milestone_factory,
    verifier_factory: Optional[VerifierFactory] = oracle_verifier_factory,
) -> EpisodeRecord:
    task = manifest.build_task(index)
    env = SynthEnv(task, manifest.profile)
    policies = make_sim_policies(env)
    runner = EpisodeRunner(
        cfg,
        run_mode=run_mode,
        stuck_monitor=stuck_factory(task) if stuck_factory else None,
        milestone_monitor=milestone_factory(task) if milestone_factory else None,
        verifier=verifier_factory(task) if verifier_factory else None,
        prices=prices,
        config_digest=config_digest,
    )
    return runner.run_episode(task.task, policies, seed=task.seed, env=env)


def run_suite(
    manifest: SuiteManifest,
    cfg: CascadeConfig,
    run_mode: str = "cascade",
    prices: Optional[PriceTable] = None,
    config_digest: Optional[str] = None,
    jobs: int = 1,
    stuck_factory: Optional[StuckFactory] = oracle_stuck_factory,
    milestone_factory: Optional[MilestoneFactory] = oracle_milestone_factory,
    verifier_factory: Optional[VerifierFactory] = oracle_verifier_factory,
) -> list[EpisodeRecord]:
    """All episodes of the suite, in manifest order regardless of ``jobs``."""

    def one(index: int) -> EpisodeRecord:
        return run_suite_episode(
            manifest, index, cfg,
            run_mode=run_mode,
            prices=prices,
            config_digest=config_digest,
            stuck_factory=stuck_factory,
            milestone_factory=milestone_factory,
            verifier_factory=verifier_factory,
        )

    indices = range(len(manifest))
    if jobs <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, indices))


def baseline_factories(run_mode: str) -> dict:
    """Adapter wiring for the standalone baselines: no monitors, no verifier."""
    if run_mode not in ("small-only", "large-only"):
        raise ValueError("baseline_factories is for small-only/large-only")
    return {"stuck_factory": None, "milestone_factory": None, "verifier_factory": None}
