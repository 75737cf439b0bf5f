"""Run configuration: one JSON document carrying the suite definition,
failure profile, cascade settings, price table, endpoint URLs, and the
root seed. Its digest is embedded in every emitted episode record."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .controller import CascadeConfig
from .metrics import PriceTable, price_table_from_dict
from .synthenv import FailureProfile, SuiteManifest, build_suite


class ConfigError(ValueError):
    """Missing or malformed configuration fields."""


# Committed desk-scale defaults. Failure rates p_stall/p_drift are fixed by
# the experiment design; the remaining profile numbers, the step budget,
# and the subgoal-count cycle were tuned once against the simulator and
# frozen here.
DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 20240601,
    "suite": {
        "tasks": 500,
        "subgoal_cycle": [3, 3, 3, 4, 3, 3, 3, 5, 3, 3, 3, 4, 3, 3, 3, 6],
        "max_steps": 64,
    },
    "profile": {
        "p_stall": 0.08,
        "loop_len_mean": 40.0,
        "p_drift": 0.05,
        "drift_len_mean": 24.0,
        "p_correct_small": 0.15,
        "p_correct_large": 0.15,
        "large_recovers": True,
    },
    "cascade": {
        "theta_s": 0.5,
        "theta_m": 0.5,
        "window_k": 6,
        "mode": "basic",
        "fires_to_escalate": 1,
        "min_large_steps": 3,
        "deescalate_gap": 0.1,
        "recovery_budget": None,
        "verification_fail_steps": 1,
        "periodic_k": None,
        "handoff_scope": "full",
        "grid": 20.0,
    },
    "prices": {
        "small": {"per_call": 800, "per_1k_prompt_tokens": 0, "per_1k_completion_tokens": 0, "latency": 2.6},
        "large": {"per_call": 6400, "per_1k_prompt_tokens": 0, "per_1k_completion_tokens": 0, "latency": 6.4},
        "verifier": {"per_call": 1600, "per_1k_prompt_tokens": 0, "per_1k_completion_tokens": 0, "latency": 3.0},
        "monitor": {"per_call": 4, "per_1k_prompt_tokens": 0, "per_1k_completion_tokens": 0, "latency": 0.05},
    },
    "endpoints": {
        "small_policy": None,
        "large_policy": None,
        "stuck_monitor": None,
        "milestone_monitor": None,
        "verifier": None,
        "teacher": None,
    },
}


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


@dataclass(frozen=True)
class RunConfig:
    seed: int
    suite: dict[str, Any]
    profile: FailureProfile
    cascade: CascadeConfig
    prices: PriceTable
    endpoints: dict[str, Optional[str]]
    raw: dict[str, Any] = field(repr=False, default_factory=dict)

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def build_suite(self) -> SuiteManifest:
        s = self.suite
        return build_suite(
            root_seed=self.seed,
            num_tasks=int(s["tasks"]),
            g_min=int(s.get("subgoals_min", 3)),
            g_max=int(s.get("subgoals_max", 6)),
            max_steps=int(s["max_steps"]),
            profile=self.profile,
            subgoal_cycle=tuple(s["subgoal_cycle"]) if s.get("subgoal_cycle") else None,
        )


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    merged = _merge(DEFAULT_CONFIG, data)
    try:
        profile = FailureProfile.from_dict(merged["profile"])
        cascade = CascadeConfig.from_dict(merged["cascade"])
        prices = price_table_from_dict(merged["prices"])
        suite = merged["suite"]
        for key in ("tasks", "max_steps"):
            if key not in suite:
                raise KeyError(key)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return RunConfig(
        seed=int(merged["seed"]),
        suite=dict(suite),
        profile=profile,
        cascade=cascade,
        prices=prices,
        endpoints=dict(merged.get("endpoints") or {}),
        raw=merged,
    )


def load_config(path: Optional[Path | str] = None) -> RunConfig:
    if path is None:
        return config_from_dict({})
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)


def default_prices() -> PriceTable:
    return price_table_from_dict(DEFAULT_CONFIG["prices"])


def default_profile() -> FailureProfile:
    return FailureProfile.from_dict(DEFAULT_CONFIG["profile"])
