from __future__ import annotations

import random

import pytest

from stepcascade.trace import (
    Action,
    ActionKind,
    Episode,
    EpisodeOutcome,
    PolicyId,
    PolicyTier,
    Step,
    StepEvent,
    TaskSpec,
)

KINDS_WITH_ARGS = [ActionKind.CLICK, ActionKind.TYPE, ActionKind.HOTKEY, ActionKind.SCROLL]


def make_random_action(rng: random.Random) -> Action:
    kind = rng.choice(KINDS_WITH_ARGS + [ActionKind.DONE, ActionKind.FAIL, ActionKind.OTHER])
    if kind in (ActionKind.DONE, ActionKind.FAIL):
        return Action(kind)
    if kind is ActionKind.OTHER:
        return Action(kind, {"value": rng.randint(0, 9)}, name=f"custom{rng.randint(0, 3)}")
    if kind is ActionKind.TYPE:
        return Action(kind, {"text": rng.choice([" OK ", "hello", "Report Q3", ""])})
    if kind is ActionKind.HOTKEY:
        return Action(kind, {"keys": rng.choice(["ctrl+s", "escape", "alt+F4"])})
    return Action(kind, {"x": rng.randint(-50, 800), "y": rng.uniform(-20.0, 600.0)})


def make_random_episode(rng: random.Random, max_len: int = 12) -> Episode:
    n = rng.randint(0, max_len)
    task = TaskSpec(
        task_id=f"rand-{rng.randint(0, 10**9)}",
        instruction="do the random thing",
        max_steps=max(n, 1),
        metadata={"origin": "test"} if rng.random() < 0.5 else {},
    )
    steps = []
    for i in range(1, n + 1):
        action = make_random_action(rng)
        while i < n and action.kind in (ActionKind.DONE, ActionKind.FAIL):
            action = make_random_action(rng)
        steps.append(
            Step(
                index=i,
                rationale=f"step {i} thinking",
                action=action,
                policy=PolicyId("p", rng.choice([PolicyTier.SMALL, PolicyTier.LARGE])),
                observation_digest=f"obs-{i}",
                screenshot_ref=None if rng.random() < 0.8 else f"shot-{i}",
                stuck_score=None if rng.random() < 0.5 else round(rng.random(), 3),
                milestone_score=None if rng.random() < 0.5 else round(rng.random(), 3),
                events=frozenset(
                    e for e in StepEvent if rng.random() < 0.1
                ),
                latency=round(rng.uniform(0, 5), 3),
                cost=rng.randint(0, 10000),
                prompt_tokens=None if rng.random() < 0.7 else rng.randint(1, 5000),
                completion_tokens=None if rng.random() < 0.7 else rng.randint(1, 500),
            )
        )
    terminal = steps[-1].action if steps and steps[-1].action.kind in (ActionKind.DONE, ActionKind.FAIL) else None
    return Episode(
        task=task,
        steps=tuple(steps),
        outcome=rng.choice(list(EpisodeOutcome)),
        terminal_action=terminal,
    )


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)
