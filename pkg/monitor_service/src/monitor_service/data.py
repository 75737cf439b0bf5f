"""Dataset loading and window-to-text rendering.

Input files are line-delimited JSON records:
    {"kind": "stuck"|"milestone", "task"?: str, "entries": [...],
     "label": bool, "provenance": {...}}
with each entry {"rationale": str, "action": {"kind", "args"[, "name"]}}.

The rendering fed to the encoder is one line per entry,
``Step i | rationale | action-string``, prefixed with the task description
for milestone inputs. Token sequences are truncated from the left so the
most recent steps survive; recency matters most for stuckness. The exact
rendering is recorded in every artifact so scores stay reproducible.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional

RENDER_SPEC = "task-prefix(milestone) + lines 'Step i | rationale | kind(k=v,...)', left-truncated tokens"

PAD, UNK, CLS = 0, 1, 2
SPECIALS = ["[PAD]", "[UNK]", "[CLS]"]

_TOKEN_RE = re.compile(r"[a-z0-9]+|[|=(),.;:!?]")


@dataclass(frozen=True)
class Sample:
    text: str
    label: int
    trajectory_id: str
    step_index: int


def render_action(action: dict[str, Any]) -> str:
    args = action.get("args") or {}
    inner = ",".join(f"{k}={args[k]}" for k in sorted(args))
    name = action.get("name")
    kind = action["kind"] if not name else f"{action['kind']}:{name}"
    return f"{kind}({inner})"


def render_window(entries: Iterable[dict[str, Any]], task: Optional[str] = None) -> str:
    lines = []
    if task:
        lines.append(f"Task: {task}")
    for i, entry in enumerate(entries, start=1):
        lines.append(f"Step {i} | {entry['rationale']} | {render_action(entry['action'])}")
    return "\n".join(lines)


def load_samples(path: Path | str, expect_kind: Optional[str] = None) -> list[Sample]:
    samples = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            kind = record["kind"]
            if expect_kind and kind != expect_kind:
                raise ValueError(f"expected kind {expect_kind!r}, found {kind!r}")
            text = render_window(record["entries"], record.get("task") if kind == "milestone" else None)
            prov = record.get("provenance") or {}
            samples.append(Sample(
                text=text,
                label=int(bool(record["label"])),
                trajectory_id=str(prov.get("trajectory_id", "")),
                step_index=int(prov.get("step_index", 0)),
            ))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad dataset record: {exc}") from exc
    return samples


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str, max_len: int) -> list[int]:
        ids = [self.index.get(t, UNK) for t in tokenize(text)]
        if len(ids) > max_len - 1:
            ids = ids[-(max_len - 1):]  # keep the most recent tokens
        return [CLS] + ids

    def to_dict(self) -> dict[str, Any]:
        return {"tokens": self.tokens}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Vocab":
        return cls(list(d["tokens"]))

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1, max_size: int = 20000) -> "Vocab":
        counts = Counter()
        for text in texts:
            counts.update(tokenize(text))
        kept = [t for t, c in counts.most_common(max_size) if c >= min_count]
        return cls(SPECIALS + sorted(kept))
