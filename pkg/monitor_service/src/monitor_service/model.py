"""Compact transformer sequence classifier.

The encoder is intentionally small and trained from scratch; the base
encoder is a configuration knob, not a fixed architecture, and the
classification head sits on the leading [CLS] position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import torch
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 96
    layers: int = 2
    heads: int = 4
    ff_dim: int = 192
    dropout: float = 0.1
    max_positions: int = 2048

    def to_dict(self) -> dict[str, Any]:
        return {
            "vocab_size": self.vocab_size, "dim": self.dim, "layers": self.layers,
            "heads": self.heads, "ff_dim": self.ff_dim, "dropout": self.dropout,
            "max_positions": self.max_positions,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EncoderConfig":
        return cls(**d)


class WindowClassifier(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.dim, padding_idx=0)
        self.positions = nn.Embedding(cfg.max_positions, cfg.dim)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.dim, nhead=cfg.heads, dim_feedforward=cfg.ff_dim,
            dropout=cfg.dropout, batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)
        self.head = nn.Linear(cfg.dim, 2)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(ids.size(1), device=ids.device).clamp(max=self.cfg.max_positions - 1)
        x = self.embed(ids) + self.positions(positions)[None, :, :]
        x = self.encoder(x, src_key_padding_mask=~mask)
        return self.head(x[:, 0, :])

    @torch.no_grad()
    def score(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """P(positive) per row, in eval mode."""
        self.eval()
        logits = self.forward(ids, mask)
        return torch.softmax(logits, dim=-1)[:, 1]


def pad_batch(sequences: list[list[int]], device: torch.device) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(s) for s in sequences)
    ids = torch.zeros(len(sequences), width, dtype=torch.long, device=device)
    mask = torch.zeros(len(sequences), width, dtype=torch.bool, device=device)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = torch.tensor(seq, dtype=torch.long, device=device)
        mask[i, : len(seq)] = True
    return ids, mask
