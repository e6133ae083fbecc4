"""Non-learned and simple learned answer-selection baselines."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .features import StreamBatch, Vocabulary
from .model import MaskedSequenceEncoder


class BaselineKind(str, Enum):
    SHORTEST = "shortest"
    LONGEST = "longest"
    QA_SIMILARITY = "qa_similarity"
    QA_V_S = "qa_v_s"


def shortest_answer(candidates: Sequence[Sequence[str]]) -> int:
    """Index of the candidate with the fewest tokens; ties take the lowest."""
    lengths = [len(c) for c in candidates]
    return lengths.index(min(lengths))


def longest_answer(candidates: Sequence[Sequence[str]]) -> int:
    lengths = [len(c) for c in candidates]
    return lengths.index(max(lengths))


def qa_similarity(question: Sequence[str], candidates: Sequence[Sequence[str]],
                  vocab: Vocabulary) -> int:
    """Cosine similarity between mean question and mean candidate vectors.

    Zero-norm vectors get similarity 0; ties take the lowest index.
    """
    q = vocab.embed(list(question)).mean(axis=0) if question else np.zeros(vocab.d_w)
    qn = np.linalg.norm(q)
    best_idx, best = 0, -np.inf
    for i, cand in enumerate(candidates):
        a = vocab.embed(list(cand)).mean(axis=0) if cand else np.zeros(vocab.d_w)
        an = np.linalg.norm(a)
        sim = 0.0 if qn == 0 or an == 0 else float(q @ a / (qn * an))
        if sim > best:
            best_idx, best = i, sim
    return best_idx


def _masked_mean(h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over unmasked time steps; zero vector when nothing is unmasked."""
    weights = mask.unsqueeze(-1)
    total = (h * weights).sum(dim=tuple(range(h.dim() - 1)))
    count = weights.sum()
    if float(count) == 0:
        return torch.zeros(h.shape[-1], dtype=h.dtype)
    return total / count


@dataclass
class MeanPoolConfig:
    d: int = 300
    d_w: int = 300
    d_v: int = 64
    roster_size: int = 20
    hidden: tuple[int, int] = (300, 100)
    dropout: float = 0.5
    dtype: str = "float64"


class MeanPoolBaseline(nn.Module):
    """QA+visual+script streams encoded bidirectionally, mean-pooled over
    time, concatenated, and scored per candidate by a two-layer perceptron."""

    def __init__(self, config: MeanPoolConfig):
        super().__init__()
        self.config = config
        d, d_w, r = config.d, config.d_w, config.roster_size
        self.qa_encoder = MaskedSequenceEncoder(d_w, d)
        self.script_encoder = MaskedSequenceEncoder(d_w + r, d)
        self.visual_encoder = MaskedSequenceEncoder(config.d_v + 2 * d_w + r, d)
        h1, h2 = config.hidden
        self.mlp = nn.Sequential(
            nn.Linear(3 * d, h1), nn.ReLU(), nn.Dropout(config.dropout),
            nn.Linear(h1, h2), nn.ReLU(), nn.Dropout(config.dropout),
            nn.Linear(h2, 1),
        )
        self.to(torch.float64 if config.dtype == "float64" else torch.float32)

    def _tensor(self, arr: np.ndarray) -> torch.Tensor:
        dtype = torch.float64 if self.config.dtype == "float64" else torch.float32
        return torch.as_tensor(arr, dtype=dtype)

    def forward(self, batch: StreamBatch) -> torch.Tensor:
        qa = self._tensor(batch.qa)
        qa_mask = self._tensor(batch.qa_mask)
        h_qa = self.qa_encoder(qa, qa_mask)
        n_cand = qa.shape[0]
        qa_pool = (h_qa * qa_mask.unsqueeze(-1)).sum(dim=1)
        qa_counts = qa_mask.sum(dim=1, keepdim=True).clamp(min=1.0)
        qa_pool = qa_pool / qa_counts

        if batch.script.size:
            h_s = self.script_encoder(self._tensor(batch.script),
                                      self._tensor(batch.script_mask))
            s_pool = _masked_mean(h_s, self._tensor(batch.script_mask))
        else:
            s_pool = torch.zeros(self.config.d, dtype=qa.dtype)
        if batch.visual.size:
            h_v = self.visual_encoder(self._tensor(batch.visual),
                                      self._tensor(batch.visual_mask))
            v_pool = _masked_mean(h_v, self._tensor(batch.visual_mask))
        else:
            v_pool = torch.zeros(self.config.d, dtype=qa.dtype)

        context = torch.cat([s_pool, v_pool]).unsqueeze(0).expand(n_cand, -1)
        features = torch.cat([qa_pool, context], dim=1)
        return self.mlp(features).squeeze(-1)

    def predict(self, batch: StreamBatch) -> int:
        with torch.no_grad():
            scores = self.forward(batch).detach().cpu().numpy()
        return int(np.argmax(scores))


def build_mean_pool_baseline(config: MeanPoolConfig, seed: int = 0) -> MeanPoolBaseline:
    torch.manual_seed(seed)
    return MeanPoolBaseline(config)
