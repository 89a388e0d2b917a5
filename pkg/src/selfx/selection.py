"""Global self-exemplar selection: distance-map filter, largest-scale-first, fill."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .features import MatchMaps
from .retrieval import ExemplarCandidate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    delta: float = 0.1
    k: int = 3  # 0 disables the global branch in the pipeline

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.k < 0:
            raise ValueError("k must be >= 0")


@dataclass(frozen=True)
class SelectedReferences:
    refs: tuple[tuple[ExemplarCandidate, MatchMaps], ...]
    fill_count: int
    padded: int = 0

    @property
    def degenerate(self) -> bool:
        return self.padded > 0


def _pass_key(item):
    cand, _ = item
    return (-cand.scale, -cand.score, cand.source_frame)


def _fill_key(item):
    cand, maps = item
    return (maps.mean_distance, -cand.scale, -cand.score, cand.source_frame)


def select(candidates: Sequence[tuple[ExemplarCandidate, MatchMaps]],
           cfg: SelectionConfig) -> SelectedReferences:
    """Keep the ``k`` largest-scale candidates whose mean(D) <= delta.

    Shortfalls are filled with the rejected candidates of smallest mean(D).  If
    fewer than ``k`` candidates exist at all, the best one is repeated.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    if cfg.k < 1:
        raise ValueError("selection needs k >= 1")
    passing = sorted((c for c in candidates if c[1].mean_distance <= cfg.delta), key=_pass_key)
    failing = sorted((c for c in candidates if c[1].mean_distance > cfg.delta), key=_fill_key)
    chosen = passing[:cfg.k]
    fill = failing[:cfg.k - len(chosen)]
    chosen += fill
    padded = cfg.k - len(chosen)
    if padded:
        log.warning("only %d candidates for k=%d; repeating the best", len(chosen), cfg.k)
        chosen += [chosen[0]] * padded
    return SelectedReferences(tuple(chosen), len(fill) + padded, padded)
