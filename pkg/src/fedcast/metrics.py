"""Point-forecast error metrics and their test-size-weighted aggregation across clients.

sMAPE here is the 0-200 % variant; terms whose denominator |f| + |t| is zero
contribute zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .signals import Modality


def _pair(forecast, target) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(forecast, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if f.shape != t.shape:
        raise ValueError(f"forecast shape {f.shape} != target shape {t.shape}")
    if f.size == 0:
        raise ValueError("metrics need at least one point")
    return f, t


def rmse(forecast, target) -> float:
    f, t = _pair(forecast, target)
    return float(np.sqrt(np.mean((f - t) ** 2)))


def mae(forecast, target) -> float:
    f, t = _pair(forecast, target)
    return float(np.mean(np.abs(f - t)))


def smape(forecast, target) -> float:
    f, t = _pair(forecast, target)
    denom = np.abs(f) + np.abs(t)
    safe = np.where(denom == 0, 1.0, denom)
    terms = np.where(denom == 0, 0.0, 2.0 * np.abs(f - t) / safe)
    return float(100.0 * np.mean(terms))


@dataclass(frozen=True)
class Triple:
    rmse: float
    mae: float
    smape_pct: float


@dataclass(frozen=True)
class ClientMetrics:
    client_id: int
    n_test: int
    rmse: float
    mae: float
    smape_pct: float
    modality: Modality

    @property
    def triple(self) -> Triple:
        return Triple(self.rmse, self.mae, self.smape_pct)


@dataclass(frozen=True)
class RoundReport:
    round: int
    per_client: tuple[ClientMetrics, ...]
    weighted: Triple
    per_modality: dict = field(default_factory=dict)


def window_metrics(forecasts: np.ndarray, targets: np.ndarray) -> Triple:
    """Per-window metrics averaged (unweighted) over a client's test windows."""
    f = np.atleast_2d(forecasts)
    t = np.atleast_2d(targets)
    per = np.array([[rmse(a, b), mae(a, b), smape(a, b)] for a, b in zip(f, t)])
    return Triple(*(float(v) for v in per.mean(axis=0)))


def weighted_triple(items: Iterable[tuple[Triple, int]]) -> Triple:
    items = sorted(items, key=lambda it: (it[0].rmse, it[0].mae, it[0].smape_pct, it[1]))
    if not items:
        raise ValueError("weighted average over no clients")
    w = np.array([n for _, n in items], dtype=np.float64)
    if np.any(w < 1):
        raise ValueError("weights must be >= 1")
    vals = np.array([[m.rmse, m.mae, m.smape_pct] for m, _ in items])
    avg = (w[:, None] * vals).sum(axis=0) / w.sum()
    # clamp roundoff so the average never leaves the per-client hull
    avg = np.clip(avg, vals.min(axis=0), vals.max(axis=0))
    return Triple(*(float(v) for v in avg))


def weighted_report(round_no: int, per_client: Sequence[ClientMetrics]) -> RoundReport:
    """Combine client metrics with test-set sizes as weights, overall and per modality."""
    if not per_client:
        raise ValueError("no client metrics to aggregate")
    ordered = tuple(sorted(per_client, key=lambda c: c.client_id))
    overall = weighted_triple((c.triple, c.n_test) for c in ordered)
    per_modality = {}
    for mod in Modality:
        subset = [c for c in ordered if c.modality is mod]
        if subset:
            per_modality[mod] = weighted_triple((c.triple, c.n_test) for c in subset)
    return RoundReport(round_no, ordered, overall, per_modality)
