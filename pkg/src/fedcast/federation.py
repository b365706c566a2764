"""Client/server round loop for FedAvg, FedProx, Fed-LA, local-only and zero-shot training.

Every client's minibatch randomness is derived from ``(master_seed, client id,
round)`` and aggregation always reduces in ascending client-id order, so the
results do not depend on how client work is scheduled.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, NumericError, ParameterRangeError, ProtocolError
from .forecaster import (ModelConfig, ParamVector, PretrainedCheckpoint, check_divergence,
                         check_layouts, forecast_batch, loss_and_grad, sgd_step)
from .metrics import ClientMetrics, RoundReport, weighted_report, window_metrics
from .signals import Modality, Window
from .tokenizer import TokenizerConfig


class StrategyKind(str, enum.Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    FEDLA = "fedla"
    LOCAL = "local"
    ZEROSHOT = "zeroshot"

    @classmethod
    def parse(cls, value) -> "StrategyKind":
        if isinstance(value, StrategyKind):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "").replace("_", ""))
        except ValueError:
            raise ParameterRangeError(f"unknown strategy {value!r}") from None


class WeightMode(str, enum.Enum):
    TRAIN_SIZE = "train"
    TEST_SIZE = "test"


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind = StrategyKind.FEDAVG
    rounds: int = 10
    eta: float = 0.05
    alpha: float = 0.1
    lam: float = 1.0
    # Fed-LA phase-1 length; None means two thirds of ``rounds`` (20 of 30)
    global_rounds: int | None = None
    weight_mode: WeightMode = WeightMode.TRAIN_SIZE
    client_fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind.parse(self.kind))
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))
        if self.rounds < 0:
            raise ParameterRangeError("rounds must be >= 0")
        if not self.eta > 0:
            raise ParameterRangeError("eta must be positive")
        if not 0 <= self.alpha <= 1:
            raise ParameterRangeError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ParameterRangeError("lam must be >= 0")
        if not 0 < self.client_fraction <= 1:
            raise ParameterRangeError("client_fraction must lie in (0, 1]")
        if self.kind is StrategyKind.FEDLA and self.rounds > 0 and not 0 <= self.phase_one < self.rounds:
            raise ParameterRangeError("Fed-LA needs 0 <= global_rounds < rounds")

    @property
    def phase_one(self) -> int:
        if self.global_rounds is not None:
            return self.global_rounds
        return (2 * self.rounds) // 3


@dataclass(frozen=True, eq=False)
class ClientState:
    id: int
    train_windows: tuple[Window, ...]
    test_windows: tuple[Window, ...]
    steps_per_round: int
    batch_size: int
    modality: Modality

    def __post_init__(self):
        object.__setattr__(self, "train_windows", tuple(self.train_windows))
        object.__setattr__(self, "test_windows", tuple(self.test_windows))
        object.__setattr__(self, "modality", Modality.parse(self.modality))
        if not self.train_windows:
            raise ParameterRangeError(f"client {self.id} has no training windows")
        if self.steps_per_round < 1 or self.batch_size < 1:
            raise ParameterRangeError("steps_per_round and batch_size must be >= 1")

    @property
    def n_train(self) -> int:
        return len(self.train_windows)

    @property
    def n_test(self) -> int:
        return len(self.test_windows)

    @cached_property
    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        ctx = np.stack([w.context for w in self.test_windows])
        tgt = np.stack([w.target for w in self.test_windows])
        return ctx, tgt


@dataclass(frozen=True, eq=False)
class Objective:
    """Local objective: data loss plus an optional quadratic pull toward ``ref``.

    ``proximal`` adds (alpha/2)·‖θ − ref‖², ``anchored`` adds lam·‖θ − ref‖².
    """

    kind: str = "plain"
    strength: float = 0.0
    ref: ParamVector | None = None

    @classmethod
    def plain(cls) -> "Objective":
        return cls()

    @classmethod
    def proximal(cls, alpha: float, ref: ParamVector) -> "Objective":
        return cls("proximal", float(alpha), ref)

    @classmethod
    def anchored(cls, lam: float, ref: ParamVector) -> "Objective":
        return cls("anchored", float(lam), ref)

    def penalty(self, theta: ParamVector) -> tuple[float, np.ndarray | None]:
        if self.kind == "plain" or self.strength == 0:
            return 0.0, None
        check_layouts(theta, self.ref)
        diff = theta.values - self.ref.values
        sq = float(diff @ diff)
        if self.kind == "proximal":
            return 0.5 * self.strength * sq, self.strength * diff
        if self.kind == "anchored":
            return self.strength * sq, 2.0 * self.strength * diff
        raise ParameterRangeError(f"unknown objective kind {self.kind!r}")


LossFn = Callable[[ParamVector, Sequence[Window], TokenizerConfig, ModelConfig],
                  "tuple[float, ParamVector]"]


def local_train(client: ClientState, start_params: ParamVector, objective: Objective,
                steps: int, batch_size: int, eta: float, seed, *,
                tok_cfg: TokenizerConfig, cfg: ModelConfig,
                loss_fn: LossFn = loss_and_grad) -> ParamVector:
    if steps < 1:
        raise ParameterRangeError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    windows = client.train_windows
    n = len(windows)
    theta = start_params
    for step in range(1, steps + 1):
        if n >= batch_size:
            idx = rng.choice(n, size=batch_size, replace=False)
        else:
            idx = rng.integers(n, size=batch_size)
        batch = [windows[i] for i in idx]
        try:
            loss, grad = loss_fn(theta, batch, tok_cfg, cfg)
        except NumericError:
            raise DivergenceError(step, math.nan, client.id) from None
        # the blow-up threshold is on the cross-entropy scale, so the penalty only has to be finite
        check_divergence(loss, cfg.n_bins, step, client.id)
        pen, pen_grad = objective.penalty(theta)
        if not math.isfinite(pen):
            raise DivergenceError(step, pen, client.id)
        if pen_grad is not None:
            grad = grad.with_values(grad.values + pen_grad)
        theta = sgd_step(theta, grad, eta)
        if not np.all(np.isfinite(theta.values)):
            raise DivergenceError(step, math.nan, client.id)
    return theta


def aggregate(updates: Sequence[tuple[ParamVector, int]]) -> ParamVector:
    """Weighted mean of client parameters, reduced in the order given.

    Callers pass updates sorted by client id.
    """
    if not updates:
        raise ProtocolError("no updates to aggregate")
    first = updates[0][0]
    for params, w in updates:
        check_layouts(first, params)
        if w < 1:
            raise ProtocolError(f"aggregation weight must be >= 1, got {w}")
    total = float(sum(w for _, w in updates))
    acc = (updates[0][1] / total) * updates[0][0].values
    for params, w in updates[1:]:
        acc = acc + (w / total) * params.values
    return first.with_values(acc)


@dataclass(frozen=True, eq=False)
class GlobalState:
    round: int
    global_params: ParamVector
    anchor: ParamVector | None = None
    # persisted per-client models (local-only and Fed-LA phase 2)
    client_params: dict = field(default_factory=dict)
    history: tuple[RoundReport, ...] = ()
    # total aggregation weight per round, 0 when nothing was aggregated
    weight_log: tuple[int, ...] = ()


def client_seed(master_seed: int, client_id: int, round_no: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(client_id), int(round_no)])


def evaluate_client(client: ClientState, params: ParamVector, tok_cfg: TokenizerConfig,
                    cfg: ModelConfig) -> ClientMetrics:
    ctx, tgt = client.test_arrays
    fc = forecast_batch(params, ctx, tgt.shape[1], tok_cfg, cfg)
    m = window_metrics(fc, tgt)
    return ClientMetrics(client.id, client.n_test, m.rmse, m.mae, m.smape_pct, client.modality)


def _participants(clients: Sequence[ClientState], strategy: StrategyConfig, master_seed: int,
                  round_no: int) -> list[ClientState]:
    ordered = sorted(clients, key=lambda c: c.id)
    if strategy.client_fraction >= 1:
        return ordered
    k = max(1, int(round(strategy.client_fraction * len(ordered))))
    rng = np.random.default_rng([int(master_seed), 0x5A3, int(round_no)])
    chosen = sorted(rng.choice(len(ordered), size=k, replace=False))
    return [ordered[i] for i in chosen]


def _map(executor: Executor | None, fn, items):
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def run_round(state: GlobalState, clients: Sequence[ClientState], strategy: StrategyConfig,
              master_seed: int, *, tok_cfg: TokenizerConfig, executor: Executor | None = None,
              loss_fn: LossFn = loss_and_grad) -> GlobalState:
    if state.round >= strategy.rounds:
        raise ParameterRangeError(f"round {state.round} already reached R={strategy.rounds}")
    cfg = state.global_params.layout.config
    r = state.round + 1
    kind = strategy.kind
    active = _participants(clients, strategy, master_seed, r)
    ordered = sorted(clients, key=lambda c: c.id)

    def train(client: ClientState, start: ParamVector, objective: Objective) -> ParamVector:
        return local_train(client, start, objective, client.steps_per_round, client.batch_size,
                           strategy.eta, client_seed(master_seed, client.id, r),
                           tok_cfg=tok_cfg, cfg=cfg, loss_fn=loss_fn)

    global_params = state.global_params
    anchor = state.anchor
    client_params = dict(state.client_params)
    weight_total = 0

    federated = kind in (StrategyKind.FEDAVG, StrategyKind.FEDPROX) or (
        kind is StrategyKind.FEDLA and r <= strategy.phase_one)
    if federated:
        if kind is StrategyKind.FEDPROX:
            objective = Objective.proximal(strategy.alpha, global_params)
        else:
            objective = Objective.plain()
        new = _map(executor, lambda c: train(c, global_params, objective), active)
        weights = [c.n_train if strategy.weight_mode is WeightMode.TRAIN_SIZE else c.n_test
                   for c in active]
        global_params = aggregate(list(zip(new, weights)))
        weight_total = sum(weights)
        if kind is StrategyKind.FEDLA and r == strategy.phase_one:
            anchor = global_params
            client_params = {c.id: global_params for c in ordered}
        eval_params = {c.id: global_params for c in ordered}
    elif kind is StrategyKind.FEDLA:
        if anchor is None:
            # phase_one == 0: phase 2 starts straight from the pretrained model
            anchor = global_params
            client_params = {c.id: global_params for c in ordered}
        objective = Objective.anchored(strategy.lam, anchor)
        new = _map(executor, lambda c: train(c, client_params[c.id], objective), active)
        client_params.update({c.id: p for c, p in zip(active, new)})
        eval_params = dict(client_params)
    elif kind is StrategyKind.LOCAL:
        new = _map(executor, lambda c: train(c, client_params.get(c.id, global_params),
                                             Objective.plain()), active)
        client_params.update({c.id: p for c, p in zip(active, new)})
        eval_params = {c.id: client_params.get(c.id, global_params) for c in ordered}
    else:
        eval_params = {c.id: global_params for c in ordered}

    per_client = _map(executor, lambda c: evaluate_client(c, eval_params[c.id], tok_cfg, cfg),
                      ordered)
    report = weighted_report(r, per_client)
    return replace(state, round=r, global_params=global_params, anchor=anchor,
                   client_params=client_params, history=state.history + (report,),
                   weight_log=state.weight_log + (weight_total,))


def run_experiment(clients: Sequence[ClientState], strategy: StrategyConfig,
                   checkpoint: PretrainedCheckpoint, master_seed: int, *,
                   tok_cfg: TokenizerConfig, executor: Executor | None = None,
                   loss_fn: LossFn = loss_and_grad) -> list[RoundReport]:
    """Run ``strategy.rounds`` rounds from the checkpoint and return the per-round history."""
    final = run_rounds(clients, strategy, checkpoint, master_seed, tok_cfg=tok_cfg,
                       executor=executor, loss_fn=loss_fn)
    return list(final.history)


def run_rounds(clients: Sequence[ClientState], strategy: StrategyConfig,
               checkpoint: PretrainedCheckpoint, master_seed: int, *,
               tok_cfg: TokenizerConfig, executor: Executor | None = None,
               loss_fn: LossFn = loss_and_grad) -> GlobalState:
    ids = [c.id for c in clients]
    if len(set(ids)) != len(ids):
        raise ProtocolError("client ids must be unique")
    checkpoint.config.check_tokenizer(tok_cfg)
    state = GlobalState(0, checkpoint.params)
    for _ in range(strategy.rounds):
        state = run_round(state, clients, strategy, master_seed, tok_cfg=tok_cfg,
                          executor=executor, loss_fn=loss_fn)
    return state
