"""Experiment orchestration: data materialization, checkpoint caching, CSV and table output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import federation, forecaster, partitioning, signals
from .config import ExperimentConfig
from .errors import FedcastError
from .federation import ClientState, StrategyKind
from .metrics import RoundReport
from .partitioning import PartitionStrategy
from .signals import Modality

log = logging.getLogger(__name__)

GRID_ORDER = (StrategyKind.FEDAVG, StrategyKind.FEDPROX, StrategyKind.FEDLA,
              StrategyKind.ZEROSHOT, StrategyKind.LOCAL)
DISPLAY_NAMES = {
    StrategyKind.FEDAVG: "FedAvg",
    StrategyKind.FEDPROX: "FedProx",
    StrategyKind.FEDLA: "Fed-LA",
    StrategyKind.ZEROSHOT: "Zero-shot",
    StrategyKind.LOCAL: "Local",
}

_checkpoints: dict[str, forecaster.PretrainedCheckpoint] = {}


def worker_count() -> int:
    raw = os.environ.get("FEDCAST_THREADS", "1").strip() or "1"
    try:
        return max(1, int(raw))
    except ValueError:
        raise FedcastError(f"FEDCAST_THREADS must be an integer, got {raw!r}") from None


@contextmanager
def client_executor(workers: int | None = None) -> Iterator[ThreadPoolExecutor | None]:
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield pool


# ---------------------------------------------------------------------------
# data

def _subjects(modality: Modality, count: int, morph: signals.Morphology, rate_range,
              n_samples: int, rng: np.random.Generator) -> list[signals.Series]:
    out = []
    for k in range(count):
        rate = float(rng.uniform(*rate_range))
        seed = int(rng.integers(2**31))
        params = dataclasses.replace(morph, beat_rate_hz=rate)
        out.append(signals.generate_synthetic(modality, seed, n_samples, params,
                                              subject_id=f"{modality.value.lower()}-{k:03d}"))
    return out


def _csv_pool(paths: Sequence[str], modality: Modality, rate: float) -> list[signals.Series]:
    return [signals.ingest_csv(p, modality, rate) for p in paths]


def build_clients(cfg: ExperimentConfig) -> list[ClientState]:
    """Materialize the partition's clients; synthetic data depends only on ``master_seed``."""
    spec, data = cfg.partition, cfg.data
    rng = np.random.default_rng([int(cfg.master_seed), int(spec.seed), 0xDA7A])

    if spec.strategy is PartitionStrategy.S2_SITE_NON_IID:
        if data.source == "csv":
            sites = [[s] for s in _csv_pool(data.ecg_files, Modality.ECG, data.csv_sample_rate_hz)]
        else:
            sizes = spec.site_sizes or partitioning.default_site_sizes(
                spec.n_clients, int(rng.integers(2**31)), data.site_size_low, data.site_size_high)
            spec = dataclasses.replace(spec, site_sizes=sizes)
            sites = partitioning.synthetic_sites(sizes, spec, int(rng.integers(2**31)),
                                                 data.ecg, data.n_samples)
        return partitioning.build_s2(sites, spec)

    if data.source == "csv":
        ecg = _csv_pool(data.ecg_files, Modality.ECG, data.csv_sample_rate_hz)
        icg = _csv_pool(data.icg_files, Modality.ICG, data.csv_sample_rate_hz)
    else:
        ecg = _subjects(Modality.ECG, data.n_subjects, data.ecg,
                        (data.ecg_rate_low, data.ecg_rate_high), data.n_samples, rng)
        icg = _subjects(Modality.ICG, data.n_icg_subjects, data.icg,
                        (data.icg_rate_low, data.icg_rate_high), data.n_samples, rng)
    if spec.strategy is PartitionStrategy.S1_IID:
        return partitioning.build_s1(ecg, spec)
    return partitioning.build_s3(ecg, icg, spec)


# ---------------------------------------------------------------------------
# checkpoints

def checkpoint_key(cfg: ExperimentConfig) -> str:
    payload = {
        "model": dataclasses.asdict(cfg.model),
        "tokenizer": dataclasses.asdict(cfg.tokenizer),
        "pretrain": dataclasses.asdict(cfg.pretrain),
        "l_ctx": cfg.partition.l_ctx,
        "l_hor": cfg.partition.l_hor,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def default_cache_dir(cfg: ExperimentConfig) -> Path:
    env = os.environ.get("FEDCAST_CACHE")
    return Path(env) if env else Path(cfg.output_dir) / ".cache"


def get_checkpoint(cfg: ExperimentConfig, cache_dir: Path | None = None) -> forecaster.PretrainedCheckpoint:
    """Pretrained checkpoint for ``cfg``, reused across runs by content hash."""
    key = checkpoint_key(cfg)
    if key in _checkpoints:
        return _checkpoints[key]
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir(cfg)
    path = cache_dir / f"{key}.bin"
    if path.is_file():
        ckpt = forecaster.load_checkpoint(path)
    else:
        p = cfg.pretrain
        log.info("pretraining checkpoint %s (%d steps)", key, p.steps)
        ckpt = forecaster.pretrain(cfg.model, p.mixture_seed, p.steps, p.eta, tok_cfg=cfg.tokenizer,
                                   batch_size=p.batch_size, l_ctx=cfg.partition.l_ctx,
                                   l_hor=cfg.partition.l_hor)
        cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        forecaster.save_checkpoint(ckpt, tmp)
        tmp.replace(path)
    _checkpoints[key] = ckpt
    return ckpt


# ---------------------------------------------------------------------------
# running

def run_config(cfg: ExperimentConfig, clients: Sequence[ClientState] | None = None,
               checkpoint: forecaster.PretrainedCheckpoint | None = None,
               workers: int | None = None) -> list[RoundReport]:
    clients = build_clients(cfg) if clients is None else clients
    checkpoint = get_checkpoint(cfg) if checkpoint is None else checkpoint
    with client_executor(workers) as pool:
        return federation.run_experiment(clients, cfg.strategy, checkpoint, cfg.master_seed,
                                         tok_cfg=cfg.tokenizer, executor=pool)


def run_grid(cfg: ExperimentConfig, clients: Sequence[ClientState] | None = None,
             checkpoint: forecaster.PretrainedCheckpoint | None = None,
             workers: int | None = None,
             kinds: Sequence[StrategyKind] = GRID_ORDER) -> dict[StrategyKind, list[RoundReport]]:
    """Every strategy on one partition and one shared checkpoint."""
    clients = build_clients(cfg) if clients is None else clients
    checkpoint = get_checkpoint(cfg) if checkpoint is None else checkpoint
    out = {}
    for kind in kinds:
        strategy = dataclasses.replace(cfg.strategy, kind=kind)
        out[kind] = run_config(dataclasses.replace(cfg, strategy=strategy), clients, checkpoint,
                               workers)
    return out


# ---------------------------------------------------------------------------
# output

def _modalities(histories: Mapping[StrategyKind, Sequence[RoundReport]],
                include: bool | None) -> list[Modality]:
    present = sorted({m for h in histories.values() for r in h for m in r.per_modality},
                     key=lambda m: list(Modality).index(m))
    if include is None:
        include = len(present) > 1
    return present if include else []


def _row(report: RoundReport, strategy: StrategyKind, mods: Sequence[Modality]) -> list[str]:
    row = [str(report.round), strategy.value, repr(report.weighted.rmse),
           repr(report.weighted.mae), repr(report.weighted.smape_pct)]
    for m in mods:
        t = report.per_modality.get(m)
        row += [repr(t.rmse), repr(t.mae), repr(t.smape_pct)] if t else ["", "", ""]
    return row


def _header(first: str, mods: Sequence[Modality]) -> list[str]:
    cols = [first, "strategy", "rmse", "mae", "smape_pct"]
    for m in mods:
        tag = m.value.lower()
        cols += [f"rmse_{tag}", f"mae_{tag}", f"smape_pct_{tag}"]
    return cols


def rounds_csv(histories: Mapping[StrategyKind, Sequence[RoundReport]],
               per_modality: bool | None = None) -> str:
    mods = _modalities(histories, per_modality)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_header("round", mods))
    for kind, history in histories.items():
        for report in history:
            writer.writerow(_row(report, kind, mods))
    return buf.getvalue()


def write_round_csv(history: Sequence[RoundReport], path, strategy: StrategyKind | str = "fedavg",
                    per_modality: bool | None = None) -> None:
    """One row per round: ``round,strategy,rmse,mae,smape_pct`` plus per-modality columns."""
    if not history:
        raise ValueError("cannot write an empty round history")
    kind = StrategyKind.parse(strategy)
    _write(path, rounds_csv({kind: history}, per_modality))


def summary_csv(histories: Mapping[StrategyKind, Sequence[RoundReport]],
                per_modality: bool | None = None) -> str:
    """Final-round metrics, one row per strategy."""
    mods = _modalities(histories, per_modality)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_header("rounds", mods))
    for kind, history in histories.items():
        if history:
            row = _row(history[-1], kind, mods)
            writer.writerow(row)
    return buf.getvalue()


def comparison_table(histories: Mapping[StrategyKind, Sequence[RoundReport]],
                     per_modality: bool | None = None) -> str:
    """Human-readable final-round table, one block of columns per modality for S3."""
    mods = _modalities(histories, per_modality)
    groups = [(None, "")] if not mods else [(m, f" {m.value}") for m in mods]
    header = ["Approach"]
    for _, tag in groups:
        header += [f"RMSE{tag}", f"MAE{tag}", f"sMAPE{tag} (%)"]
    rows = [header]
    for kind, history in histories.items():
        if not history:
            continue
        last = history[-1]
        row = [DISPLAY_NAMES[kind]]
        for m, _ in groups:
            t = last.weighted if m is None else last.per_modality.get(m)
            row += [f"{t.rmse:.4f}", f"{t.mae:.4f}", f"{t.smape_pct:.2f}"] if t else ["-"] * 3
        rows.append(row)
    widths = [max(len(r[k]) for r in rows) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.append("sMAPE uses the 0-200% symmetric form; zero-denominator terms count as 0.")
    return "\n".join(lines) + "\n"


def _write(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def write_outputs(out_dir, histories: Mapping[StrategyKind, Sequence[RoundReport]],
                  clients: Sequence[ClientState], checkpoint: forecaster.PretrainedCheckpoint,
                  per_modality: bool | None = None) -> None:
    out = Path(out_dir)
    _write(out / "rounds.csv", rounds_csv(histories, per_modality))
    _write(out / "summary.csv", summary_csv(histories, per_modality))
    _write(out / "comparison.txt", comparison_table(histories, per_modality))
    _write(out / "manifest.txt", partitioning.manifest_table(clients))
    forecaster.save_checkpoint(checkpoint, out / "checkpoint.bin")
