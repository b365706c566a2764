"""Client data partitions: IID subjects (S1), heavy-tailed sites (S2), one-ICG-outlier (S3)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import chain, zip_longest
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError, PartitionError, ParameterRangeError, SplitError
from .federation import ClientState
from .signals import Modality, Morphology, Series, Window, generate_synthetic, make_windows, split_train_test


class PartitionStrategy(str, enum.Enum):
    S1_IID = "s1"
    S2_SITE_NON_IID = "s2"
    S3_MODALITY_OUTLIER = "s3"

    @classmethod
    def parse(cls, value) -> "PartitionStrategy":
        if isinstance(value, PartitionStrategy):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise ParameterRangeError(f"unknown partition strategy {value!r}")


@dataclass(frozen=True)
class PartitionSpec:
    strategy: PartitionStrategy = PartitionStrategy.S1_IID
    n_clients: int = 20
    l_ctx: int = 64
    l_hor: int = 16
    stride: int = 16
    train_fraction: float = 0.7
    site_sizes: tuple[int, ...] | None = None
    seed: int = 0
    steps_per_round: int = 50
    batch_size: int = 16
    min_site_size: int = 10

    def __post_init__(self):
        object.__setattr__(self, "strategy", PartitionStrategy.parse(self.strategy))
        if self.site_sizes is not None:
            object.__setattr__(self, "site_sizes", tuple(int(s) for s in self.site_sizes))
        if self.n_clients < 2:
            raise ParameterRangeError("n_clients must be >= 2")
        if self.steps_per_round < 1 or self.batch_size < 1:
            raise ParameterRangeError("steps_per_round and batch_size must be >= 1")


def _interleave(groups: Sequence[Sequence[Window]]) -> list[Window]:
    return [w for w in chain.from_iterable(zip_longest(*groups)) if w is not None]


def _split_series(series: Series, spec: PartitionSpec) -> tuple[list[Window], list[Window]]:
    try:
        windows = make_windows(series, spec.l_ctx, spec.l_hor, spec.stride)
        return split_train_test(windows, spec.train_fraction, spec.seed)
    except (InsufficientDataError, SplitError) as exc:
        raise PartitionError(f"series {series.subject_id!r}: {exc}") from None


def _subject_groups(pool: Sequence[Series], n_clients: int) -> list[list[Series]]:
    if len(pool) < n_clients:
        raise PartitionError(f"pool has {len(pool)} series, need at least {n_clients}")
    groups: list[list[Series]] = [[] for _ in range(n_clients)]
    for j, series in enumerate(pool):
        groups[j % n_clients].append(series)
    return groups


def _group_windows(group: Sequence[Series], spec: PartitionSpec):
    splits = [_split_series(s, spec) for s in group]
    train = _interleave([tr for tr, _ in splits])
    test = [w for _, te in splits for w in te]
    return train, test


def _equal_clients(groups: Sequence[Sequence[Series]],
                   spec: PartitionSpec) -> list[tuple[list[Window], list[Window], Modality]]:
    out = []
    for group in groups:
        train, test = _group_windows(group, spec)
        out.append((train, test, group[0].modality))
    return out


def _to_clients(parts, spec: PartitionSpec) -> list[ClientState]:
    n_min = min(len(train) for train, _, _ in parts)
    return [ClientState(i, train[:n_min], test, spec.steps_per_round, spec.batch_size, mod)
            for i, (train, test, mod) in enumerate(parts)]


def build_s1(pool: Sequence[Series], spec: PartitionSpec) -> list[ClientState]:
    """Round-robin subjects over clients; every client keeps the same number of train windows."""
    if any(s.modality is not Modality.ECG for s in pool):
        raise PartitionError("S1 pool must contain only ECG series")
    groups = _subject_groups(pool, spec.n_clients)
    return _to_clients(_equal_clients(groups, spec), spec)


def build_s3(ecg_pool: Sequence[Series], icg_pool: Sequence[Series],
             spec: PartitionSpec) -> list[ClientState]:
    """``n_clients - 1`` ECG clients as in S1 plus one ICG-only client (the last id)."""
    if not icg_pool:
        raise PartitionError("S3 needs a non-empty ICG pool")
    if any(s.modality is not Modality.ECG for s in ecg_pool):
        raise PartitionError("S3 ECG pool must contain only ECG series")
    if any(s.modality is not Modality.ICG for s in icg_pool):
        raise PartitionError("S3 ICG pool must contain only ICG series")
    groups = _subject_groups(ecg_pool, spec.n_clients - 1)
    groups.append(list(icg_pool))
    return _to_clients(_equal_clients(groups, spec), spec)


def build_s2(sites: Sequence[Sequence[Series]], spec: PartitionSpec) -> list[ClientState]:
    """One client per site holding ``site_sizes[i]`` train windows and training that many steps.

    Without explicit ``site_sizes`` each site keeps every train window it has.
    """
    if len(sites) != spec.n_clients:
        raise PartitionError(f"got {len(sites)} sites for {spec.n_clients} clients")
    sizes = spec.site_sizes
    if sizes is not None and len(sizes) != spec.n_clients:
        raise PartitionError("site_sizes must have one entry per client")
    clients = []
    for i, site in enumerate(sites):
        if not site:
            raise PartitionError(f"site {i} has no series")
        splits = [_split_series(s, spec) for s in site]
        train = _interleave([tr for tr, _ in splits])
        test = _interleave([te for _, te in splits])
        size = len(train) if sizes is None else sizes[i]
        if size < max(1, spec.min_site_size):
            raise PartitionError(
                f"site {i} has {size} train windows, below the minimum {spec.min_site_size}")
        if len(train) < size:
            raise PartitionError(f"site {i} provides {len(train)} train windows, needs {size}")
        n_test = max(1, int(round(size * (1 - spec.train_fraction) / spec.train_fraction)))
        clients.append(ClientState(i, train[:size], test[:n_test], size, spec.batch_size,
                                   site[0].modality))
    return clients


def default_site_sizes(n_sites: int, seed: int, low: int = 10, high: int = 8910) -> tuple[int, ...]:
    """Log-uniform site sizes in [low, high]; the smallest and largest are pinned to the bounds."""
    if n_sites < 2 or not 1 <= low < high:
        raise ParameterRangeError("need n_sites >= 2 and 1 <= low < high")
    rng = np.random.default_rng([int(seed), 0x512E])
    sizes = np.exp(rng.uniform(math.log(low), math.log(high), size=n_sites))
    sizes = np.clip(np.round(sizes).astype(int), low, high)
    sizes[int(np.argmin(sizes))] = low
    sizes[int(np.argmax(sizes))] = high
    return tuple(int(s) for s in sizes)


def synthetic_sites(site_sizes: Sequence[int], spec: PartitionSpec, seed: int,
                    base: Morphology | None = None, n_samples: int = 1024) -> list[list[Series]]:
    """ECG sites with site-specific beat rate and noise; each has enough series for its size."""
    base = base or Morphology()
    rng = np.random.default_rng([int(seed), 0x517E])
    per_series = math.floor((n_samples - spec.l_ctx - spec.l_hor) / spec.stride) + 1
    train_per_series = max(1, int(round(spec.train_fraction * per_series)))
    sites = []
    for i, size in enumerate(site_sizes):
        morph = Morphology(
            beat_rate_hz=float(rng.uniform(0.8, 2.0)),
            sample_rate_hz=base.sample_rate_hz,
            noise_sigma=float(rng.uniform(0.0, 2 * base.noise_sigma)),
            wander_amplitude=base.wander_amplitude,
            wander_rate_hz=base.wander_rate_hz,
            amplitude=base.amplitude * float(rng.uniform(0.8, 1.2)),
            baseline=base.baseline,
            jitter=base.jitter,
        )
        n_series = max(1, math.ceil(size / train_per_series))
        sites.append([generate_synthetic(Modality.ECG, int(rng.integers(2**31)), n_samples, morph,
                                         subject_id=f"site{i}-{k}") for k in range(n_series)])
    return sites


def manifest_table(clients: Sequence[ClientState]) -> str:
    rows = [("id", "modality", "n_train", "n_test", "steps_per_round")]
    rows += [(str(c.id), c.modality.value, str(c.n_train), str(c.n_test), str(c.steps_per_round))
             for c in sorted(clients, key=lambda c: c.id)]
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
                     for r in rows) + "\n"
