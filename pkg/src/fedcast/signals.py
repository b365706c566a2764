"""Synthetic cardiac-like signals, CSV ingestion and context/forecast windowing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestionError, InsufficientDataError, ParameterRangeError, SplitError


class Modality(str, enum.Enum):
    ECG = "ECG"
    ICG = "ICG"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, value: "str | Modality") -> "Modality":
        if isinstance(value, Modality):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ParameterRangeError(f"unknown modality {value!r}") from None


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Series:
    values: np.ndarray
    sample_rate_hz: float
    modality: Modality
    subject_id: str

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1 or values.size == 0:
            raise ParameterRangeError("series values must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(values)):
            raise ParameterRangeError("series values must be finite")
        if not self.sample_rate_hz > 0:
            raise ParameterRangeError("sample_rate_hz must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "modality", Modality.parse(self.modality))

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class Window:
    """A context slice and the target slice that immediately follows it.

    ``source`` and ``offset`` identify where the window was cut from; they give
    batches a canonical ordering independent of how callers arrange them.
    """

    context: np.ndarray
    target: np.ndarray
    modality: Modality = Modality.OTHER
    source: str = ""
    offset: int = 0
    # memo for derived token arrays, keyed by whoever computes them
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "context", _frozen(self.context))
        object.__setattr__(self, "target", _frozen(self.target))
        object.__setattr__(self, "modality", Modality.parse(self.modality))

    def sort_key(self):
        return (self.source, self.offset, self.context.tobytes(), self.target.tobytes())


@dataclass(frozen=True)
class Morphology:
    """Shape parameters of a synthetic quasi-periodic signal.

    ``amplitude`` and ``baseline`` place the waveform in normalized units
    (roughly [0, 1]); ``jitter`` is the relative per-subject perturbation of
    wave heights and widths drawn from the subject seed.
    """

    beat_rate_hz: float = 1.2
    sample_rate_hz: float = 32.0
    noise_sigma: float = 0.01
    wander_amplitude: float = 0.03
    wander_rate_hz: float = 0.15
    amplitude: float = 0.6
    baseline: float = 0.3
    jitter: float = 0.1

    def validate(self) -> None:
        if not 0.8 <= self.beat_rate_hz <= 2.0:
            raise ParameterRangeError(f"beat_rate_hz={self.beat_rate_hz} outside [0.8, 2.0]")
        if not self.sample_rate_hz > 0:
            raise ParameterRangeError("sample_rate_hz must be positive")
        if period_samples(self) < 4:
            raise ParameterRangeError("beat period shorter than 4 samples; raise sample_rate_hz")
        if self.noise_sigma < 0 or self.wander_amplitude < 0:
            raise ParameterRangeError("noise_sigma and wander_amplitude must be >= 0")
        if not self.wander_rate_hz > 0:
            raise ParameterRangeError("wander_rate_hz must be positive")
        if not 0 <= self.jitter < 0.5:
            raise ParameterRangeError("jitter must lie in [0, 0.5)")
        for name in ("beat_rate_hz", "sample_rate_hz", "noise_sigma", "wander_amplitude",
                     "wander_rate_hz", "amplitude", "baseline", "jitter"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterRangeError(f"{name} must be finite")


def period_samples(params: Morphology) -> int:
    """Length of one beat template in samples."""
    return int(round(params.sample_rate_hz / params.beat_rate_hz))


# (phase centre, height, width) in fractions of one beat; width is a gaussian sigma.
_ECG_WAVES = (
    (0.18, 0.12, 0.030),   # P
    (0.36, -0.12, 0.015),  # Q
    (0.40, 1.00, 0.025),   # R
    (0.44, -0.25, 0.018),  # S
    (0.66, 0.30, 0.045),   # T
)
_ICG_WAVES = (
    (0.12, -0.12, 0.030),  # A
    (0.30, 1.00, 0.070),   # C
    (0.50, -0.45, 0.060),  # X
    (0.68, 0.15, 0.050),   # O
)
_OTHER_WAVES = (
    (0.50, 1.00, 0.180),
)


def _template(waves, period: int, rng: np.random.Generator, jitter: float) -> np.ndarray:
    phase = np.arange(period) / period
    out = np.zeros(period)
    for centre, height, width in waves:
        h = height * (1.0 + jitter * rng.uniform(-1.0, 1.0))
        w = width * (1.0 + jitter * rng.uniform(-1.0, 1.0))
        # wrap the phase distance so templates stay periodic at the seam
        d = (phase - centre + 0.5) % 1.0 - 0.5
        out += h * np.exp(-0.5 * (d / w) ** 2)
    return out


def generate_synthetic(modality, subject_seed: int, n_samples: int,
                       params: Morphology | None = None, subject_id: str | None = None) -> Series:
    """Spike-train (ECG), biphasic bump-train (ICG) or single smooth bump-train
    (OTHER) series plus noise and baseline wander.

    The periodic part repeats exactly every ``period_samples(params)`` samples;
    all randomness comes from ``subject_seed``.
    """
    modality = Modality.parse(modality)
    params = params or Morphology()
    params.validate()
    if n_samples < 1:
        raise ParameterRangeError("n_samples must be >= 1")

    rng = np.random.default_rng([int(subject_seed), 0x5167])
    period = period_samples(params)
    waves = {Modality.ECG: _ECG_WAVES, Modality.ICG: _ICG_WAVES}.get(modality, _OTHER_WAVES)
    template = _template(waves, period, rng, params.jitter)
    shift = int(rng.integers(period))
    reps = (n_samples + shift) // period + 1
    periodic = np.tile(template, reps)[shift:shift + n_samples]

    values = params.baseline + params.amplitude * periodic
    t = np.arange(n_samples) / params.sample_rate_hz
    wander_phase = rng.uniform(0.0, 2 * np.pi)
    noise = rng.normal(0.0, 1.0, size=n_samples)
    if params.wander_amplitude > 0:
        values = values + params.wander_amplitude * np.sin(
            2 * np.pi * params.wander_rate_hz * t + wander_phase)
    if params.noise_sigma > 0:
        values = values + params.noise_sigma * noise
    if subject_id is None:
        subject_id = f"{modality.value.lower()}-{subject_seed}"
    return Series(values, params.sample_rate_hz, modality, subject_id)


def ingest_csv(path, modality, sample_rate_hz: float = 500.0) -> Series:
    """Read one sample per line (optionally ``t,value`` pairs, optional header)."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such file: {path}")
    text = path.read_text(encoding="utf-8")
    values: list[float] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) > 2:
            raise IngestionError(f"expected 1 or 2 columns, got {len(fields)}", lineno)
        cell = fields[-1]
        if not values and cell.lower() == "value":
            continue
        try:
            v = float(cell)
        except ValueError:
            raise IngestionError(f"cannot parse {cell!r} as a number", lineno) from None
        if not math.isfinite(v):
            raise IngestionError(f"non-finite value {cell!r}", lineno)
        values.append(v)
    if not values:
        raise IngestionError(f"{path} contains no samples")
    return Series(values, sample_rate_hz, modality, path.stem)


def make_windows(series: Series, l_ctx: int, l_hor: int, stride: int) -> list[Window]:
    if l_ctx < 1 or l_hor < 1 or stride < 1:
        raise ParameterRangeError("l_ctx, l_hor and stride must all be >= 1")
    n = len(series)
    span = l_ctx + l_hor
    if n < span:
        raise InsufficientDataError(f"series {series.subject_id!r} has {n} samples, needs {span}")
    v = series.values
    return [
        Window(v[o:o + l_ctx], v[o + l_ctx:o + span], series.modality, series.subject_id, o)
        for o in range(0, n - span + 1, stride)
    ]


def split_train_test(windows: Sequence[Window], train_fraction: float,
                     seed: int = 0) -> tuple[list[Window], list[Window]]:
    """Chronological split: the earliest windows train, the rest test.

    ``seed`` is accepted for interface symmetry; the split itself never shuffles.
    """
    if not 0 < train_fraction < 1:
        raise ParameterRangeError("train_fraction must lie strictly between 0 and 1")
    if len(windows) < 2:
        raise SplitError(f"need at least 2 windows to split, got {len(windows)}")
    ordered = sorted(windows, key=lambda w: (w.source, w.offset))
    n_train = int(round(train_fraction * len(ordered)))
    n_train = min(max(n_train, 1), len(ordered) - 1)
    return ordered[:n_train], ordered[n_train:]

