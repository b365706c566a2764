"""Mean scaling and uniform quantization of real-valued contexts into tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterRangeError


@dataclass(frozen=True)
class TokenizerConfig:
    n_bins: int = 128
    clip: float = 4.0
    epsilon: float = 1e-8

    def __post_init__(self):
        if int(self.n_bins) != self.n_bins or self.n_bins < 2:
            raise ParameterRangeError("n_bins must be an integer >= 2")
        if not self.clip > 0:
            raise ParameterRangeError("clip must be positive")
        if not self.epsilon > 0:
            raise ParameterRangeError("epsilon must be positive")

    @property
    def bin_width(self) -> float:
        return 2.0 * self.clip / self.n_bins


def scale(context, epsilon: float = 1e-8) -> tuple[np.ndarray, float]:
    """Divide by mean absolute value; returns ``(scaled, scale_factor)``."""
    x = np.asarray(context, dtype=np.float64)
    if x.size == 0:
        raise ParameterRangeError("cannot scale an empty context")
    if not np.all(np.isfinite(x)):
        raise ParameterRangeError("context contains non-finite values")
    factor = float(np.mean(np.abs(x))) + epsilon
    return x / factor, factor


def tokenize(scaled, cfg: TokenizerConfig) -> np.ndarray:
    v = np.clip(np.asarray(scaled, dtype=np.float64), -cfg.clip, cfg.clip)
    ids = np.floor((v + cfg.clip) / (2.0 * cfg.clip) * cfg.n_bins).astype(np.int64)
    return np.minimum(ids, cfg.n_bins - 1)


def bin_centers(cfg: TokenizerConfig) -> np.ndarray:
    return -cfg.clip + (np.arange(cfg.n_bins) + 0.5) * cfg.bin_width


def detokenize(token, scale_factor: float, cfg: TokenizerConfig):
    """Bin centre of ``token`` mapped back to signal units.

    Accepts a scalar id (returns ``float``) or an integer array.
    """
    t = np.asarray(token)
    if not np.issubdtype(t.dtype, np.integer):
        raise DomainError(f"token ids must be integers, got {t.dtype}")
    if np.any(t < 0) or np.any(t >= cfg.n_bins):
        raise DomainError(f"token id outside [0, {cfg.n_bins})")
    values = (-cfg.clip + (t + 0.5) * cfg.bin_width) * scale_factor
    return float(values) if values.ndim == 0 else values
