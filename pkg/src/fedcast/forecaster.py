"""Small autoregressive token forecaster standing in for a pretrained foundation model.

Architecture: the last ``receptive`` context tokens are embedded, concatenated and
passed through one tanh hidden layer; a linear read-out gives next-token logits
over the tokenizer vocabulary. Training minimizes next-token cross-entropy with
teacher forcing over every target position of a window; forecasting is greedy
(argmax) rollout detokenized with the context's scale factor.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import signals
from .errors import DivergenceError, NumericError, ParameterRangeError, ProtocolError
from .signals import Window
from .tokenizer import TokenizerConfig, bin_centers, scale, tokenize

MAGIC = b"FEDCAST1"

# A cross-entropy this many times the uniform-guess entropy counts as divergence.
DIVERGENCE_FACTOR = 100.0


@dataclass(frozen=True)
class ModelConfig:
    n_bins: int = 128
    embed_dim: int = 16
    hidden_dim: int = 64
    receptive: int = 32

    def __post_init__(self):
        for name in ("n_bins", "embed_dim", "hidden_dim", "receptive"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterRangeError(f"{name} must be an integer >= 1")

    def check_tokenizer(self, tok_cfg: TokenizerConfig) -> None:
        if tok_cfg.n_bins != self.n_bins:
            raise ParameterRangeError(
                f"model n_bins={self.n_bins} does not match tokenizer n_bins={tok_cfg.n_bins}")


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple[int, ...]
    fan_in: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class ParamLayout:
    config: ModelConfig
    segments: tuple[Segment, ...]

    @property
    def size(self) -> int:
        last = self.segments[-1]
        return last.offset + last.size

    def __getitem__(self, name: str) -> Segment:
        for seg in self.segments:
            if seg.name == name:
                return seg
        raise KeyError(name)


@lru_cache(maxsize=None)
def layout_for(cfg: ModelConfig) -> ParamLayout:
    feat = cfg.receptive * cfg.embed_dim
    specs = [
        ("embedding", (cfg.n_bins, cfg.embed_dim), 1),
        ("hidden_w", (feat, cfg.hidden_dim), feat),
        ("hidden_b", (cfg.hidden_dim,), feat),
        ("output_w", (cfg.hidden_dim, cfg.n_bins), cfg.hidden_dim),
        ("output_b", (cfg.n_bins,), cfg.hidden_dim),
    ]
    segments, offset = [], 0
    for name, shape, fan_in in specs:
        seg = Segment(name, offset, shape, fan_in)
        segments.append(seg)
        offset += seg.size
    return ParamLayout(cfg, tuple(segments))


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat float64 parameter vector plus the named-segment layout it follows."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.layout.size,):
            raise ProtocolError(
                f"parameter vector has shape {values.shape}, layout expects ({self.layout.size},)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.layout.size

    def segment(self, name: str) -> np.ndarray:
        seg = self.layout[name]
        return self.values[seg.offset:seg.offset + seg.size].reshape(seg.shape)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def equals(self, other: "ParamVector") -> bool:
        return self.layout == other.layout and np.array_equal(self.values, other.values)


def check_layouts(a: ParamVector, b: ParamVector) -> None:
    if a.layout != b.layout:
        raise ProtocolError("parameter layouts differ")


def init_params(cfg: ModelConfig, seed: int) -> ParamVector:
    layout = layout_for(cfg)
    rng = np.random.default_rng([int(seed), 0x1417])
    chunks = []
    for seg in layout.segments:
        s = 1.0 / math.sqrt(seg.fan_in)
        chunks.append(rng.uniform(-s, s, size=seg.size))
    return ParamVector(np.concatenate(chunks), layout)


def sgd_step(params: ParamVector, grad: ParamVector, eta: float) -> ParamVector:
    if not eta > 0:
        raise ParameterRangeError("eta must be positive")
    check_layouts(params, grad)
    return params.with_values(params.values - eta * grad.values)


# ---------------------------------------------------------------------------
# forward / backward

def _window_examples(w: Window, tok_cfg: TokenizerConfig, receptive: int):
    key = ("examples", tok_cfg, receptive)
    cached = w._memo.get(key)
    if cached is None:
        cached = w._memo[key] = _compute_examples(w, tok_cfg, receptive)
    return cached


def _compute_examples(w: Window, tok_cfg: TokenizerConfig, receptive: int):
    if w.context.size < receptive:
        raise ParameterRangeError(
            f"context length {w.context.size} shorter than receptive field {receptive}")
    _, factor = scale(w.context, tok_cfg.epsilon)
    seq = tokenize(np.concatenate([w.context, w.target]) / factor, tok_cfg)
    start = w.context.size - receptive
    inputs = np.lib.stride_tricks.sliding_window_view(seq[start:-1], receptive)
    return inputs, seq[w.context.size:]


def _examples(batch: Sequence[Window], tok_cfg: TokenizerConfig, receptive: int):
    ordered = sorted(batch, key=Window.sort_key)
    pairs = [_window_examples(w, tok_cfg, receptive) for w in ordered]
    inputs = np.concatenate([p[0] for p in pairs])
    labels = np.concatenate([p[1] for p in pairs])
    return inputs, labels


def loss_and_grad(params: ParamVector, batch: Sequence[Window], tok_cfg: TokenizerConfig,
                  cfg: ModelConfig) -> tuple[float, ParamVector]:
    """Mean next-token cross-entropy over all target positions, and its gradient.

    Windows are processed in canonical ``Window.sort_key`` order so the result
    does not depend on how the batch is arranged.
    """
    if len(batch) == 0:
        raise ParameterRangeError("batch must be non-empty")
    cfg.check_tokenizer(tok_cfg)
    if params.layout.config != cfg:
        raise ProtocolError("parameter layout does not match model config")

    inputs, labels = _examples(batch, tok_cfg, cfg.receptive)
    m = labels.size
    emb = params.segment("embedding")
    w1, b1 = params.segment("hidden_w"), params.segment("hidden_b")
    w2, b2 = params.segment("output_w"), params.segment("output_b")

    x = emb[inputs].reshape(m, -1)
    h = np.tanh(x @ w1 + b1)
    logits = h @ w2 + b2
    top = logits.max(axis=1, keepdims=True)
    shifted = logits - top
    expd = np.exp(shifted)
    sumexp = expd.sum(axis=1)
    log_z = np.log(sumexp)
    loss = float(np.mean(log_z - shifted[np.arange(m), labels]))
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss!r}")

    dlogits = expd / sumexp[:, None]
    dlogits[np.arange(m), labels] -= 1.0
    dlogits /= m
    d_w2 = h.T @ dlogits
    d_b2 = dlogits.sum(axis=0)
    dz = (dlogits @ w2.T) * (1.0 - h * h)
    d_w1 = x.T @ dz
    d_b1 = dz.sum(axis=0)
    dx = (dz @ w1.T).reshape(m * cfg.receptive, cfg.embed_dim)
    flat = inputs.reshape(-1)
    d_emb = np.stack([np.bincount(flat, weights=dx[:, j], minlength=cfg.n_bins)
                      for j in range(cfg.embed_dim)], axis=1)

    grad = np.concatenate([d_emb.ravel(), d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return loss, params.with_values(grad)


def check_divergence(loss: float, n_bins: int, step: int, client: int | None = None) -> None:
    if not math.isfinite(loss) or loss > DIVERGENCE_FACTOR * math.log(n_bins):
        raise DivergenceError(step, loss, client)


# ---------------------------------------------------------------------------
# forecasting

def forecast_batch(params: ParamVector, contexts, horizon: int, tok_cfg: TokenizerConfig,
                   cfg: ModelConfig) -> np.ndarray:
    """Greedy rollout for a stack of equal-length contexts, shape ``(B, horizon)``."""
    ctx = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if ctx.shape[1] < cfg.receptive:
        raise ParameterRangeError("context shorter than the receptive field")
    if horizon < 1:
        raise ParameterRangeError("horizon must be >= 1")
    cfg.check_tokenizer(tok_cfg)

    factors = np.mean(np.abs(ctx), axis=1) + tok_cfg.epsilon
    tokens = tokenize(ctx[:, -cfg.receptive:] / factors[:, None], tok_cfg)
    emb = params.segment("embedding")
    w1, b1 = params.segment("hidden_w"), params.segment("hidden_b")
    w2, b2 = params.segment("output_w"), params.segment("output_b")
    centers = bin_centers(tok_cfg)

    out = np.empty((ctx.shape[0], horizon))
    for k in range(horizon):
        x = emb[tokens[:, -cfg.receptive:]].reshape(ctx.shape[0], -1)
        logits = np.tanh(x @ w1 + b1) @ w2 + b2
        nxt = np.argmax(logits, axis=1)
        tokens = np.concatenate([tokens[:, 1:], nxt[:, None]], axis=1)
        out[:, k] = centers[nxt] * factors
    return out


def forecast(params: ParamVector, context, horizon: int, tok_cfg: TokenizerConfig,
             cfg: ModelConfig) -> np.ndarray:
    return forecast_batch(params, np.asarray(context, dtype=np.float64)[None, :], horizon,
                          tok_cfg, cfg)[0]


# ---------------------------------------------------------------------------
# pretraining and checkpoints

@dataclass(frozen=True, eq=False)
class PretrainedCheckpoint:
    params: ParamVector
    provenance: str
    seed: int
    # probe-set loss recorded during pretraining; not persisted
    loss_curve: tuple[float, ...] = field(default=())

    @property
    def config(self) -> ModelConfig:
        return self.params.layout.config


def pretraining_mixture(mixture_seed: int, n_series: int = 48, n_samples: int = 1024,
                        sample_rate_hz: float = 32.0) -> list[signals.Series]:
    """Broad mixture of synthetic series with varied beat rates, morphologies and noise."""
    rng = np.random.default_rng([int(mixture_seed), 0x3C3])
    kinds = (signals.Modality.ECG, signals.Modality.ICG, signals.Modality.OTHER)
    pool = []
    for i in range(n_series):
        morph = signals.Morphology(
            beat_rate_hz=float(rng.uniform(0.8, 2.0)),
            sample_rate_hz=sample_rate_hz,
            noise_sigma=float(rng.uniform(0.0, 0.03)),
            wander_amplitude=float(rng.uniform(0.0, 0.06)),
            amplitude=float(rng.uniform(0.5, 0.7)),
            baseline=float(rng.uniform(0.25, 0.35)),
            jitter=0.15,
        )
        seed = int(rng.integers(2**31))
        pool.append(signals.generate_synthetic(kinds[i % 3], seed, n_samples, morph,
                                               subject_id=f"mix-{i}"))
    return pool


def pretrain(cfg: ModelConfig, mixture_seed: int, steps: int, eta: float, *,
             tok_cfg: TokenizerConfig | None = None, batch_size: int = 16,
             l_ctx: int = 64, l_hor: int = 16, probe_every: int = 100) -> PretrainedCheckpoint:
    """Plain SGD on windows from :func:`pretraining_mixture`.

    ``loss_curve`` holds the loss on a fixed probe batch at step 0, every
    ``probe_every`` steps, and after the last step.
    """
    if steps < 0:
        raise ParameterRangeError("steps must be >= 0")
    tok_cfg = tok_cfg or TokenizerConfig(n_bins=cfg.n_bins)
    params = init_params(cfg, mixture_seed)
    provenance = f"synthetic-mixture seed={mixture_seed} steps={steps} eta={eta!r}"
    if steps == 0:
        return PretrainedCheckpoint(params, provenance, mixture_seed)
    if not eta > 0:
        raise ParameterRangeError("eta must be positive")

    windows = [w for s in pretraining_mixture(mixture_seed)
               for w in signals.make_windows(s, l_ctx, l_hor, l_hor)]
    rng = np.random.default_rng([int(mixture_seed), 0x9E7])
    probe = [windows[i] for i in rng.choice(len(windows), size=min(64, len(windows)), replace=False)]
    curve = [loss_and_grad(params, probe, tok_cfg, cfg)[0]]
    for step in range(1, steps + 1):
        batch = [windows[i] for i in rng.integers(len(windows), size=batch_size)]
        try:
            loss, grad = loss_and_grad(params, batch, tok_cfg, cfg)
        except NumericError:
            raise DivergenceError(step, float("nan")) from None
        check_divergence(loss, cfg.n_bins, step)
        params = sgd_step(params, grad, eta)
        if step % probe_every == 0 or step == steps:
            curve.append(loss_and_grad(params, probe, tok_cfg, cfg)[0])
            check_divergence(curve[-1], cfg.n_bins, step)
    return PretrainedCheckpoint(params, provenance, mixture_seed, tuple(curve))


_HEADER = struct.Struct("<qqqqqq")  # n_bins, embed_dim, hidden_dim, receptive, seed, n_params


def checkpoint_bytes(ckpt: PretrainedCheckpoint) -> bytes:
    cfg = ckpt.config
    prov = ckpt.provenance.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_HEADER.pack(cfg.n_bins, cfg.embed_dim, cfg.hidden_dim, cfg.receptive,
                           ckpt.seed, len(ckpt.params)))
    buf.write(struct.pack("<I", len(prov)))
    buf.write(prov)
    buf.write(ckpt.params.values.astype("<f8").tobytes())
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> PretrainedCheckpoint:
    if data[:len(MAGIC)] != MAGIC:
        raise ProtocolError("not a fedcast checkpoint (bad magic)")
    if len(data) < len(MAGIC) + _HEADER.size + 4:
        raise ProtocolError("checkpoint header truncated")
    pos = len(MAGIC)
    n_bins, embed_dim, hidden_dim, receptive, seed, n_params = _HEADER.unpack_from(data, pos)
    pos += _HEADER.size
    (n_prov,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        provenance = data[pos:pos + n_prov].decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError("checkpoint provenance is not valid utf-8") from None
    pos += n_prov
    if len(data) - pos != 8 * n_params:
        raise ProtocolError("checkpoint truncated or has trailing bytes")
    layout = layout_for(ModelConfig(n_bins, embed_dim, hidden_dim, receptive))
    if layout.size != n_params:
        raise ProtocolError("parameter count does not match the stored model config")
    values = np.frombuffer(data, dtype="<f8", offset=pos).astype(np.float64)
    return PretrainedCheckpoint(ParamVector(values, layout), provenance, seed)


def save_checkpoint(ckpt: PretrainedCheckpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> PretrainedCheckpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
