"""Desk-scale decoding backends: a seeded causal transformer and a needle probe.

Both backends share one forward contract: given a packed sequence and an
attention-mask spec they return per-position logits plus the exact count of
attention score entries the mask permits. Segment positions restart at zero,
so the logits a segment produces are the same whether it is forwarded packed
with other segments or alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import ConfigError, ContractError, ShapeError, UnsupportedOperationError
from .numkernel import Rng, layer_norm, mix64
from .packer import (
    BLOCK_DIAGONAL_CAUSAL,
    AttentionMaskSpec,
    PackedSequence,
    last_positions,
)

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    model_dim: int
    heads: int
    vocab: int
    max_positions: int
    init_seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ShapeError(
                f"model_dim={self.model_dim} not divisible by heads={self.heads}"
            )
        if self.vocab < 4:
            raise ConfigError(f"vocab must be >= 4, got {self.vocab}")
        if self.layers < 1 or self.max_positions < 1:
            raise ConfigError("layers and max_positions must be >= 1")


@dataclass(frozen=True)
class StreamSpec:
    """What to synthesize: frame/patch counts and which frames carry the needle."""

    num_frames: int
    tokens_per_frame: int
    needle_frames: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.num_frames < 1 or self.tokens_per_frame < 1:
            raise ConfigError("num_frames and tokens_per_frame must be >= 1")
        if any(not (0 <= f < self.num_frames) for f in self.needle_frames):
            raise ConfigError("needle frame index out of range")


@dataclass(frozen=True)
class VideoTokenStream:
    num_frames: int
    tokens_per_frame: int
    frame_embeddings: np.ndarray  # (F, M, model_dim) float64

    def __post_init__(self):
        if self.frame_embeddings.shape[:2] != (self.num_frames, self.tokens_per_frame):
            raise ShapeError(
                f"frame_embeddings shape {self.frame_embeddings.shape} does not "
                f"match F={self.num_frames}, M={self.tokens_per_frame}"
            )
        self.frame_embeddings.flags.writeable = False

    @property
    def model_dim(self) -> int:
        return self.frame_embeddings.shape[2]


def needle_direction(model_dim: int) -> np.ndarray:
    """The reserved unit direction that marks needle-frame patches."""
    return np.ones(model_dim) / math.sqrt(model_dim)


def embed_frames(spec: StreamSpec, cfg: ModelConfig, rng: Rng) -> VideoTokenStream:
    """Synthesize per-(frame, patch) embeddings.

    Ordinary patches draw from the stream's generator in one frame-major
    pass, scaled so rows have roughly unit norm; every patch of a needle
    frame is exactly the reserved needle direction (cosine 1.0). A frame's
    content does not depend on which frames carry the needle.
    """
    dim = cfg.model_dim
    scale = 1.0 / math.sqrt(dim)
    g = rng.generator()
    frames = g.standard_normal((spec.num_frames, spec.tokens_per_frame, dim)) * scale
    if spec.needle_frames:
        frames[sorted(spec.needle_frames)] = needle_direction(dim)
    return VideoTokenStream(spec.num_frames, spec.tokens_per_frame, frames)


class ForwardResult(NamedTuple):
    logits: np.ndarray  # (total, vocab)
    pair_count: int  # attention score entries the mask allowed


def _sinusoidal(positions: np.ndarray, dim: int) -> np.ndarray:
    pos = positions[:, None].astype(np.float64)
    sin_cols = (dim + 1) // 2  # odd dims end on a sine column
    freq = np.exp(-math.log(10000.0) * np.arange(sin_cols) / sin_cols)
    angles = pos * freq[None, :]
    out = np.empty((len(positions), dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles[:, : dim // 2])
    return out


def _masked_softmax(scores: np.ndarray) -> np.ndarray:
    # in place; scores carry -inf at forbidden entries, diagonals stay finite
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def _segment_pair_count(packed: PackedSequence) -> int:
    return sum(s.length * (s.length + 1) // 2 for s in packed.segments)


class SeededTransformer:
    """Pre-norm causal decoder with deterministic seeded weights.

    Blocks are LN -> multi-head attention -> residual, LN -> 4x GELU MLP ->
    residual, with a final LN before the vocabulary projection. No biases,
    no key-value cache: each forward recomputes the full packed sequence.
    """

    def __init__(self, cfg: ModelConfig, weights: Optional[dict[str, np.ndarray]] = None):
        self.config = cfg
        self.head_dim = cfg.model_dim // cfg.heads
        if weights is None:
            weights = _draw_weights(cfg)
        else:
            _check_weights(cfg, weights)
        self.weights = weights

    @property
    def max_positions(self) -> int:
        return self.config.max_positions

    def forward(
        self,
        packed: PackedSequence,
        mask: AttentionMaskSpec = BLOCK_DIAGONAL_CAUSAL,
    ) -> ForwardResult:
        logits, pairs, _ = self._run(packed, mask, collect_received=False)
        return ForwardResult(logits, pairs)

    def attention_received(
        self,
        packed: PackedSequence,
        mask: AttentionMaskSpec = BLOCK_DIAGONAL_CAUSAL,
    ) -> np.ndarray:
        """Per-position mean attention weight received, averaged over every
        layer, head, and same-segment query allowed to attend the position."""
        _, _, received = self._run(packed, mask, collect_received=True)
        return received

    def _embed(self, packed: PackedSequence) -> np.ndarray:
        cfg = self.config
        if packed.total_length > cfg.max_positions:
            raise ContractError(
                f"sequence length {packed.total_length} exceeds "
                f"max_positions={cfg.max_positions}"
            )
        if packed.model_dim != cfg.model_dim:
            raise ShapeError(
                f"packed model_dim {packed.model_dim} != config {cfg.model_dim}"
            )
        ids = packed.token_ids
        if ids.max(initial=-1) >= cfg.vocab:
            raise ContractError("token id outside vocabulary")
        x = packed.embeddings.copy()
        id_pos = ids >= 0
        x[id_pos] = self.weights["token_embedding"][ids[id_pos]]
        return x + _sinusoidal(packed.pos_in_segment, cfg.model_dim)

    # Queries are processed in fixed-size chunks with keys truncated at the
    # chunk's causal horizon: temporaries stay small, so wall clock tracks
    # the evaluated score-entry count instead of cache spills.
    _QUERY_CHUNK = 128

    def _attend_segment(self, qh, kh, vh, ctx, b, e, received):
        # qh/kh/vh: (heads, total, head_dim); segment is [b, e)
        inv_sqrt = 1.0 / math.sqrt(self.head_dim)
        length = e - b
        for c0 in range(0, length, self._QUERY_CHUNK):
            c1 = min(c0 + self._QUERY_CHUNK, length)
            horizon = c1  # causal: this chunk never sees keys at or past c1
            scores = qh[:, b + c0 : b + c1] @ kh[:, b : b + horizon].transpose(0, 2, 1)
            scores *= inv_sqrt
            forbidden = (
                np.arange(horizon)[None, :] > np.arange(c0, c1)[:, None]
            )
            scores[:, forbidden] = _NEG_INF
            attn = _masked_softmax(scores)
            if received is not None:
                received[b : b + horizon] += attn.sum(axis=(0, 1))
            ctx[b + c0 : b + c1] = _merge_heads(attn @ vh[:, b : b + horizon])

    def _attend_dense(self, qh, kh, vh, ctx, bias, received):
        inv_sqrt = 1.0 / math.sqrt(self.head_dim)
        scores = qh @ kh.transpose(0, 2, 1) * inv_sqrt + bias[None, :, :]
        attn = _masked_softmax(scores)
        if received is not None:
            received += attn.sum(axis=(0, 1))
        ctx[:] = _merge_heads(attn @ vh)

    def _run(self, packed, mask, collect_received):
        cfg = self.config
        w = self.weights
        x = self._embed(packed)
        total = packed.total_length

        standard = type(mask) is AttentionMaskSpec
        if standard:
            blocks = [(s.start, s.start + s.length) for s in packed.segments]
            pair_count = cfg.layers * cfg.heads * _segment_pair_count(packed)
        else:
            allowed = mask.matrix(packed)
            bias = np.where(allowed, 0.0, _NEG_INF)
            pair_count = cfg.layers * cfg.heads * int(allowed.sum())

        received = np.zeros(total) if collect_received else None

        for layer in range(cfg.layers):
            h = layer_norm(x)
            q = h @ w[f"layer{layer}.attn_query"]
            k = h @ w[f"layer{layer}.attn_key"]
            v = h @ w[f"layer{layer}.attn_value"]
            qh = _split_heads(q, cfg.heads, self.head_dim)
            kh = _split_heads(k, cfg.heads, self.head_dim)
            vh = _split_heads(v, cfg.heads, self.head_dim)
            ctx = np.empty_like(q)
            if standard:
                for b, e in blocks:
                    self._attend_segment(qh, kh, vh, ctx, b, e, received)
            else:
                self._attend_dense(qh, kh, vh, ctx, bias, received)
            x = x + ctx @ w[f"layer{layer}.attn_out"]
            h2 = layer_norm(x)
            x = x + _gelu(h2 @ w[f"layer{layer}.ffn_in"]) @ w[f"layer{layer}.ffn_out"]

        logits = layer_norm(x) @ w["unembedding"]

        if collect_received:
            if standard:
                seg_len = np.array([packed.segments[s].length for s in packed.segment_of])
                attending = seg_len - packed.pos_in_segment
            else:
                attending = allowed.sum(axis=0)
            received = received / (cfg.layers * cfg.heads * attending)
        return logits, pair_count, received


def _split_heads(x: np.ndarray, heads: int, head_dim: int) -> np.ndarray:
    return x.reshape(len(x), heads, head_dim).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    heads, length, head_dim = x.shape
    return x.transpose(1, 0, 2).reshape(length, heads * head_dim)


def _gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation; exact erf is not worth a scipy dependency here
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))


def weight_manifest(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Weight names and shapes in their pinned draw/serialization order."""
    d, f = cfg.model_dim, 4 * cfg.model_dim
    entries: list[tuple[str, tuple[int, ...]]] = [("token_embedding", (cfg.vocab, d))]
    for layer in range(cfg.layers):
        entries += [
            (f"layer{layer}.attn_query", (d, d)),
            (f"layer{layer}.attn_key", (d, d)),
            (f"layer{layer}.attn_value", (d, d)),
            (f"layer{layer}.attn_out", (d, d)),
            (f"layer{layer}.ffn_in", (d, f)),
            (f"layer{layer}.ffn_out", (f, d)),
        ]
    entries.append(("unembedding", (d, cfg.vocab)))
    return entries


def _draw_weights(cfg: ModelConfig) -> dict[str, np.ndarray]:
    g = Rng(cfg.init_seed).generator()
    scale = 1.0 / math.sqrt(cfg.model_dim)
    return {
        name: g.standard_normal(shape) * scale
        for name, shape in weight_manifest(cfg)
    }


def _check_weights(cfg: ModelConfig, weights: dict[str, np.ndarray]) -> None:
    for name, shape in weight_manifest(cfg):
        if name not in weights:
            raise ShapeError(f"missing weight {name}")
        if weights[name].shape != shape:
            raise ShapeError(
                f"weight {name} has shape {weights[name].shape}, expected {shape}"
            )


def build_model(cfg: ModelConfig) -> SeededTransformer:
    return SeededTransformer(cfg)


def save_weights(model: SeededTransformer, bin_path, header_path=None) -> None:
    """Dump weights as a flat little-endian float64 array plus a JSON header
    holding the config and the ordering manifest."""
    bin_path = Path(bin_path)
    header_path = Path(header_path) if header_path else bin_path.with_suffix(".json")
    manifest = weight_manifest(model.config)
    flat = np.concatenate([model.weights[name].ravel() for name, _ in manifest])
    flat.astype("<f8").tofile(bin_path)
    offsets = []
    at = 0
    for name, shape in manifest:
        n = int(np.prod(shape))
        offsets.append({"name": name, "shape": list(shape), "offset": at})
        at += n
    header = {
        "dtype": "<f8",
        "total_elements": at,
        "config": {
            "layers": model.config.layers,
            "model_dim": model.config.model_dim,
            "heads": model.config.heads,
            "vocab": model.config.vocab,
            "max_positions": model.config.max_positions,
            "init_seed": model.config.init_seed,
        },
        "ordering": offsets,
    }
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_weights(bin_path, header_path=None) -> SeededTransformer:
    bin_path = Path(bin_path)
    header_path = Path(header_path) if header_path else bin_path.with_suffix(".json")
    header = json.loads(header_path.read_text())
    cfg = ModelConfig(**header["config"])
    flat = np.fromfile(bin_path, dtype="<f8").astype(np.float64)
    if len(flat) != header["total_elements"]:
        raise ShapeError(
            f"weight file holds {len(flat)} values, header says "
            f"{header['total_elements']}"
        )
    weights = {}
    for entry in header["ordering"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        weights[entry["name"]] = flat[entry["offset"] : entry["offset"] + n].reshape(shape)
    return SeededTransformer(cfg, weights=weights)


_SIG_ID_TAG = 0xA5A5A5A5A5A5A5A5
_SIG_SEED_TAG = 0xC3C3C3C3C3C3C3C3


class NeedleProbe:
    """Hand-constructed backend with a controllable answer signal.

    At every position p the answer-token logit equals gain * (number of
    surviving needle tokens at or before p in p's segment); all other logits
    are noise in [-noise_scale, noise_scale] seeded purely by the segment's
    content prefix, so packed and solo forwards agree exactly.
    """

    max_positions: Optional[int] = None

    def __init__(
        self,
        needle_dir: np.ndarray,
        answer_token: int,
        vocab: int,
        gain: float = 1.0,
        noise_scale: float = 0.1,
        seed: int = 0,
    ):
        if gain <= 0.0:
            raise ConfigError(f"gain must be > 0, got {gain}")
        if not (0.0 <= noise_scale < gain):
            raise ConfigError(
                f"noise_scale must satisfy 0 <= noise_scale < gain, "
                f"got noise_scale={noise_scale}, gain={gain}"
            )
        if not (0 <= answer_token < vocab):
            raise ConfigError(f"answer_token {answer_token} outside vocab {vocab}")
        self.needle_dir = np.asarray(needle_dir, dtype=np.float64)
        self.needle_dir = self.needle_dir / np.linalg.norm(self.needle_dir)
        self.answer_token = answer_token
        self.vocab = vocab
        self.gain = gain
        self.noise_scale = noise_scale
        self.seed = seed

    def attention_received(self, packed, mask=BLOCK_DIAGONAL_CAUSAL):
        raise UnsupportedOperationError("needle probe has no attention weights")

    def _needle_mask(self, packed: PackedSequence) -> np.ndarray:
        emb = packed.embeddings
        norms = np.linalg.norm(emb, axis=1)
        proj = emb @ self.needle_dir
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(norms > 0, proj / np.where(norms > 0, norms, 1.0), 0.0)
        return (packed.token_ids < 0) & (cos > 0.9999)

    def _signatures(self, packed: PackedSequence) -> np.ndarray:
        total = packed.total_length
        sig = np.empty(total, dtype=np.uint64)
        vis = packed.token_ids < 0
        if vis.any():
            bits = np.ascontiguousarray(packed.embeddings[vis]).view(np.uint64)
            col = mix64(np.arange(1, bits.shape[1] + 1, dtype=np.uint64))
            sig[vis] = mix64(np.bitwise_xor.reduce(mix64(bits ^ col[None, :]), axis=1))
        idx = ~vis
        if idx.any():
            ids = packed.token_ids[idx].astype(np.uint64)
            sig[idx] = mix64(ids ^ np.uint64(_SIG_ID_TAG))
        return sig

    def forward(
        self,
        packed: PackedSequence,
        mask: AttentionMaskSpec = BLOCK_DIAGONAL_CAUSAL,
    ) -> ForwardResult:
        is_needle = self._needle_mask(packed)
        sig = self._signatures(packed)
        total = packed.total_length
        logits = np.empty((total, self.vocab))
        dmix = mix64(np.arange(7, 7 + self.vocab, dtype=np.uint64))
        seed_mixed = mix64((self.seed & ((1 << 64) - 1)) ^ _SIG_SEED_TAG)

        if type(mask) is AttentionMaskSpec:
            counts = np.empty(total, dtype=np.int64)
            hashes = np.empty(total, dtype=np.uint64)
            for s in packed.segments:
                b, e = s.start, s.start + s.length
                counts[b:e] = np.cumsum(is_needle[b:e])
                h = seed_mixed
                for p in range(b, e):
                    h = mix64(h ^ int(sig[p]))
                    hashes[p] = h
            pair_count = _segment_pair_count(packed)
        else:
            allowed = mask.matrix(packed)
            counts = allowed @ is_needle.astype(np.int64)
            hashes = np.empty(total, dtype=np.uint64)
            for p in range(total):
                h = seed_mixed
                for q in np.flatnonzero(allowed[p]):
                    h = mix64(h ^ int(sig[q]))
                hashes[p] = h
            pair_count = int(allowed.sum())

        u = (mix64(hashes[:, None] ^ dmix[None, :]) >> np.uint64(11)).astype(
            np.float64
        ) * (1.0 / (1 << 53))
        logits[:] = u * (2.0 * self.noise_scale) - self.noise_scale
        logits[:, self.answer_token] = self.gain * counts
        return ForwardResult(logits, pair_count)


Backend = Union[SeededTransformer, NeedleProbe]


def attention_received_scores(
    backend: Backend,
    packed: PackedSequence,
    mask: AttentionMaskSpec = BLOCK_DIAGONAL_CAUSAL,
) -> np.ndarray:
    """Mean attention weight each position receives (all layers, heads, and
    allowed same-segment queries). Only the transformer backend supports this."""
    if not isinstance(backend, SeededTransformer):
        raise UnsupportedOperationError(
            "attention scores require the transformer backend"
        )
    return backend.attention_received(packed, mask)


def needle_probe_forward(
    probe: NeedleProbe,
    packed: PackedSequence,
    mask: AttentionMaskSpec = BLOCK_DIAGONAL_CAUSAL,
) -> np.ndarray:
    """Per-segment last-position logits, shape (num_segments, vocab)."""
    logits, _ = probe.forward(packed, mask)
    return logits[last_positions(packed)]
