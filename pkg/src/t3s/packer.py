"""Packs trial subsequences into one flat sequence with per-segment layout.

A packed sequence holds m contiguous segments, one per trial. Each segment
is [kept visual tokens][text prompt copy][generated tokens]; positions
restart at 0 inside every segment. The companion attention rule is
block-diagonal causal: a position may attend another only inside its own
segment and only backwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .sampler import TrialPlan


class Segment(NamedTuple):
    start: int
    length: int


@dataclass(frozen=True)
class PackedSequence:
    """Immutable flat layout of m trial segments.

    Per position, exactly one of two payloads applies: a visual embedding row
    (token_ids[p] == -1) or a vocabulary id (embeddings[p] is all-zero and
    ignored). `append_token` returns a new value; arrays are read-only.
    """

    segments: tuple[Segment, ...]
    embeddings: np.ndarray  # (total, model_dim) float64
    token_ids: np.ndarray  # (total,) int64, -1 where the payload is an embedding
    segment_of: np.ndarray  # (total,) int64
    pos_in_segment: np.ndarray  # (total,) int64
    text_len: int
    generated: int = 0

    def __post_init__(self):
        for arr in (self.embeddings, self.token_ids, self.segment_of, self.pos_in_segment):
            arr.flags.writeable = False

    @property
    def total_length(self) -> int:
        return len(self.token_ids)

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    @property
    def model_dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class AttentionMaskSpec:
    """Block-diagonal causal rule: p may attend q iff
    segment_of[p] == segment_of[q] and q <= p."""

    def allows(self, packed: PackedSequence, p: int, q: int) -> bool:
        return bool(packed.segment_of[p] == packed.segment_of[q] and q <= p)

    def matrix(self, packed: PackedSequence) -> np.ndarray:
        seg = packed.segment_of
        same = seg[:, None] == seg[None, :]
        n = packed.total_length
        causal = np.arange(n)[None, :] <= np.arange(n)[:, None]
        return same & causal


BLOCK_DIAGONAL_CAUSAL = AttentionMaskSpec()


def _build(
    parts_embeddings: list[np.ndarray],
    parts_ids: list[np.ndarray],
    text_len: int,
    generated: int,
    model_dim: int,
) -> PackedSequence:
    lengths = [len(ids) for ids in parts_ids]
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int)
    segments = tuple(Segment(int(s), int(l)) for s, l in zip(starts, lengths))
    embeddings = np.concatenate(parts_embeddings, axis=0)
    token_ids = np.concatenate(parts_ids)
    segment_of = np.repeat(np.arange(len(lengths), dtype=np.int64), lengths)
    pos_in_segment = np.concatenate(
        [np.arange(l, dtype=np.int64) for l in lengths]
    )
    return PackedSequence(
        segments=segments,
        embeddings=embeddings,
        token_ids=token_ids,
        segment_of=segment_of,
        pos_in_segment=pos_in_segment,
        text_len=text_len,
        generated=generated,
    )


def pack(
    plans: Sequence[TrialPlan],
    video,
    text: Sequence[int],
) -> PackedSequence:
    """Assemble one packed sequence from trial plans plus a text prompt.

    Segment i carries the video tokens gathered frame-major from
    `video.frame_embeddings[plan.frame_indices]` and filtered by
    `plan.token_keep` (ascending original order), followed by a full copy of
    `text`. `video` needs `num_frames`, `tokens_per_frame` and
    `frame_embeddings` of shape (F, M, model_dim).
    """
    if len(plans) == 0:
        raise ContractError("pack requires at least one trial plan")
    frames = np.asarray(video.frame_embeddings, dtype=np.float64)
    if frames.ndim != 3:
        raise ShapeError(f"frame_embeddings must be 3-D, got ndim={frames.ndim}")
    num_frames, tokens_per_frame, model_dim = frames.shape
    text_ids = np.asarray(list(text), dtype=np.int64)
    if len(text_ids) and text_ids.min() < 0:
        raise ContractError("text token ids must be non-negative")

    parts_embeddings: list[np.ndarray] = []
    parts_ids: list[np.ndarray] = []
    for plan in plans:
        if len(plan.frame_indices) and plan.frame_indices[-1] >= num_frames:
            raise ContractError("plan references a frame outside the video")
        local = frames[plan.frame_indices].reshape(-1, model_dim)
        if len(plan.token_keep) and plan.token_keep[-1] >= len(local):
            raise ContractError("plan keeps a token outside the trial range")
        kept = local[plan.token_keep]
        seg_emb = np.concatenate(
            [kept, np.zeros((len(text_ids), model_dim))], axis=0
        )
        seg_ids = np.concatenate(
            [np.full(len(kept), -1, dtype=np.int64), text_ids]
        )
        parts_embeddings.append(seg_emb)
        parts_ids.append(seg_ids)
    return _build(parts_embeddings, parts_ids, len(text_ids), 0, model_dim)


def append_token(
    packed: PackedSequence, token_id: int, max_positions: Optional[int] = None
) -> PackedSequence:
    """New packed sequence with `token_id` appended to the end of every segment."""
    if token_id < 0:
        raise ContractError(f"token id must be non-negative, got {token_id}")
    m = packed.num_segments
    if max_positions is not None and packed.total_length + m > max_positions:
        raise ContractError(
            f"append would exceed max_positions={max_positions} "
            f"(current {packed.total_length}, +{m})"
        )
    ends = [s.start + s.length for s in packed.segments]
    embeddings = np.insert(packed.embeddings, ends, 0.0, axis=0)
    token_ids = np.insert(packed.token_ids, ends, token_id)
    segment_of = np.insert(
        packed.segment_of, ends, np.arange(m, dtype=np.int64)
    )
    pos_in_segment = np.insert(
        packed.pos_in_segment, ends, [s.length for s in packed.segments]
    )
    segments = tuple(
        Segment(s.start + i, s.length + 1) for i, s in enumerate(packed.segments)
    )
    return PackedSequence(
        segments=segments,
        embeddings=embeddings,
        token_ids=token_ids,
        segment_of=segment_of,
        pos_in_segment=pos_in_segment,
        text_len=packed.text_len,
        generated=packed.generated + 1,
    )


def last_positions(packed: PackedSequence) -> list[int]:
    """Final flat position of each segment, in trial order."""
    return [s.start + s.length - 1 for s in packed.segments]


def slice_segment(packed: PackedSequence, index: int) -> PackedSequence:
    """Segment `index` repacked as a standalone single-segment sequence."""
    if not (0 <= index < packed.num_segments):
        raise ContractError(f"segment index {index} out of range")
    s = packed.segments[index]
    sel = slice(s.start, s.start + s.length)
    return _build(
        [packed.embeddings[sel].copy()],
        [packed.token_ids[sel].copy()],
        packed.text_len,
        packed.generated,
        packed.model_dim,
    )


def to_debug_json(packed: PackedSequence) -> dict:
    """JSON-friendly structural dump (segment table + token ids) for golden tests."""
    return {
        "segments": [[s.start, s.length] for s in packed.segments],
        "token_ids": [int(t) for t in packed.token_ids],
        "text_len": packed.text_len,
        "generated": packed.generated,
    }
