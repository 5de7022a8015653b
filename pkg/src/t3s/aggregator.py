"""Logit aggregation across trials and the autoregressive decode loop.

Three fusion rules: plain mean, inverse-entropy confidence weighting, and the
asymmetric two-trial cross-refinement (trial 1 proposes top-k candidates,
trial 2 re-ranks them). Every argmax breaks ties toward the lowest token id.
Mean and confidence weighting sum per-coordinate addends in sorted order so
the fused vector is bit-identical under any permutation of the trials.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ContractError
from .numkernel import entropy, softmax_rows
from .packer import BLOCK_DIAGONAL_CAUSAL, append_token, last_positions, pack
from .sampler import TrialPlan

# Entropy floor: inverse-entropy weights blow up on one-hot distributions.
DEFAULT_ENTROPY_FLOOR = 1e-8
DEFAULT_TOP_K = 2


@dataclass(frozen=True)
class MeanLogits:
    pass


@dataclass(frozen=True)
class ConfidenceWeighted:
    entropy_floor: float = DEFAULT_ENTROPY_FLOOR

    def __post_init__(self):
        if self.entropy_floor <= 0.0:
            raise ConfigError(f"entropy_floor must be > 0, got {self.entropy_floor}")


@dataclass(frozen=True)
class CrossRefine:
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")


AggregationStrategy = Union[MeanLogits, ConfidenceWeighted, CrossRefine]


def default_strategy(trials: int, top_k: int = DEFAULT_TOP_K) -> AggregationStrategy:
    """Cross-refinement for exactly two trials, mean logits otherwise."""
    return CrossRefine(top_k) if trials == 2 else MeanLogits()


def _check_trial_logits(logits) -> np.ndarray:
    o = np.asarray(logits, dtype=np.float64)
    if o.ndim != 2 or o.shape[0] < 1:
        raise ContractError(f"trial logits must be (m, vocab) with m >= 1, got {o.shape}")
    if not np.isfinite(o).all():
        raise ContractError("trial logits must be finite")
    return o


def _ordered_sum(addends: np.ndarray) -> np.ndarray:
    # sort each column before reducing: permutation-invariant float result
    return np.add.reduce(np.sort(addends, axis=0), axis=0)


def mean_logits(logits) -> tuple[np.ndarray, int]:
    """Elementwise mean across trials; returns (fused vector, argmax token)."""
    o = _check_trial_logits(logits)
    fused = _ordered_sum(o) / o.shape[0]
    return fused, int(np.argmax(fused))


def confidence_weighted(
    logits, entropy_floor: float = DEFAULT_ENTROPY_FLOOR
) -> tuple[np.ndarray, int]:
    """Trials weighted by inverse predictive entropy, normalized to sum 1."""
    o = _check_trial_logits(logits)
    if entropy_floor <= 0.0:
        raise ConfigError(f"entropy_floor must be > 0, got {entropy_floor}")
    probs = softmax_rows(o)
    h = np.array([entropy(row) for row in probs])
    inv = 1.0 / np.maximum(h, entropy_floor)
    weights = inv / np.add.reduce(np.sort(inv))
    fused = _ordered_sum(weights[:, None] * o)
    return fused, int(np.argmax(fused))


def cross_refine(first, second, top_k: int) -> int:
    """Trial 1 proposes its top-k token ids (ties: larger logit first, then
    lower id); trial 2 re-ranks and the best candidate wins (lowest id on ties)."""
    o1 = np.asarray(first, dtype=np.float64).ravel()
    o2 = np.asarray(second, dtype=np.float64).ravel()
    if o1.shape != o2.shape:
        raise ContractError(f"trial logits differ in size: {o1.shape} vs {o2.shape}")
    vocab = len(o1)
    if not (1 <= top_k <= vocab):
        raise ContractError(f"top_k must be in [1, {vocab}], got {top_k}")
    candidates = np.argsort(-o1, kind="stable")[:top_k]
    scores = o2[candidates]
    winners = candidates[scores == scores.max()]
    return int(winners.min())


def fuse_token(logits, strategy: AggregationStrategy) -> int:
    """One aggregated next-token decision from the m per-trial logit vectors."""
    o = _check_trial_logits(logits)
    if isinstance(strategy, MeanLogits):
        return mean_logits(o)[1]
    if isinstance(strategy, ConfidenceWeighted):
        return confidence_weighted(o, strategy.entropy_floor)[1]
    if isinstance(strategy, CrossRefine):
        if o.shape[0] != 2:
            raise ConfigError(
                f"cross-refinement needs exactly 2 trials, got {o.shape[0]}"
            )
        return cross_refine(o[0], o[1], strategy.top_k)
    raise ConfigError(f"unknown strategy {strategy!r}")


def decode(
    backend,
    plans: Sequence[TrialPlan],
    video,
    text: Sequence[int],
    steps: int,
    strategy: AggregationStrategy,
    stop_token: Optional[int] = None,
) -> list[int]:
    """Greedy multi-trial decoding.

    Packs the plans once, then per step: forward, read each segment's final
    logits, aggregate to one token, broadcast it onto every segment. Stops at
    `stop_token` or after `steps` tokens.
    """
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    if isinstance(strategy, CrossRefine) and len(plans) != 2:
        raise ConfigError(
            f"cross-refinement needs exactly 2 trials, got {len(plans)}"
        )
    packed = pack(plans, video, text)
    out: list[int] = []
    for step in range(steps):
        logits, _ = backend.forward(packed, BLOCK_DIAGONAL_CAUSAL)
        trial_logits = logits[last_positions(packed)]
        token = fuse_token(trial_logits, strategy)
        out.append(token)
        if stop_token is not None and token == stop_token:
            break
        if step + 1 < steps:
            packed = append_token(packed, token, max_positions=backend.max_positions)
    return out
