"""Experiment driver: synthetic needle tasks, ablation sweeps, coverage checks.

Accuracy on synthetic tasks is first-token exact match against the task's
answer id. Reports are reproducible bit-for-bit from (config, seed); wall
clock is only measured when timing is explicitly enabled (the bench path),
so run/sweep outputs stay byte-identical across repeated invocations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .aggregator import (
    AggregationStrategy,
    ConfidenceWeighted,
    CrossRefine,
    MeanLogits,
    decode,
    default_strategy,
)
from .costmodel import CostReport, count_pairs, measure, theoretical_costs
from .errors import ConfigError, ContractError
from .numkernel import Rng, mix64
from .packer import PackedSequence, Segment, pack
from .sampler import (
    FrameMethod,
    SamplerConfig,
    TokenStrategy,
    TrialPlan,
    build_trial_plans,
    closed_form_coverage,
    sample_frame_indices,
)
from .toymodel import (
    ModelConfig,
    NeedleProbe,
    StreamSpec,
    VideoTokenStream,
    attention_received_scores,
    build_model,
    embed_frames,
    needle_direction,
)

_MASK64 = (1 << 64) - 1

PROBE_GAIN = 1.0


@dataclass(frozen=True)
class SyntheticTask:
    """One needle-retrieval instance: a video whose needle frames decide the
    answerability of a short seeded question."""

    video: VideoTokenStream
    needle_frames: frozenset[int]
    question: tuple[int, ...]
    answer: int
    noise_scale: float
    seed: int


@dataclass(frozen=True)
class TaskParams:
    needle_count: int = 1
    noise_scale: float = 0.1  # relative to the probe gain of 1.0
    question_len: int = 4

    def __post_init__(self):
        if self.needle_count < 0:
            raise ConfigError("needle_count must be >= 0")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        if self.question_len < 1:
            raise ConfigError("question_len must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    sampler: SamplerConfig
    model: ModelConfig
    strategy: AggregationStrategy
    task: TaskParams = TaskParams()
    backend: str = "needle_probe"  # or "seeded_transformer"
    repeats: int = 200
    seed: int = 0
    timing: bool = False
    timing_repeats: int = 5
    memory_budget_entries: Optional[int] = None
    out_dir: Optional[str] = None

    def validate(self) -> None:
        if self.backend not in ("needle_probe", "seeded_transformer"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if isinstance(self.strategy, CrossRefine):
            if self.sampler.trials != 2:
                raise ConfigError(
                    "cross-refinement requires exactly 2 trials, "
                    f"got {self.sampler.trials}"
                )
            if self.strategy.top_k > self.model.vocab:
                raise ConfigError("top_k exceeds vocabulary size")
        if self.task.needle_count > self.sampler.total_frames:
            raise ConfigError("needle_count exceeds total_frames")
        longest = (
            self.sampler.trials
            * (self.sampler.tokens_per_trial + self.task.question_len + 1)
        )
        if longest > self.model.max_positions:
            raise ConfigError(
                f"worst-case packed length {longest} exceeds "
                f"max_positions={self.model.max_positions}"
            )


def default_experiment_config(**overrides) -> ExperimentConfig:
    """Reference desk-scale setup: F=256, M=16, N=64, one needle frame,
    D=64, noise 0.1 of gain, two trials at ratios (0.5, 0.3)."""
    cfg = ExperimentConfig(
        sampler=SamplerConfig(
            total_frames=256,
            frames_per_trial=64,
            tokens_per_frame=16,
            trials=2,
            ratios=(0.5, 0.3),
        ),
        model=ModelConfig(
            layers=4, model_dim=64, heads=4, vocab=64, max_positions=16384
        ),
        strategy=default_strategy(2),
    )
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# JSON codec (field names are the schema)


def strategy_to_dict(s: AggregationStrategy) -> dict:
    if isinstance(s, MeanLogits):
        return {"kind": "mean_logits"}
    if isinstance(s, ConfidenceWeighted):
        return {"kind": "confidence_weighted", "entropy_floor": s.entropy_floor}
    if isinstance(s, CrossRefine):
        return {"kind": "cross_refine", "top_k": s.top_k}
    raise ConfigError(f"unknown strategy {s!r}")


def strategy_from_dict(d: dict) -> AggregationStrategy:
    kind = d.get("kind")
    if kind == "mean_logits":
        return MeanLogits()
    if kind == "confidence_weighted":
        return ConfidenceWeighted(**{k: v for k, v in d.items() if k != "kind"})
    if kind == "cross_refine":
        return CrossRefine(**{k: v for k, v in d.items() if k != "kind"})
    raise ConfigError(f"unknown strategy kind {kind!r}")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["sampler"]["frame_method"] = cfg.sampler.frame_method.value
    d["sampler"]["token_strategy"] = cfg.sampler.token_strategy.value
    d["sampler"]["ratios"] = list(cfg.sampler.ratios)
    d["strategy"] = strategy_to_dict(cfg.strategy)
    return d


def config_from_dict(data: dict) -> ExperimentConfig:
    base = config_to_dict(default_experiment_config())
    unknown = set(data) - set(base)
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    merged = {**base, **data}
    for key in ("sampler", "model", "task"):
        if key in data:
            bad = set(data[key]) - set(base[key])
            if bad:
                raise ConfigError(f"unknown {key} fields: {sorted(bad)}")
            merged[key] = {**base[key], **data[key]}
    try:
        sampler = merged["sampler"]
        sampler_cfg = SamplerConfig(
            total_frames=sampler["total_frames"],
            frames_per_trial=sampler["frames_per_trial"],
            tokens_per_frame=sampler["tokens_per_frame"],
            trials=sampler["trials"],
            ratios=tuple(sampler["ratios"]),
            frame_method=FrameMethod(sampler["frame_method"]),
            token_strategy=TokenStrategy(sampler["token_strategy"]),
            reuse_frames=sampler["reuse_frames"],
        )
        cfg = ExperimentConfig(
            sampler=sampler_cfg,
            model=ModelConfig(**merged["model"]),
            strategy=strategy_from_dict(merged["strategy"]),
            task=TaskParams(**merged["task"]),
            backend=merged["backend"],
            repeats=merged["repeats"],
            seed=merged["seed"],
            timing=merged["timing"],
            timing_repeats=merged["timing_repeats"],
            memory_budget_entries=merged["memory_budget_entries"],
            out_dir=merged["out_dir"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad experiment config: {exc}") from exc
    cfg.validate()
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Synthetic tasks


def gen_task(
    total_frames: int,
    tokens_per_frame: int,
    needle_count: int,
    seed: int,
    model: ModelConfig,
    noise_scale: float = 0.1,
    question_len: int = 4,
) -> SyntheticTask:
    """Seeded needle task: needle frames drawn uniformly, embeddings from the
    synthetic embedder, a short question, and a nonzero answer id."""
    if needle_count > total_frames:
        raise ContractError("needle_count exceeds total_frames")
    rng = Rng(seed)
    needles = frozenset(
        int(f)
        for f in sample_frame_indices(
            total_frames, needle_count, FrameMethod.RANDOM, rng.child(0)
        )
    )
    video = embed_frames(
        StreamSpec(total_frames, tokens_per_frame, needles), model, rng.child(1)
    )
    g = rng.child(2).generator()
    # token 0 wins all-zero ties, so the answer id avoids it
    answer = int(g.integers(1, model.vocab))
    question = tuple(int(t) for t in g.integers(0, model.vocab, question_len))
    return SyntheticTask(video, needles, question, answer, noise_scale, seed)


def probe_for_task(task: SyntheticTask, model: ModelConfig) -> NeedleProbe:
    return NeedleProbe(
        needle_direction(model.model_dim),
        task.answer,
        model.vocab,
        gain=PROBE_GAIN,
        noise_scale=task.noise_scale,
        seed=task.seed,
    )


def surviving_needle_tokens(plan: TrialPlan, task: SyntheticTask) -> int:
    """Needle tokens that outlive both frame sampling and token subsampling."""
    m = task.video.tokens_per_frame
    needle_slots = np.flatnonzero(
        np.isin(plan.frame_indices, list(task.needle_frames))
    )
    if len(needle_slots) == 0 or len(plan.token_keep) == 0:
        return 0
    blocks = (needle_slots[:, None] * m + np.arange(m)).ravel()
    return int(np.isin(plan.token_keep, blocks).sum())


# ---------------------------------------------------------------------------
# Direct single-sequence baseline (independent of the multi-trial machinery)


def single_sequence(video: VideoTokenStream, text: Sequence[int]) -> PackedSequence:
    """The plain <video, text> sequence, built without trial plans or packing."""
    dim = video.model_dim
    visual = video.frame_embeddings.reshape(-1, dim)
    text_ids = np.asarray(list(text), dtype=np.int64)
    total = len(visual) + len(text_ids)
    embeddings = np.concatenate([visual, np.zeros((len(text_ids), dim))], axis=0)
    token_ids = np.concatenate(
        [np.full(len(visual), -1, dtype=np.int64), text_ids]
    )
    return PackedSequence(
        segments=(Segment(0, total),),
        embeddings=embeddings,
        token_ids=token_ids,
        segment_of=np.zeros(total, dtype=np.int64),
        pos_in_segment=np.arange(total, dtype=np.int64),
        text_len=len(text_ids),
        generated=0,
    )


def _append_single(seq: PackedSequence, token_id: int) -> PackedSequence:
    dim = seq.model_dim
    embeddings = np.concatenate([seq.embeddings, np.zeros((1, dim))], axis=0)
    token_ids = np.concatenate([seq.token_ids, [token_id]])
    total = len(token_ids)
    return PackedSequence(
        segments=(Segment(0, total),),
        embeddings=embeddings,
        token_ids=token_ids,
        segment_of=np.zeros(total, dtype=np.int64),
        pos_in_segment=np.arange(total, dtype=np.int64),
        text_len=seq.text_len,
        generated=seq.generated + 1,
    )


def baseline_greedy_decode(
    backend,
    video: VideoTokenStream,
    text: Sequence[int],
    steps: int,
    stop_token: Optional[int] = None,
) -> list[int]:
    """Plain greedy decoding of the single full sequence; shares no code with
    the sampler or the multi-trial packer paths."""
    seq = single_sequence(video, text)
    out: list[int] = []
    for step in range(steps):
        logits, _ = backend.forward(seq)
        token = int(np.argmax(logits[-1]))
        out.append(token)
        if stop_token is not None and token == stop_token:
            break
        if step + 1 < steps:
            seq = _append_single(seq, token)
    return out


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class ExperimentReport:
    config_hash: str
    seed: int
    repeats: int
    accuracy: float
    any_trial_coverage: float
    per_trial: list[dict]
    cost: CostReport
    backend: str

    def to_json_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "repeats": self.repeats,
            "accuracy": self.accuracy,
            "any_trial_coverage": self.any_trial_coverage,
            "per_trial": self.per_trial,
            "cost": self.cost.to_json_dict(),
            "backend": self.backend,
        }


def _attn_scores_fn(cfg: ExperimentConfig, task: SyntheticTask, score_model):
    def fn(frame_indices: np.ndarray) -> np.ndarray:
        full = TrialPlan(
            frame_indices,
            np.arange(
                len(frame_indices) * cfg.sampler.tokens_per_frame, dtype=np.int64
            ),
            1.0,
        )
        packed = pack([full], task.video, task.question)
        scores = attention_received_scores(score_model, packed)
        return scores[: len(frame_indices) * cfg.sampler.tokens_per_frame]

    return fn


def _task_seed(seed: int, rep: int) -> int:
    return int(mix64((seed & _MASK64) ^ mix64(rep + 1)))


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute `repeats` independent task instances and aggregate accuracy,
    coverage diagnostics, and a cost report."""
    cfg.validate()
    s = cfg.sampler
    transformer = (
        build_model(cfg.model)
        if (cfg.backend == "seeded_transformer" or s.token_strategy is TokenStrategy.ATTN_TOP)
        else None
    )
    root = Rng(cfg.seed)

    hits = 0
    covered_any = 0
    trial_cover = np.zeros(s.trials, dtype=np.int64)
    trial_survive = np.zeros(s.trials, dtype=np.float64)
    first_task = None
    first_plans = None

    for rep in range(cfg.repeats):
        task = gen_task(
            s.total_frames,
            s.tokens_per_frame,
            cfg.task.needle_count,
            _task_seed(cfg.seed, rep),
            cfg.model,
            noise_scale=cfg.task.noise_scale,
            question_len=cfg.task.question_len,
        )
        backend = (
            transformer
            if cfg.backend == "seeded_transformer"
            else probe_for_task(task, cfg.model)
        )
        scores_fn = (
            _attn_scores_fn(cfg, task, transformer)
            if s.token_strategy is TokenStrategy.ATTN_TOP
            else None
        )
        plans = build_trial_plans(s, root.child(rep), attn_scores_fn=scores_fn)
        tokens = decode(
            backend, plans, task.video, task.question, steps=1, strategy=cfg.strategy
        )
        hits += int(tokens[0] == task.answer)

        any_cover = False
        for i, plan in enumerate(plans):
            cov = bool(np.isin(plan.frame_indices, list(task.needle_frames)).any())
            trial_cover[i] += int(cov)
            trial_survive[i] += surviving_needle_tokens(plan, task)
            any_cover = any_cover or cov
        covered_any += int(any_cover)
        if rep == 0:
            first_task, first_plans = task, plans

    cost = _cost_report(cfg, first_task, first_plans)
    per_trial = [
        {
            "trial": i,
            "coverage": trial_cover[i] / cfg.repeats,
            "mean_surviving_needle_tokens": trial_survive[i] / cfg.repeats,
        }
        for i in range(s.trials)
    ]
    return ExperimentReport(
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        repeats=cfg.repeats,
        accuracy=hits / cfg.repeats,
        any_trial_coverage=covered_any / cfg.repeats,
        per_trial=per_trial,
        cost=cost,
        backend=cfg.backend,
    )


def _cost_report(cfg, task, plans) -> CostReport:
    s = cfg.sampler
    full = TrialPlan(
        sample_frame_indices(
            s.total_frames, s.frames_per_trial, s.frame_method, Rng(cfg.seed).child(10**6)
        ),
        np.arange(s.tokens_per_trial, dtype=np.int64),
        1.0,
    )
    baseline = pack([full], task.video, task.question)
    multi = pack(plans, task.video, task.question)
    backend = (
        build_model(cfg.model)
        if cfg.backend == "seeded_transformer"
        else probe_for_task(task, cfg.model)
    )
    if cfg.timing:
        return measure(
            backend,
            baseline,
            multi,
            list(s.ratios),
            repeats=cfg.timing_repeats,
            strategy=cfg.strategy,
            memory_budget_entries=cfg.memory_budget_entries,
        )
    base, theo_multi, speedup = theoretical_costs(s.tokens_per_trial, s.ratios)
    return CostReport(
        L=s.tokens_per_trial,
        alpha=list(s.ratios),
        theoretical_base=base,
        theoretical_multi=theo_multi,
        theoretical_speedup=speedup,
        measured_pairs_base=count_pairs(backend, baseline),
        measured_pairs_multi=count_pairs(backend, multi),
    )


# ---------------------------------------------------------------------------
# Sweeps

SWEEP_AXES = ("alpha_grid", "m_values", "k_values", "strategy_matrix")

CSV_COLUMNS = [
    "config_hash",
    "axis",
    "point",
    "accuracy",
    "theoretical_speedup",
    "measured_speedup",
    "pairs_base",
    "pairs_multi",
    "wall_ms_base",
    "wall_ms_t3s",
    "fallback_serial",
    "error",
]

DEFAULT_ALPHA_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_M_VALUES = (1, 2, 3, 4)
DEFAULT_K_VALUES = (1, 2, 5, 10, 100)

STRATEGY_MATRIX = (
    ("rand-tok-m2", FrameMethod.RANDOM, TokenStrategy.RAND_TOK, False),
    ("rand-tok-m1", FrameMethod.RANDOM, TokenStrategy.RAND_TOK, True),
    ("uni-tok-m2", FrameMethod.UNIFORM, TokenStrategy.RAND_TOK, False),
    ("uni-tok-m1", FrameMethod.UNIFORM, TokenStrategy.RAND_TOK, True),
    ("rand-frm-m2", FrameMethod.RANDOM, TokenStrategy.RAND_FRM, False),
    ("rand-attn-m2", FrameMethod.RANDOM, TokenStrategy.ATTN_TOP, False),
)


def _sweep_points(axis: str, base: ExperimentConfig, values) -> list[tuple[str, dict]]:
    """(label, config overrides) per grid point; override application is
    deferred so a malformed point fails inside its own row, not the sweep."""
    s = base.sampler
    two_trial_ratios = s.ratios[:2] if s.trials >= 2 else (s.ratios[0],) * 2
    points: list[tuple[str, dict]] = []
    if axis == "alpha_grid":
        grid = tuple(values) if values else DEFAULT_ALPHA_GRID
        for a1 in grid:
            for a2 in grid:
                points.append(
                    (
                        f"{a1:g},{a2:g}",
                        {"sampler": {"trials": 2, "ratios": (a1, a2)}},
                    )
                )
    elif axis == "m_values":
        for m in tuple(values) if values else DEFAULT_M_VALUES:
            points.append(
                (
                    f"m={m}",
                    {
                        "sampler": {"trials": int(m), "ratios": (s.ratios[0],) * int(m)},
                        "strategy": MeanLogits(),
                    },
                )
            )
    elif axis == "k_values":
        ks = tuple(values) if values else DEFAULT_K_VALUES
        for k in ks:
            k = min(int(k), base.model.vocab)
            points.append(
                (
                    f"k={k}",
                    {
                        "sampler": {"trials": 2, "ratios": two_trial_ratios},
                        "strategy": CrossRefine(k),
                    },
                )
            )
    elif axis == "strategy_matrix":
        for name, fm, ts, reuse in STRATEGY_MATRIX:
            points.append(
                (
                    name,
                    {
                        "sampler": {
                            "trials": 2,
                            "ratios": two_trial_ratios,
                            "frame_method": fm,
                            "token_strategy": ts,
                            "reuse_frames": reuse,
                        }
                    },
                )
            )
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return points


def _apply_point(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    sampler = replace(base.sampler, **overrides.get("sampler", {}))
    extra = {k: v for k, v in overrides.items() if k != "sampler"}
    cfg = replace(base, sampler=sampler, **extra)
    cfg.validate()
    return cfg


def report_csv_row(axis: str, point: str, report: ExperimentReport) -> dict:
    c = report.cost
    return {
        "config_hash": report.config_hash,
        "axis": axis,
        "point": point,
        "accuracy": f"{report.accuracy:.6f}",
        "theoretical_speedup": f"{c.theoretical_speedup:.6f}",
        "measured_speedup": "" if c.measured_speedup is None else f"{c.measured_speedup:.4f}",
        "pairs_base": str(c.measured_pairs_base),
        "pairs_multi": str(c.measured_pairs_multi),
        "wall_ms_base": "" if c.tau1 is None else f"{c.tau1 * 1e3:.3f}",
        "wall_ms_t3s": "" if c.tau2 is None else f"{c.tau2 * 1e3:.3f}",
        "fallback_serial": str(c.fallback_serial).lower(),
        "error": "",
    }


def sweep(
    axis: str, base: ExperimentConfig, values: Optional[Sequence] = None
) -> list[dict]:
    """One experiment per grid point, in grid order. A failing point yields a
    row with its error recorded; the sweep continues."""
    rows = []
    for point, overrides in _sweep_points(axis, base, values):
        try:
            cfg = _apply_point(base, overrides)
            rows.append(report_csv_row(axis, point, run_experiment(cfg)))
        except Exception as exc:  # recorded, never silently dropped
            rows.append(
                {
                    **{col: "" for col in CSV_COLUMNS},
                    "config_hash": config_hash(base),
                    "axis": axis,
                    "point": point,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Coverage


@dataclass
class CoverageReport:
    total_frames: int
    frames_per_trial: int
    trials: int
    draws: int
    empirical: float
    closed_form: float
    z_score: float

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def coverage_report(
    total_frames: int,
    frames_per_trial: int,
    trials: int,
    draws: int,
    seed: int = 0,
) -> CoverageReport:
    """Monte-Carlo needle-hit rate versus the closed form 1-(1-N/F)^m."""
    if draws < 10000:
        raise ContractError(f"draws must be >= 10000, got {draws}")
    p = closed_form_coverage(total_frames, frames_per_trial, trials)
    root = Rng(seed)
    key_frame = 0  # uniform sampling makes every fixed frame equivalent
    hits = 0
    for d in range(draws):
        draw_rng = root.child(d)
        for t in range(trials):
            frames = sample_frame_indices(
                total_frames, frames_per_trial, FrameMethod.RANDOM, draw_rng.child(t)
            )
            if (frames == key_frame).any():
                hits += 1
                break
    emp = hits / draws
    se = (p * (1.0 - p) / draws) ** 0.5
    if se == 0.0:
        z = 0.0 if emp == p else float("inf")
    else:
        z = (emp - p) / se
    return CoverageReport(
        total_frames=total_frames,
        frames_per_trial=frames_per_trial,
        trials=trials,
        draws=draws,
        empirical=emp,
        closed_form=p,
        z_score=z,
    )
