"""Multi-trial temporal sampling for video-token transformer decoding.

Plan several short frame/token subsequences of one long video, run them in a
single packed forward pass under a block-diagonal causal mask, aggregate the
per-trial next-token logits, and account for the attention cost saved.
"""

from .aggregator import (
    AggregationStrategy,
    ConfidenceWeighted,
    CrossRefine,
    MeanLogits,
    confidence_weighted,
    cross_refine,
    decode,
    default_strategy,
    fuse_token,
    mean_logits,
)
from .costmodel import CostReport, exact_pair_ratio, measure, theoretical_costs
from .errors import ConfigError, ContractError, ShapeError, UnsupportedOperationError
from .harness import (
    CoverageReport,
    ExperimentConfig,
    ExperimentReport,
    SyntheticTask,
    baseline_greedy_decode,
    config_from_dict,
    coverage_report,
    default_experiment_config,
    gen_task,
    run_experiment,
    sweep,
)
from .numkernel import Rng, entropy, matmul, sample_without_replacement, softmax_rows
from .packer import (
    BLOCK_DIAGONAL_CAUSAL,
    AttentionMaskSpec,
    PackedSequence,
    append_token,
    last_positions,
    pack,
    slice_segment,
    to_debug_json,
)
from .sampler import (
    FrameMethod,
    SamplerConfig,
    TokenStrategy,
    TrialPlan,
    build_trial_plans,
    closed_form_coverage,
    sample_frame_indices,
    subsample_tokens,
)
from .toymodel import (
    ModelConfig,
    NeedleProbe,
    SeededTransformer,
    StreamSpec,
    VideoTokenStream,
    attention_received_scores,
    build_model,
    embed_frames,
    load_weights,
    needle_direction,
    needle_probe_forward,
    save_weights,
)

__version__ = "0.1.0"
