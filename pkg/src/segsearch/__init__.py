"""Training-free search for fast cached diffusion sampling schedules.

A schedule genome partitions the sampling trajectory into segments, each
caching a U-Net branch at a chosen step interval. The package expands
genomes into step plans, prices them against MACs cost profiles, scores
them with a teacher-relative Fréchet distance on a deterministic toy
diffusion model, and evolves populations of them under a cost budget.
"""

from .costmodel import (
    BUILTIN_PROFILES,
    CostProfile,
    average_macs,
    derive_partial_macs,
    genome_average_macs,
    load_profile,
    step_cost,
    within_budget,
)
from .errors import (
    BackendError,
    BudgetError,
    CacheMissError,
    CheckpointError,
    InsufficientSamplesError,
    NumericError,
    PairedGenerationError,
    ProfileError,
    SegsearchError,
    UndefinedTauError,
    UnsupportedModeError,
    ValidationError,
)
from .evaluator import (
    EvalResult,
    ExternalEvaluator,
    InProcessEvaluator,
    TeacherBundle,
    build_teacher,
    rank,
)
from .metrics import (
    FeatureExtractor,
    FeatureStats,
    extract_stats,
    frechet,
    kendall_tau,
    pixel_mse,
    rfid,
)
from .schedule import (
    FULL,
    NULL,
    PARTIAL,
    Mode,
    ScheduleGenome,
    SearchSpace,
    SegmentSpec,
    StepAction,
    StepPlan,
    deepcache_uniform,
    enumerate_genomes,
    expand,
    genome_digest,
    genome_from_dict,
    genome_to_dict,
    nfe,
    partition_spans,
    space_from_dict,
    space_size,
    space_to_dict,
    validate,
)
from .search import (
    PopulationEntry,
    SearchConfig,
    checkpoint_load,
    checkpoint_save,
    config_from_dict,
    config_to_dict,
    init_population,
    merge_segments,
    mutate,
    population_dump,
    population_digest,
    random_genome,
    search_loop,
    split_segment,
)
from .simulator import (
    SamplerConfig,
    UNet,
    UNetConfig,
    build_unet,
    count_macs,
    forward_full,
    forward_partial,
    generate_batch,
    run_plan,
    sampler_grid,
    time_embedding,
    toy_cost_profile,
)

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_PROFILES",
    "BackendError",
    "BudgetError",
    "CacheMissError",
    "CheckpointError",
    "CostProfile",
    "EvalResult",
    "ExternalEvaluator",
    "FULL",
    "FeatureExtractor",
    "FeatureStats",
    "InProcessEvaluator",
    "InsufficientSamplesError",
    "Mode",
    "NULL",
    "NumericError",
    "PARTIAL",
    "PairedGenerationError",
    "PopulationEntry",
    "ProfileError",
    "SamplerConfig",
    "ScheduleGenome",
    "SearchConfig",
    "SearchSpace",
    "SegmentSpec",
    "SegsearchError",
    "StepAction",
    "StepPlan",
    "TeacherBundle",
    "UNet",
    "UNetConfig",
    "UndefinedTauError",
    "UnsupportedModeError",
    "ValidationError",
    "average_macs",
    "build_teacher",
    "build_unet",
    "checkpoint_load",
    "checkpoint_save",
    "config_from_dict",
    "config_to_dict",
    "count_macs",
    "deepcache_uniform",
    "derive_partial_macs",
    "enumerate_genomes",
    "expand",
    "extract_stats",
    "forward_full",
    "forward_partial",
    "frechet",
    "generate_batch",
    "genome_average_macs",
    "genome_digest",
    "genome_from_dict",
    "genome_to_dict",
    "init_population",
    "kendall_tau",
    "load_profile",
    "merge_segments",
    "mutate",
    "nfe",
    "partition_spans",
    "pixel_mse",
    "population_digest",
    "population_dump",
    "random_genome",
    "rank",
    "rfid",
    "run_plan",
    "sampler_grid",
    "search_loop",
    "space_from_dict",
    "space_size",
    "space_to_dict",
    "split_segment",
    "step_cost",
    "time_embedding",
    "toy_cost_profile",
    "validate",
    "within_budget",
]
