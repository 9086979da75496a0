"""CLI orchestration: configuration, caching, datasets, and commands."""

from stepsmith.pipeline.cache import featurize_many, featurize_wav, load_entry
from stepsmith.pipeline.commands import (
    cmd_evaluate,
    cmd_featurize,
    cmd_generate,
    cmd_tempo,
    cmd_train_placement,
    cmd_train_selection,
)
from stepsmith.pipeline.config import PipelineConfig, load_config
from stepsmith.pipeline.dataset import SongEntry, build_split_examples, discover_songs
from stepsmith.pipeline.difficulty import (
    DifficultyPlan,
    default_difficulty,
    plan_difficulties,
)

__all__ = [
    "PipelineConfig",
    "DifficultyPlan",
    "SongEntry",
    "load_config",
    "default_difficulty",
    "plan_difficulties",
    "discover_songs",
    "build_split_examples",
    "featurize_wav",
    "featurize_many",
    "load_entry",
    "cmd_featurize",
    "cmd_train_placement",
    "cmd_train_selection",
    "cmd_evaluate",
    "cmd_generate",
    "cmd_tempo",
]
