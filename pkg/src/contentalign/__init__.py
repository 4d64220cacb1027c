"""Content-aligned contrastive training for zero-shot document classification.

The package is a small numpy implementation: a synthetic document corpus
with image and content channels, three transformer encoders trained with a
coupled contrastive loss, late-fusion zero-shot inference and the ZSL/GZSL
evaluation harness.
"""

from .corpus import (
    CorpusManifest,
    DatasetView,
    Geometry,
    SyntheticSpec,
    generate_synthetic_corpus,
    load_manifest,
    select_channel,
)
from .evaluation import (
    AblationMatrix,
    EvalReport,
    harmonic_mean,
    per_class_top1,
    run_ablation_suite,
    run_gzsl,
    run_zsl,
)
from .infer import build_prompt_bank, calibrate, predict, score_early_fusion, score_late_fusion
from .loss import LossConfig, coupled_loss
from .model import ContentAlignModel, ModelConfig
from .splits import (
    RVL_CDIP_CLASSES,
    RankOrdering,
    SplitSpec,
    make_incremental_split,
    make_sequential_splits,
    validate_split,
)
from .train import TrainConfig, fit

__version__ = "0.1.0"
