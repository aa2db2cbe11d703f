"""Spike-train EEG encoding and attention-based sleep stage scoring."""

__version__ = "0.1.0"

from .signal_io import (  # noqa: F401
    Epoch,
    RawRecord,
    Stage,
    SynthSpec,
    epochize,
    ingest_record,
    load_annotations,
    synth_record,
)
from .filterbank import BandId, BandSet, FilterSpec, decompose  # noqa: F401
from .spike_encoder import (  # noqa: F401
    FeatureEpoch,
    HalfGaussianParams,
    Polarity,
    accumulate,
    build_feature_epoch,
    build_feature_epoch_threshold,
    encode,
    half_gaussian,
    probabilitize,
)
from .attention_model import (  # noqa: F401
    ModelConfig,
    ModelState,
    TrainConfig,
    attention,
    encode_tokens,
    feed_forward,
    forward,
    grad_check,
    init_model,
    load_model,
    multi_head,
    predict,
    save_model,
    train,
)
from .evaluation import (  # noqa: F401
    compare_ablation,
    confusion,
    export_hypnogram,
    make_folds,
    metrics,
    run_cv,
)
