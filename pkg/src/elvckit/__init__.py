"""Frame-based electrolaryngeal voice conversion toolkit."""

from .errors import ElvcError
from .features import (
    FeatureDomain,
    FeatureSequence,
    ingest_ssl,
    load_boundaries,
    load_manifest,
    read_features,
    reconcile_frames,
    write_features,
)
from .dsp import (
    AudioBuffer,
    F0Track,
    Spectrogram,
    StftConfig,
    estimate_f0,
    extract_envelope,
    extract_mcc,
    extract_mel,
    griffin_lim,
    mel_filterbank,
    read_wav,
    stft,
    write_wav,
)
from .align import (
    AlignmentPath,
    apply_alignment,
    dtw,
    frame_distance,
    load_alignment,
    save_alignment,
    segment_align,
)
from .cdvae import (
    AlignedPair,
    CdvaeArchitecture,
    CdvaeModel,
    TrainConfig,
    TrainingExample,
    convert,
    load_checkpoint,
    save_checkpoint,
    train_stage1,
    train_stage2,
)
from .config import load_config, save_config
from .corpus import generate_corpus, ssl_standin_from_envelope
from .metrics import EvalResult, evaluate_pair, evaluate_system, f0_corr, f0_rmse, mcd

__version__ = "0.1.0"
