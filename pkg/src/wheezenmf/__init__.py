"""Two-channel NMF denoising and wheeze detection for stethoscope recordings."""

from .dataset import (
    MixtureSpec,
    TwoChannelRecording,
    load_manifest,
    load_two_channel,
    load_wav,
    mix_at_snr,
    save_wav,
    synth_corpus,
    write_corpus,
)
from .detection import DetectionResult, classify, cluster_bases, detect, gini_columns, gini_index, spectral_energy
from .estimators import OrthogonalNMF, TwoChannelNMF, WheezeDetector
from .evaluation import (
    BenchRecord,
    ConfusionCounts,
    ExperimentRecord,
    run_scaling_benchmark,
    run_snr_sweep,
    score,
)
from .exceptions import ConfigurationError, InvalidInputError, NumericalError, WavFormatError, WheezeNMFError
from .factorization import (
    CostTrace,
    FactorizationConfig,
    NmfModel,
    factorize,
    kl_divergence,
    onmf_update,
    orthogonality_penalty,
    total_cost,
    truncated_svd,
    update_step,
)
from .pipeline import PipelineConfig, PipelineResult, analyze, denoise
from .spectral import (
    AudioBuffer,
    MaskPair,
    Spectrogram,
    StftConfig,
    apply_mask_and_synthesize,
    compute_stft,
    inverse_stft,
    wiener_masks,
)

__version__ = "0.1.0"
