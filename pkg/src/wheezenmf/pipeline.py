"""End-to-end processing of one two-channel recording.

STFT of both channels -> SVD initialization -> joint NMF -> wheeze detection,
plus the soft-mask denoiser built on the same factorization. Stage wall
times are recorded for the benchmark harness.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .detection import DEFAULT_THRESHOLD, detect
from .exceptions import ConfigurationError, InvalidInputError
from .factorization import (
    FactorizationConfig,
    NmfModel,
    blas_limits,
    factorize,
    init_bases_from_svd,
    init_gains_random,
    initialize,
    truncated_svd,
)
from .spectral import AudioBuffer, MaskPair, StftConfig, apply_mask_and_synthesize, compute_stft, wiener_masks

logger = logging.getLogger(__name__)

STAGES = ("stft", "svd", "nmf", "detect")

_STFT_KEYS = ("window_length", "hop_length", "window", "fft_length")
_FACT_KEYS = ("n_source_bases", "n_noise_bases", "max_iter", "beta_ortho", "tol", "early_stopping", "init", "seed")


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to run the pipeline, flattenable to ``key=value`` text.

    ``normalize`` divides both magnitude spectrograms by the mean of the
    internal one before factorization, which makes the result independent of
    the recording gain (the orthogonality penalty is not scale-invariant).
    """

    stft: StftConfig = field(default_factory=StftConfig)
    factorization: FactorizationConfig = field(default_factory=FactorizationConfig)
    threshold: float = DEFAULT_THRESHOLD
    threads: int = 1
    normalize: bool = True
    out_dir: str = "."

    def __post_init__(self):
        if isinstance(self.threads, bool) or int(self.threads) != self.threads or self.threads < 1:
            raise ConfigurationError(f"threads must be an integer >= 1, got {self.threads!r}")
        if not 0 <= self.threshold <= 1:
            raise ConfigurationError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.factorization.n_threads != self.threads:
            object.__setattr__(self, "factorization", replace(self.factorization, n_threads=int(self.threads)))

    def to_flat(self):
        flat = {k: getattr(self.stft, k) for k in _STFT_KEYS}
        flat.update({k: getattr(self.factorization, k) for k in _FACT_KEYS})
        flat.update(threshold=self.threshold, threads=self.threads, normalize=self.normalize, out_dir=self.out_dir)
        return flat

    @classmethod
    def from_flat(cls, values):
        """Build from a mapping of flat keys; values may be strings. Unknown keys are an error."""
        known = set(_STFT_KEYS) | set(_FACT_KEYS) | {"threshold", "threads", "normalize", "out_dir"}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        base = cls().to_flat()
        merged = {**base, **{k: v for k, v in values.items() if v is not None}}
        typed = {}
        for key, default in base.items():
            value = merged[key]
            if isinstance(value, str) and not isinstance(default, str):
                try:
                    if isinstance(default, bool):
                        value = _parse_bool(value)
                    elif isinstance(default, int):
                        value = int(value)
                    elif isinstance(default, float):
                        value = float(value)
                except ValueError:
                    raise ConfigurationError(f"bad value for {key}: {value!r}") from None
            typed[key] = value
        return cls(
            stft=StftConfig(**{k: typed[k] for k in _STFT_KEYS}),
            factorization=FactorizationConfig(**{k: typed[k] for k in _FACT_KEYS}, n_threads=typed["threads"]),
            threshold=typed["threshold"],
            threads=typed["threads"],
            normalize=typed["normalize"],
            out_dir=typed["out_dir"],
        )

    def dumps(self):
        return "".join(f"{k}={v}\n" for k, v in self.to_flat().items())

    @classmethod
    def load(cls, path, **overrides):
        """Read a ``key=value`` file (``#`` starts a comment), then apply overrides."""
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_flat(values)

    def with_overrides(self, **overrides):
        return PipelineConfig.from_flat({**self.to_flat(), **overrides})


@dataclass
class PipelineResult:
    model: NmfModel
    trace: object
    detection: object
    internal_spec: object
    scale: float
    timings: dict = field(default_factory=dict)


def align_channels(internal, external):
    """Zero-pad the shorter channel; sample rates must agree."""
    if internal.sample_rate != external.sample_rate:
        raise InvalidInputError(
            f"sample rates differ: internal {internal.sample_rate} Hz, external {external.sample_rate} Hz"
        )
    n = max(len(internal), len(external))
    if len(internal) != len(external):
        logger.warning("channel lengths differ (%d vs %d); zero-padding the shorter", len(internal), len(external))
    pad = lambda b: AudioBuffer(np.pad(b.samples, (0, n - len(b))), b.sample_rate)
    return pad(internal), pad(external)


def pad_for_synthesis(buf, cfg):
    """Pad so every original sample is covered by a full set of frames.

    Returns the padded buffer and the offset of the first original sample.
    """
    lead = cfg.window_length - cfg.hop_length
    n = len(buf) + 2 * lead
    tail = lead + (-(n - cfg.window_length)) % cfg.hop_length
    if n < cfg.window_length:
        tail += cfg.window_length - n
    return AudioBuffer(np.pad(buf.samples, (lead, tail)), buf.sample_rate), lead


def analyze(internal, external, config=None):
    """Run STFT, initialization, factorization and detection on one recording."""
    config = config or PipelineConfig()
    internal, external = align_channels(internal, external)
    timings = {}
    fcfg = config.factorization

    t0 = time.perf_counter()
    internal, _ = pad_for_synthesis(internal, config.stft)
    external, _ = pad_for_synthesis(external, config.stft)
    spec_i = compute_stft(internal, config.stft, workers=config.threads)
    spec_e = compute_stft(external, config.stft, workers=config.threads)
    X, Y = spec_i.magnitude, spec_e.magnitude
    scale = 1.0
    if config.normalize:
        mean = X.mean()
        scale = float(mean) if mean > 0 else 1.0
        X, Y = X / scale, Y / scale
    t1 = time.perf_counter()
    timings["stft"] = t1 - t0

    if fcfg.n_components > min(X.shape):
        raise InvalidInputError(
            f"{fcfg.n_components} bases need at least that many frames; recording gives {X.shape[1]}"
        )
    with blas_limits(config.threads):
        if fcfg.init == "svd":
            svd = truncated_svd(X, fcfg.n_components)
            B_S, B_V = init_bases_from_svd(svd, fcfg.n_source_bases, fcfg.n_noise_bases)
            gains = init_gains_random(fcfg.n_source_bases, fcfg.n_noise_bases, X.shape[1], fcfg.seed)
            init = NmfModel(B_S, B_V, *gains, beta_ortho=fcfg.beta_ortho)
        else:
            init = initialize(X, fcfg)
    t2 = time.perf_counter()
    timings["svd"] = t2 - t1

    model, trace = factorize(X, Y, fcfg, init_model=init)
    t3 = time.perf_counter()
    timings["nmf"] = t3 - t2

    detection = detect(model, config.threshold)
    t4 = time.perf_counter()
    timings["detect"] = t4 - t3
    timings["total"] = t4 - t0
    return PipelineResult(model, trace, detection, spec_i, scale, timings)


def denoise(internal, external, config=None, result=None):
    """Soft-mask estimates ``(source, noise)`` of the internal channel.

    A precomputed :class:`PipelineResult` for the same recording may be passed
    to avoid refitting.
    """
    config = config or PipelineConfig()
    internal_p, external_p = align_channels(internal, external)
    if result is None:
        result = analyze(internal_p, external_p, config)
    masks = wiener_masks(result.model.source_model(), result.model.noise_model())
    if not np.any(external_p.samples):
        # nothing in the reference channel, so nothing is attributed to noise;
        # the shared noise bases would otherwise soak up part of the source
        logger.info("external channel is silent; passing the internal channel through")
        masks = MaskPair(np.ones_like(masks.source_mask), np.zeros_like(masks.noise_mask))
    padded, lead = pad_for_synthesis(internal_p, config.stft)
    n = len(internal_p)
    estimates = []
    for mask in (masks.source_mask, masks.noise_mask):
        out = apply_mask_and_synthesize(result.internal_spec, mask, config.stft, len(padded), workers=config.threads)
        estimates.append(AudioBuffer(out.samples[lead:lead + n], out.sample_rate))
    return estimates[0], estimates[1], result
