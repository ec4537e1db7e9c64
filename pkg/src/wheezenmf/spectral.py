"""Short-time Fourier analysis/synthesis and Wiener-style soft masks.

The forward transform frames the signal without padding, so a signal of
``n`` samples yields ``(n - window_length) // hop_length + 1`` frames. The
inverse is a weighted overlap-add that divides by the accumulated squared
window, which gives perfect reconstruction wherever that envelope is
non-negligible (everything except the outer edge of the first and last
frame).
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
from scipy.signal import get_window

from ._validation import check_matrix, check_same_shape
from .exceptions import ConfigurationError, InvalidInputError

# Envelope values below this fraction of the envelope's maximum are treated as
# "not covered" by the synthesis window and produce zeros.
_ENVELOPE_FLOOR = 1e-8
# source^2 + noise^2 below this counts as a zero denominator in wiener_masks.
_MASK_ZERO = 1e-30


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio samples plus their sample rate (Hz)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def power(self):
        """Mean-square amplitude."""
        return float(np.mean(self.samples**2)) if len(self) else 0.0


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters for :func:`compute_stft` / :func:`inverse_stft`.

    ``window`` is any window name understood by :func:`scipy.signal.get_window`
    (``"hann"``, ``"hamming"``, ``"boxcar"``, ...). Periodic (DFT-even) windows
    are used. ``fft_length`` defaults to ``window_length``.

    The squared window must overlap-add to a constant at the chosen hop,
    otherwise a :class:`ConfigurationError` is raised.
    """

    window_length: int = 1024
    hop_length: int = 256
    window: str = "hann"
    fft_length: int | None = None

    def __post_init__(self):
        if self.fft_length is None:
            object.__setattr__(self, "fft_length", self.window_length)
        for name in ("window_length", "hop_length", "fft_length"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ConfigurationError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not 0 < self.hop_length <= self.window_length <= self.fft_length:
            raise ConfigurationError(
                "need 0 < hop_length <= window_length <= fft_length, got "
                f"{self.hop_length}, {self.window_length}, {self.fft_length}"
            )
        try:
            self.window_array
        except ValueError as exc:
            raise ConfigurationError(f"unknown window {self.window!r}: {exc}") from None
        if not self.is_cola():
            raise ConfigurationError(
                f"window {self.window!r} with length {self.window_length} and hop "
                f"{self.hop_length} does not satisfy the constant overlap-add condition"
            )

    @cached_property
    def window_array(self):
        return get_window(self.window, self.window_length, fftbins=True).astype(np.float64)

    @property
    def num_bins(self):
        return self.fft_length // 2 + 1

    def ola_envelope(self):
        """Squared window folded onto one hop period."""
        w2 = self.window_array**2
        pad = (-len(w2)) % self.hop_length
        return np.pad(w2, (0, pad)).reshape(-1, self.hop_length).sum(axis=0)

    def is_cola(self, tol=1e-10):
        env = self.ola_envelope()
        return env.min() > 0 and (env.max() - env.min()) <= tol * env.max()

    def num_frames(self, n_samples):
        if n_samples < self.window_length:
            return 0
        return (n_samples - self.window_length) // self.hop_length + 1


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT (F x T) with its magnitude."""

    complex_frames: np.ndarray
    sample_rate: int = 1
    magnitude: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        frames = np.asarray(self.complex_frames, dtype=np.complex128)
        if frames.ndim != 2:
            raise InvalidInputError(f"complex_frames must be 2-D, got shape {frames.shape}")
        object.__setattr__(self, "complex_frames", frames)
        object.__setattr__(self, "magnitude", np.abs(frames))

    @property
    def num_bins(self):
        return self.complex_frames.shape[0]

    @property
    def num_frames(self):
        return self.complex_frames.shape[1]

    @property
    def shape(self):
        return self.complex_frames.shape


@dataclass(frozen=True)
class MaskPair:
    source_mask: np.ndarray
    noise_mask: np.ndarray


def _as_samples(audio):
    if isinstance(audio, AudioBuffer):
        return audio.samples, audio.sample_rate
    return np.asarray(audio, dtype=np.float64), 1


def compute_stft(audio, cfg=None, *, workers=1):
    """STFT of ``audio`` (an :class:`AudioBuffer` or 1-D array).

    Returns a :class:`Spectrogram` with ``fft_length // 2 + 1`` bins.
    ``workers`` is forwarded to :func:`scipy.fft.rfft`; frames are transformed
    independently, so the result does not depend on it.
    """
    cfg = cfg or StftConfig()
    x, sample_rate = _as_samples(audio)
    if x.ndim != 1:
        raise InvalidInputError(f"audio must be 1-D, got shape {x.shape}")
    if x.shape[0] < cfg.window_length:
        raise InvalidInputError(
            f"audio has {x.shape[0]} samples, shorter than one window ({cfg.window_length})"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("audio contains non-finite samples")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_length)[:: cfg.hop_length]
    spec = scipy.fft.rfft(frames * cfg.window_array, n=cfg.fft_length, axis=1, workers=workers)
    return Spectrogram(spec.T, sample_rate=sample_rate)


def inverse_stft(spec, cfg=None, out_len=None, *, workers=1):
    """Weighted overlap-add inverse of :func:`compute_stft`.

    ``out_len`` defaults to the length spanned by the frames; longer outputs
    are zero-padded, shorter ones truncated.
    """
    cfg = cfg or StftConfig()
    if isinstance(spec, Spectrogram):
        frames, sample_rate = spec.complex_frames, spec.sample_rate
    else:
        frames, sample_rate = np.asarray(spec, dtype=np.complex128), 1
    if frames.ndim != 2 or frames.shape[0] != cfg.num_bins:
        raise InvalidInputError(
            f"spectrogram shape {frames.shape} does not match fft_length {cfg.fft_length} "
            f"({cfg.num_bins} bins expected)"
        )
    n_frames = frames.shape[1]
    win, hop, wlen = cfg.window_array, cfg.hop_length, cfg.window_length
    span = (n_frames - 1) * hop + wlen if n_frames else 0
    if out_len is None:
        out_len = span
    if out_len < 0:
        raise InvalidInputError(f"out_len must be non-negative, got {out_len}")

    segments = scipy.fft.irfft(frames.T, n=cfg.fft_length, axis=1, workers=workers)[:, :wlen]
    segments *= win
    # zero-pad each frame to whole hops, then add one hop-sized slice of
    # every frame at a time
    n_slices = -(-wlen // hop)
    segments = np.pad(segments, ((0, 0), (0, n_slices * hop - wlen)))
    w2 = np.pad(win**2, (0, n_slices * hop - wlen))
    length = (n_frames + n_slices) * hop
    out = np.zeros(length)
    env = np.zeros(length)
    for j in range(n_slices):
        sl = slice(j * hop, j * hop + n_frames * hop)
        out[sl] += segments[:, j * hop:(j + 1) * hop].reshape(-1)
        env[sl] += np.tile(w2[j * hop:(j + 1) * hop], n_frames)
    covered = env > _ENVELOPE_FLOOR * (env.max() if n_frames else 1.0)
    out[covered] /= env[covered]
    out[~covered] = 0.0
    out = out[:span]
    if out_len <= span:
        out = out[:out_len]
    else:
        out = np.pad(out, (0, out_len - span))
    return AudioBuffer(out, sample_rate)


def wiener_masks(source_model, noise_model):
    """Soft masks ``s^2 / (s^2 + v^2)`` and its complement.

    Bins where both models vanish get 0.5 in each mask.
    """
    S = check_matrix(source_model, "source_model")
    V = check_matrix(noise_model, "noise_model")
    check_same_shape(S, V, ("source_model", "noise_model"))
    s2, v2 = S**2, V**2
    denom = s2 + v2
    zero = denom < _MASK_ZERO
    source_mask = np.divide(s2, denom, out=np.full_like(denom, 0.5), where=~zero)
    # complement rather than v2 / denom so the pair sums to one to the last bit
    noise_mask = 1.0 - source_mask
    return MaskPair(source_mask, noise_mask)


def apply_mask_and_synthesize(mix, mask, cfg=None, out_len=None, *, workers=1):
    """Scale the mixture STFT by ``mask`` (keeping its phase) and resynthesize."""
    mask = check_matrix(mask, "mask")
    if mask.shape != mix.shape:
        raise InvalidInputError(f"mask shape {mask.shape} does not match spectrogram {mix.shape}")
    if mask.max() > 1.0:
        raise InvalidInputError("mask entries must lie in [0, 1]")
    masked = Spectrogram(mix.complex_frames * mask, sample_rate=mix.sample_rate)
    return inverse_stft(masked, cfg, out_len, workers=workers)
