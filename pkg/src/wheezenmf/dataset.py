"""Audio I/O, two-channel mixing at a target SNR, and synthetic signals.

The generators are stand-ins for clinical recordings: a drifting tonal
wheeze, band-limited breath noise with a breathing envelope, and five
parametric ambient noises. Every generator is a pure function of its
arguments and seed.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .exceptions import InvalidInputError, WavFormatError
from .spectral import AudioBuffer

NOISE_KINDS = ("siren", "babble", "broadband", "tonal_interferer", "street_like")
LABELS = ("normal", "wheeze")
DEFAULT_SAMPLE_RATE = 8000

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


# --------------------------------------------------------------------------
# WAV files
# --------------------------------------------------------------------------


def _read_chunks(data, path):
    if len(data) < 12:
        raise OSError(f"{path}: truncated WAV header")
    riff, _, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file", chunk_id=riff.decode("latin-1"))
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise OSError(f"{path}: truncated {cid.decode('latin-1')!r} chunk")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def _read_wav(path):
    path = Path(path)
    data = path.read_bytes()
    chunks = _read_chunks(data, path)
    if b"fmt " not in chunks:
        raise WavFormatError(f"{path}: missing format chunk", chunk_id="fmt ")
    if b"data" not in chunks:
        raise OSError(f"{path}: missing data chunk")
    fmt = chunks[b"fmt "]
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack("<H", fmt[24:26])[0]
    if (tag, bits) == (_PCM, 16):
        dtype, scale = "<i2", 32768.0
    elif (tag, bits) == (_IEEE_FLOAT, 32):
        dtype, scale = "<f4", 1.0
    else:
        raise WavFormatError(
            f"{path}: unsupported encoding (format tag {tag}, {bits} bits)", chunk_id="fmt "
        )
    raw = chunks[b"data"]
    n_frames = len(raw) // block_align
    if n_frames * block_align != len(raw):
        raise OSError(f"{path}: data chunk is not a whole number of frames")
    samples = np.frombuffer(raw, dtype=dtype).reshape(n_frames, channels).astype(np.float64)
    return samples / scale, rate


def load_wav(path):
    """Read a mono 16-bit PCM or 32-bit float WAV file.

    PCM samples are divided by 32768. Multi-channel files are rejected; use
    :func:`load_two_channel` for stereo recordings.
    """
    samples, rate = _read_wav(path)
    if samples.shape[1] != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {samples.shape[1]} channels", chunk_id="fmt ")
    return AudioBuffer(samples[:, 0], rate)


def load_two_channel(path):
    """Split a stereo file into ``(internal, external)`` = channels 0 and 1."""
    samples, rate = _read_wav(path)
    if samples.shape[1] != 2:
        raise WavFormatError(f"{path}: expected 2 channels, got {samples.shape[1]}", chunk_id="fmt ")
    return AudioBuffer(samples[:, 0], rate), AudioBuffer(samples[:, 1], rate)


def save_wav(buf, path, encoding="float32"):
    """Write ``buf`` as mono ``"float32"`` or ``"pcm16"``.

    PCM values are ``round(x * 32768)`` clipped to the int16 range.
    """
    x = buf.samples
    if encoding == "float32":
        tag, bits, payload = _IEEE_FLOAT, 32, x.astype("<f4").tobytes()
    elif encoding == "pcm16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        tag, bits, payload = _PCM, 16, q.tobytes()
    else:
        raise InvalidInputError(f"unknown encoding {encoding!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, buf.sample_rate, buf.sample_rate * block, block, bits)
    parts = [b"WAVE", b"fmt ", struct.pack("<I", len(fmt)), fmt]
    if tag == _IEEE_FLOAT:
        # non-PCM files carry a fact chunk with the frame count
        parts += [b"fact", struct.pack("<II", 4, len(x))]
    parts += [b"data", struct.pack("<I", len(payload)), payload]
    if len(payload) & 1:
        parts.append(b"\0")
    body = b"".join(parts)
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# --------------------------------------------------------------------------
# Mixing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureSpec:
    respiratory_source: AudioBuffer
    noise_source: AudioBuffer
    target_snr_db: float
    label: str = "normal"

    def __post_init__(self):
        if self.respiratory_source.sample_rate != self.noise_source.sample_rate:
            raise InvalidInputError(
                f"sample rates differ: {self.respiratory_source.sample_rate} vs "
                f"{self.noise_source.sample_rate}"
            )
        if len(self.noise_source) < len(self.respiratory_source):
            raise InvalidInputError("noise must be at least as long as the source")
        if not np.isfinite(self.target_snr_db):
            raise InvalidInputError(f"target_snr_db must be finite, got {self.target_snr_db}")
        if self.label not in LABELS:
            raise InvalidInputError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class TwoChannelRecording:
    internal: AudioBuffer
    external: AudioBuffer
    metadata: MixtureSpec
    noise_gain: float

    @property
    def source(self):
        return self.metadata.respiratory_source

    def achieved_snr_db(self):
        return snr_db(self.metadata.respiratory_source.samples, self.external.samples)


def snr_db(source, noise):
    return 10.0 * np.log10(np.mean(np.square(source)) / np.mean(np.square(noise)))


def mix_at_snr(spec):
    """Scale the noise so the source-to-noise power ratio equals the target.

    Returns ``internal = s + g*v`` and ``external = g*v``, with the noise
    trimmed to the source length.
    """
    s = spec.respiratory_source.samples
    v = spec.noise_source.samples[: len(s)]
    p_s, p_v = np.mean(s**2), np.mean(v**2)
    if p_s <= 0 or p_v <= 0:
        raise InvalidInputError("source and noise must both have non-zero power")
    gain = float(np.sqrt(p_s / (p_v * 10.0 ** (spec.target_snr_db / 10.0))))
    scaled = gain * v
    rate = spec.respiratory_source.sample_rate
    return TwoChannelRecording(AudioBuffer(s + scaled, rate), AudioBuffer(scaled, rate), spec, gain)


# --------------------------------------------------------------------------
# Synthetic signals
# --------------------------------------------------------------------------


def _n_samples(duration_s, sample_rate):
    n = int(round(duration_s * sample_rate))
    if n <= 0:
        raise InvalidInputError(f"duration {duration_s} s gives no samples")
    return n


def breath_envelope(n, sample_rate, rng, floor=0.15):
    """Smooth breathing-cycle envelope in ``[floor, 1]`` with a random period and phase."""
    period = rng.uniform(2.5, 4.0)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(n) / sample_rate
    return floor + (1 - floor) * 0.5 * (1 - np.cos(2 * np.pi * t / period + phase))


def synth_wheeze(duration_s, sample_rate=DEFAULT_SAMPLE_RATE, fundamental_hz=400.0, seed=0):
    """Tonal wheeze: fundamental plus two weak harmonics with slow pitch drift.

    The instantaneous frequency wobbles sinusoidally by up to 2% of the
    fundamental, so it never moves faster than 5% per second.
    """
    if not 100 <= fundamental_hz <= 2500:
        raise InvalidInputError(f"fundamental_hz must be in [100, 2500], got {fundamental_hz}")
    if fundamental_hz >= sample_rate / 2:
        raise InvalidInputError("fundamental is above the Nyquist frequency")
    rng = np.random.default_rng(seed)
    n = _n_samples(duration_s, sample_rate)
    t = np.arange(n) / sample_rate
    depth = 0.02
    rate_hz = rng.uniform(0.1, 0.3)
    drift_phase = rng.uniform(0, 2 * np.pi)
    freq = fundamental_hz * (1 + depth * np.sin(2 * np.pi * rate_hz * t + drift_phase))
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate + rng.uniform(0, 2 * np.pi)
    x = np.sin(phase)
    for h, amp in ((2, 0.15), (3, 0.07)):
        if h * fundamental_hz * (1 + depth) < sample_rate / 2:
            x += amp * np.sin(h * phase)
    x *= breath_envelope(n, sample_rate, rng)
    return AudioBuffer(0.3 * x / np.max(np.abs(x)), sample_rate)


def _band_noise(n, sample_rate, low, high, rng, order=2):
    sos = signal.butter(order, [low, min(high, 0.45 * sample_rate)], btype="bandpass", fs=sample_rate, output="sos")
    return signal.sosfilt(sos, rng.standard_normal(n))


def synth_breath(duration_s, sample_rate=DEFAULT_SAMPLE_RATE, seed=0):
    """Normal breath: broadband filtered noise under a breathing envelope."""
    rng = np.random.default_rng(seed)
    n = _n_samples(duration_s, sample_rate)
    x = _band_noise(n, sample_rate, 80.0, 3000.0, rng)
    x *= breath_envelope(n, sample_rate, rng)
    return AudioBuffer(0.3 * x / np.max(np.abs(x)), sample_rate)


def _siren(n, sample_rate, rng):
    # sawtooth sweep: frequency rises linearly within each period, then resets
    period = rng.uniform(0.8, 1.5)
    f_lo, f_hi = rng.uniform(500, 700), rng.uniform(1100, 1500)
    t = np.arange(n) / sample_rate
    frac = ((t / period) + rng.uniform()) % 1.0
    freq = f_lo + (f_hi - f_lo) * frac
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    return np.sin(phase) + 0.3 * np.sin(2 * phase)


def _babble(n, sample_rate, rng, talkers=5):
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    for _ in range(talkers):
        f0 = rng.uniform(100, 250)
        pitch = f0 * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 6.3)))
        phase = 2 * np.pi * np.cumsum(pitch) / sample_rate
        voiced = sum(np.sin(h * phase) / h for h in range(1, int(3000 / f0)))
        # syllable-rate on/off gating, smoothed
        gate = (rng.random(int(n / sample_rate * 4) + 2) < 0.6).astype(float)
        gate = np.interp(t * 4, np.arange(len(gate)), gate)
        sos = signal.butter(2, [300, 2500], btype="bandpass", fs=sample_rate, output="sos")
        out += signal.sosfilt(sos, voiced) * gate
    return out


def _street(n, sample_rate, rng):
    # low-frequency rumble (engines) plus slowly modulated broadband traffic
    t = np.arange(n) / sample_rate
    sos = signal.butter(2, 300, btype="lowpass", fs=sample_rate, output="sos")
    rumble = signal.sosfilt(sos, rng.standard_normal(n))
    rumble /= np.std(rumble)
    hiss = _band_noise(n, sample_rate, 100, 3500, rng)
    hiss /= np.std(hiss)
    mod = 1 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.05, 0.2) * t + rng.uniform(0, 6.3))
    return (rumble + 0.5 * hiss) * mod


def _tonal_interferer(n, sample_rate, rng):
    t = np.arange(n) / sample_rate
    f = rng.uniform(150, 900)
    x = np.sin(2 * np.pi * f * t + rng.uniform(0, 6.3))
    x += 0.5 * np.sin(2 * np.pi * 2 * f * t + rng.uniform(0, 6.3))
    return x + 0.05 * rng.standard_normal(n)


_NOISE_GENERATORS = {
    "siren": _siren,
    "babble": _babble,
    "broadband": lambda n, sr, rng: rng.standard_normal(n),
    "tonal_interferer": _tonal_interferer,
    "street_like": _street,
}


def synth_ambient_noise(kind, duration_s, sample_rate=DEFAULT_SAMPLE_RATE, seed=0):
    """Parametric proxy for an ambient noise type (see :data:`NOISE_KINDS`)."""
    if kind not in _NOISE_GENERATORS:
        raise InvalidInputError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    rng = np.random.default_rng(seed)
    x = _NOISE_GENERATORS[kind](_n_samples(duration_s, sample_rate), sample_rate, rng)
    return AudioBuffer(0.3 * x / np.max(np.abs(x)), sample_rate)


def synth_respiratory(label, duration_s, sample_rate=DEFAULT_SAMPLE_RATE, seed=0, fundamental_hz=None):
    """Clean respiratory source: breath, plus a wheeze when ``label == "wheeze"``."""
    if label not in LABELS:
        raise InvalidInputError(f"label must be one of {LABELS}, got {label!r}")
    rng = np.random.default_rng(seed)
    breath_seed, wheeze_seed = rng.integers(0, 2**31, size=2)
    x = synth_breath(duration_s, sample_rate, seed=breath_seed).samples
    if label == "wheeze":
        f0 = fundamental_hz if fundamental_hz is not None else rng.uniform(200.0, 1200.0)
        x = x + synth_wheeze(duration_s, sample_rate, f0, seed=wheeze_seed).samples
    return AudioBuffer(x, sample_rate)


BENCHMARK_DURATIONS = (60, 900)


def generate_benchmark_audio(duration_s, sample_rate=DEFAULT_SAMPLE_RATE, seed=0, snr=0.0):
    """Long labelled wheeze recording in street-like noise, for timing runs."""
    lo, hi = BENCHMARK_DURATIONS
    if not lo <= duration_s <= hi:
        raise InvalidInputError(f"duration must be within [{lo}, {hi}] s, got {duration_s}")
    source = synth_respiratory("wheeze", duration_s, sample_rate, seed=seed)
    noise = synth_ambient_noise("street_like", duration_s, sample_rate, seed=seed + 1)
    return mix_at_snr(MixtureSpec(source, noise, snr, label="wheeze"))


# --------------------------------------------------------------------------
# Corpus
# --------------------------------------------------------------------------


@dataclass
class CorpusItem:
    """Clean source and noise for one recording; mixed later at any SNR."""

    source: AudioBuffer
    noise: AudioBuffer
    label: str
    noise_kind: str
    seed: int
    snr_db: float = 0.0
    paths: dict = field(default_factory=dict)

    def mixture(self, snr_db=None):
        snr = self.snr_db if snr_db is None else snr_db
        return mix_at_snr(MixtureSpec(self.source, self.noise, snr, label=self.label))

    def manifest_entry(self):
        return {
            "paths": {k: str(v) for k, v in self.paths.items()},
            "label": self.label,
            "snr_db": self.snr_db,
            "noise_kind": self.noise_kind,
            "seed": self.seed,
        }


def synth_corpus(n_wheeze=20, n_normal=20, duration_s=4.0, sample_rate=DEFAULT_SAMPLE_RATE,
                 seed=0, noise_kinds=NOISE_KINDS, snr_db=0.0):
    """In-memory corpus; noise kinds are assigned round-robin within each class."""
    rng = np.random.default_rng(seed)
    items = []
    for label, count in (("wheeze", n_wheeze), ("normal", n_normal)):
        for i in range(count):
            item_seed = int(rng.integers(0, 2**31))
            kind = noise_kinds[i % len(noise_kinds)]
            items.append(CorpusItem(
                source=synth_respiratory(label, duration_s, sample_rate, seed=item_seed),
                noise=synth_ambient_noise(kind, duration_s, sample_rate, seed=item_seed + 1),
                label=label,
                noise_kind=kind,
                seed=item_seed,
                snr_db=snr_db,
            ))
    return items


def write_corpus(items, out_dir):
    """Write each item's source/noise WAVs and ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, item in enumerate(items):
        stem = f"{i:03d}_{item.label}_{item.noise_kind}"
        item.paths = {"source": out_dir / f"{stem}_source.wav", "noise": out_dir / f"{stem}_noise.wav"}
        save_wav(item.source, item.paths["source"])
        save_wav(item.noise, item.paths["noise"])
    entries = []
    for item in items:
        entry = item.manifest_entry()
        entry["paths"] = {k: Path(v).name for k, v in item.paths.items()}
        entries.append(entry)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2))
    return manifest


def load_manifest(path):
    """Read a manifest written by :func:`write_corpus`; relative paths resolve against it."""
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise InvalidInputError(f"{path}: manifest must be a JSON array")
    items = []
    for entry in entries:
        paths = {k: (path.parent / v if not Path(v).is_absolute() else Path(v)) for k, v in entry["paths"].items()}
        items.append(CorpusItem(
            source=load_wav(paths["source"]),
            noise=load_wav(paths["noise"]),
            label=entry["label"],
            noise_kind=entry["noise_kind"],
            seed=int(entry["seed"]),
            snr_db=float(entry.get("snr_db", 0.0)),
            paths=paths,
        ))
    return items
