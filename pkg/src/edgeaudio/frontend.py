"""Fixed-point log-mel frontend.

Mirrors the microcontroller feature pipeline stage by stage:

    frame -> window (Q12) -> |FFT|^2 -> mel filterbank (Q12 weights)
          -> noise reduction -> optional PCAN gain -> integer log

Everything after the FFT is integer arithmetic, so a whole-file pass and a
hop-by-hop streaming pass produce bit-identical spectrograms.
"""

from __future__ import annotations

import dataclasses
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, SignalTooShort, StateError, WavFormatError

SAMPLE_RATE = 16000

WINDOW_BITS = 12
FILTERBANK_WEIGHT_BITS = 12
# Right shift applied to mel energies so a full-scale INT16 frame fits in UINT32.
ENERGY_SHIFT = 16
NOISE_REDUCTION_BITS = 14
PCAN_GAIN_BITS = 16
UINT32_MAX = (1 << 32) - 1
UINT16_MAX = (1 << 16) - 1

LOG_SCALE_LOG2 = 16
LOG_SCALE = 1 << LOG_SCALE_LOG2
LOG_SEGMENTS_LOG2 = 7
LOG_COEFF = 45426  # round(ln(2) * 2^16)


def _build_log_lut() -> np.ndarray:
    t = np.arange((1 << LOG_SEGMENTS_LOG2) + 1) / (1 << LOG_SEGMENTS_LOG2)
    return np.round((np.log2(1.0 + t) - t) * LOG_SCALE).astype(np.int64)


LOG_LUT = _build_log_lut()


@dataclass(frozen=True)
class PcmBuffer:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.dtype != np.int16:
            if np.issubdtype(samples.dtype, np.integer) and samples.size and (
                samples.min() < -32768 or samples.max() > 32767
            ):
                raise WavFormatError("samples exceed the INT16 range")
            samples = samples.astype(np.int16)
        if samples.ndim != 1:
            raise WavFormatError(f"expected mono samples, got shape {samples.shape}")
        if self.sample_rate_hz != SAMPLE_RATE:
            raise WavFormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FrontendConfig:
    window_ms: float = 25
    hop_ms: float = 10
    num_channels: int = 32
    lower_hz: float = 80.0
    upper_hz: float = 7600.0
    noise_reduction_enabled: bool = True
    smoothing_bits: int = 10
    even_smoothing: float = 0.025
    odd_smoothing: float = 0.06
    min_signal_remaining: float = 0.05
    pcan_enabled: bool = False
    pcan_strength: float = 0.95
    pcan_offset: float = 80.0
    log_scale_shift: int = 6
    window_kind: str = "kaiser"
    kaiser_beta: float = 6.0
    fft_size: int = 512
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.validate()

    @property
    def window_length(self) -> int:
        return int(round(self.window_ms * self.sample_rate_hz / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000))

    def validate(self) -> None:
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ConfigError(f"sample_rate_hz must be {SAMPLE_RATE}")
        n = self.fft_size
        if n <= 0 or n & (n - 1):
            raise ConfigError(f"fft_size must be a power of two, got {n}")
        if self.window_length > n:
            raise ConfigError(f"window of {self.window_length} samples exceeds fft_size {n}")
        if self.window_length <= 0 or self.hop_length <= 0:
            raise ConfigError("window and hop must be positive")
        if self.num_channels < 1:
            raise ConfigError("num_channels must be >= 1")
        if not 0 <= self.lower_hz < self.upper_hz <= self.sample_rate_hz / 2:
            raise ConfigError("need 0 <= lower_hz < upper_hz <= sample_rate/2")
        if not 0 < self.min_signal_remaining < 1:
            raise ConfigError("min_signal_remaining must lie in (0, 1)")
        for name in ("even_smoothing", "odd_smoothing"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0 <= self.smoothing_bits <= 16:
            raise ConfigError("smoothing_bits must lie in [0, 16]")
        if self.window_kind not in ("kaiser", "hann"):
            raise ConfigError(f"unknown window_kind {self.window_kind!r}")
        if self.pcan_strength < 0 or self.pcan_offset <= 0:
            raise ConfigError("pcan_strength must be >= 0 and pcan_offset > 0")
        if not 0 <= self.log_scale_shift <= 10:
            raise ConfigError("log_scale_shift must lie in [0, 10]")

    @classmethod
    def from_dict(cls, values: dict) -> "FrontendConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown frontend config keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class NoiseState:
    """Per-channel noise estimates, fixed point with ``smoothing_bits`` fraction bits."""

    estimate: np.ndarray

    @classmethod
    def zeros(cls, num_channels: int) -> "NoiseState":
        return cls(np.zeros(num_channels, dtype=np.uint64))

    def copy(self) -> "NoiseState":
        return NoiseState(self.estimate.copy())


@dataclass
class Spectrogram:
    values: np.ndarray  # uint16 [channels, frames], scaled log energies
    frame_duration_ms: float = 10.0

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# --------------------------------------------------------------------------- #
# tables


def window_coefficients(cfg: FrontendConfig) -> np.ndarray:
    """Window as Q12 integers."""
    n = cfg.window_length
    if cfg.window_kind == "hann":
        w = 0.5 - 0.5 * np.cos(2 * np.pi * (np.arange(n) + 0.5) / n)
    else:
        w = np.kaiser(n, cfg.kaiser_beta)
    return np.round(w * (1 << WINDOW_BITS)).astype(np.int64)


def hz_to_mel(hz):
    return 1127.0 * np.log1p(np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * np.expm1(np.asarray(mel, dtype=np.float64) / 1127.0)


def mel_weights(cfg: FrontendConfig) -> np.ndarray:
    """Triangular filters as Q12 integers, shape [num_channels, fft_size/2 + 1].

    Filter centers are equally spaced on the mel scale between ``lower_hz`` and
    ``upper_hz``; each triangle spans its two neighbouring centers.
    """
    n_bins = cfg.fft_size // 2 + 1
    edges = np.linspace(hz_to_mel(cfg.lower_hz), hz_to_mel(cfg.upper_hz), cfg.num_channels + 2)
    bin_mel = hz_to_mel(np.arange(n_bins) * cfg.sample_rate_hz / cfg.fft_size)
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_mel[None, :] - lo) / (ctr - lo)
    falling = (hi - bin_mel[None, :]) / (hi - ctr)
    w = np.clip(np.minimum(rising, falling), 0.0, None)
    return np.round(w * (1 << FILTERBANK_WEIGHT_BITS)).astype(np.uint64)


def channel_center_bins(cfg: FrontendConfig) -> np.ndarray:
    edges = np.linspace(hz_to_mel(cfg.lower_hz), hz_to_mel(cfg.upper_hz), cfg.num_channels + 2)
    centers_hz = mel_to_hz(edges[1:-1])
    return np.round(centers_hz * cfg.fft_size / cfg.sample_rate_hz).astype(int)


class _Tables:
    # Tables are immutable per config; cache them so streams can share.
    _cache: dict = {}

    @classmethod
    def get(cls, cfg: FrontendConfig):
        key = (cfg.window_kind, cfg.kaiser_beta, cfg.window_length, cfg.fft_size,
               cfg.num_channels, cfg.lower_hz, cfg.upper_hz)
        if key not in cls._cache:
            w = window_coefficients(cfg)
            fb = mel_weights(cfg)
            w.setflags(write=False)
            fb.setflags(write=False)
            cls._cache[key] = (w, fb)
        return cls._cache[key]


# --------------------------------------------------------------------------- #
# stages


def num_frames(num_samples: int, cfg: FrontendConfig) -> int:
    if num_samples < cfg.window_length:
        return 0
    return (num_samples - cfg.window_length) // cfg.hop_length + 1


def frame_signal(pcm: PcmBuffer | np.ndarray, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Split into overlapping frames, shape [num_frames, window_length] (int16)."""
    cfg = cfg or FrontendConfig()
    samples = pcm.samples if isinstance(pcm, PcmBuffer) else np.asarray(pcm, dtype=np.int16)
    n = num_frames(len(samples), cfg)
    if n == 0:
        raise SignalTooShort(
            f"{len(samples)} samples is shorter than one {cfg.window_length}-sample window"
        )
    starts = np.arange(n) * cfg.hop_length
    idx = starts[:, None] + np.arange(cfg.window_length)[None, :]
    return samples[idx]


def apply_window(frame: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    window, _ = _Tables.get(cfg)
    return (np.asarray(frame, dtype=np.int64) * window) >> WINDOW_BITS


def power_spectrum(frame: np.ndarray, cfg: FrontendConfig | None = None) -> np.ndarray:
    """|DFT|^2 of the windowed, zero-padded frame; ``fft_size/2 + 1`` float64 bins."""
    cfg = cfg or FrontendConfig()
    frame = np.asarray(frame)
    if frame.shape[-1] != cfg.window_length:
        raise ConfigError(f"frame length {frame.shape[-1]} != window length {cfg.window_length}")
    spec = np.fft.rfft(apply_window(frame, cfg).astype(np.float64), n=cfg.fft_size)
    return spec.real ** 2 + spec.imag ** 2


def mel_filterbank(power: np.ndarray, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Accumulate power bins into mel channels (uint64, power units)."""
    cfg = cfg or FrontendConfig()
    _, fb = _Tables.get(cfg)
    power = np.asarray(power)
    if power.shape[-1] != fb.shape[1]:
        raise ConfigError(f"expected {fb.shape[1]} power bins, got {power.shape[-1]}")
    p = np.floor(np.clip(power, 0.0, None)).astype(np.uint64)
    acc = p @ fb.T
    return acc >> np.uint64(FILTERBANK_WEIGHT_BITS)


def scale_energies(mel: np.ndarray) -> np.ndarray:
    out = np.asarray(mel, dtype=np.uint64) >> np.uint64(ENERGY_SHIFT)
    return np.minimum(out, np.uint64(UINT32_MAX))


def _q14(x: float) -> int:
    # truncating conversion, as the firmware does
    return int(x * (1 << NOISE_REDUCTION_BITS))


def noise_reduce(
    energies: np.ndarray, state: NoiseState, cfg: FrontendConfig | None = None
) -> tuple[np.ndarray, NoiseState]:
    """Spectral subtraction against a running per-channel noise estimate.

    Even channels smooth with ``even_smoothing``, odd ones with ``odd_smoothing``.
    The output never drops below ``min_signal_remaining`` of the input (to within
    one count of fixed-point rounding) and never exceeds it.
    """
    cfg = cfg or FrontendConfig()
    e = np.asarray(energies, dtype=np.uint64)
    if state.estimate.shape != e.shape:
        raise StateError(f"noise state has {state.estimate.shape} channels, energies {e.shape}")
    sb = np.uint64(cfg.smoothing_bits)
    nrb = np.uint64(NOISE_REDUCTION_BITS)
    smoothing = np.where(
        np.arange(e.shape[-1]) % 2 == 0, _q14(cfg.even_smoothing), _q14(cfg.odd_smoothing)
    ).astype(np.uint64)
    one_minus = np.uint64(1 << NOISE_REDUCTION_BITS) - smoothing

    scaled = e << sb
    estimate = (scaled * smoothing + state.estimate * one_minus) >> nrb
    capped = np.minimum(estimate, scaled)
    half = np.uint64(1 << (NOISE_REDUCTION_BITS - 1))
    floor = (e * np.uint64(_q14(cfg.min_signal_remaining)) + half) >> nrb
    subtracted = (scaled - capped) >> sb
    return np.maximum(subtracted, floor), NoiseState(estimate)


def pcan_gain(energies: np.ndarray, state: NoiseState, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Per-channel auto gain ``(offset / (offset + noise))**strength`` applied in Q16."""
    cfg = cfg or FrontendConfig()
    e = np.asarray(energies, dtype=np.uint64)
    if not cfg.pcan_enabled or cfg.pcan_strength == 0:
        return e.copy()
    noise = state.estimate.astype(np.float64) / (1 << cfg.smoothing_bits)
    gain = (cfg.pcan_offset / (cfg.pcan_offset + noise)) ** cfg.pcan_strength
    gain_q = np.round(gain * (1 << PCAN_GAIN_BITS)).astype(np.uint64)
    return (e * gain_q) >> np.uint64(PCAN_GAIN_BITS)


def log_compress(energy, cfg: FrontendConfig | None = None):
    """``round(ln(max(energy, 1)) * 2**log_scale_shift)`` with integer-only arithmetic.

    ln is evaluated as log2 (leading-bit position plus a 129-entry correction
    table with linear interpolation) times a Q16 ln(2) constant.  Accepts a
    scalar or an array of values in the UINT32 range.
    """
    cfg = cfg or FrontendConfig()
    scalar = np.ndim(energy) == 0
    x = np.atleast_1d(np.asarray(energy)).astype(np.int64)
    if (x < 0).any():
        raise ValueError("energies must be non-negative")
    x = np.minimum(x, UINT32_MAX)
    valid = x > 1
    xs = np.where(valid, x, 2)

    # exact for integers < 2^53
    integer = (np.frexp(xs.astype(np.float64))[1] - 1).astype(np.int64)
    frac = xs - (np.int64(1) << integer)
    up = np.clip(LOG_SCALE_LOG2 - integer, 0, None)
    down = np.clip(integer - LOG_SCALE_LOG2, 0, None)
    frac = (frac << up) >> down
    base_seg = frac >> (LOG_SCALE_LOG2 - LOG_SEGMENTS_LOG2)
    seg_unit = LOG_SCALE >> LOG_SEGMENTS_LOG2
    c0 = LOG_LUT[base_seg]
    c1 = LOG_LUT[base_seg + 1]
    rel_pos = ((c1 - c0) * (frac - seg_unit * base_seg)) >> (LOG_SCALE_LOG2 - LOG_SEGMENTS_LOG2)
    log2 = (integer << LOG_SCALE_LOG2) + frac + c0 + rel_pos
    rnd = LOG_SCALE // 2
    loge = (LOG_COEFF * log2 + rnd) >> LOG_SCALE_LOG2
    scaled = ((loge << cfg.log_scale_shift) + rnd) >> LOG_SCALE_LOG2
    out = np.where(valid, np.minimum(scaled, UINT16_MAX), 0).astype(np.uint16)
    return int(out[0]) if scalar else out


# --------------------------------------------------------------------------- #
# pipeline


class FrontendStream:
    """Incremental frontend: push samples in any chunking, get spectrogram columns.

    Holds the pending-sample buffer and the noise state, so one instance serves
    exactly one audio stream.
    """

    def __init__(self, cfg: FrontendConfig | None = None):
        self.cfg = cfg or FrontendConfig()
        self.noise = NoiseState.zeros(self.cfg.num_channels)
        self._pending = np.zeros(0, dtype=np.int16)
        self.frames_emitted = 0

    def reset(self) -> None:
        self.noise = NoiseState.zeros(self.cfg.num_channels)
        self._pending = np.zeros(0, dtype=np.int16)
        self.frames_emitted = 0

    def process_frame(self, frame: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        energies = scale_energies(mel_filterbank(power_spectrum(frame, cfg), cfg))
        if cfg.noise_reduction_enabled:
            energies, self.noise = noise_reduce(energies, self.noise, cfg)
        if cfg.pcan_enabled:
            energies = pcan_gain(energies, self.noise, cfg)
        self.frames_emitted += 1
        return log_compress(energies, cfg)

    def push(self, samples: np.ndarray) -> list[np.ndarray]:
        """Feed samples; returns the columns (uint16 [num_channels]) completed by them."""
        cfg = self.cfg
        self._pending = np.concatenate([self._pending, np.asarray(samples, dtype=np.int16)])
        out = []
        win, hop = cfg.window_length, cfg.hop_length
        start = 0
        while len(self._pending) - start >= win:
            out.append(self.process_frame(self._pending[start:start + win]))
            start += hop
        self._pending = self._pending[start:]
        return out


def compute_spectrogram(pcm: PcmBuffer | np.ndarray, cfg: FrontendConfig | None = None) -> Spectrogram:
    cfg = cfg or FrontendConfig()
    frames = frame_signal(pcm, cfg)
    stream = FrontendStream(cfg)
    cols = [stream.process_frame(f) for f in frames]
    return Spectrogram(np.stack(cols, axis=1), frame_duration_ms=cfg.hop_ms)


def stream_spectrogram(
    chunks: Iterable[np.ndarray], cfg: FrontendConfig | None = None
) -> Spectrogram:
    stream = FrontendStream(cfg)
    cols = [c for chunk in chunks for c in stream.push(chunk)]
    if not cols:
        raise SignalTooShort("stream ended before one full window")
    return Spectrogram(np.stack(cols, axis=1), frame_duration_ms=stream.cfg.hop_ms)


def iter_hops(samples: np.ndarray, hop: int = 160) -> Iterator[np.ndarray]:
    for i in range(0, len(samples), hop):
        yield samples[i:i + hop]


# --------------------------------------------------------------------------- #
# WAV I/O


def read_wav(path: str | Path, *, allow_stereo: bool = False) -> np.ndarray:
    """Read 16-bit PCM WAV at 16 kHz.  Returns int16 [n] or [n, channels]."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz (no resampling)")
    data = np.frombuffer(raw, dtype="<i2").astype(np.int16)
    if channels == 1:
        return data
    if not allow_stereo:
        raise WavFormatError(f"{path}: expected mono audio, got {channels} channels")
    return data.reshape(-1, channels)


def read_pcm(path: str | Path) -> PcmBuffer:
    return PcmBuffer(read_wav(path))


def write_wav(path: str | Path, samples: np.ndarray) -> None:
    samples = np.asarray(samples, dtype=np.int16)
    channels = 1 if samples.ndim == 1 else samples.shape[1]
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(samples.astype("<i2").tobytes())


def spectrogram_to_csv(spec: Spectrogram, path: str | Path) -> None:
    np.savetxt(path, spec.values, fmt="%d", delimiter=",")
