"""Dataset preparation: segmentation, labels, keyword curation and augmentation.

Works on user-supplied 16 kHz INT16 audio plus alignment / annotation CSV
files.  Every random step takes an explicit ``numpy.random.Generator`` so
results are reproducible given a seed.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import signal

from .errors import AlignmentError, ChannelError, ConfigError, CurationError, LabelError, StitchError
from .frontend import SAMPLE_RATE, PcmBuffer, Spectrogram
from .models import EMOTION_CLASSES

CLIP_SAMPLES = SAMPLE_RATE  # one-second keyword clip
UNKNOWN = "UNKNOWN"
NEGATIVE = "NEGATIVE"
# annotation vocabulary folded into the retained classes; anything else is dropped
EMOTION_MERGE = {"happy": "happy", "excited": "happy", "neutral": "neutral", "sad": "sad",
                 "angry": "angry", "none": "none"}


def _samples(pcm) -> np.ndarray:
    return pcm.samples if isinstance(pcm, PcmBuffer) else np.asarray(pcm)


def _to_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), -32768, 32767).astype(np.int16)


# --------------------------------------------------------------------------- #
# segmentation and channels


def segment_audio(pcm, window_s: float = 5.0, overlap_s: float = 1.0,
                  sr: int = SAMPLE_RATE) -> list[PcmBuffer]:
    """Fixed windows with the given overlap; a trailing partial window is dropped."""
    if window_s <= 0 or overlap_s < 0 or window_s <= overlap_s:
        raise ConfigError(f"need window > overlap >= 0, got window={window_s}, overlap={overlap_s}")
    x = _samples(pcm)
    win = int(round(window_s * sr))
    hop = int(round((window_s - overlap_s) * sr))
    return [PcmBuffer(x[s:s + win]) for s in range(0, len(x) - win + 1, hop)]


def expected_segments(duration_s: float, window_s: float = 5.0, overlap_s: float = 1.0) -> int:
    return max(0, int(np.floor((duration_s - window_s) / (window_s - overlap_s))) + 1)


def isolate_channels(stereo) -> tuple[PcmBuffer, PcmBuffer]:
    """Split an ``[n, 2]`` recording into two mono clips."""
    x = np.asarray(stereo)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ChannelError(f"expected a 2-channel [n, 2] array, got shape {x.shape}")
    return PcmBuffer(np.ascontiguousarray(x[:, 0])), PcmBuffer(np.ascontiguousarray(x[:, 1]))


# --------------------------------------------------------------------------- #
# labels


@dataclass(frozen=True)
class AnnotationRecord:
    clip_id: str
    votes: tuple[str, ...]

    def __post_init__(self):
        if len(self.votes) == 0:
            raise LabelError(f"clip {self.clip_id!r} has no votes")


@dataclass(frozen=True)
class SoftLabel:
    probs: np.ndarray
    classes: tuple[str, ...] = EMOTION_CLASSES

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (len(self.classes),) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise LabelError("soft label must be a non-negative distribution over the classes")
        object.__setattr__(self, "probs", p)

    @property
    def hard(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def label(self) -> str:
        return self.classes[self.hard]


def make_soft_label(votes, class_map: Mapping[str, str] | None = None,
                    classes: Sequence[str] = EMOTION_CLASSES) -> SoftLabel:
    """Vote fractions over the retained classes after merging.

    ``votes`` is an :class:`AnnotationRecord`, a sequence of vote strings,
    or a ``{emotion: count}`` mapping.  Votes for dropped classes are ignored.
    """
    class_map = EMOTION_MERGE if class_map is None else class_map
    if isinstance(votes, AnnotationRecord):
        votes = votes.votes
    counts = dict(votes) if isinstance(votes, Mapping) else {}
    if not isinstance(votes, Mapping):
        for v in votes:
            counts[v] = counts.get(v, 0) + 1
    index = {c: i for i, c in enumerate(classes)}
    tally = np.zeros(len(classes))
    for vote, n in counts.items():
        if n < 0:
            raise LabelError(f"negative vote count for {vote!r}")
        target = class_map.get(str(vote).strip().lower())
        if target is not None:
            if target not in index:
                raise LabelError(f"class map target {target!r} is not a known class")
            tally[index[target]] += n
    if tally.sum() == 0:
        raise LabelError("no votes for a retained class")
    return SoftLabel(tally / tally.sum(), tuple(classes))


# --------------------------------------------------------------------------- #
# keyword curation

_ENGLISH_WORD = re.compile(r"^[a-z]+(?:'[a-z]+)?$")


@dataclass
class CurationResult:
    keywords: list[str]
    classes: list[str]
    downsample: dict[str, int]
    dropped: dict[str, str]

    def to_dict(self) -> dict:
        return asdict(self)


def curate_keywords(word_freq_per_emotion: Mapping[str, Mapping[str, int]], stopwords: Iterable[str],
                    min_count: int = 2000, max_count: int = 20000, top_k: int = 100,
                    instance_counts: Mapping[str, int] | None = None) -> CurationResult:
    """Top-k words per emotion, cleaned and thresholded by instance count.

    ``instance_counts`` gives the number of usable audio instances per word
    (defaults to the word's total frequency across emotions).  Words under
    ``min_count`` are dropped; words over ``max_count`` are kept with a
    downsampling target.  The class set is the sorted keywords followed by
    UNKNOWN and NEGATIVE.
    """
    if min_count > max_count:
        raise ConfigError("min_count must not exceed max_count")
    stop = {w.strip().lower() for w in stopwords}
    totals: dict[str, int] = {}
    candidates: set[str] = set()
    for table in word_freq_per_emotion.values():
        for w, n in table.items():
            totals[w.lower()] = totals.get(w.lower(), 0) + int(n)
        ranked = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        candidates.update(w.lower() for w, _ in ranked)
    counts = {w.lower(): int(n) for w, n in instance_counts.items()} if instance_counts else totals
    keep, dropped, down = [], {}, {}
    for w in sorted(candidates):
        if w in stop:
            dropped[w] = "stopword"
        elif not _ENGLISH_WORD.match(w):
            dropped[w] = "not an English word"
        elif counts.get(w, 0) < min_count:
            dropped[w] = f"only {counts.get(w, 0)} instances"
        else:
            keep.append(w)
            if counts[w] > max_count:
                down[w] = max_count
    if not keep:
        raise CurationError("no keywords survive curation")
    return CurationResult(keep, keep + [UNKNOWN, NEGATIVE], down, dropped)


# --------------------------------------------------------------------------- #
# keyword clips


@dataclass(frozen=True)
class AlignmentRecord:
    word: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise AlignmentError(f"bad alignment for {self.word!r}: start={self.start_s}, end={self.end_s}")


def extract_keyword_clip(pcm, alignment: AlignmentRecord, duration_s: float = 1.0,
                         sr: int = SAMPLE_RATE) -> PcmBuffer:
    """Window of ``duration_s`` centred on the word midpoint, zero-padded at the edges."""
    x = _samples(pcm)
    if alignment.end_s * sr > len(x) + 1e-6:
        raise AlignmentError(f"{alignment.word!r} ends at {alignment.end_s} s, past the "
                             f"{len(x) / sr:.3f} s clip")
    n = int(round(duration_s * sr))
    centre = int(round(0.5 * (alignment.start_s + alignment.end_s) * sr))
    start = centre - n // 2
    out = np.zeros(n, dtype=np.int16)
    lo, hi = max(start, 0), min(start + n, len(x))
    if hi > lo:
        out[lo - start:hi - start] = x[lo:hi]
    return PcmBuffer(out)


def stitch_five(clips: Sequence) -> PcmBuffer:
    """Concatenate five one-second clips into one five-second clip."""
    if len(clips) != 5:
        raise StitchError(f"need exactly 5 clips, got {len(clips)}")
    arrays = [_samples(c) for c in clips]
    for i, a in enumerate(arrays):
        if a.ndim != 1 or len(a) != CLIP_SAMPLES:
            raise StitchError(f"clip {i} has {len(a)} samples, expected {CLIP_SAMPLES}")
    return PcmBuffer(np.concatenate(arrays))


# --------------------------------------------------------------------------- #
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    shift_ms: float = 100.0
    noise_prob: float = 0.8
    snr_db_range: tuple[float, float] = (0.0, 15.0)
    pitch_prob: float = 0.3
    pitch_semitones: tuple[float, float] = (1.0, 2.0)
    rir_prob: float = 0.0
    gaussian_prob: float = 0.0
    gaussian_sigma: float = 5e-3
    n_time_masks: int = 2
    time_mask_max: int = 20
    time_mask_prob: float = 1.0
    n_freq_masks: int = 2
    freq_mask_max: int = 7
    freq_mask_prob: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("noise_prob", "pitch_prob", "rir_prob", "gaussian_prob",
                     "time_mask_prob", "freq_mask_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        for name in ("snr_db_range", "pitch_semitones"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is empty: {lo} > {hi}")
        if self.shift_ms < 0 or self.gaussian_sigma < 0:
            raise ConfigError("shift and sigma must be non-negative")
        if min(self.n_time_masks, self.time_mask_max, self.n_freq_masks, self.freq_mask_max) < 0:
            raise ConfigError("mask counts and widths must be non-negative")

    @classmethod
    def kws(cls, **kw) -> "AugmentConfig":
        """Keyword-clip preset: shift, noise, pitch, reverb; 2+2 spectrogram masks."""
        return cls(**{"rir_prob": 1.0, **kw})

    @classmethod
    def emotion(cls, **kw) -> "AugmentConfig":
        """Emotion preset: gaussian noise, background noise, reverb; one mask of each kind."""
        base = dict(shift_ms=0.0, noise_prob=0.2, pitch_prob=0.0, rir_prob=0.1, gaussian_prob=0.15,
                    n_time_masks=1, time_mask_max=50, time_mask_prob=0.2,
                    n_freq_masks=1, freq_mask_max=4, freq_mask_prob=0.2)
        return cls(**{**base, **kw})

    @classmethod
    def identity(cls, **kw) -> "AugmentConfig":
        base = dict(shift_ms=0.0, noise_prob=0.0, pitch_prob=0.0, rir_prob=0.0, gaussian_prob=0.0,
                    n_time_masks=0, n_freq_masks=0)
        return cls(**{**base, **kw})

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown augment fields: {sorted(unknown)}")
        for k in ("snr_db_range", "pitch_semitones"):
            if k in d:
                d[k] = tuple(d[k])
        factory = {None: cls, "kws": cls.kws, "emotion": cls.emotion, "identity": cls.identity}.get(preset)
        if factory is None:
            raise ConfigError(f"unknown augment preset {preset!r}")
        return factory(**d)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x)) if x.size else 0.0


def noise_gain(signal_power: float, noise_power: float, snr_db: float) -> float:
    """Gain ``g`` with ``10*log10(P_sig / (g^2 P_noise)) == snr_db``."""
    if signal_power <= 0 or noise_power <= 0:
        return 0.0
    return float(np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(x: np.ndarray, noise: np.ndarray, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x + g*noise, g*noise)`` in float."""
    x = np.asarray(x, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    scaled = noise_gain(power(x), power(noise), snr_db) * noise
    return x + scaled, scaled


def _fit_length(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(noise) == 0:
        raise ConfigError("noise clip is empty")
    if len(noise) < n:
        noise = np.tile(noise, -(-n // len(noise)))
    off = int(rng.integers(0, len(noise) - n + 1))
    return noise[off:off + n]


def pitch_shift(x: np.ndarray, semitones: float) -> np.ndarray:
    """Resample by 2^(st/12) and crop or zero-pad back to the original length."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    m = max(int(round(n / 2.0 ** (semitones / 12.0))), 1)
    y = signal.resample(x, m)
    if m >= n:
        off = (m - n) // 2
        return y[off:off + n]
    out = np.zeros(n)
    off = (n - m) // 2
    out[off:off + m] = y
    return out


def apply_rir(x: np.ndarray, rir: np.ndarray) -> np.ndarray:
    """Convolve with a room response, keep the length and the input RMS."""
    x = np.asarray(x, dtype=np.float64)
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 0 or not np.any(rir):
        raise ConfigError("room impulse response is empty or silent")
    y = signal.fftconvolve(x, rir)[:len(x)]
    p_in, p_out = power(x), power(y)
    return y * np.sqrt(p_in / p_out) if p_out > 0 else y


def augment_waveform(pcm, cfg: AugmentConfig, rng: np.random.Generator | None = None,
                     noise_bank: Sequence[np.ndarray] | None = None,
                     rir_bank: Sequence[np.ndarray] | None = None,
                     log: list | None = None) -> PcmBuffer:
    """shift -> noise at SNR -> pitch -> reverb -> gaussian noise, each gated by its probability.

    Applied steps and their drawn parameters are appended to ``log``.
    """
    if cfg.noise_prob > 0 and not noise_bank:
        raise ConfigError("noise_prob > 0 but no noise bank was supplied")
    if cfg.rir_prob > 0 and not rir_bank:
        raise ConfigError("rir_prob > 0 but no impulse responses were supplied")
    rng = cfg.rng() if rng is None else rng
    log = [] if log is None else log
    x = _samples(pcm).astype(np.float64)
    n = len(x)
    max_shift = int(round(cfg.shift_ms * SAMPLE_RATE / 1000))
    if max_shift > 0:
        s = int(rng.integers(-max_shift, max_shift + 1))
        y = np.zeros_like(x)
        if s >= 0:
            y[s:] = x[:n - s]
        else:
            y[:n + s] = x[-s:]
        x = y
        log.append({"op": "shift", "samples": s})
    if rng.random() < cfg.noise_prob:
        k = int(rng.integers(len(noise_bank)))
        snr = float(rng.uniform(*cfg.snr_db_range))
        x, _ = mix_at_snr(x, _fit_length(np.asarray(noise_bank[k], dtype=np.float64), n, rng), snr)
        log.append({"op": "noise", "index": k, "snr_db": snr})
    if rng.random() < cfg.pitch_prob:
        st = float(rng.uniform(*cfg.pitch_semitones)) * (1 if rng.random() < 0.5 else -1)
        x = pitch_shift(x, st)
        log.append({"op": "pitch", "semitones": st})
    if rng.random() < cfg.rir_prob:
        k = int(rng.integers(len(rir_bank)))
        x = apply_rir(x, rir_bank[k])
        log.append({"op": "rir", "index": k})
    if rng.random() < cfg.gaussian_prob:
        x = x + rng.normal(0.0, cfg.gaussian_sigma * 32768.0, n)
        log.append({"op": "gaussian", "sigma": cfg.gaussian_sigma})
    return PcmBuffer(_to_int16(x))


def spec_augment(spec, cfg: AugmentConfig, rng: np.random.Generator | None = None,
                 log: list | None = None):
    """Zero ``n_time_masks`` time bands and ``n_freq_masks`` channel bands.

    Each mask is present with its configured probability and has a width
    drawn uniformly from ``[1, max]``.  Accepts a :class:`Spectrogram` or a
    ``[channels, frames]`` array and returns the same type.
    """
    rng = cfg.rng() if rng is None else rng
    log = [] if log is None else log
    values = spec.values if isinstance(spec, Spectrogram) else np.asarray(spec)
    if values.ndim != 2:
        raise ConfigError(f"expected a [channels, frames] spectrogram, got shape {values.shape}")
    channels, frames = values.shape
    out = values.copy()
    for axis, count, width, prob, size in (("time", cfg.n_time_masks, cfg.time_mask_max, cfg.time_mask_prob, frames),
                                           ("freq", cfg.n_freq_masks, cfg.freq_mask_max, cfg.freq_mask_prob, channels)):
        if count == 0 or width == 0:
            continue
        if width >= size:
            raise ConfigError(f"{axis} mask width {width} must be smaller than the dimension {size}")
        for _ in range(count):
            if rng.random() >= prob:
                continue
            w = int(rng.integers(1, width + 1))
            s = int(rng.integers(0, size - w + 1))
            if axis == "time":
                out[:, s:s + w] = 0
            else:
                out[s:s + w, :] = 0
            log.append({"op": f"{axis}_mask", "start": s, "width": w})
    if isinstance(spec, Spectrogram):
        return Spectrogram(out, spec.frame_duration_ms)
    return out


# --------------------------------------------------------------------------- #
# files


def read_alignments(path: str | Path) -> list[AlignmentRecord]:
    """CSV rows ``word,start_s,end_s``; a header row is optional."""
    out = []
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row or row[0].startswith("#"):
                continue
            if i == 0 and row[0].strip().lower() == "word":
                continue
            if len(row) < 3:
                raise AlignmentError(f"{path}:{i + 1}: expected word,start_s,end_s")
            try:
                out.append(AlignmentRecord(row[0].strip(), float(row[1]), float(row[2])))
            except ValueError as exc:
                raise AlignmentError(f"{path}:{i + 1}: {exc}") from exc
    return out


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    """CSV rows ``clip_id,vote,vote,...``; a header row starting with clip_id is skipped."""
    out = []
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row or row[0].startswith("#"):
                continue
            if i == 0 and row[0].strip().lower() == "clip_id":
                continue
            votes = tuple(v.strip() for v in row[1:] if v.strip())
            out.append(AnnotationRecord(row[0].strip(), votes))
    return out


def read_word_frequencies(path: str | Path) -> dict[str, dict[str, int]]:
    """CSV rows ``emotion,word,count`` into per-emotion frequency tables."""
    tables: dict[str, dict[str, int]] = {}
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row or (i == 0 and row[0].strip().lower() == "emotion"):
                continue
            if len(row) != 3:
                raise CurationError(f"{path}:{i + 1}: expected emotion,word,count")
            tables.setdefault(row[0].strip(), {})[row[1].strip()] = int(row[2])
    return tables


@dataclass
class ManifestRecord:
    path: str
    label: list[float]
    split: str = "train"
    classes: list[str] = field(default_factory=lambda: list(EMOTION_CLASSES))
    augmentations: list[dict] = field(default_factory=list)
    source: str | None = None


def write_manifest(path: str | Path, records: Iterable[ManifestRecord]) -> int:
    """JSON lines, one record per clip; returns the number written."""
    n = 0
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")
            n += 1
    return n


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    with open(path) as f:
        return [ManifestRecord(**json.loads(line)) for line in f if line.strip()]
