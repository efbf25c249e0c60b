"""Seeded synthetic test audio (INT16, 16 kHz)."""

from __future__ import annotations

import numpy as np

from .frontend import SAMPLE_RATE


def _to_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), -32768, 32767).astype(np.int16)


def sine(freq_hz: float, duration_s: float, amplitude: float = 0.5, sr: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(int(round(duration_s * sr))) / sr
    return _to_int16(amplitude * 32767 * np.sin(2 * np.pi * freq_hz * t))


def tonal_bursts(duration_s: float, seed: int = 0, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Random tone bursts (100-600 ms, 150-6000 Hz) over a faint noise bed."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    x = rng.normal(0.0, 30.0, n)
    t0 = 0
    while t0 < n:
        length = int(rng.uniform(0.1, 0.6) * sr)
        gap = int(rng.uniform(0.02, 0.3) * sr)
        seg = np.arange(min(length, n - t0))
        f = rng.uniform(150, 6000)
        amp = 32767 * 10 ** (rng.uniform(-40, -6) / 20)
        env = np.hanning(len(seg)) if len(seg) > 1 else np.ones(len(seg))
        x[t0:t0 + len(seg)] += amp * env * np.sin(2 * np.pi * f * seg / sr + rng.uniform(0, 2 * np.pi))
        t0 += length + gap
    return _to_int16(x)


def random_clip(duration_s: float, seed: int = 0, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Mixture of harmonic bursts, chirps and coloured noise, at a random level."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    x = np.zeros(n)
    for _ in range(rng.integers(2, 7)):
        start = rng.integers(0, max(n - sr // 10, 1))
        length = min(int(rng.uniform(0.15, 1.5) * sr), n - start)
        seg = t[:length]
        kind = rng.integers(3)
        if kind == 0:
            f0 = rng.uniform(90, 400)
            y = sum(np.sin(2 * np.pi * f0 * h * seg) / h for h in range(1, 8) if f0 * h < sr / 2)
        elif kind == 1:
            f0, f1 = rng.uniform(100, 7000, size=2)
            y = np.sin(2 * np.pi * (f0 * seg + (f1 - f0) * seg ** 2 / (2 * seg[-1] + 1e-9)))
        else:
            y = np.cumsum(rng.normal(size=length)) * rng.uniform(0, 0.1) + rng.normal(size=length)
            y /= np.abs(y).max() + 1e-9
        x[start:start + length] += np.hanning(length) * y * 10 ** (rng.uniform(-30, 0) / 20)
    x += rng.normal(0, 10 ** (rng.uniform(-70, -40) / 20), n)
    peak = np.abs(x).max()
    level = 10 ** (rng.uniform(-30, -1) / 20)
    return _to_int16(x / (peak + 1e-12) * level * 32767)


def synthetic_features(n: int, seed: int = 0, frames: int = 498, db_floor: float = -80.0,
                       duration_s: float = 5.0) -> np.ndarray:
    """``n`` model inputs ``[n, 32, frames]`` from random clips; a stand-in calibration set.

    Each clip's spectrogram is cut to its leading ``frames`` columns before
    normalization.
    """
    from .features import to_model_input
    from .frontend import compute_spectrogram

    out = []
    for i in range(n):
        spec = compute_spectrogram(random_clip(duration_s, seed=seed + i)).values
        if spec.shape[1] < frames:
            raise ValueError(f"{duration_s} s clips give only {spec.shape[1]} frames")
        out.append(to_model_input(spec[:, :frames], db_floor))
    return np.stack(out)
