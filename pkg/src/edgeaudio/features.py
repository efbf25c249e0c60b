"""Conversion of fixed-point log-mel counts into model input features.

A count ``c`` encodes ``64 * ln(E)`` of a channel energy ``E``, so the
energy in decibels is ``c / 64 * 10 / ln(10)``.  Within one model window,
decibels are referenced to the window maximum, floored at ``db_floor``
below it and mapped linearly onto ``[0, 1]`` (the usual ``top_db``
convention).  Streaming inference applies the same mapping to each
window, so streamed and batch results agree.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .frontend import Spectrogram

LOG_SCALE_SHIFT_DEFAULT = 6

DB_FLOOR_DEFAULT = -80.0


def counts_to_db(counts, log_scale_shift: int = LOG_SCALE_SHIFT_DEFAULT) -> np.ndarray:
    return np.asarray(counts, np.float64) / (1 << log_scale_shift) * (10.0 / math.log(10.0))


def to_model_input(spec: Spectrogram | np.ndarray, db_floor: float = DB_FLOOR_DEFAULT,
                   log_scale_shift: int = LOG_SCALE_SHIFT_DEFAULT) -> np.ndarray:
    """Map counts ``[..., channels, frames]`` to float32 features in ``[0, 1]``.

    The reference maximum is taken over the last two axes, so a batch of
    windows is normalized window by window.
    """
    if not db_floor < 0:
        raise ConfigError(f"db_floor must be negative, got {db_floor}")
    values = spec.values if isinstance(spec, Spectrogram) else spec
    db = counts_to_db(values, log_scale_shift)
    ref = db.max(axis=(-2, -1), keepdims=True)
    db = np.maximum(db, ref + db_floor)
    return ((db - ref) / -db_floor + 1.0).astype(np.float32)
