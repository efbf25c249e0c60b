"""Streaming inference loop over WAV input.

Audio is consumed in 10 ms hops.  Spectrogram columns accumulate until a
full 498-frame window exists; the window is normalized with the dB floor,
quantized, run through the model, dequantized and emitted as one event.
The column buffer then resets (windows do not overlap) while the frontend
keeps its noise state and pending samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ModelInputMismatch
from .features import DB_FLOOR_DEFAULT, to_model_input
from .frontend import FrontendConfig, FrontendStream, compute_spectrogram, iter_hops, read_wav
from .models import (EMOTION_CLASSES, EMOTION_FRAMES, KWS_FRAMES, NUM_MEL, build_model, init_weights,
                     load_model)
from .synth import synthetic_features
from .tensor.calibrate import quantize_graph
from .tensor.graph import ModelGraph, run

WINDOW_FRAMES = EMOTION_FRAMES
NON_OVERLAPPING = "NON_OVERLAPPING"


@dataclass
class RunConfig:
    model_path: str | None = None
    input_path: str | None = None
    output_path: str | None = None
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    quantized: bool = True
    db_floor: float = DB_FLOOR_DEFAULT
    window_policy: str = NON_OVERLAPPING

    def __post_init__(self):
        if not self.db_floor < 0:
            raise ConfigError(f"db_floor must be negative, got {self.db_floor}")
        if self.window_policy != NON_OVERLAPPING:
            raise ConfigError(f"unsupported window policy {self.window_policy!r}")
        for name in ("model_path", "input_path"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} {p!r} does not exist")

    @classmethod
    def from_dict(cls, d: dict, frontend: FrontendConfig | None = None) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - (set(cls.__dataclass_fields__) - {"frontend"})
        if unknown:
            raise ConfigError(f"unknown run fields: {sorted(unknown)}")
        return cls(frontend=frontend or FrontendConfig(), **d)


@dataclass
class WindowEvent:
    window_index: int
    start_frame: int
    probs: np.ndarray
    kind: str
    frame_ms: float = 10.0

    @property
    def start_s(self) -> float:
        return self.start_frame * self.frame_ms / 1000.0

    @property
    def end_s(self) -> float:
        return (self.start_frame + WINDOW_FRAMES) * self.frame_ms / 1000.0

    @property
    def label(self):
        if self.kind == "emotion":
            return EMOTION_CLASSES[int(self.probs.argmax())]
        return [int(i) for i in self.probs.argmax(axis=-1)]

    def to_dict(self) -> dict:
        return {"window": self.window_index, "start_s": round(self.start_s, 6),
                "end_s": round(self.end_s, 6), "kind": self.kind, "label": self.label,
                "probs": np.asarray(self.probs, dtype=np.float64).tolist()}


def model_kind(model: ModelGraph) -> str:
    """``"kws"`` or ``"emotion"``, checked against the input signature."""
    kind = model.metadata.get("kind")
    shape = tuple(next(iter(model.inputs.values()))) if len(model.inputs) == 1 else None
    expected = {"emotion": (NUM_MEL, EMOTION_FRAMES), "kws": (NUM_MEL, KWS_FRAMES, 1)}
    if kind not in expected or shape != expected[kind]:
        raise ModelInputMismatch(f"model kind {kind!r} with input {shape} is not a streaming model")
    return kind


def window_features(columns: np.ndarray, kind: str, db_floor: float) -> np.ndarray:
    """Model input for one (or a batch of) ``32 x 498`` count windows."""
    x = np.asarray(columns)
    if kind == "kws":
        x = x[..., :KWS_FRAMES]
    x = to_model_input(x, db_floor)
    return x[..., None] if kind == "kws" else x


class StreamState:
    """Pending samples, accumulated columns, noise state, model and event log."""

    def __init__(self, model: ModelGraph, frontend: FrontendConfig | None = None,
                 db_floor: float = DB_FLOOR_DEFAULT):
        frontend = frontend or FrontendConfig()
        if frontend.num_channels != NUM_MEL:
            raise ModelInputMismatch(f"frontend produces {frontend.num_channels} channels, "
                                     f"model expects {NUM_MEL}")
        self.model = model
        self.kind = model_kind(model)
        self.db_floor = db_floor
        self.frontend = FrontendStream(frontend)
        self.columns: list[np.ndarray] = []
        self.log: list[WindowEvent] = []
        self._frames_seen = 0

    @property
    def noise(self):
        return self.frontend.noise

    def push(self, samples: np.ndarray) -> list[WindowEvent]:
        """Feed one hop (or any chunk) of samples; returns events fired by it."""
        events = []
        for col in self.frontend.push(samples):
            self.columns.append(col)
            if len(self.columns) == WINDOW_FRAMES:
                events.append(self._infer())
        return events

    def _infer(self) -> WindowEvent:
        window = np.stack(self.columns, axis=1)
        probs = run(self.model, window_features(window, self.kind, self.db_floor))["probs"]
        ev = WindowEvent(len(self.log), self._frames_seen, probs, self.kind, self.frontend.cfg.hop_ms)
        self._frames_seen += WINDOW_FRAMES
        self.columns = []
        self.log.append(ev)
        return ev


def _check_model(model: ModelGraph, quantized: bool) -> None:
    if quantized and not model.is_quantized:
        raise ModelInputMismatch("run expects an INT8 model but the model is float")
    if not quantized and model.is_quantized:
        raise ModelInputMismatch("run expects a float model but the model is INT8")


def stream_samples(model: ModelGraph, samples: np.ndarray, frontend: FrontendConfig | None = None,
                   db_floor: float = DB_FLOOR_DEFAULT) -> list[WindowEvent]:
    state = StreamState(model, frontend, db_floor)
    hop = state.frontend.cfg.hop_length
    for chunk in iter_hops(np.asarray(samples, dtype=np.int16), hop):
        state.push(chunk)
    return state.log


def stream_run(cfg: RunConfig, model: ModelGraph | None = None) -> list[WindowEvent]:
    """Replay a WAV file through the streaming loop; writes a JSON-lines log if asked."""
    if model is None:
        if cfg.model_path is None:
            raise ConfigError("no model given")
        model = load_model(cfg.model_path)
    _check_model(model, cfg.quantized)
    if cfg.input_path is None:
        raise ConfigError("no input given")
    events = stream_samples(model, read_wav(cfg.input_path), cfg.frontend, cfg.db_floor)
    if cfg.output_path is not None:
        write_event_log(cfg.output_path, events)
    return events


def write_event_log(path, events: list[WindowEvent]) -> None:
    with open(path, "w") as f:
        for ev in events:
            f.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")


def batch_windows(model: ModelGraph, samples: np.ndarray, frontend: FrontendConfig | None = None,
                  db_floor: float = DB_FLOOR_DEFAULT) -> np.ndarray:
    """Whole-file reference: spectrogram, cut into non-overlapping windows, one batched run."""
    kind = model_kind(model)
    spec = compute_spectrogram(np.asarray(samples, dtype=np.int16), frontend).values
    n = spec.shape[1] // WINDOW_FRAMES
    if n == 0:
        return np.zeros((0,) + tuple(run_shape(model)))
    windows = spec[:, :n * WINDOW_FRAMES].reshape(spec.shape[0], n, WINDOW_FRAMES).transpose(1, 0, 2)
    return run(model, window_features(windows, kind, db_floor))["probs"]


def run_shape(model: ModelGraph) -> tuple:
    return tuple(model.shapes()["probs"])


def expected_windows(num_samples: int, frontend: FrontendConfig | None = None) -> int:
    from .frontend import num_frames
    return num_frames(num_samples, frontend or FrontendConfig()) // WINDOW_FRAMES


# --------------------------------------------------------------------------- #
# model preparation


def synthetic_inputs(arch: str, n: int, seed: int = 0, db_floor: float = DB_FLOOR_DEFAULT) -> np.ndarray:
    """Batch of model inputs from seeded random clips, shaped for ``arch``."""
    if arch == "kws":
        return synthetic_features(n, seed, KWS_FRAMES, db_floor)[..., None]
    if arch == "emotion":
        return synthetic_features(n, seed, EMOTION_FRAMES, db_floor)
    raise ConfigError(f"unknown architecture {arch!r}")


def build_initialized(arch: str, seed: int = 0, init_samples: int = 16) -> ModelGraph:
    """Build ``arch`` with seeded, data-dependent random weights (no training)."""
    try:
        g = build_model(arch)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    samples = synthetic_inputs(arch, init_samples, seed=10_000 + seed) if init_samples else None
    return init_weights(g, seed, samples)


def windows_from_wav(path, kind: str, frontend: FrontendConfig | None = None,
                     db_floor: float = DB_FLOOR_DEFAULT) -> np.ndarray:
    """All non-overlapping model-input windows of a WAV file."""
    spec = compute_spectrogram(read_wav(path), frontend).values
    n = spec.shape[1] // WINDOW_FRAMES
    windows = spec[:, :n * WINDOW_FRAMES].reshape(spec.shape[0], n, WINDOW_FRAMES).transpose(1, 0, 2)
    return window_features(windows, kind, db_floor)


def quantize_model(model: ModelGraph, samples) -> ModelGraph:
    return quantize_graph(model, samples)
