"""Per-tensor affine quantization primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE_RANGES = {
    "int8": (-128, 127),
    "int16": (-32768, 32767),
    "int32": (-(2 ** 31), 2 ** 31 - 1),
}
NP_DTYPES = {"int8": np.int8, "int16": np.int16, "int32": np.int32}

SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class QuantParams:
    """``real = scale * (q - zero_point)``."""

    scale: float
    zero_point: int = 0
    dtype: str = "int8"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        lo, hi = DTYPE_RANGES[self.dtype]
        if not lo <= self.zero_point <= hi:
            raise ValueError(f"zero_point {self.zero_point} outside {self.dtype} range")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @property
    def qmin(self) -> int:
        return DTYPE_RANGES[self.dtype][0]

    @property
    def qmax(self) -> int:
        return DTYPE_RANGES[self.dtype][1]

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point, "dtype": self.dtype}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(float(d["scale"]), int(d["zero_point"]), d.get("dtype", "int8"))


def quantize(x, qp: QuantParams) -> np.ndarray:
    """``clamp(round(x / scale) + zero_point)`` in the dtype's range."""
    q = np.rint(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, qp.qmin, qp.qmax).astype(NP_DTYPES[qp.dtype])


def dequantize(q, qp: QuantParams) -> np.ndarray:
    return qp.scale * (np.asarray(q, dtype=np.float64) - qp.zero_point)


def requantize(real: np.ndarray, qp: QuantParams) -> np.ndarray:
    return quantize(real, qp)


def activation_params(lo: float, hi: float) -> QuantParams:
    """Asymmetric INT8 params covering ``[min(lo, 0), max(hi, 0)]``."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if hi - lo <= 0:
        return QuantParams(SCALE_FLOOR, 0)
    scale = max((hi - lo) / 255.0, SCALE_FLOOR)
    zp = int(np.clip(np.rint(-128 - lo / scale), -128, 127))
    return QuantParams(scale, zp)


def weight_params(w) -> QuantParams:
    """Symmetric INT8 params (zero point 0, range +-127)."""
    m = float(np.max(np.abs(w))) if np.size(w) else 0.0
    return QuantParams(max(m / 127.0, SCALE_FLOOR), 0)


def quantize_weight(w) -> tuple[np.ndarray, QuantParams]:
    qp = weight_params(w)
    return np.clip(np.rint(np.asarray(w, np.float64) / qp.scale), -127, 127).astype(np.int8), qp


def quantize_bias(b, input_scale: float, weight_scale: float) -> tuple[np.ndarray, QuantParams]:
    qp = QuantParams(input_scale * weight_scale, 0, "int32")
    return quantize(b, qp), qp
