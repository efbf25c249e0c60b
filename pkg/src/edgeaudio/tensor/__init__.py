"""Tensor engine: float kernels, quantization primitives, graph IR and executor."""

from .graph import LayerKind, ModelGraph, Node, run
from .quant import QuantParams, dequantize, quantize

__all__ = ["LayerKind", "ModelGraph", "Node", "QuantParams", "dequantize", "quantize", "run"]
