"""Batch-norm folding, min/max calibration and INT8 graph conversion."""

from __future__ import annotations

import numpy as np

from ..errors import CalibrationError, GraphError
from . import ops
from .graph import ATTENTION_AUX, LayerKind, ModelGraph, run
from .quant import QuantParams, activation_params, quantize_bias, quantize_weight

K = LayerKind
FOLDABLE = {K.CONV2D, K.DEPTHWISE_CONV2D, K.DENSE}
MAC_KINDS = FOLDABLE


def fold_batchnorms(graph: ModelGraph) -> ModelGraph:
    """Return a copy with every BATCHNORM that directly follows a conv/dense folded into it."""
    g = graph.copy()
    rename: dict[str, str] = {}
    keep = []
    by_name = {n.name: n for n in g.nodes}
    for node in g.nodes:
        node.inputs = [rename.get(i, i) for i in node.inputs]
        if node.kind == K.BATCHNORM:
            prev = by_name.get(node.inputs[0])
            sole = prev is not None and sum(node.inputs[0] in n.inputs for n in g.nodes) == 1
            if prev is not None and prev.kind in FOLDABLE and sole and prev.name not in graph.outputs:
                w = node.weights
                k, b = ops.fold_batchnorm(prev.weights["kernel"], prev.weights.get("bias"),
                                          w["gamma"], w["beta"], w["mean"], w["var"],
                                          node.attrs.get("eps", ops.BN_EPSILON))
                prev.weights["kernel"] = k.astype(np.float32)
                prev.weights["bias"] = b.astype(np.float32)
                rename[node.name] = prev.name
                continue
        keep.append(node)
    g.nodes = keep
    g.outputs = [rename.get(o, o) for o in g.outputs]
    return g


def _batch(samples) -> np.ndarray | dict:
    if isinstance(samples, dict):
        return samples
    arr = np.asarray(samples) if not isinstance(samples, list) else np.stack(samples)
    return arr


def calibrate(graph: ModelGraph, samples, chunk_size: int = 8) -> dict[str, QuantParams]:
    """Per-tensor activation params from observed float ranges.

    ``samples`` is a batch (leading axis) for single-input graphs or a dict
    of batches.  Attention internals are recorded as ``"<node>:q"`` etc.
    """
    batch = _batch(samples)
    first = next(iter(batch.values())) if isinstance(batch, dict) else batch
    if len(first) == 0:
        raise CalibrationError("calibration set is empty")
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}

    def observe(name, t):
        t_lo, t_hi = float(np.min(t)), float(np.max(t))
        lo[name] = min(lo.get(name, t_lo), t_lo)
        hi[name] = max(hi.get(name, t_hi), t_hi)

    run(graph, batch, observer=observe, chunk_size=chunk_size)
    for name in lo:
        if not (np.isfinite(lo[name]) and np.isfinite(hi[name])):
            raise CalibrationError(f"non-finite activation range for {name!r}")
    return {name: activation_params(lo[name], hi[name]) for name in lo}


FUSIBLE = MAC_KINDS | {K.ADD}


def fuse_activations(graph: ModelGraph, quant: dict[str, QuantParams]) -> dict[str, QuantParams]:
    """Give a conv/dense/add followed only by RELU6 the RELU6 output params.

    Requantizing the pre-activation straight into the ``[0, 6]`` range
    clamps exactly like the activation does, so the RELU6 becomes an exact
    identity in the integer domain and a lossy intermediate rounding step
    disappears.
    """
    out = dict(quant)
    producers = {n.name: n for n in graph.nodes}
    for node in graph.nodes:
        if node.kind != K.RELU6:
            continue
        src = producers.get(node.inputs[0])
        if (src is None or src.kind not in FUSIBLE or src.name in graph.outputs
                or len(graph.consumers(src.name)) != 1 or node.name not in out):
            continue
        out[src.name] = out[node.name]
    return out


PASS_THROUGH = {K.MAXPOOL2D, K.RESHAPE, K.TRANSPOSE, K.SLICE}


def share_pass_through(graph: ModelGraph, quant: dict[str, QuantParams]) -> dict[str, QuantParams]:
    """Give max-pool / reshape / transpose / slice outputs their input's params.

    These ops only select or move values, so with shared params they are
    exact in the integer domain (no second rounding).
    """
    out = dict(quant)
    for node in graph.nodes:
        if node.kind in PASS_THROUGH and node.inputs[0] in out:
            out[node.name] = out[node.inputs[0]]
    return out


def quantize_graph(graph: ModelGraph, samples=None, quant: dict[str, QuantParams] | None = None
                   ) -> ModelGraph:
    """Fold batch norms, calibrate on ``samples`` (unless ``quant`` is given) and
    convert weights to INT8 (kernels) / INT32 (MAC biases)."""
    if graph.is_quantized:
        raise GraphError("graph is already quantized")
    g = fold_batchnorms(graph)
    if quant is None:
        if samples is None:
            raise CalibrationError("need calibration samples or explicit quant params")
        quant = calibrate(g, samples)
    g.quant = share_pass_through(g, fuse_activations(g, quant))
    g.weight_quant = {}
    for node in g.nodes:
        if node.name not in g.quant or any(i not in g.quant for i in node.inputs):
            raise CalibrationError(f"no quant params for {node.name!r} or its inputs")
        new_w = {}
        if node.kind in MAC_KINDS:
            in_scale = g.quant[node.inputs[0]].scale
            kq, kqp = quantize_weight(node.weights["kernel"])
            new_w["kernel"] = kq
            g.weight_quant[f"{node.name}/kernel"] = kqp
            if "bias" in node.weights:
                bq, bqp = quantize_bias(node.weights["bias"], in_scale, kqp.scale)
                new_w["bias"] = bq
                g.weight_quant[f"{node.name}/bias"] = bqp
        elif node.kind == K.ATTENTION_SINGLE_HEAD:
            for aux in ATTENTION_AUX:
                if f"{node.name}:{aux}" not in g.quant:
                    raise CalibrationError(f"no quant params for attention internal {node.name}:{aux}")
            for p in ("q", "k", "v", "o"):
                in_scale = g.quant[node.inputs[0] if p != "o" else f"{node.name}:ctx"].scale
                kq, kqp = quantize_weight(node.weights[f"w{p}"])
                bq, bqp = quantize_bias(node.weights[f"b{p}"], in_scale, kqp.scale)
                new_w[f"w{p}"], new_w[f"b{p}"] = kq, bq
                g.weight_quant[f"{node.name}/w{p}"] = kqp
                g.weight_quant[f"{node.name}/b{p}"] = bqp
        else:
            for wname, w in node.weights.items():
                q, qp = quantize_weight(w)
                new_w[wname] = q
                g.weight_quant[f"{node.name}/{wname}"] = qp
        node.weights = new_w
    # keep only params of tensors that exist (inputs, nodes, attention internals)
    g.metadata = dict(g.metadata, quantized=True)
    return g
