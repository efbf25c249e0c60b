"""Layer-graph IR, static shape inference and the float / INT8 executor."""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..errors import GraphError, ShapeError
from . import ops
from .quant import QuantParams, dequantize, quantize


class LayerKind(str, enum.Enum):
    CONV2D = "CONV2D"
    DEPTHWISE_CONV2D = "DEPTHWISE_CONV2D"
    DENSE = "DENSE"
    RELU6 = "RELU6"
    MAXPOOL2D = "MAXPOOL2D"
    AVGPOOL2D = "AVGPOOL2D"
    GLOBAL_AVG_POOL = "GLOBAL_AVG_POOL"
    SOFTMAX = "SOFTMAX"
    LAYER_NORM = "LAYER_NORM"
    ATTENTION_SINGLE_HEAD = "ATTENTION_SINGLE_HEAD"
    ADD = "ADD"
    MUL = "MUL"
    SUB = "SUB"
    CONCAT = "CONCAT"
    RESHAPE = "RESHAPE"
    TRANSPOSE = "TRANSPOSE"
    SLICE = "SLICE"
    SIGMOID = "SIGMOID"
    POS_ENCODING = "POS_ENCODING"
    BATCHNORM = "BATCHNORM"
    # present in the IR but not accelerator-supported by default
    SQUARED_DIFFERENCE = "SQUARED_DIFFERENCE"
    SUB_SPECTRAL_NORM = "SUB_SPECTRAL_NORM"

    def __str__(self) -> str:
        return self.value


K = LayerKind

UNARY_SAME_SHAPE = {K.RELU6, K.SIGMOID, K.SOFTMAX, K.LAYER_NORM, K.POS_ENCODING,
                    K.BATCHNORM, K.SUB_SPECTRAL_NORM, K.ATTENTION_SINGLE_HEAD}
BINARY = {K.ADD, K.SUB, K.MUL, K.SQUARED_DIFFERENCE}
LAYOUT = {K.RESHAPE, K.TRANSPOSE, K.SLICE}
ATTENTION_AUX = ("q", "k", "v", "ctx")

Shape = tuple


@dataclass
class Node:
    name: str
    kind: LayerKind
    inputs: list[str]
    attrs: dict = field(default_factory=dict)
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = LayerKind(self.kind)

    @property
    def param_count(self) -> int:
        return int(sum(w.size for w in self.weights.values()))


@dataclass
class ModelGraph:
    name: str
    inputs: dict[str, Shape]
    nodes: list[Node]
    outputs: list[str]
    metadata: dict = field(default_factory=dict)
    # activation quant params per tensor name (and "<node>:<aux>" internals)
    quant: dict[str, QuantParams] = field(default_factory=dict)
    # weight quant params keyed "<node>/<weight>"
    weight_quant: dict[str, QuantParams] = field(default_factory=dict)
    batch: int = 1

    @property
    def is_quantized(self) -> bool:
        return bool(self.quant)

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def param_count(self) -> int:
        return sum(n.param_count for n in self.nodes)

    def weight_items(self) -> Iterable[tuple[str, np.ndarray]]:
        for n in self.nodes:
            for wname, w in n.weights.items():
                yield f"{n.name}/{wname}", w

    def consumers(self, tensor: str) -> list[Node]:
        return [n for n in self.nodes if tensor in n.inputs]

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)

    def check_structure(self) -> None:
        """Raise GraphError on duplicate names, dangling inputs or non-topological order."""
        seen = set(self.inputs)
        for n in self.nodes:
            if n.name in seen:
                raise GraphError(f"duplicate tensor name {n.name!r}")
            for i in n.inputs:
                if i not in seen:
                    raise GraphError(f"node {n.name!r} reads {i!r} before it is defined")
            seen.add(n.name)
        for o in self.outputs:
            if o not in seen:
                raise GraphError(f"graph output {o!r} is never produced")

    def shapes(self) -> dict[str, Shape]:
        self.check_structure()
        out = {k: tuple(v) for k, v in self.inputs.items()}
        for n in self.nodes:
            try:
                out[n.name] = output_shape(n, [out[i] for i in n.inputs])
            except ShapeError as exc:
                raise ShapeError(f"{n.name}: {exc}") from exc
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "inputs": {k: list(v) for k, v in self.inputs.items()},
            "outputs": list(self.outputs),
            "batch": self.batch,
            "metadata": self.metadata,
            "nodes": [
                {"name": n.name, "kind": n.kind.value, "inputs": list(n.inputs),
                 "attrs": _jsonable(n.attrs), "weights": list(n.weights)}
                for n in self.nodes
            ],
            "quant": {k: v.to_dict() for k, v in self.quant.items()},
            "weight_quant": {k: v.to_dict() for k, v in self.weight_quant.items()},
        }

    @classmethod
    def from_dict(cls, d: dict, weights: dict[str, np.ndarray]) -> "ModelGraph":
        nodes = []
        for nd in d["nodes"]:
            w = {}
            for wname in nd["weights"]:
                key = f"{nd['name']}/{wname}"
                if key not in weights:
                    raise GraphError(f"missing weight {key!r}")
                w[wname] = weights[key]
            nodes.append(Node(nd["name"], nd["kind"], list(nd["inputs"]), _restore(nd["attrs"]), w))
        return cls(
            name=d["name"],
            inputs={k: tuple(v) for k, v in d["inputs"].items()},
            nodes=nodes,
            outputs=list(d["outputs"]),
            metadata=d.get("metadata", {}),
            quant={k: QuantParams.from_dict(v) for k, v in d.get("quant", {}).items()},
            weight_quant={k: QuantParams.from_dict(v) for k, v in d.get("weight_quant", {}).items()},
            batch=d.get("batch", 1),
        )


def _jsonable(attrs: dict) -> dict:
    out = {}
    for k, v in attrs.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.integer):
            v = int(v)
        elif isinstance(v, np.floating):
            v = float(v)
        out[k] = v
    return out


def _restore(attrs: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in attrs.items()}


# --------------------------------------------------------------------------- #
# shape inference


def _norm_axis(axis: int, rank: int) -> int:
    if not -rank <= axis < rank:
        raise ShapeError(f"axis {axis} out of range for rank {rank}")
    return axis % rank


def output_shape(node: Node, in_shapes: list[Shape]) -> Shape:
    kind, a, w = node.kind, node.attrs, node.weights
    x = in_shapes[0] if in_shapes else ()
    if any(d is None for s in in_shapes for d in s):
        return _dynamic_shape(node, in_shapes)

    if kind in (K.CONV2D, K.DEPTHWISE_CONV2D, K.MAXPOOL2D, K.AVGPOOL2D):
        if len(x) != 3:
            raise ShapeError(f"{kind} expects an HxWxC input, got {x}")
        stride = ops._pair(a.get("stride", (1, 1)))
        padding = a.get("padding", "SAME" if kind in (K.CONV2D, K.DEPTHWISE_CONV2D) else "VALID")
        if kind == K.CONV2D:
            kh, kw, cin, cout = w["kernel"].shape
            if cin != x[2]:
                raise ShapeError(f"conv expects {cin} channels, got {x[2]}")
        elif kind == K.DEPTHWISE_CONV2D:
            kh, kw, cout = w["kernel"].shape
            if cout != x[2]:
                raise ShapeError(f"depthwise conv expects {cout} channels, got {x[2]}")
        else:
            kh, kw = ops._pair(a["pool"])
            stride = ops._pair(a.get("stride", a["pool"]))
            cout = x[2]
        return (ops.conv_output_size(x[0], kh, stride[0], padding),
                ops.conv_output_size(x[1], kw, stride[1], padding), cout)
    if kind == K.DENSE:
        n, m = w["kernel"].shape
        if not x or x[-1] != n:
            raise ShapeError(f"dense expects width {n}, got {x}")
        return tuple(x[:-1]) + (m,)
    if kind in UNARY_SAME_SHAPE:
        if kind == K.ATTENTION_SINGLE_HEAD and len(x) != 2:
            raise ShapeError(f"attention expects an n x d token matrix, got {x}")
        if kind == K.POS_ENCODING and (len(x) != 2 or x[1] % 2):
            raise ShapeError(f"positional encoding expects n x d (d even), got {x}")
        return tuple(x)
    if kind == K.GLOBAL_AVG_POOL:
        axes = {_norm_axis(ax, len(x)) for ax in a.get("axes", (-3, -2))}
        if a.get("keepdims", False):
            return tuple(1 if i in axes else d for i, d in enumerate(x))
        return tuple(d for i, d in enumerate(x) if i not in axes)
    if kind in BINARY:
        try:
            return tuple(np.broadcast_shapes(*in_shapes))
        except ValueError as exc:
            raise ShapeError(str(exc)) from exc
    if kind == K.CONCAT:
        axis = _norm_axis(a.get("axis", -1), len(x))
        total = 0
        for s in in_shapes:
            if len(s) != len(x) or any(s[i] != x[i] for i in range(len(x)) if i != axis):
                raise ShapeError(f"concat shapes disagree: {in_shapes}")
            total += s[axis]
        return tuple(total if i == axis else d for i, d in enumerate(x))
    if kind == K.RESHAPE:
        shape = tuple(a["shape"])
        if math.prod(shape) != math.prod(x):
            raise ShapeError(f"cannot reshape {x} to {shape}")
        return shape
    if kind == K.TRANSPOSE:
        perm = tuple(a["perm"])
        if sorted(perm) != list(range(len(x))):
            raise ShapeError(f"bad permutation {perm} for rank {len(x)}")
        return tuple(x[p] for p in perm)
    if kind == K.SLICE:
        begin, size = tuple(a["begin"]), tuple(a["size"])
        if len(begin) != len(x) or len(size) != len(x):
            raise ShapeError("slice begin/size rank mismatch")
        out = []
        for b, s, d in zip(begin, size, x):
            s = d - b if s == -1 else s
            if b < 0 or s <= 0 or b + s > d:
                raise ShapeError(f"slice [{b}:{b + s}] outside extent {d}")
            out.append(s)
        return tuple(out)
    raise ShapeError(f"no shape rule for {kind}")


def _dynamic_shape(node: Node, in_shapes: list[Shape]) -> Shape:
    x = in_shapes[0]
    if node.kind in UNARY_SAME_SHAPE or node.kind in BINARY:
        return tuple(x)
    if node.kind == K.DENSE:
        return tuple(x[:-1]) + (node.weights["kernel"].shape[1],)
    return (None,) * len(x)


# --------------------------------------------------------------------------- #
# execution


def _batched_attrs(node: Node, rank: int) -> dict:
    """Attrs rewritten for an extra leading batch axis."""
    a = dict(node.attrs)
    if node.kind == K.TRANSPOSE:
        a["perm"] = (0,) + tuple(p + 1 for p in a["perm"])
    elif node.kind in (K.SOFTMAX, K.CONCAT):
        a["axis"] = _norm_axis(a.get("axis", -1), rank) - rank
    elif node.kind == K.GLOBAL_AVG_POOL:
        a["axes"] = tuple(_norm_axis(ax, rank) - rank for ax in a.get("axes", (-3, -2)))
    return a


def eval_float(node: Node, args: list[np.ndarray], in_rank: int, aux: dict | None = None) -> np.ndarray:
    """Evaluate one node on batched float inputs (leading batch axis)."""
    kind, w = node.kind, node.weights
    a = _batched_attrs(node, in_rank)
    x = args[0]
    if kind == K.CONV2D:
        return ops.conv2d(x, w["kernel"], w.get("bias"), a.get("stride", (1, 1)), a.get("padding", "SAME"))
    if kind == K.DEPTHWISE_CONV2D:
        return ops.depthwise_conv2d(x, w["kernel"], w.get("bias"), a.get("stride", (1, 1)),
                                    a.get("padding", "SAME"))
    if kind == K.DENSE:
        return ops.dense(x, w["kernel"], w.get("bias"))
    if kind == K.RELU6:
        return ops.relu6(x)
    if kind == K.SIGMOID:
        return ops.sigmoid(x)
    if kind in (K.MAXPOOL2D, K.AVGPOOL2D):
        return ops.pool2d(x, "MAX" if kind == K.MAXPOOL2D else "AVG", a["pool"],
                          a.get("stride", a["pool"]), a.get("padding", "VALID"))
    if kind == K.GLOBAL_AVG_POOL:
        return ops.global_avg_pool(x, a["axes"], a.get("keepdims", False))
    if kind == K.SOFTMAX:
        return ops.softmax(x, a["axis"])
    if kind == K.LAYER_NORM:
        return ops.layer_norm(x, w["gamma"], w["beta"], a.get("eps", ops.LN_EPSILON))
    if kind == K.ATTENTION_SINGLE_HEAD:
        q = ops.dense(x, w["wq"], w["bq"])
        k = ops.dense(x, w["wk"], w["bk"])
        v = ops.dense(x, w["wv"], w["bv"])
        ctx = ops.attention_scores(q, k) @ v
        if aux is not None:
            aux.update({f"{node.name}:q": q, f"{node.name}:k": k, f"{node.name}:v": v,
                        f"{node.name}:ctx": ctx})
        return ops.dense(ctx, w["wo"], w["bo"])
    if kind == K.POS_ENCODING:
        return ops.add_positions(x)
    if kind == K.BATCHNORM:
        return ops.batchnorm(x, w["gamma"], w["beta"], w["mean"], w["var"], a.get("eps", ops.BN_EPSILON))
    if kind == K.SUB_SPECTRAL_NORM:
        return ops.sub_spectral_norm(x, w["gamma"], w["beta"], w["mean"], w["var"], a["groups"],
                                     a.get("eps", ops.BN_EPSILON))
    if kind == K.ADD:
        return np.asarray(x, np.float64) + args[1]
    if kind == K.SUB:
        return np.asarray(x, np.float64) - args[1]
    if kind == K.MUL:
        return np.asarray(x, np.float64) * args[1]
    if kind == K.SQUARED_DIFFERENCE:
        return ops.squared_difference(x, args[1])
    if kind == K.CONCAT:
        return np.concatenate(args, axis=a["axis"])
    if kind == K.RESHAPE:
        return np.reshape(x, (x.shape[0],) + tuple(a["shape"]))
    if kind == K.TRANSPOSE:
        return np.transpose(x, a["perm"])
    if kind == K.SLICE:
        sl = [slice(None)] + [slice(b, None if s == -1 else b + s) for b, s in zip(a["begin"], a["size"])]
        return x[tuple(sl)]
    raise GraphError(f"no kernel for {kind}")


def _wq(graph: ModelGraph, node: Node, wname: str) -> np.ndarray:
    """Dequantized weight."""
    return dequantize(node.weights[wname], graph.weight_quant[f"{node.name}/{wname}"])


def _int_acc(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    # (q - zp) as exact integers held in float64
    return np.asarray(x, np.float64) - qp.zero_point


def _requant_acc(acc: np.ndarray, real_scale: float, out: QuantParams) -> np.ndarray:
    if np.abs(acc).max(initial=0) >= 2 ** 31:
        raise OverflowError("INT32 accumulator overflow")
    return quantize(acc * real_scale, out)


def eval_quant(graph: ModelGraph, node: Node, args: list[np.ndarray], in_rank: int) -> np.ndarray:
    """Evaluate one node on batched INT8 inputs, returning INT8 output."""
    kind, w = node.kind, node.weights
    out_qp = graph.quant[node.name]
    in_qps = [graph.quant[i] for i in node.inputs]
    a = _batched_attrs(node, in_rank)

    if kind in (K.CONV2D, K.DEPTHWISE_CONV2D, K.DENSE):
        xq = _int_acc(args[0], in_qps[0])
        w_qp = graph.weight_quant[f"{node.name}/kernel"]
        kernel = w["kernel"].astype(np.float64)
        bias = w["bias"].astype(np.float64) if "bias" in w else None
        if kind == K.CONV2D:
            acc = ops.conv2d(xq, kernel, bias, a.get("stride", (1, 1)), a.get("padding", "SAME"))
        elif kind == K.DEPTHWISE_CONV2D:
            acc = ops.depthwise_conv2d(xq, kernel, bias, a.get("stride", (1, 1)), a.get("padding", "SAME"))
        else:
            acc = ops.dense(xq, kernel, bias)
        return _requant_acc(acc, in_qps[0].scale * w_qp.scale, out_qp)

    if kind == K.ATTENTION_SINGLE_HEAD:
        xq = _int_acc(args[0], in_qps[0])
        proj = {}
        for p in ("q", "k", "v"):
            w_qp = graph.weight_quant[f"{node.name}/w{p}"]
            acc = ops.dense(xq, w[f"w{p}"].astype(np.float64), w[f"b{p}"].astype(np.float64))
            qp = graph.quant[f"{node.name}:{p}"]
            proj[p] = dequantize(_requant_acc(acc, in_qps[0].scale * w_qp.scale, qp), qp)
        ctx_qp = graph.quant[f"{node.name}:ctx"]
        ctx = quantize(ops.attention_scores(proj["q"], proj["k"]) @ proj["v"], ctx_qp)
        w_qp = graph.weight_quant[f"{node.name}/wo"]
        acc = ops.dense(_int_acc(ctx, ctx_qp), w["wo"].astype(np.float64), w["bo"].astype(np.float64))
        return _requant_acc(acc, ctx_qp.scale * w_qp.scale, out_qp)

    # everything else: dequantize -> float kernel -> requantize
    real = [dequantize(t, qp) for t, qp in zip(args, in_qps)]
    fnode = Node(node.name, node.kind, node.inputs, node.attrs,
                 {k: _wq(graph, node, k) for k in w})
    return quantize(eval_float(fnode, real, in_rank), out_qp)


def _prepare_feeds(graph: ModelGraph, feeds) -> tuple[dict[str, np.ndarray], bool]:
    if not isinstance(feeds, dict):
        if len(graph.inputs) != 1:
            raise GraphError("graph has several inputs; pass a dict")
        feeds = {next(iter(graph.inputs)): feeds}
    out, batched = {}, None
    for name, shape in graph.inputs.items():
        if name not in feeds:
            raise GraphError(f"missing input {name!r}")
        x = np.asarray(feeds[name])
        b = x.ndim == len(shape) + 1
        if tuple(x.shape[b:]) != tuple(shape):
            raise ShapeError(f"input {name!r} expects {tuple(shape)}, got {x.shape}")
        batched = b if batched is None else batched
        out[name] = x if b else x[None]
    return out, bool(batched)


def run(graph: ModelGraph, feeds, *, capture=False, observer=None, dequantize_outputs: bool = True,
        chunk_size: int = 8) -> dict[str, np.ndarray]:
    """Execute the graph.

    ``feeds`` is an array (single-input graphs) or a dict; arrays may carry
    one extra leading batch axis.  Quantized graphs accept float inputs
    (quantized on entry) or INT8 arrays.

    Returns the graph outputs plus any captured tensors.  ``capture`` is
    ``True`` (every tensor) or a collection of tensor names; on float graphs
    attention internals are available as ``"<node>:q"``, ``":k"``, ``":v"``
    and ``":ctx"``.  ``observer(name, array)`` is called on every tensor as
    it is produced, batch axis included, without retaining it.  Tensors no
    longer needed are released as execution proceeds, and batches larger
    than ``chunk_size`` are processed in slices.
    """
    inputs, batched = _prepare_feeds(graph, feeds)
    n = next(iter(inputs.values())).shape[0]
    if n > chunk_size:
        parts = [
            run(graph, {k: v[i:i + chunk_size] for k, v in inputs.items()}, capture=capture,
                observer=observer, dequantize_outputs=dequantize_outputs, chunk_size=chunk_size)
            for i in range(0, n, chunk_size)
        ]
        merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        return merged if batched else {k: v[0] for k, v in merged.items()}

    quantized = graph.is_quantized
    keep_all = capture is True
    keep = set(graph.outputs) | (set() if isinstance(capture, bool) else set(capture))
    last_use = {}
    for idx, node in enumerate(graph.nodes):
        for i in node.inputs:
            last_use[i] = idx

    ranks = {k: len(v) for k, v in graph.inputs.items()}
    env: dict[str, np.ndarray] = {}
    kept: dict[str, np.ndarray] = {}

    def emit(name, value):
        if observer is not None:
            observer(name, dequantize(value, graph.quant[name]) if quantized else value)
        if keep_all or name in keep:
            kept[name] = value

    for name, x in inputs.items():
        if quantized and x.dtype != np.int8:
            x = quantize(x, graph.quant[name])
        elif not quantized:
            x = np.asarray(x, np.float64)
        env[name] = x
        emit(name, x)
    want_aux = not quantized and (keep_all or observer is not None or
                                  any(":" in k for k in keep))
    for idx, node in enumerate(graph.nodes):
        args = [env[i] for i in node.inputs]
        rank = ranks[node.inputs[0]]
        aux = {} if want_aux and node.kind == K.ATTENTION_SINGLE_HEAD else None
        if quantized:
            y = eval_quant(graph, node, args, rank)
        else:
            y = eval_float(node, args, rank, aux)
        env[node.name] = y
        ranks[node.name] = y.ndim - 1
        for k, v in (aux or {}).items():
            emit(k, v)
        emit(node.name, y)
        for i in set(node.inputs):
            if last_use.get(i) == idx:
                del env[i]
    result = kept
    if quantized and dequantize_outputs:
        result = {k: dequantize(v, graph.quant[k]) if k in graph.quant else v for k, v in result.items()}
    return result if batched else {k: v[0] for k, v in result.items()}


def run_output(graph: ModelGraph, x, **kw) -> np.ndarray:
    return run(graph, x, **kw)[graph.outputs[0]]
