"""Builders and inference entry points for the keyword and emotion models.

Both models are expressed as :class:`ModelGraph` instances.  Weights start
as zero placeholders; :func:`init_weights` fills them with random values
(batch-norm statistics optionally estimated from sample inputs).

Layout notes: spectrogram inputs are ``[channels, frames]``.  The keyword
model sees ``32 x 490 x 1`` (mel x time x 1).  The spectrogram encoder of
the emotion model transposes to time-major ``498 x 32 x 1`` and reduces
the time axis with ``2x1`` stride-``(2, 1)`` convolutions.
"""

from __future__ import annotations

import contextlib
import io
import csv
from dataclasses import dataclass

import numpy as np

from .container import Container, read_container, write_container
from .errors import (GraphError, ManifestError, MissingTensorError, ShapeError, TensorDtypeMismatch,
                     TensorShapeMismatch)
from .features import to_model_input
from .frontend import Spectrogram
from .tensor import ops
from .tensor.graph import LayerKind, ModelGraph, Node, eval_float, run

K = LayerKind

EMOTION_CLASSES = ("happy", "neutral", "sad", "angry", "none")
KWS_NUM_CLASSES = 51
KWS_FRAMES = 490
EMOTION_FRAMES = 498
NUM_MEL = 32
KWS_STAGES = (64, 128, 256)
SE_REDUCTION_DEFAULT = 16
D_MODEL = 128
NUM_TRANSFORMER_BLOCKS = 4
SPEC_CONV_FILTERS = (16, 32, 64, 1)

# Published per-row parameter counts, used by the reconciliation table.
REFERENCE_KWS_PARAMS = {
    "Conv2D 3x3, BN, ReLU6": 169,
    "ResDS + SE 64": 10_404,
    "ResDS + SE 128": 38_216,
    "ResDS + SE 256": 146_064,
    "Conv2D 2x1, Softmax": 26_163,
}
REFERENCE_KWS_TRAINABLE = 218_000
REFERENCE_EMOTION_PARAMS = {
    "Extract Keyword Embedding": 194_853,
    "Lin. 256->128, ReLU6 (keyword)": 32_896,
    "Lin. 128->128, ReLU6, residual": 16_512,
    "SpecConv (16 filters)": 2_368,
    "SpecConv (32 filters)": 10_304,
    "SpecConv (64 filters)": 41_088,
    "SpecConv (1 filter)": 139,
    "Lin. 32->128": 4_224,
    **{f"Transformer Block {i}": 99_584 for i in range(1, 5)},
    "Lin. 256->128, ReLU6 (head)": 32_896,
    "Lin. 128->5, Softmax": 645,
}
REFERENCE_EMOTION_TOTAL = 734_261
REFERENCE_EMOTION_NON_KWS = 539_408


# --------------------------------------------------------------------------- #
# graph construction helper


class _Builder:
    def __init__(self, name: str, inputs: dict):
        self.graph = ModelGraph(name=name, inputs=dict(inputs), nodes=[], outputs=[],
                                metadata={"blocks": []})
        self._block = None

    @contextlib.contextmanager
    def block(self, label: str, inputs: list[str]):
        blk = {"label": label, "inputs": list(inputs), "nodes": []}
        prev, self._block = self._block, blk
        try:
            yield blk
        finally:
            self._block = prev
            self.graph.metadata["blocks"].append(blk)

    def add(self, name: str, kind: LayerKind, inputs: list[str], attrs=None, **weights) -> str:
        w = {k: np.zeros(v, np.float32) for k, v in weights.items()}
        self.graph.nodes.append(Node(name, kind, list(inputs), dict(attrs or {}), w))
        if self._block is not None:
            self._block["nodes"].append(name)
        return name

    # composite layers
    def conv(self, name, x, cin, cout, k=(1, 1), stride=(1, 1), padding="SAME", bias=True):
        w = {"kernel": (k[0], k[1], cin, cout)}
        if bias:
            w["bias"] = (cout,)
        return self.add(name, K.CONV2D, [x], {"stride": tuple(stride), "padding": padding}, **w)

    def dwconv(self, name, x, c, k=(3, 3), bias=False):
        w = {"kernel": (k[0], k[1], c)}
        if bias:
            w["bias"] = (c,)
        return self.add(name, K.DEPTHWISE_CONV2D, [x], {"stride": (1, 1), "padding": "SAME"}, **w)

    def bn(self, name, x, c):
        return self.add(name, K.BATCHNORM, [x], {"eps": ops.BN_EPSILON},
                        gamma=(c,), beta=(c,), mean=(c,), var=(c,))

    def dense(self, name, x, n, m):
        return self.add(name, K.DENSE, [x], kernel=(n, m), bias=(m,))

    def relu6(self, name, x):
        return self.add(name, K.RELU6, [x])


def _res_ds_se(b: _Builder, p: str, x: str, cin: int, cout: int, reduction: int) -> str:
    if cout % reduction:
        raise ShapeError(f"{cout} channels not divisible by SE reduction {reduction}")
    h = b.dwconv(f"{p}/dw1", x, cin)
    h = b.conv(f"{p}/pw1", h, cin, cout, bias=False)
    h = b.bn(f"{p}/bn1", h, cout)
    h = b.relu6(f"{p}/relu1", h)
    h = b.dwconv(f"{p}/dw2", h, cout)
    h = b.conv(f"{p}/pw2", h, cout, cout, bias=False)
    h = b.bn(f"{p}/bn2", h, cout)
    if cin != cout:
        s = b.conv(f"{p}/proj", x, cin, cout, bias=False)
        s = b.bn(f"{p}/proj_bn", s, cout)
    else:
        s = x
    h = b.add(f"{p}/add", K.ADD, [h, s])
    h = b.relu6(f"{p}/relu_out", h)
    hidden = cout // reduction
    g = b.add(f"{p}/se/gap", K.GLOBAL_AVG_POOL, [h], {"axes": (0, 1), "keepdims": True})
    g = b.dense(f"{p}/se/squeeze", g, cout, hidden)
    g = b.relu6(f"{p}/se/relu", g)
    g = b.dense(f"{p}/se/excite", g, hidden, cout)
    g = b.add(f"{p}/se/gate", K.SIGMOID, [g])
    return b.add(f"{p}/se/scale", K.MUL, [h, g])


def _kws_trunk(b: _Builder, x: str, prefix: str, se_reduction: int) -> str:
    """Stem plus three ResDS+SE stages; returns the 2x5x256 feature map."""
    with b.block("Conv2D 3x3, BN, ReLU6", [x]):
        h = b.dwconv(f"{prefix}stem/dw", x, 1)
        h = b.conv(f"{prefix}stem/pw", h, 1, 32, bias=False)
        h = b.bn(f"{prefix}stem/bn", h, 32)
        h = b.relu6(f"{prefix}stem/relu", h)
    cin = 32
    for i, cout in enumerate(KWS_STAGES, start=1):
        with b.block("MaxPool2D 2x2", [h]):
            h = b.add(f"{prefix}pool{i}", K.MAXPOOL2D, [h], {"pool": (2, 2), "stride": (2, 2),
                                                               "padding": "VALID"})
        with b.block(f"ResDS + SE {cout}", [h]):
            h = _res_ds_se(b, f"{prefix}res{i}", h, cin, cout, se_reduction)
        cin = cout
    with b.block("MaxPool2D 2x2", [h]):
        h = b.add(f"{prefix}pool4", K.MAXPOOL2D, [h], {"pool": (2, 2), "stride": (2, 2),
                                                       "padding": "VALID"})
    with b.block("AvgPool2D 1x6", [h]):
        h = b.add(f"{prefix}avgpool", K.AVGPOOL2D, [h], {"pool": (1, 6), "stride": (1, 6),
                                                         "padding": "VALID"})
    return h


def build_kws_model(num_classes: int = KWS_NUM_CLASSES, se_reduction: int = SE_REDUCTION_DEFAULT
                    ) -> ModelGraph:
    """Residual depthwise-separable keyword model with squeeze-and-excitation.

    Input ``spectrogram`` is ``32 x 490 x 1``; output ``probs`` is ``5 x C``,
    one distribution per second of audio.
    """
    b = _Builder("kws", {"spectrogram": (NUM_MEL, KWS_FRAMES, 1)})
    feat = _kws_trunk(b, "spectrogram", "", se_reduction)
    with b.block("Conv2D 2x1, Softmax", [feat]):
        logits = b.conv("head/conv", feat, 256, num_classes, k=(2, 1), padding="VALID")
    with b.block("Reshape", [logits]):
        r = b.add("head/reshape", K.RESHAPE, [logits], {"shape": (5, num_classes)})
        b.add("probs", K.SOFTMAX, [r], {"axis": -1})
    g = b.graph
    g.outputs = ["probs"]
    g.metadata.update(kind="kws", classes=num_classes, se_reduction=se_reduction,
                      logits="head/conv", embedding_source=feat)
    g.check_structure()
    return g


def _transformer_block(b: _Builder, p: str, x: str, d: int) -> str:
    w = {f"w{c}": (d, d) for c in "qkvo"}
    w.update({f"b{c}": (d,) for c in "qkvo"})
    a = b.add(f"{p}/attn", K.ATTENTION_SINGLE_HEAD, [x], **w)
    h = b.add(f"{p}/add1", K.ADD, [x, a])
    h = b.add(f"{p}/ln1", K.LAYER_NORM, [h], {"eps": ops.LN_EPSILON}, gamma=(d,), beta=(d,))
    f = b.dense(f"{p}/ffn1", h, d, d)
    f = b.relu6(f"{p}/ffn_relu", f)
    f = b.dense(f"{p}/ffn2", f, d, d)
    o = b.add(f"{p}/add2", K.ADD, [h, f])
    return b.add(f"{p}/ln2", K.LAYER_NORM, [o], {"eps": ops.LN_EPSILON}, gamma=(d,), beta=(d,))


def build_emotion_model(d_model: int = D_MODEL, se_reduction: int = SE_REDUCTION_DEFAULT,
                        num_classes: int = len(EMOTION_CLASSES)) -> ModelGraph:
    """Late-fusion emotion classifier over a ``32 x 498`` spectrogram.

    The keyword branch reuses the keyword trunk under the ``kws/`` prefix so
    trained keyword weights can be transferred with :func:`transfer_kws_weights`.
    """
    b = _Builder("emotion", {"spectrogram": (NUM_MEL, EMOTION_FRAMES)})
    x = "spectrogram"

    # keyword encoder
    with b.block("Clip and expand", [x]):
        c = b.add("kw/clip", K.SLICE, [x], {"begin": (0, 0), "size": (NUM_MEL, KWS_FRAMES)})
        c = b.add("kw/expand", K.RESHAPE, [c], {"shape": (NUM_MEL, KWS_FRAMES, 1)})
    blocks_before = len(b.graph.metadata["blocks"])
    feat = _kws_trunk(b, c, "kws/", se_reduction)
    # collapse the trunk's rows into one embedding row
    trunk = b.graph.metadata["blocks"][blocks_before:]
    del b.graph.metadata["blocks"][blocks_before:]
    emb_nodes = [n for blk in trunk for n in blk["nodes"]]
    with b.block("Extract Keyword Embedding", [c]) as blk:
        emb = b.add("kw/embedding", K.GLOBAL_AVG_POOL, [feat], {"axes": (0, 1)})
        blk["nodes"][:0] = emb_nodes
    with b.block("Lin. 256->128, ReLU6 (keyword)", [emb]):
        k1 = b.relu6("kw/relu1", b.dense("kw/dense1", emb, 256, d_model))
    with b.block("Lin. 128->128, ReLU6, residual", [k1]):
        k2 = b.relu6("kw/relu2", b.dense("kw/dense2", k1, d_model, d_model))
        kw_out = b.add("kw/residual", K.ADD, [k2, k1])

    # spectrogram encoder
    with b.block("Transpose and expand", [x]):
        t = b.add("sp/transpose", K.TRANSPOSE, [x], {"perm": (1, 0)})
        t = b.add("sp/expand", K.RESHAPE, [t], {"shape": (EMOTION_FRAMES, NUM_MEL, 1)})
    cin = 1
    for i, f in enumerate(SPEC_CONV_FILTERS, start=1):
        label = f"SpecConv ({f} filter{'s' if f > 1 else ''})"
        with b.block(label, [t]):
            t = b.conv(f"sp/conv{i}a", t, cin, f, k=(2, 1), stride=(2, 1), padding="SAME")
            t = b.relu6(f"sp/relu{i}a", t)
            t = b.conv(f"sp/conv{i}b", t, f, f, k=(3, 3), padding="SAME")
            t = b.relu6(f"sp/relu{i}b", t)
        cin = f
    tokens = EMOTION_FRAMES
    for _ in SPEC_CONV_FILTERS:
        tokens = -(-tokens // 2)
    t = b.add("sp/squeeze", K.RESHAPE, [t], {"shape": (tokens, NUM_MEL)})
    with b.block("Lin. 32->128", [t]):
        t = b.dense("sp/embed", t, NUM_MEL, d_model)
    with b.block("Positional Encodings", [t]):
        t = b.add("sp/posenc", K.POS_ENCODING, [t])
    for i in range(1, NUM_TRANSFORMER_BLOCKS + 1):
        with b.block(f"Transformer Block {i}", [t]):
            t = _transformer_block(b, f"sp/block{i}", t, d_model)
    with b.block(f"AvgPool2D {tokens}x1", [t]):
        sp_out = b.add("sp/pool", K.GLOBAL_AVG_POOL, [t], {"axes": (0,)})

    # head
    with b.block("Concatenate", [sp_out, kw_out]):
        h = b.add("head/concat", K.CONCAT, [sp_out, kw_out], {"axis": -1})
    with b.block("Lin. 256->128, ReLU6 (head)", [h]):
        h = b.relu6("head/relu", b.dense("head/dense", h, 2 * d_model, d_model))
    with b.block("Lin. 128->5, Softmax", [h]):
        lg = b.dense("logits", h, d_model, num_classes)
        b.add("probs", K.SOFTMAX, [lg], {"axis": -1})
    g = b.graph
    g.outputs = ["probs"]
    g.metadata.update(kind="emotion", classes=list(EMOTION_CLASSES[:num_classes]) if
                      num_classes == len(EMOTION_CLASSES) else num_classes,
                      se_reduction=se_reduction, d_model=d_model, logits="logits",
                      embedding="kw/embedding", kws_prefix="kws/")
    g.check_structure()
    return g


def build_model(arch: str, **kw) -> ModelGraph:
    if arch == "kws":
        return build_kws_model(**kw)
    if arch == "emotion":
        return build_emotion_model(**kw)
    raise ValueError(f"unknown architecture {arch!r}")


# --------------------------------------------------------------------------- #
# weights


def _fan_in(shape: tuple) -> int:
    if len(shape) == 4:
        return shape[0] * shape[1] * shape[2]
    if len(shape) == 3:
        return shape[0] * shape[1]
    return shape[0]


def init_weights(graph: ModelGraph, seed: int = 0, samples=None, logit_std: float = 2.0) -> ModelGraph:
    """Fill weights with seeded random values, in place.

    Kernels are He-normal, biases small, norms start at identity.  When
    ``samples`` (a batch of model inputs) are given, initialization becomes
    data dependent: each batch norm takes its running statistics from the
    activations it sees, every other conv/dense layer is rescaled to unit
    output variance, and the classifier to standard deviation ``logit_std``.
    Returns the graph for chaining.
    """
    rng = np.random.default_rng(seed)
    for node in graph.nodes:
        for wname, w in node.weights.items():
            shape = w.shape
            if wname in ("kernel", "wq", "wk", "wv", "wo"):
                gain = 1.0 if node.kind == K.ATTENTION_SINGLE_HEAD else 2.0
                val = rng.normal(0.0, np.sqrt(gain / _fan_in(shape)), shape)
            elif wname in ("bias", "bq", "bk", "bv", "bo"):
                val = rng.normal(0.0, 0.05, shape)
            elif wname == "beta" and node.kind == K.BATCHNORM:
                # spread the ReLU6 thresholds across channels
                val = rng.normal(0.0, BN_BETA_STD, shape)
            elif wname in ("gamma", "var"):
                val = np.ones(shape)
            else:  # layer-norm beta, mean
                val = np.zeros(shape)
            node.weights[wname] = val.astype(np.float32)
    if samples is not None:
        _data_dependent_init(graph, samples, logit_std)
    return graph


VAR_FLOOR_RATIO = 0.1
BN_BETA_STD = 0.5


def _data_dependent_init(graph: ModelGraph, samples, logit_std: float) -> None:
    x = np.asarray(samples, np.float64)
    name = next(iter(graph.inputs))
    env = {name: x}
    ranks = {name: len(graph.inputs[name])}
    logits = graph.metadata.get("logits")
    last_use = {i: idx for idx, n in enumerate(graph.nodes) for i in n.inputs}
    bn_inputs = {n.inputs[0] for n in graph.nodes if n.kind == K.BATCHNORM}
    for idx, node in enumerate(graph.nodes):
        args = [env[i] for i in node.inputs]
        rank = ranks[node.inputs[0]]
        if node.kind == K.BATCHNORM:
            axes = tuple(range(args[0].ndim - 1))
            node.weights["mean"] = args[0].mean(axis=axes).astype(np.float32)
            var = args[0].var(axis=axes)
            # channels that nearly cancel would otherwise be blown up by 1/std
            node.weights["var"] = np.maximum(var, VAR_FLOOR_RATIO * var.mean() + 1e-6).astype(np.float32)
        y = eval_float(node, args, rank)
        if node.kind in (K.DENSE, K.CONV2D) and node.name not in bn_inputs:
            # unit-variance (or logit_std for the classifier) pre-activations
            target = logit_std if node.name == logits else 1.0
            s = target / max(float(np.sqrt(np.mean(y * y))), 1e-6)
            for wname in ("kernel", "bias"):
                if wname in node.weights:
                    node.weights[wname] = (node.weights[wname] * s).astype(np.float32)
            y = eval_float(node, args, rank)
        env[node.name] = y
        ranks[node.name] = y.ndim - 1
        for i in set(node.inputs):
            if last_use[i] == idx:
                del env[i]


def transfer_kws_weights(emotion: ModelGraph, kws: ModelGraph) -> ModelGraph:
    """Copy keyword-trunk weights into the emotion model's frozen ``kws/`` branch (in place)."""
    prefix = emotion.metadata.get("kws_prefix", "kws/")
    src = {n.name: n for n in kws.nodes}
    copied = 0
    for node in emotion.nodes:
        if not node.name.startswith(prefix):
            continue
        other = src.get(node.name[len(prefix):])
        if other is None or other.kind != node.kind:
            raise ShapeError(f"keyword model has no counterpart for {node.name!r}")
        for wname, w in node.weights.items():
            if other.weights[wname].shape != w.shape:
                raise ShapeError(f"{node.name}/{wname}: shape {other.weights[wname].shape} vs {w.shape}")
            node.weights[wname] = other.weights[wname].copy()
            copied += 1
    emotion.metadata["kws_transferred"] = copied
    return emotion


def kws_branch_weights(emotion: ModelGraph) -> dict[str, np.ndarray]:
    prefix = emotion.metadata.get("kws_prefix", "kws/")
    return {k: v for k, v in emotion.weight_items() if k.startswith(prefix)}


# --------------------------------------------------------------------------- #
# weight files

WEIGHTS_FORMAT = "edgeaudio-model/1"


def save_weights(model: ModelGraph, path) -> None:
    """Write every weight tensor plus the graph topology to one container."""
    write_container(path, Container(dict(model.weight_items()), dict(model.weight_quant),
                                    {"format": WEIGHTS_FORMAT, "graph": model.to_dict()}))


def load_weights(model: ModelGraph, path) -> ModelGraph:
    """Return a copy of ``model`` with weights read from ``path``.

    Names, shapes and dtypes must match the model exactly; each kind of
    disagreement raises its own error.
    """
    c = read_container(path)
    out = model.copy()
    for node in out.nodes:
        for wname, w in node.weights.items():
            key = f"{node.name}/{wname}"
            if key not in c.tensors:
                raise MissingTensorError(f"weight file lacks {key!r}")
            t = c.tensors[key]
            if t.shape != w.shape:
                raise TensorShapeMismatch(f"{key}: file has {t.shape}, model expects {w.shape}")
            if t.dtype != w.dtype:
                raise TensorDtypeMismatch(f"{key}: file has {t.dtype}, model expects {w.dtype}")
            node.weights[wname] = t
    if model.is_quantized:
        out.weight_quant = {k: c.quant[k] for k in model.weight_quant if k in c.quant}
        graph_meta = c.metadata.get("graph", {})
        if "quant" in graph_meta:
            out.quant = ModelGraph.from_dict(graph_meta, c.tensors).quant
    return out


def load_model(path) -> ModelGraph:
    """Rebuild a graph (topology, weights, quant params) from a weight file."""
    c = read_container(path)
    if c.metadata.get("format") != WEIGHTS_FORMAT or "graph" not in c.metadata:
        raise ManifestError(f"{path} is not a model weight file")
    try:
        return ModelGraph.from_dict(c.metadata["graph"], c.tensors)
    except (KeyError, TypeError, ValueError, GraphError) as exc:
        raise ManifestError(f"bad graph description: {exc}") from exc


# --------------------------------------------------------------------------- #
# inference


@dataclass
class KwsOutput:
    probs: np.ndarray  # [5, C]

    @property
    def labels(self) -> np.ndarray:
        return self.probs.argmax(axis=-1)


@dataclass
class EmotionOutput:
    probs: np.ndarray  # [5]

    @property
    def label(self) -> str:
        return EMOTION_CLASSES[int(self.probs.argmax())]


def _features(spec, frames: int, db_floor: float) -> np.ndarray:
    x = to_model_input(spec, db_floor) if isinstance(spec, Spectrogram) else np.asarray(spec, np.float64)
    if x.shape[-2:] != (NUM_MEL, frames):
        raise ShapeError(f"expected a {NUM_MEL}x{frames} spectrogram, got {x.shape}")
    return x


def infer_kws(model: ModelGraph, spec, db_floor: float = -80.0) -> KwsOutput:
    """Per-second keyword distributions for a ``32 x 490`` spectrogram (or a batch of them)."""
    x = _features(spec, KWS_FRAMES, db_floor)[..., None]
    return KwsOutput(run(model, x)["probs"])


def extract_kws_embedding(model: ModelGraph, spec, db_floor: float = -80.0) -> np.ndarray:
    """256-d embedding: the final 2x5x256 map averaged over its spatial grid."""
    x = _features(spec, KWS_FRAMES, db_floor)[..., None]
    src = model.metadata["embedding_source"]
    fmap = run(model, x, capture=True)[src]
    return fmap.mean(axis=(-3, -2))


def infer_emotion(model: ModelGraph, spec, db_floor: float = -80.0) -> EmotionOutput:
    """Class distribution over (happy, neutral, sad, angry, none) for a ``32 x 498`` spectrogram."""
    x = _features(spec, EMOTION_FRAMES, db_floor)
    return EmotionOutput(run(model, x)["probs"])


# --------------------------------------------------------------------------- #
# summary


def node_macs(node: Node, in_shapes: list[tuple], out_shape: tuple) -> int:
    w = node.weights
    if node.kind == K.CONV2D:
        kh, kw, cin, cout = w["kernel"].shape
        return int(np.prod(out_shape)) * kh * kw * cin
    if node.kind == K.DEPTHWISE_CONV2D:
        kh, kw, _ = w["kernel"].shape
        return int(np.prod(out_shape)) * kh * kw
    if node.kind == K.DENSE:
        n, m = w["kernel"].shape
        return int(np.prod(out_shape[:-1], dtype=np.int64)) * n * m
    if node.kind == K.ATTENTION_SINGLE_HEAD:
        n, d = in_shapes[0]
        return 4 * n * d * d + 2 * n * n * d
    return 0


@dataclass
class SummaryRow:
    label: str
    input_shape: str
    output_shape: str
    params: int
    macs: int
    reference: int | None = None

    @property
    def delta(self) -> int | None:
        return None if self.reference is None else self.params - self.reference


def _fmt_shape(shapes: list[tuple]) -> str:
    return " + ".join("x".join(str(d) for d in s) for s in shapes)


def summarize(graph: ModelGraph) -> list[SummaryRow]:
    """One row per architecture block, in build order."""
    shapes = graph.shapes()
    nodes = {n.name: n for n in graph.nodes}
    refs = REFERENCE_KWS_PARAMS if graph.metadata.get("kind") == "kws" else REFERENCE_EMOTION_PARAMS
    rows = []
    for blk in graph.metadata.get("blocks", []):
        params = sum(nodes[n].param_count for n in blk["nodes"])
        macs = sum(node_macs(nodes[n], [shapes[i] for i in nodes[n].inputs], shapes[n])
                   for n in blk["nodes"])
        out = shapes[blk["nodes"][-1]] if blk["nodes"] else shapes[blk["inputs"][0]]
        rows.append(SummaryRow(blk["label"], _fmt_shape([shapes[i] for i in blk["inputs"]]),
                               _fmt_shape([out]), params, macs, refs.get(blk["label"])))
    return rows


def trainable_params(graph: ModelGraph) -> int:
    """Parameters excluding batch-norm running statistics."""
    return sum(w.size for k, w in graph.weight_items() if not k.endswith(("/mean", "/var")))


def total_macs(graph: ModelGraph) -> int:
    shapes = graph.shapes()
    return sum(node_macs(n, [shapes[i] for i in n.inputs], shapes[n.name]) for n in graph.nodes)


def summary_text(graph: ModelGraph) -> str:
    rows = summarize(graph)
    head = f"{'Block':<34} {'Input':>16} {'Output':>14} {'Params':>10} {'Reference':>10} {'Delta':>7} {'MACs':>12}"
    lines = [head, "-" * len(head)]
    for r in rows:
        ref = f"{r.reference:,}" if r.reference is not None else ""
        delta = f"{r.delta:+d}" if r.delta is not None else ""
        lines.append(f"{r.label:<34} {r.input_shape:>16} {r.output_shape:>14} {r.params:>10,} "
                     f"{ref:>10} {delta:>7} {r.macs:>12,}")
    lines.append("-" * len(head))
    total = graph.param_count()
    lines.append(f"{'Total':<34} {'':>16} {'':>14} {total:>10,} {'':>10} {'':>7} {total_macs(graph):>12,}")
    lines.append(f"trainable parameters: {trainable_params(graph):,}")
    if graph.metadata.get("kind") == "emotion":
        kws = sum(r.params for r in rows if r.label == "Extract Keyword Embedding")
        lines.append(f"keyword embedding subnetwork: {kws:,}")
        lines.append(f"non-keyword parameters: {total - kws:,} (reference {REFERENCE_EMOTION_NON_KWS:,})")
        lines.append(f"reference total: {REFERENCE_EMOTION_TOTAL:,}")
    else:
        lines.append(f"reference trainable: ~{REFERENCE_KWS_TRAINABLE:,}")
    return "\n".join(lines) + "\n"


def summary_csv(graph: ModelGraph) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["block", "input", "output", "params", "reference", "delta", "macs"])
    for r in summarize(graph):
        wr.writerow([r.label, r.input_shape, r.output_shape, r.params,
                     "" if r.reference is None else r.reference,
                     "" if r.delta is None else r.delta, r.macs])
    wr.writerow(["Total", "", "", graph.param_count(), "", "", total_macs(graph)])
    return buf.getvalue()
