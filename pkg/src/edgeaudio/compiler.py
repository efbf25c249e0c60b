"""Accelerator-compatibility pass: validate, rewrite, partition, budget.

The target accelerator executes only INT8 graphs with static shapes whose
tensors have at most three non-unit (innermost) dimensions, and caches a
bounded amount of parameter memory.  Nodes that violate a rule fall back to
the host CPU; the pass rewrites the constructs it knows how to express with
supported primitives and reports everything else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, ShapeError
from .tensor.graph import LayerKind, ModelGraph, Node
from .tensor.quant import QuantParams, activation_params

K = LayerKind

# reasons
UNKNOWN_OP = "UNKNOWN_OP"
RANK_VIOLATION = "RANK_VIOLATION"
DYNAMIC_SHAPE = "DYNAMIC_SHAPE"
NON_INT8 = "NON_INT8"
BATCHED_INPUT = "BATCHED_INPUT"

ACCELERATOR = "ACCELERATOR"
FALLBACK = "FALLBACK"

DEFAULT_SUPPORTED = frozenset(k for k in LayerKind
                              if k not in (K.SQUARED_DIFFERENCE, K.SUB_SPECTRAL_NORM))
DEFAULT_BUDGET = 8 * 2 ** 20


@dataclass(frozen=True)
class OpSupportPolicy:
    supported_kinds: frozenset = DEFAULT_SUPPORTED
    enforce_rank_rule: bool = True
    require_static_shapes: bool = True
    require_int8: bool = True
    param_cache_budget_bytes: int = DEFAULT_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "supported_kinds", frozenset(LayerKind(k) for k in self.supported_kinds))
        if self.param_cache_budget_bytes < 0:
            raise ValueError("budget must be non-negative")

    def to_dict(self) -> dict:
        return {"supported_kinds": sorted(k.value for k in self.supported_kinds),
                "enforce_rank_rule": self.enforce_rank_rule,
                "require_static_shapes": self.require_static_shapes,
                "require_int8": self.require_int8,
                "param_cache_budget_bytes": self.param_cache_budget_bytes}

    @classmethod
    def from_dict(cls, d: dict) -> "OpSupportPolicy":
        d = dict(d)
        if "supported_kinds" in d:
            d["supported_kinds"] = frozenset(d["supported_kinds"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown policy fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Verdict:
    node: str
    kind: str
    supported: bool
    reasons: list[str] = field(default_factory=list)
    detail: str = ""

    def to_dict(self) -> dict:
        return {"node": self.node, "kind": self.kind, "supported": self.supported,
                "reasons": list(self.reasons), "detail": self.detail}


@dataclass
class Segment:
    target: str
    nodes: list[str]
    inputs: list[str]
    outputs: list[str]

    def to_dict(self) -> dict:
        return {"target": self.target, "nodes": list(self.nodes),
                "inputs": list(self.inputs), "outputs": list(self.outputs)}


@dataclass
class PartitionPlan:
    segments: list[Segment]
    diagnostics: list[Verdict]

    @property
    def fully_accelerated(self) -> bool:
        return len(self.segments) == 1 and self.segments[0].target == ACCELERATOR

    @property
    def fallback_nodes(self) -> list[str]:
        return [n for s in self.segments if s.target == FALLBACK for n in s.nodes]


@dataclass
class BudgetResult:
    param_bytes: int
    budget_bytes: int

    @property
    def passed(self) -> bool:
        return self.param_bytes <= self.budget_bytes

    @property
    def overage_bytes(self) -> int:
        return max(self.param_bytes - self.budget_bytes, 0)

    def to_dict(self) -> dict:
        return {"param_bytes": self.param_bytes, "budget_bytes": self.budget_bytes,
                "passed": self.passed, "overage_bytes": self.overage_bytes}


# --------------------------------------------------------------------------- #
# validation


def rank_ok(shape: tuple) -> bool:
    """At most three non-unit dimensions, and only the innermost three may exceed one."""
    return len(shape) <= 3 or all(d == 1 for d in shape[:-3])


def _is_int8_node(graph: ModelGraph, node: Node) -> bool:
    if node.name not in graph.quant or any(i not in graph.quant for i in node.inputs):
        return False
    for wname, w in node.weights.items():
        allowed = (np.int8, np.int32) if wname.startswith(("bias", "b")) and w.ndim == 1 else (np.int8,)
        if w.dtype not in allowed:
            return False
    return True


def validate(graph: ModelGraph, policy: OpSupportPolicy | None = None) -> list[Verdict]:
    """Per-node support verdicts, in graph order."""
    policy = policy or OpSupportPolicy()
    try:
        shapes = graph.shapes()
    except ShapeError as exc:
        raise GraphError(f"graph is malformed: {exc}") from exc
    verdicts = []
    for node in graph.nodes:
        reasons, notes = [], []
        if node.kind not in policy.supported_kinds:
            reasons.append(UNKNOWN_OP)
            notes.append(f"{node.kind.value} is not in the supported op list")
        tensors = [shapes[i] for i in node.inputs] + [shapes[node.name]]
        if policy.require_static_shapes and any(d is None for s in tensors for d in s):
            reasons.append(DYNAMIC_SHAPE)
        if policy.enforce_rank_rule:
            bad = [s for s in tensors if None not in s and not rank_ok(s)]
            if bad:
                reasons.append(RANK_VIOLATION)
                notes.append(f"tensor shape {list(bad[0])} has non-unit outer dimensions")
            elif node.kind == K.DENSE and len(shapes[node.inputs[0]]) >= 2:
                reasons.append(RANK_VIOLATION)
                notes.append("fully-connected layer on a multi-dimensional input")
        if policy.require_int8 and not _is_int8_node(graph, node):
            reasons.append(NON_INT8)
        if graph.batch != 1:
            reasons.append(BATCHED_INPUT)
        verdicts.append(Verdict(node.name, node.kind.value, not reasons, reasons, "; ".join(notes)))
    return verdicts


# --------------------------------------------------------------------------- #
# rewriting


def _rename_in_blocks(graph: ModelGraph, name: str, replacement: list[str]) -> None:
    for blk in graph.metadata.get("blocks", []):
        if name in blk["nodes"]:
            i = blk["nodes"].index(name)
            blk["nodes"][i:i + 1] = replacement


def _rewrite_squared_difference(graph: ModelGraph, idx: int, shapes) -> dict:
    node = graph.nodes[idx]
    sub = Node(f"{node.name}/sub", K.SUB, list(node.inputs))
    mul = Node(node.name, K.MUL, [sub.name, sub.name])
    graph.nodes[idx:idx + 1] = [sub, mul]
    if graph.is_quantized:
        a, b = (graph.quant[i] for i in node.inputs)
        a_lo, a_hi = a.scale * (-128 - a.zero_point), a.scale * (127 - a.zero_point)
        b_lo, b_hi = b.scale * (-128 - b.zero_point), b.scale * (127 - b.zero_point)
        graph.quant[sub.name] = activation_params(a_lo - b_hi, a_hi - b_lo)
    _rename_in_blocks(graph, node.name, [sub.name, mul.name])
    return {"rule": "SQUARED_DIFFERENCE->SUB+MUL", "node": node.name, "new_nodes": [sub.name, mul.name]}


def _rewrite_dense(graph: ModelGraph, idx: int, shapes) -> dict:
    node = graph.nodes[idx]
    in_shape = shapes[node.inputs[0]]
    w = dict(node.weights)
    n, m = w["kernel"].shape
    w["kernel"] = w["kernel"].reshape(1, 1, n, m)
    conv_attrs = {"stride": (1, 1), "padding": "VALID"}
    if len(in_shape) == 3:
        graph.nodes[idx] = Node(node.name, K.CONV2D, list(node.inputs), conv_attrs, w)
        if f"{node.name}/kernel" in graph.weight_quant:
            pass  # same node name, same weight keys
        return {"rule": "DENSE->CONV2D_1x1", "node": node.name, "new_nodes": [node.name]}
    if len(in_shape) != 2:
        raise GraphError(f"no dense rewrite for input rank {len(in_shape)}")
    tokens = in_shape[0]
    to4 = Node(f"{node.name}/to_nhwc", K.RESHAPE, list(node.inputs), {"shape": (tokens, 1, n)})
    conv = Node(f"{node.name}/conv", K.CONV2D, [to4.name], conv_attrs, w)
    back = Node(node.name, K.RESHAPE, [conv.name], {"shape": (tokens, m)})
    graph.nodes[idx:idx + 1] = [to4, conv, back]
    if graph.is_quantized:
        graph.quant[to4.name] = graph.quant[node.inputs[0]]
        graph.quant[conv.name] = graph.quant[node.name]
        for wname in w:
            old = f"{node.name}/{wname}"
            if old in graph.weight_quant:
                graph.weight_quant[f"{conv.name}/{wname}"] = graph.weight_quant.pop(old)
    _rename_in_blocks(graph, node.name, [to4.name, conv.name, back.name])
    return {"rule": "DENSE->RESHAPE+CONV2D_1x1+RESHAPE", "node": node.name,
            "new_nodes": [to4.name, conv.name, back.name]}


@dataclass
class RewriteResult:
    graph: ModelGraph
    log: list[dict]
    unresolved: list[dict]


def rewrite(graph: ModelGraph, policy: OpSupportPolicy | None = None) -> RewriteResult:
    """Apply rewrite rules until nothing changes.

    Rules: SQUARED_DIFFERENCE(a, b) becomes MUL(SUB(a, b), SUB(a, b));
    DENSE on a multi-dimensional input becomes a 1x1 CONV2D (with reshapes
    around it for token matrices).  Batched graphs cannot be rewritten and
    are reported as fatal.  Nodes no rule can fix are listed as unresolved.
    """
    policy = policy or OpSupportPolicy()
    g = graph.copy()
    log: list[dict] = []
    unresolved: list[dict] = []
    if g.batch != 1:
        unresolved.append({"node": "*", "reason": BATCHED_INPUT, "severity": "fatal",
                           "message": f"graph is batched (batch={g.batch}); the accelerator runs batch 1 "
                                      "and the graph cannot be unbatched automatically"})
    changed = True
    while changed:
        changed = False
        shapes = g.shapes()
        for idx, node in enumerate(g.nodes):
            if node.kind == K.SQUARED_DIFFERENCE and K.SQUARED_DIFFERENCE not in policy.supported_kinds:
                log.append(_rewrite_squared_difference(g, idx, shapes))
                changed = True
                break
            if (node.kind == K.DENSE and policy.enforce_rank_rule
                    and len(shapes[node.inputs[0]]) in (2, 3)):
                log.append(_rewrite_dense(g, idx, shapes))
                changed = True
                break
    for v in validate(g, policy):
        if not v.supported and v.reasons != [BATCHED_INPUT]:
            unresolved.append({"node": v.node, "reason": ",".join(v.reasons), "severity": "warning",
                               "message": v.detail or f"{v.kind} left for CPU fallback"})
    return RewriteResult(g, log, unresolved)


# --------------------------------------------------------------------------- #
# partitioning and budget


def partition(graph: ModelGraph, verdicts: list[Verdict]) -> PartitionPlan:
    """Maximal contiguous runs of supported nodes become accelerator segments."""
    by_node = {v.node: v for v in verdicts}
    missing = [n.name for n in graph.nodes if n.name not in by_node]
    if missing:
        raise GraphError(f"no verdict for nodes {missing}")
    runs: list[tuple[str, list[str]]] = []
    for node in graph.nodes:
        target = ACCELERATOR if by_node[node.name].supported else FALLBACK
        if runs and runs[-1][0] == target:
            runs[-1][1].append(node.name)
        else:
            runs.append((target, [node.name]))
    consumers: dict[str, set[str]] = {}
    for node in graph.nodes:
        for i in node.inputs:
            consumers.setdefault(i, set()).add(node.name)
    nodes = {n.name: n for n in graph.nodes}
    segments = []
    for target, names in runs:
        members = set(names)
        ins = []
        for n in names:
            for i in nodes[n].inputs:
                if i not in members and i not in ins:
                    ins.append(i)
        outs = [n for n in names
                if n in graph.outputs or consumers.get(n, set()) - members]
        segments.append(Segment(target, names, ins, outs))
    return PartitionPlan(segments, verdicts)


def param_bytes(graph: ModelGraph) -> int:
    return int(sum(w.nbytes for _, w in graph.weight_items()))


def check_budget(graph: ModelGraph, policy: OpSupportPolicy | None = None) -> BudgetResult:
    policy = policy or OpSupportPolicy()
    return BudgetResult(param_bytes(graph), policy.param_cache_budget_bytes)


# --------------------------------------------------------------------------- #
# compile


@dataclass
class CompileReport:
    model: str
    policy: OpSupportPolicy
    plan: PartitionPlan
    rewrites: list[dict]
    budget: BudgetResult
    violations: list[dict]
    graph: ModelGraph | None = None

    @property
    def fully_accelerated(self) -> bool:
        return self.plan.fully_accelerated and not any(v["severity"] == "fatal" for v in self.violations)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "fully_accelerated": self.fully_accelerated,
            "num_nodes": len(self.plan.diagnostics),
            "num_segments": len(self.plan.segments),
            "fallback_nodes": self.plan.fallback_nodes,
            "segments": [s.to_dict() for s in self.plan.segments],
            "rewrites": self.rewrites,
            "budget": self.budget.to_dict(),
            "violations": self.violations,
            "diagnostics": [v.to_dict() for v in self.plan.diagnostics],
            "policy": self.policy.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        d = self.to_dict()
        lines = [
            f"model: {d['model']}",
            f"fully accelerated: {'true' if d['fully_accelerated'] else 'false'}",
            f"nodes: {d['num_nodes']}  segments: {d['num_segments']}  "
            f"fallback nodes: {len(d['fallback_nodes'])}",
            f"parameter bytes: {d['budget']['param_bytes']:,} / budget {d['budget']['budget_bytes']:,} "
            f"({'PASS' if d['budget']['passed'] else 'FAIL, over by ' + format(d['budget']['overage_bytes'], ',')})",
            f"rewrites applied: {len(d['rewrites'])}",
        ]
        counts: dict[str, int] = {}
        for r in d["rewrites"]:
            counts[r["rule"]] = counts.get(r["rule"], 0) + 1
        for rule, c in sorted(counts.items()):
            lines.append(f"  {rule}: {c}")
        lines.append("segments:")
        for i, s in enumerate(d["segments"]):
            lines.append(f"  [{i}] {s['target']:<11} {len(s['nodes']):4d} nodes  "
                         f"{s['nodes'][0]} .. {s['nodes'][-1]}")
        if d["violations"]:
            lines.append("violations:")
            for v in d["violations"]:
                lines.append(f"  {v['severity']:<7} {v['node']}: {v['reason']} {v['message']}")
        return "\n".join(lines) + "\n"


def compile_graph(graph: ModelGraph, policy: OpSupportPolicy | None = None) -> CompileReport:
    """quantize-check -> rewrite -> validate -> partition -> budget."""
    policy = policy or OpSupportPolicy()
    graph.check_structure()
    violations = []
    if policy.require_int8 and not graph.is_quantized:
        violations.append({"node": "*", "reason": NON_INT8, "severity": "fatal",
                           "message": "graph is not quantized; run post-training quantization first"})
    rw = rewrite(graph, policy)
    verdicts = validate(rw.graph, policy)
    plan = partition(rw.graph, verdicts)
    budget = check_budget(rw.graph, policy)
    violations.extend(v for v in rw.unresolved if not (v["severity"] == "warning" and NON_INT8 in v["reason"]
                                                       and violations))
    if not budget.passed:
        violations.append({"node": "*", "reason": "PARAM_BUDGET", "severity": "warning",
                           "message": f"parameters exceed the cache budget by {budget.overage_bytes} bytes"})
    return CompileReport(graph.name, policy, plan, rw.log, budget, violations, rw.graph)
