"""Metrics: edit-distance WER, false-alarm / miss rates, per-class reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MetricError


def align_and_count(ref: Sequence, hyp: Sequence) -> tuple[int, int, int, int]:
    """Minimal-edit alignment with unit costs; returns ``(S, D, I, N)``.

    Among alignments with the fewest edits, the one with the most exact
    matches is chosen, and remaining ties prefer a substitution over a
    deletion or insertion.  ``S + D + I`` is the edit distance in every case.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    # cost[i, j] = (edits, -hits) to align ref[:i] with hyp[:j]; compared lexicographically
    edits = np.zeros((n + 1, m + 1), dtype=np.int64)
    hits = np.zeros((n + 1, m + 1), dtype=np.int64)
    edits[:, 0] = np.arange(n + 1)
    edits[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = ref[i - 1] == hyp[j - 1]
            options = [
                (edits[i - 1, j - 1] + (not same), -(hits[i - 1, j - 1] + same)),
                (edits[i - 1, j] + 1, -hits[i - 1, j]),
                (edits[i, j - 1] + 1, -hits[i, j - 1]),
            ]
            e, h = min(options)
            edits[i, j], hits[i, j] = e, -h
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = (edits[i, j], hits[i, j])
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if (edits[i - 1, j - 1] + (not same), hits[i - 1, j - 1] + same) == here:
                s += not same
                i, j = i - 1, j - 1
                continue
        if i > 0 and (edits[i - 1, j] + 1, hits[i - 1, j]) == here:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, d, ins, n


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    s, d, i, _ = align_and_count(ref, hyp)
    return s + d + i


def wer(ref: Sequence, hyp: Sequence) -> float:
    """(S + D + I) / N; can exceed one."""
    if len(ref) == 0:
        raise MetricError("word error rate needs a non-empty reference")
    s, d, i, n = align_and_count(ref, hyp)
    return (s + d + i) / n


# --------------------------------------------------------------------------- #
# detection rates


def _hard(labels) -> np.ndarray:
    a = np.asarray(labels)
    if a.ndim == 2:  # soft labels; argmax picks the lowest id on ties
        return a.argmax(axis=1)
    if a.ndim != 1:
        raise MetricError(f"labels must be 1-D ids or 2-D distributions, got shape {a.shape}")
    return a.astype(np.int64)


def detection_counts(refs, hyps, negative_ids) -> tuple[int, int, int, int]:
    """``(TP, FN, FP, TN)`` where any non-negative class counts as a detection."""
    r, h = _hard(refs), _hard(hyps)
    if len(r) != len(h):
        raise MetricError(f"length mismatch: {len(r)} references vs {len(h)} predictions")
    neg = np.array(sorted(negative_ids), dtype=np.int64)
    r_pos, h_pos = ~np.isin(r, neg), ~np.isin(h, neg)
    tp = int(np.sum(r_pos & h_pos))
    fn = int(np.sum(r_pos & ~h_pos))
    fp = int(np.sum(~r_pos & h_pos))
    tn = int(np.sum(~r_pos & ~h_pos))
    return tp, fn, fp, tn


def far(refs, hyps, negative_ids) -> float:
    """False-alarm rate FP / (FP + TN) over negative events."""
    _, _, fp, tn = detection_counts(refs, hyps, negative_ids)
    if fp + tn == 0:
        raise MetricError("false-alarm rate needs at least one negative event")
    return fp / (fp + tn)


def mr(refs, hyps, negative_ids) -> float:
    """Miss rate FN / (FN + TP) over positive (keyword) events."""
    tp, fn, _, _ = detection_counts(refs, hyps, negative_ids)
    if fn + tp == 0:
        raise MetricError("miss rate needs at least one positive event")
    return fn / (fn + tp)


def rates_from_confusion(confusion: np.ndarray, negative_ids) -> tuple[float, float]:
    """(FAR, MR) computed directly from a confusion matrix (rows = reference)."""
    c = np.asarray(confusion)
    neg = np.zeros(len(c), dtype=bool)
    neg[list(negative_ids)] = True
    fp = c[np.ix_(neg, ~neg)].sum()
    tn = c[np.ix_(neg, neg)].sum()
    fn = c[np.ix_(~neg, neg)].sum()
    tp = c[np.ix_(~neg, ~neg)].sum()
    if fp + tn == 0 or fn + tp == 0:
        raise MetricError("confusion matrix lacks negative or positive events")
    return float(fp / (fp + tn)), float(fn / (fn + tp))


# --------------------------------------------------------------------------- #
# classification report


def confusion_matrix(refs, hyps, class_count: int) -> np.ndarray:
    r, h = _hard(refs), _hard(hyps)
    if len(r) != len(h):
        raise MetricError(f"length mismatch: {len(r)} references vs {len(h)} predictions")
    for name, a in (("reference", r), ("prediction", h)):
        if len(a) and (a.min() < 0 or a.max() >= class_count):
            raise MetricError(f"{name} ids outside [0, {class_count})")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (r, h), 1)
    return cm


@dataclass
class EvalReport:
    confusion: np.ndarray
    class_names: list[str]
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    weighted_f1: float
    wer: float
    far: float | None = None
    mr: float | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classes": self.class_names,
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "per_class": [
                {"class": c, "precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
                for c, p, r, f, s in zip(self.class_names, self.precision, self.recall, self.f1, self.support)
            ],
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "wer": self.wer,
            "far": self.far,
            "mr": self.mr,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        width = max([len(c) for c in self.class_names] + [12])
        lines = [f"{'Class':<{width}}  {'Precision':>9}  {'Recall':>7}  {'F1':>7}  {'Support':>7}"]
        for c, p, r, f, s in zip(self.class_names, self.precision, self.recall, self.f1, self.support):
            lines.append(f"{c:<{width}}  {p:9.4f}  {r:7.4f}  {f:7.4f}  {int(s):7d}")
        total = int(self.support.sum())
        lines.append(f"{'Macro avg':<{width}}  {np.mean(self.precision):9.4f}  {np.mean(self.recall):7.4f}  "
                     f"{self.macro_f1:7.4f}  {total:7d}")
        lines.append(f"{'Weighted avg':<{width}}  {'':9}  {'':7}  {self.weighted_f1:7.4f}  {total:7d}")
        lines.append("")
        lines.append(f"Accuracy (%)  {100 * self.accuracy:.2f}")
        lines.append(f"WER (%)       {100 * self.wer:.2f}")
        if self.far is not None:
            lines.append(f"FAR (%)       {100 * self.far:.2f}")
        if self.mr is not None:
            lines.append(f"MR (%)        {100 * self.mr:.2f}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(len(num), dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def classification_report(refs, hyps, class_count: int, class_names: Sequence[str] | None = None,
                          negative_ids: Sequence[int] | None = None) -> EvalReport:
    """Confusion matrix and the usual per-class / averaged metrics.

    Soft references (2-D) are resolved by argmax.  Classes with no support
    or no predictions get 0 for the undefined quantity and a warning.  WER
    is computed in the single-label framing (one word per item), where it
    equals ``1 - accuracy``.
    """
    cm = confusion_matrix(refs, hyps, class_count)
    names = list(class_names) if class_names is not None else [str(i) for i in range(class_count)]
    if len(names) != class_count:
        raise MetricError(f"{len(names)} class names for {class_count} classes")
    total = int(cm.sum())
    if total == 0:
        raise MetricError("no samples to evaluate")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    warnings = []
    for k in range(class_count):
        if support[k] == 0:
            warnings.append(f"class {names[k]!r} has no reference samples; recall and F1 set to 0")
        if predicted[k] == 0:
            warnings.append(f"class {names[k]!r} is never predicted; precision set to 0")
    accuracy = float(tp.sum() / total)
    rep = EvalReport(cm, names, accuracy, precision, recall, f1, support,
                     macro_f1=float(f1.mean()),
                     weighted_f1=float(np.sum(f1 * support) / total),
                     wer=1.0 - accuracy, warnings=warnings)
    if negative_ids is not None:
        neg = set(negative_ids)
        pos_events = support[[k for k in range(class_count) if k not in neg]].sum()
        neg_events = support[list(neg)].sum()
        f, m = None, None
        mask = np.isin(np.arange(class_count), list(neg))
        if neg_events:
            f = float(cm[np.ix_(mask, ~mask)].sum() / neg_events)
        if pos_events:
            m = float(cm[np.ix_(~mask, mask)].sum() / pos_events)
        rep.far, rep.mr = f, m
    return rep
