"""Content selection: alignment labels, selector head, threshold calibration.

Labels mark source positions whose tokens can be matched to the summary by
repeatedly extracting the longest shared contiguous piece sequence.  The
selector is an encoder of the same architecture family with a per-position
logistic head; its (thresholded) output masks the copy head's logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class CalibrationError(ValueError):
    pass


@dataclass
class SelectionLabels:
    y: np.ndarray             # binary over non-pad source positions
    provenance: str = "aligned"


@dataclass
class SelectionPrediction:
    p: np.ndarray             # P_sel per non-pad source position
    threshold: float | None = None


def build_labels(source_pieces: list, summary_pieces: list) -> SelectionLabels:
    """Greedy longest-shared-n-gram alignment.

    Repeatedly find the longest contiguous subsequence present in both the
    (remaining) summary and the document, mark the leftmost document
    occurrence, consume the matched summary span, and repeat until no
    shared n-gram of length >= 1 remains.
    """
    if not source_pieces or not summary_pieces:
        raise ValueError("build_labels requires non-empty piece sequences")
    doc = list(source_pieces)
    y = np.zeros(len(doc), dtype=np.int64)
    remaining = [list(summary_pieces)]
    while True:
        best = None  # (length, doc_start, seg_idx, seg_start)
        for si, seg in enumerate(remaining):
            for start in range(len(seg)):
                for ds in range(len(doc)):
                    n = 0
                    while (start + n < len(seg) and ds + n < len(doc)
                           and seg[start + n] == doc[ds + n]):
                        n += 1
                    if n > 0 and (best is None or n > best[0]
                                  or (n == best[0] and ds < best[1])):
                        best = (n, ds, si, start)
        if best is None:
            break
        n, ds, si, start = best
        y[ds:ds + n] = 1
        seg = remaining.pop(si)
        left, right = seg[:start], seg[start + n:]
        if left:
            remaining.append(left)
        if right:
            remaining.append(right)
    return SelectionLabels(y=y)


def selector_forward(store, encoder_out: Tensor) -> Tensor:
    """Per-position selection probability: sigmoid of a linear head."""
    return ad.sigmoid(ad.matmul(encoder_out, store["selector.weight"])
                      + store["selector.bias"])


def selector_loss(pred: Tensor, labels: np.ndarray, pad_mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over non-pad positions (probabilities clamped)."""
    if pred.shape[0] != len(pad_mask):
        raise ValueError(f"prediction length {pred.shape[0]} vs mask {len(pad_mask)}")
    valid = ~pad_mask
    if not valid.any():
        raise ValueError("selector_loss: no non-pad positions")
    p = ad.clamp_min(pred[valid], 1e-12)
    q = ad.clamp_min(1.0 - pred[valid], 1e-12)
    yv = labels.astype(np.float64)
    nll = -(Tensor(yv) * ad.log(p) + Tensor(1.0 - yv) * ad.log(q))
    return nll.mean()


def _prf(selected: np.ndarray, labels: np.ndarray) -> tuple[float, float, float]:
    tp = int(np.sum(selected & (labels == 1)))
    fp = int(np.sum(selected & (labels == 0)))
    fn = int(np.sum(~selected & (labels == 1)))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def calibrate_threshold(probs: np.ndarray, labels: np.ndarray) -> float:
    """Midpoint between consecutive distinct probabilities maximizing F1.

    Ties break toward the smaller threshold (higher recall).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() == labels.max():
        raise CalibrationError("calibration needs both label classes")
    distinct = np.unique(probs)
    if len(distinct) < 2:
        raise CalibrationError("calibration needs at least two distinct predictions")
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    best_eps, best_f1 = None, -1.0
    for eps in midpoints:
        _, _, f1 = _prf(probs > eps, labels)
        if f1 > best_f1:
            best_eps, best_f1 = eps, f1
    return float(best_eps)


def selection_vector(pred_or_labels, pad_mask: np.ndarray) -> np.ndarray:
    """Boolean selected-vector over all source positions (pads False).

    Accepts a thresholded SelectionPrediction or oracle SelectionLabels.
    """
    selected = np.zeros(len(pad_mask), dtype=bool)
    idx = np.flatnonzero(~pad_mask)
    if isinstance(pred_or_labels, SelectionLabels):
        values = pred_or_labels.y.astype(bool)
    else:
        if pred_or_labels.threshold is None:
            raise ValueError("prediction has no calibrated threshold")
        values = pred_or_labels.p > pred_or_labels.threshold
    if len(values) != len(idx):
        raise ValueError(f"selection length {len(values)} vs {len(idx)} non-pad positions")
    selected[idx] = values
    return selected


def apply_selection_mask(copy_logits: np.ndarray, selected: np.ndarray) -> np.ndarray:
    """Keep selected positions' logits, subtract 10000 from the rest."""
    if copy_logits.shape[-1] != len(selected):
        raise ValueError("copy logits and selection vector length mismatch")
    return copy_logits + (1.0 - selected.astype(np.float64)) * -10000.0
