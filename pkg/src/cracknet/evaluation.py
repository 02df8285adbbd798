"""Precision / recall / F1 with a pixel-distance tolerance.

A predicted crack pixel is a true positive when some ground-truth crack
pixel lies within distance ``d``; a ground-truth pixel is missed (false
negative) when no predicted pixel lies within ``d``. Precision therefore
counts on the prediction side and recall on the ground-truth side.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

METRICS = ("euclidean", "chebyshev")


@dataclass(frozen=True)
class Tolerance:
    d: float = 2.0
    metric: str = "euclidean"

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("tolerance must be non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


@dataclass
class EvalReport:
    tp: int  # predicted pixels near ground truth
    fp: int
    fn: int
    tp_gt: int  # ground-truth pixels near a prediction
    precision: float
    recall: float
    f1: float
    per_image: list = field(default_factory=list)  # (stem, Pr, Re, F1)
    aggregation: str = "single"


def _distance_to(mask, metric):
    """Distance from every pixel to the nearest nonzero pixel of ``mask`` (inf if none)."""
    if not mask.any():
        return np.full(mask.shape, np.inf)
    if metric == "euclidean":
        return ndimage.distance_transform_edt(mask == 0)
    return ndimage.distance_transform_cdt(mask == 0, metric="chessboard").astype(np.float64)


def confusion_counts(pred, gt, tol: Tolerance):
    """(TP, FP, FN, TP_gt) under tolerance ``tol``."""
    pred = np.asarray(pred) != 0
    gt = np.asarray(gt) != 0
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    near_gt = _distance_to(gt, tol.metric) <= tol.d
    near_pred = _distance_to(pred, tol.metric) <= tol.d
    tp = int(np.count_nonzero(pred & near_gt))
    fp = int(np.count_nonzero(pred)) - tp
    tp_gt = int(np.count_nonzero(gt & near_pred))
    fn = int(np.count_nonzero(gt)) - tp_gt
    return tp, fp, fn, tp_gt


def scores(tp, fp, fn, tp_gt):
    """Pr, Re, F1 with fixed conventions for empty prediction / ground truth."""
    n_pred = tp + fp
    n_gt = tp_gt + fn
    if n_pred == 0 and n_gt == 0:
        return 1.0, 1.0, 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp_gt / n_gt if n_gt else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def evaluate_pair(pred, gt, tol: Tolerance = Tolerance(), stem="") -> EvalReport:
    values = getattr(pred, "values", pred)
    tp, fp, fn, tp_gt = confusion_counts(values, gt, tol)
    pr, re, f1 = scores(tp, fp, fn, tp_gt)
    return EvalReport(tp, fp, fn, tp_gt, pr, re, f1, [(stem, pr, re, f1)])


def evaluate_corpus(pairs, tol: Tolerance = Tolerance(), aggregation="micro"):
    """Evaluate (stem, pred, gt) triples.

    ``micro`` pools the confusion counts, ``macro`` averages per-image
    scores. ``both`` returns a dict with one report per mode.
    """
    if aggregation not in ("micro", "macro", "both"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no prediction / ground-truth pairs to evaluate")
    singles = [evaluate_pair(pred, gt, tol, stem) for stem, pred, gt in pairs]
    per_image = [r.per_image[0] for r in singles]
    tp, fp, fn, tp_gt = (sum(getattr(r, k) for r in singles) for k in ("tp", "fp", "fn", "tp_gt"))
    micro = EvalReport(tp, fp, fn, tp_gt, *scores(tp, fp, fn, tp_gt), per_image, "micro")
    macro = EvalReport(tp, fp, fn, tp_gt,
                       float(np.mean([r.precision for r in singles])),
                       float(np.mean([r.recall for r in singles])),
                       float(np.mean([r.f1 for r in singles])), per_image, "macro")
    if aggregation == "both":
        return {"micro": micro, "macro": macro}
    return micro if aggregation == "micro" else macro


def degenerate_accuracy(masks):
    """Pixel accuracy of the predictor that calls every pixel non-crack."""
    total = 0
    negatives = 0
    for m in masks:
        m = np.asarray(m)
        total += m.size
        negatives += int(np.count_nonzero(m == 0))
    if total == 0:
        raise ValueError("no pixels")
    return negatives / total


def format_table(reports):
    """Aligned text table: per-image rows then one summary row per aggregation."""
    first = next(iter(reports.values()))
    width = max([len("image")] + [len(stem) for stem, *_ in first.per_image] + [len(k) for k in reports])
    lines = [f"{'image':<{width}}  {'Pr':>7}  {'Re':>7}  {'F1':>7}"]
    for stem, pr, re, f1 in first.per_image:
        lines.append(f"{stem:<{width}}  {pr:7.4f}  {re:7.4f}  {f1:7.4f}")
    lines.append("-" * len(lines[0]))
    for name, rep in reports.items():
        lines.append(f"{name:<{width}}  {rep.precision:7.4f}  {rep.recall:7.4f}  {rep.f1:7.4f}")
    return "\n".join(lines)


def write_csv(reports, path):
    first = next(iter(reports.values()))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stem", "Pr", "Re", "F1"])
        for stem, pr, re, f1 in first.per_image:
            w.writerow([stem, f"{pr:.6f}", f"{re:.6f}", f"{f1:.6f}"])
        for name, rep in reports.items():
            w.writerow([name, f"{rep.precision:.6f}", f"{rep.recall:.6f}", f"{rep.f1:.6f}"])
