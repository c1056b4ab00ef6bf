"""Evaluation measures: edit distance, CER / WA / WER, and detection AP.

``dl_distance`` is the Damerau-Levenshtein metric over insert, delete,
substitute and adjacent-transposition unit edits (Lowrance-Wagner dynamic
program).  Unlike the cheaper optimal-string-alignment variant it equals the
shortest-path distance in the unit-edit graph and satisfies the triangle
inequality, so it can be verified against a brute-force edit-graph search.

WER reuses the same distance over word tokens, which means it counts an
adjacent word swap as a single error where classic WER would count two;
a dedicated test pins that behaviour down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .detector import iou


def dl_distance(a: Sequence, b: Sequence) -> int:
    """Damerau-Levenshtein distance between two sequences of hashable tokens."""
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    inf = la + lb
    # (la+2) x (lb+2) table with a sentinel border for the transposition rule
    d = [[inf] * (lb + 2) for _ in range(la + 2)]
    for i in range(la + 1):
        d[i + 1][1] = i
    for j in range(lb + 1):
        d[1][j + 1] = j
    last_row: dict = {}
    for i in range(1, la + 1):
        last_col = 0
        for j in range(1, lb + 1):
            i_prev = last_row.get(b[j - 1], 0)
            j_prev = last_col
            if a[i - 1] == b[j - 1]:
                cost = 0
                last_col = j
            else:
                cost = 1
            d[i + 1][j + 1] = min(
                d[i][j] + cost,            # substitute / match
                d[i + 1][j] + 1,           # insert
                d[i][j + 1] + 1,           # delete
                d[i_prev][j_prev] + (i - i_prev - 1) + 1 + (j - j_prev - 1),
            )
        last_row[a[i - 1]] = i
    return d[la + 1][lb + 1]


def cer(gt: str, pred: str) -> float:
    """Character error rate in percent: distance scaled by ground-truth length.

    Can exceed 100 when the prediction inserts beyond the ground truth.
    """
    if len(gt) == 0:
        raise ValueError("cer: empty ground truth (division by zero)")
    return dl_distance(gt, pred) * 100.0 / len(gt)


def word_accuracy(pairs: Sequence[tuple[str, str]]) -> float:
    """Percentage of (ground_truth, prediction) pairs that match exactly."""
    if not pairs:
        raise ValueError("word_accuracy: empty evaluation list")
    hits = sum(1 for gt, pred in pairs if gt == pred)
    return hits * 100.0 / len(pairs)


def wer(gt_words: Sequence[str], pred_words: Sequence[str]) -> float:
    """Word error rate in percent: every word is treated as one token."""
    if len(gt_words) == 0:
        raise ValueError("wer: empty ground truth")
    return dl_distance(tuple(gt_words), tuple(pred_words)) * 100.0 / len(gt_words)


def pipeline_cer(gt_words: Sequence[str], pred_words: Sequence[str]) -> float:
    """CER over the space-joined word sequences."""
    return cer(" ".join(gt_words), " ".join(pred_words))


# --- detection evaluation ---------------------------------------------------

@dataclass(frozen=True)
class DetBox:
    cls: str
    score: float
    box: tuple[float, float, float, float]


@dataclass(frozen=True)
class GtBox:
    cls: str
    box: tuple[float, float, float, float]


@dataclass
class DetectionEvalSet:
    """Per-image detections and ground truths, plus the IoU threshold."""

    images: list[tuple[list[DetBox], list[GtBox]]] = field(default_factory=list)
    iou_threshold: float = 0.5

    def add_image(self, detections: list[DetBox], ground_truths: list[GtBox]) -> None:
        self.images.append((detections, ground_truths))


def average_precision(evalset: DetectionEvalSet, cls: str) -> float | None:
    """Area under the all-points-interpolated precision-recall curve.

    Detections are ranked by score globally; each can claim at most one
    still-unmatched same-class ground truth with IoU >= threshold (highest
    IoU first).  Returns None when the class has no ground truth.
    """
    thr = evalset.iou_threshold
    if not (0.0 < thr < 1.0):
        raise ValueError(f"iou threshold must be in (0, 1), got {thr}")
    n_pos = sum(1 for _, gts in evalset.images for g in gts if g.cls == cls)
    if n_pos == 0:
        return None

    ranked = []
    for img_idx, (dets, _) in enumerate(evalset.images):
        for det_idx, det in enumerate(dets):
            if det.cls == cls:
                ranked.append((-det.score, img_idx, det_idx, det))
    ranked.sort(key=lambda r: r[:3])

    matched: list[set[int]] = [set() for _ in evalset.images]
    tp = []
    for _, img_idx, _, det in ranked:
        gts = evalset.images[img_idx][1]
        best_iou, best_gt = 0.0, -1
        for gt_idx, gt in enumerate(gts):
            if gt.cls != cls or gt_idx in matched[img_idx]:
                continue
            v = iou(det.box, gt.box)
            if v >= thr and v > best_iou:
                best_iou, best_gt = v, gt_idx
        if best_gt >= 0:
            matched[img_idx].add(best_gt)
            tp.append(1)
        else:
            tp.append(0)

    ap = 0.0
    cum_tp = 0
    prev_recall = 0.0
    # all-points interpolation: integrate max-precision-to-the-right
    precisions, recalls = [], []
    for rank, hit in enumerate(tp, start=1):
        cum_tp += hit
        precisions.append(cum_tp / rank)
        recalls.append(cum_tp / n_pos)
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    for p, r in zip(precisions, recalls):
        ap += (r - prev_recall) * p
        prev_recall = r
    return ap


def mean_ap(evalset: DetectionEvalSet, classes: Sequence[str]) -> float:
    """Mean AP over the classes that have at least one ground truth."""
    values = [average_precision(evalset, c) for c in classes]
    present = [v for v in values if v is not None]
    if not present:
        raise ValueError("mean_ap: no class has any ground truth")
    return sum(present) / len(present)


def evaluation_report(wa: float | None = None, cer_value: float | None = None,
                      wer_value: float | None = None, pcer: float | None = None,
                      per_class_ap: dict[str, float | None] | None = None,
                      map_value: float | None = None) -> dict:
    """Assemble the JSON-ready report emitted by the CLI."""
    return {
        "wa": wa,
        "cer": cer_value,
        "wer": wer_value,
        "pipeline_cer": pcer,
        "per_class_ap": per_class_ap,
        "map": map_value,
    }
