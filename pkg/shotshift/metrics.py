"""
IoU, greedy detection matching and COCO style AP / AR.

AP is the 101 point interpolated precision averaged over the IoU
thresholds 0.50:0.05:0.95 and then over the classes that have ground
truth.  AR is the final recall, averaged the same way, with at most
max_detections detections per image and class.
"""
from __future__ import division

from collections import namedtuple, OrderedDict

import numpy as np

from shotshift.constants import IOU_THRESHOLDS, RECALL_POINTS
from shotshift.exceptions import EvaluationError
from shotshift.helpers import format_table

Match = namedtuple("Match", "detection score gt_index")


def iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw < 0 or ah < 0 or bw < 0 or bh < 0:
        raise EvaluationError("negative box size in {} or {}".format(a, b))
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0:
        raise EvaluationError("IoU of two degenerate boxes {} and {}".format(a, b))
    return inter / union


class Assignment:
    """
    Result of matching one ranked detection list against ground truth.
    ``matches`` is in rank order; a gt_index of None marks a false
    positive.
    """

    def __init__(self, matches, num_gt):
        self.matches = tuple(matches)
        self.num_gt = num_gt

    @property
    def tp(self):
        return sum(1 for m in self.matches if m.gt_index is not None)

    @property
    def fp(self):
        return len(self.matches) - self.tp

    @property
    def fn(self):
        return self.num_gt - self.tp

    def flags(self):
        return np.array([m.gt_index is not None for m in self.matches], dtype=bool)

    def __repr__(self):
        return "<Assignment tp={} fp={} fn={}>".format(self.tp, self.fp, self.fn)


def match_detections(dets, gts, iou_thresh):
    """
    Walk the detections by descending score (stable) and give each the
    unmatched same-class ground truth of highest IoU >= iou_thresh, the
    first one on ties.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    matches = []
    for i in order:
        det = dets[i]
        best = None
        best_iou = iou_thresh
        for j, gt in enumerate(gts):
            if taken[j] or gt.class_id != det.class_id:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap >= iou_thresh and (best is None or overlap > best_iou):
                best = j
                best_iou = overlap
        if best is not None:
            taken[best] = True
        matches.append(Match(det, det.score, best))
    return Assignment(matches, len(gts))


def precision_recall(flags, num_gt):
    flags = np.asarray(flags, dtype=bool)
    tp = np.cumsum(flags)
    ranks = np.arange(1, len(flags) + 1)
    return tp / ranks, tp / num_gt


def interpolated_ap(flags, num_gt):
    if num_gt == 0:
        return None
    if len(flags) == 0:
        return 0.0
    precision, recall = precision_recall(flags, num_gt)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.zeros(len(RECALL_POINTS))
    found = idx < len(recall)
    sampled[found] = precision[idx[found]]
    return float(sampled.mean())


def average_precision(assignment):
    """
    101 point interpolated AP of one assignment, None without ground truth.
    """
    return interpolated_ap(assignment.flags(), assignment.num_gt)


class MetricsReport:
    """
    Summary metrics plus per class values.  ``per_class`` maps class id to
    a dict with AP, AP50, AP75 and AR, or to None for classes without
    ground truth.
    """

    KEYS = ("AP", "AP50", "AP75", "AR")

    def __init__(self, AP, AP50, AP75, AR, per_class, counts, max_detections=100):
        self.AP = AP
        self.AP50 = AP50
        self.AP75 = AP75
        self.AR = AR
        self.per_class = OrderedDict(sorted(per_class.items()))
        self.counts = dict(counts)
        self.max_detections = max_detections

    def to_dict(self):
        return {
            "AP": self.AP,
            "AP50": self.AP50,
            "AP75": self.AP75,
            "AR": self.AR,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "counts": self.counts,
            "max_detections": self.max_detections,
        }

    def format(self, class_table=None):
        rows = []
        for class_id, values in self.per_class.items():
            name = (class_table or {}).get(class_id, class_id)
            if values is None:
                rows.append([name, "-", "-", "-", "-"])
            else:
                rows.append([name] + [values[k] for k in self.KEYS])
        rows.append(["all", self.AP, self.AP50, self.AP75, self.AR])
        header = "AR over at most {} detections per image".format(self.max_detections)
        return header + "\n" + format_table(("class",) + self.KEYS, rows)

    def __repr__(self):
        return "<MetricsReport AP={:.3f} AP50={:.3f} AR={:.3f}>".format(
            self.AP, self.AP50, self.AR
        )


def _ranked(detections, ground_truth, image_ids, class_id, thresh, max_detections):
    scores = []
    flags = []
    for image_id in image_ids:
        dets = [d for d in detections.get(image_id, ()) if d.class_id == class_id]
        dets = sorted(dets, key=lambda d: -d.score)[:max_detections]
        gts = [g for g in ground_truth.get(image_id, ()) if g.class_id == class_id]
        for match in match_detections(dets, gts, thresh).matches:
            scores.append(match.score)
            flags.append(match.gt_index is not None)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    return np.asarray(flags, dtype=bool)[order]


def evaluate(detections, ground_truth, classes=None, max_detections=100):
    """
    detections and ground_truth map image id to lists of objects with
    bbox, class_id (and score for detections).  Only the given classes
    are evaluated, by default every class with ground truth.
    """
    image_ids = sorted(set(ground_truth) | set(detections))
    num_gt = {}
    for gts in ground_truth.values():
        for gt in gts:
            num_gt[gt.class_id] = num_gt.get(gt.class_id, 0) + 1
    if classes is None:
        classes = sorted(num_gt)
    classes = sorted(classes)
    if not any(num_gt.get(c, 0) for c in classes):
        raise EvaluationError("no ground truth to evaluate")
    per_class = OrderedDict()
    aps = []
    recalls = []
    for class_id in classes:
        total = num_gt.get(class_id, 0)
        if total == 0:
            per_class[class_id] = None
            continue
        ap_row = []
        recall_row = []
        for thresh in IOU_THRESHOLDS:
            flags = _ranked(
                detections, ground_truth, image_ids, class_id, thresh, max_detections
            )
            ap_row.append(interpolated_ap(flags, total))
            recall_row.append(int(flags.sum()) / total)
        aps.append(ap_row)
        recalls.append(recall_row)
        per_class[class_id] = {
            "AP": float(np.mean(ap_row)),
            "AP50": ap_row[0],
            "AP75": ap_row[5],
            "AR": float(np.mean(recall_row)),
        }
    aps = np.array(aps)
    recalls = np.array(recalls)
    counts = {
        "images": len(image_ids),
        "ground_truths": sum(num_gt.get(c, 0) for c in classes),
        "detections": sum(
            1 for dets in detections.values() for d in dets if d.class_id in classes
        ),
    }
    return MetricsReport(
        float(aps.mean(axis=1).mean()),
        float(aps[:, 0].mean()),
        float(aps[:, 5].mean()),
        float(recalls.mean(axis=1).mean()),
        per_class,
        counts,
        max_detections,
    )
