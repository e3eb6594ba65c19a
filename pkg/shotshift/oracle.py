"""
Brute force reference evaluator.

Recomputes AP / AR by literal enumeration of the ranked detection list,
with plain Python numbers and no code shared with shotshift.metrics.  It
is slow and only meant for cross-checking the evaluator on small inputs.
"""
from __future__ import division

from shotshift.exceptions import EvaluationError


def _overlap(a, b):
    a_x1, a_y1 = a[0], a[1]
    a_x2, a_y2 = a[0] + a[2], a[1] + a[3]
    b_x1, b_y1 = b[0], b[1]
    b_x2, b_y2 = b[0] + b[2], b[1] + b[3]
    inter_w = min(a_x2, b_x2) - max(a_x1, b_x1)
    inter_h = min(a_y2, b_y2) - max(a_y1, b_y1)
    inter = 0.0
    if inter_w > 0 and inter_h > 0:
        inter = inter_w * inter_h
    union = a[2] * a[3] + b[2] * b[3] - inter
    if union <= 0:
        raise EvaluationError("IoU of two degenerate boxes")
    return inter / union


def _class_ranking(detections, ground_truth, images, class_id, threshold, cap):
    ranking = []
    for image_id in images:
        dets = [d for d in detections.get(image_id, []) if d.class_id == class_id]
        dets = sorted(dets, key=lambda d: -d.score)[:cap]
        gts = [g for g in ground_truth.get(image_id, []) if g.class_id == class_id]
        used = set()
        for det in dets:
            chosen = None
            chosen_overlap = None
            for j in range(len(gts)):
                if j in used:
                    continue
                value = _overlap(det.bbox, gts[j].bbox)
                if value < threshold:
                    continue
                if chosen is None or value > chosen_overlap:
                    chosen = j
                    chosen_overlap = value
            if chosen is not None:
                used.add(chosen)
            ranking.append((det.score, chosen is not None))
    return sorted(ranking, key=lambda item: -item[0])


def _ap(ranking, positives):
    precisions = []
    recalls = []
    hits = 0
    for k in range(len(ranking)):
        if ranking[k][1]:
            hits += 1
        precisions.append(hits / (k + 1))
        recalls.append(hits / positives)
    total = 0.0
    for i in range(101):
        point = i / 100
        best = 0.0
        for k in range(len(ranking)):
            if recalls[k] >= point and precisions[k] > best:
                best = precisions[k]
        total += best
    return total / 101, hits / positives


def oracle_evaluate(detections, ground_truth, classes=None, max_detections=100):
    from shotshift.metrics import MetricsReport

    thresholds = [(50 + 5 * i) / 100 for i in range(10)]
    images = sorted(set(list(ground_truth) + list(detections)))
    positives = {}
    for image_id in ground_truth:
        for gt in ground_truth[image_id]:
            positives[gt.class_id] = positives.get(gt.class_id, 0) + 1
    if classes is None:
        classes = list(positives)
    classes = sorted(classes)
    evaluated = [c for c in classes if positives.get(c, 0) > 0]
    if not evaluated:
        raise EvaluationError("no ground truth to evaluate")

    per_class = {}
    sum_ap = sum_ap50 = sum_ap75 = sum_ar = 0.0
    for class_id in classes:
        if class_id not in evaluated:
            per_class[class_id] = None
            continue
        ap_values = []
        recall_values = []
        for threshold in thresholds:
            ranking = _class_ranking(
                detections, ground_truth, images, class_id, threshold, max_detections
            )
            ap, recall = _ap(ranking, positives[class_id])
            ap_values.append(ap)
            recall_values.append(recall)
        entry = {
            "AP": sum(ap_values) / len(ap_values),
            "AP50": ap_values[0],
            "AP75": ap_values[5],
            "AR": sum(recall_values) / len(recall_values),
        }
        per_class[class_id] = entry
        sum_ap += entry["AP"]
        sum_ap50 += entry["AP50"]
        sum_ap75 += entry["AP75"]
        sum_ar += entry["AR"]

    n = len(evaluated)
    counts = {
        "images": len(images),
        "ground_truths": sum(positives.get(c, 0) for c in classes),
        "detections": len(
            [d for i in detections for d in detections[i] if d.class_id in classes]
        ),
    }
    return MetricsReport(
        sum_ap / n, sum_ap50 / n, sum_ap75 / n, sum_ar / n, per_class, counts, max_detections
    )
