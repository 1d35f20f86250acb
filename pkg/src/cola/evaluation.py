"""Metrics: temporal IoU, interpolated average precision, mAP over an IoU
grid, and the mean relative distance of mined hard snippets from inflated
ground-truth regions.

AP uses the interpolated precision envelope (running max from the tail) with
a stable score sort, matching the standard detection benchmark convention.
Classes without any ground truth are excluded from the mAP mean.
"""

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np


def temporal_iou(a, b):
    """Intersection over union of two real intervals (start, end)."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def average_precision(predictions, ground_truth, iou_threshold):
    """AP for one class.

    predictions: list of (video_id, start, end, score); ground_truth: list of
    (video_id, start, end). Predictions are matched greedily in score order
    (stable on ties) to the best-IoU unmatched ground truth of the same video.
    Returns None when the class has no ground truth.
    """
    if not ground_truth:
        return None
    if not predictions:
        return 0.0

    by_video = defaultdict(list)
    for gi, (vid, start, end) in enumerate(ground_truth):
        by_video[vid].append((gi, (start, end)))

    scores = np.array([p[3] for p in predictions])
    order = np.argsort(-scores, kind="stable")
    matched = set()
    tp = np.zeros(len(order))
    for rank, pi in enumerate(order):
        vid, start, end, _ = predictions[pi]
        best_iou, best_gi = 0.0, None
        for gi, span in by_video.get(vid, ()):
            if gi in matched:
                continue
            iou = temporal_iou((start, end), span)
            if iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi is not None and best_iou >= iou_threshold:
            matched.add(best_gi)
            tp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(tp) + 1)
    recall = cum_tp / len(ground_truth)

    # interpolated envelope: precision becomes its running max from the tail
    mprec = np.concatenate(([0.0], precision, [0.0]))
    mrec = np.concatenate(([0.0], recall, [1.0]))
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    changed = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[changed] - mrec[changed - 1]) * mprec[changed]))


@dataclass
class EvalReport:
    iou_thresholds: list
    class_ids: list
    ap_table: dict            # {threshold: {class_id: ap or None}}
    map_per_threshold: dict   # {threshold: mAP}
    average_map: float

    def to_json(self):
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "class_ids": list(self.class_ids),
            "ap_table": {f"{t:g}": {str(c): v for c, v in row.items()}
                         for t, row in self.ap_table.items()},
            "map_per_threshold": {f"{t:g}": v for t, v in self.map_per_threshold.items()},
            "average_map": self.average_map,
        }

    def format_table(self):
        lines = ["IoU     " + "".join(f"  class_{c:<4d}" for c in self.class_ids) + "   mAP"]
        for t in self.iou_thresholds:
            row = self.ap_table[t]
            cells = "".join(
                f"  {row[c]:<9.4f}" if row[c] is not None else "  " + "-".ljust(9)
                for c in self.class_ids)
            lines.append(f"{t:<8.2f}{cells}   {self.map_per_threshold[t]:.4f}")
        lines.append(f"average mAP over grid: {self.average_map:.4f}")
        return "\n".join(lines)


def evaluate(predictions, ground_truth, iou_grid):
    """predictions: objects with video_id/class_id/start_sec/end_sec/score;
    ground_truth: GroundTruthSegment-like objects."""
    if len(iou_grid) == 0:
        raise ValueError("iou_grid must be nonempty")
    class_ids = sorted({g.class_id for g in ground_truth})
    preds_by_class = defaultdict(list)
    for p in predictions:
        preds_by_class[p.class_id].append((p.video_id, p.start_sec, p.end_sec, p.score))
    gts_by_class = defaultdict(list)
    for g in ground_truth:
        gts_by_class[g.class_id].append((g.video_id, g.start_sec, g.end_sec))

    ap_table, map_per_threshold = {}, {}
    for t in iou_grid:
        row = {c: average_precision(preds_by_class[c], gts_by_class[c], t)
               for c in class_ids}
        ap_table[t] = row
        evaluable = [v for v in row.values() if v is not None]
        map_per_threshold[t] = float(np.mean(evaluable)) if evaluable else 0.0
    average_map = float(np.mean([map_per_threshold[t] for t in iou_grid]))
    return EvalReport(list(iou_grid), class_ids, ap_table, map_per_threshold, average_map)


def inflate_regions(segments, delta):
    """Grow each (start, end) by delta * duration / 2 on both sides."""
    out = []
    for start, end in segments:
        half = delta * (end - start) / 2.0
        out.append((start - half, end + half))
    return out


def rdo(snippet, regions, video_length):
    """0 inside any region, else nearest distance over the video length."""
    best = None
    for start, end in regions:
        if start <= snippet <= end:
            return 0.0
        dist = start - snippet if snippet < start else snippet - end
        best = dist if best is None else min(best, dist)
    return best / video_length if best is not None else 1.0


def mrdo(hard_by_video, gt_by_video, length_by_video, delta):
    """Mean relative distance of mined hard snippets from the inflated
    ground-truth regions; snippets of videos lacking ground truth count 1.

    hard_by_video: {video_id: iterable of snippet indices};
    gt_by_video: {video_id: [(start, end) in snippet units]};
    length_by_video: {video_id: snippet count}.
    Returns (mrdo, flagged_video_count).
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    values = []
    flagged = 0
    for video_id, snippets in hard_by_video.items():
        segments = gt_by_video.get(video_id, [])
        if not segments:
            flagged += 1
            values.extend(1.0 for _ in snippets)
            continue
        regions = inflate_regions(segments, delta)
        length = length_by_video[video_id]
        values.extend(rdo(float(t), regions, length) for t in snippets)
    return (float(np.mean(values)) if values else 0.0), flagged


def read_json_report(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
