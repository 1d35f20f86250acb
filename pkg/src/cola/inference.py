"""Localization: video-level class selection, activation thresholding, NMS.

Per selected class the activation column is min-max normalized to [0, 1],
swept over a threshold list, and consecutive above-threshold snippets become
proposals. Each proposal is scored by outer-inner contrast (mean activation
inside minus mean in side margins); per-class greedy NMS removes duplicates.
"""

import json
from dataclasses import dataclass

import numpy as np

from cola import data as data_io
from cola import losses as loss_ops
from cola import model
from cola.trainer import sample_snippet_indices


@dataclass
class InferConfig:
    class_threshold: float = 0.2          # video-level probability cut
    cas_thresholds: tuple = tuple(np.arange(0.0, 0.2501, 0.025))
    nms_iou: float = 0.6
    margin_frac: float = 0.25

    def __post_init__(self):
        if len(self.cas_thresholds) == 0:
            raise ValueError("cas_thresholds must be nonempty")
        if any(not 0.0 <= t < 1.0 for t in self.cas_thresholds):
            raise ValueError("cas thresholds must lie in [0, 1)")
        if not 0.0 <= self.class_threshold < 1.0:
            raise ValueError("class_threshold must be in [0, 1)")
        if not 0.0 <= self.nms_iou < 1.0:
            raise ValueError("nms_iou must be in [0, 1)")


@dataclass
class Proposal:
    video_id: str
    class_id: int
    start_snippet: int   # half-open, original-video snippet coordinates
    end_snippet: int
    start_sec: float
    end_sec: float
    score: float

    def to_json(self):
        return {"video_id": self.video_id, "class_id": self.class_id,
                "class_name": f"class_{self.class_id}",
                "start_sec": self.start_sec, "end_sec": self.end_sec,
                "start_snippet": self.start_snippet, "end_snippet": self.end_snippet,
                "score": self.score}


def select_video_classes(probs, threshold):
    """Classes above the probability threshold; argmax fallback when none."""
    chosen = np.flatnonzero(probs > threshold)
    if len(chosen) == 0:
        chosen = np.array([int(np.argmax(probs))])
    return chosen


def minmax_normalize(column):
    lo, hi = float(column.min()), float(column.max())
    if hi - lo < 1e-12:
        return np.zeros_like(column)
    return (column - lo) / (hi - lo)


def segment_runs(values, threshold):
    """Maximal runs of consecutive values >= threshold as half-open pairs."""
    mask = np.asarray(values) >= threshold
    edges = np.diff(mask.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1) + 1)
    if mask.size and mask[0]:
        starts.insert(0, 0)
    if mask.size and mask[-1]:
        ends.append(mask.size)
    return list(zip(starts, ends))


def score_proposal(column, start, end, margin_frac):
    """Mean activation inside minus mean in the side margins (clipped to the
    sequence); the inner mean alone when both margins are empty."""
    inner = float(np.mean(column[start:end]))
    margin = int(np.ceil(margin_frac * (end - start)))
    left = column[max(0, start - margin):start]
    right = column[end:end + margin]
    outside = np.concatenate([left, right])
    if outside.size == 0:
        return inner
    return inner - float(np.mean(outside))


def temporal_iou_snippets(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def nms(proposals, iou_threshold):
    """Greedy suppression within one (video, class) group: best score first
    (ties by earlier start, then earlier end), drop anything overlapping a
    kept proposal beyond the threshold."""
    order = sorted(proposals, key=lambda p: (-p.score, p.start_snippet, p.end_snippet))
    kept = []
    for cand in order:
        span = (cand.start_snippet, cand.end_snippet)
        if all(temporal_iou_snippets(span, (k.start_snippet, k.end_snippet)) <= iou_threshold
               for k in kept):
            kept.append(cand)
    return kept


def localize_video(record, raw, params, model_cfg, mining_cfg, infer_cfg, sample_length):
    """Proposals for one video (already NMS-filtered, canonically ordered)."""
    idx = sample_snippet_indices(raw.shape[0], sample_length, None, "linspace")
    out = model.forward(raw[idx], params, model_cfg, training=False)
    easy_count = mining_cfg.easy_count(sample_length)
    _, probs, _ = loss_ops.video_class_scores(out.tcas, easy_count)

    sec_per_snip = record.seconds_per_snippet()
    proposals = []
    for class_id in select_video_classes(probs, infer_cfg.class_threshold):
        column = minmax_normalize(out.tcas[:, class_id])
        candidates = []
        for threshold in infer_cfg.cas_thresholds:
            for s, e in segment_runs(column, threshold):
                start = int(idx[s])
                end = int(idx[e - 1]) + 1
                score = score_proposal(column, s, e, infer_cfg.margin_frac)
                candidates.append(Proposal(record.video_id, int(class_id), start, end,
                                           start * sec_per_snip, end * sec_per_snip,
                                           score))
        proposals.extend(nms(candidates, infer_cfg.nms_iou))
    proposals.sort(key=lambda p: (p.class_id, p.start_snippet, p.end_snippet))
    return proposals


def localize(records, params, model_cfg, mining_cfg, infer_cfg, sample_length,
             manifest_dir="."):
    """Localize every manifest video; unreadable features become error
    entries and the run continues. Returns (proposals, errors)."""
    proposals, errors = [], []
    for rec in sorted(records, key=lambda r: r.video_id):
        try:
            raw = data_io.read_features(data_io.resolve_feature_path(rec, manifest_dir))
        except Exception as exc:  # per-video isolation: record and continue
            errors.append({"video_id": rec.video_id, "error": str(exc)})
            continue
        proposals.extend(localize_video(rec, raw, params, model_cfg, mining_cfg,
                                        infer_cfg, sample_length))
    return proposals, errors


def write_proposals(path, proposals, errors=()):
    with open(path, "w", encoding="utf-8") as fh:
        for prop in proposals:
            fh.write(json.dumps(prop.to_json()) + "\n")
        for err in errors:
            fh.write(json.dumps({"error": err}) + "\n")


def read_proposals(path):
    proposals = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "error" in obj:
                continue
            proposals.append(Proposal(obj["video_id"], int(obj["class_id"]),
                                      int(obj["start_snippet"]), int(obj["end_snippet"]),
                                      float(obj["start_sec"]), float(obj["end_sec"]),
                                      float(obj["score"])))
    return proposals
