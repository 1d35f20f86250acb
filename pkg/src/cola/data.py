"""Feature-file and manifest IO plus the synthetic dataset generator.

Feature file layout (all little-endian):
    magic b"COLAFT01" | version u32 | T u32 | twod u32 | T*twod float32 row-major

Manifests and ground truth are UTF-8 JSON lines. Feature paths may be
relative; they resolve against COLA_DATA_DIR when set, else against the
manifest's directory.

The generator plants per-class prototype segments on a shared background
prototype and linearly blends the two within `transition_width` snippets of
every segment boundary, so boundary snippets are genuinely ambiguous. Video
labels are the classes present; segment extents go to a separate ground
truth file that training never reads.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cola.errors import ConfigError, DataFormatError

FEATURE_MAGIC = b"COLAFT01"
FEATURE_VERSION = 1


@dataclass
class VideoRecord:
    video_id: str
    feature_path: str
    label_set: list
    fps: float = 25.0
    snippet_frames: int = 16
    extra: dict = field(default_factory=dict)

    def seconds_per_snippet(self):
        return self.snippet_frames / self.fps


@dataclass
class GroundTruthSegment:
    video_id: str
    class_id: int
    start_sec: float
    end_sec: float


@dataclass
class SynthConfig:
    num_classes: int = 5
    num_videos: int = 250
    test_fraction: float = 0.2
    snippet_min: int = 60
    snippet_max: int = 120
    feature_dim: int = 16        # per-stream width d; features have 2d columns
    segments_min: int = 1
    segments_max: int = 3
    segment_len_min: int = 12
    segment_len_max: int = 30
    transition_width: int = 3
    distractor_strength: float = 1.0
    glitch_rate: float = 0.2
    noise_sigma: float = 0.2
    fps: float = 25.0
    snippet_frames: int = 16
    seed: int = 42

    def __post_init__(self):
        if self.transition_width < 1:
            raise ConfigError("transition_width must be >= 1")
        if self.snippet_min < 1 or self.snippet_max < self.snippet_min:
            raise ConfigError("bad snippet range")
        if self.segments_min < 1 or self.segments_max < self.segments_min:
            raise ConfigError("bad segments range")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")


def write_features(path, matrix):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise DataFormatError(f"feature matrix must be nonempty 2-D, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_features(path):
    """Stored float32 payload widened to float64 (T, 2d)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEATURE_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic at byte 0, expected {FEATURE_MAGIC!r}, got {magic!r}")
        header = fh.read(12)
        if len(header) < 12:
            raise DataFormatError(f"{path}: truncated header at byte {8 + len(header)}")
        version, num_snippets, width = struct.unpack("<III", header)
        if version != FEATURE_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version} at byte 8")
        if num_snippets == 0 or width == 0:
            raise DataFormatError(f"{path}: degenerate shape {num_snippets}x{width} at byte 12")
        expected = 4 * num_snippets * width
        payload = fh.read(expected)
        if len(payload) < expected:
            raise DataFormatError(
                f"{path}: payload truncated at byte {20 + len(payload)}, "
                f"expected {expected} bytes")
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes at byte {20 + expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(num_snippets, width).astype(np.float64)


def resolve_feature_path(record, manifest_dir):
    path = Path(record.feature_path)
    if path.is_absolute():
        return path
    root = os.environ.get("COLA_DATA_DIR")
    return (Path(root) if root else Path(manifest_dir)) / path


def _parse_record(obj, lineno, path, training):
    required = {"video_id", "feature_path", "labels"}
    missing = required - obj.keys()
    if missing:
        raise DataFormatError(f"{path}:{lineno}: missing fields {sorted(missing)}")
    labels = obj["labels"]
    if training and not labels:
        raise DataFormatError(f"{path}:{lineno}: training record without labels")
    known = {"video_id", "feature_path", "labels", "fps", "snippet_frames"}
    return VideoRecord(
        video_id=obj["video_id"],
        feature_path=obj["feature_path"],
        label_set=[int(c) for c in labels],
        fps=float(obj.get("fps", 25.0)),
        snippet_frames=int(obj.get("snippet_frames", 16)),
        extra={k: v for k, v in obj.items() if k not in known},
    )


def read_manifest(path, training=False):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            records.append(_parse_record(obj, lineno, path, training))
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"video_id": rec.video_id, "feature_path": rec.feature_path,
                   "labels": rec.label_set, "fps": rec.fps,
                   "snippet_frames": rec.snippet_frames}
            obj.update(rec.extra)
            fh.write(json.dumps(obj) + "\n")


def read_gt(path):
    segments = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            missing = {"video_id", "class_id", "start_sec", "end_sec"} - obj.keys()
            if missing:
                raise DataFormatError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            if obj["end_sec"] <= obj["start_sec"]:
                raise DataFormatError(
                    f"{path}:{lineno}: segment end {obj['end_sec']} <= start {obj['start_sec']}")
            segments.append(GroundTruthSegment(obj["video_id"], int(obj["class_id"]),
                                               float(obj["start_sec"]), float(obj["end_sec"])))
    return segments


def write_gt(path, segments):
    with open(path, "w", encoding="utf-8") as fh:
        for seg in segments:
            fh.write(json.dumps({"video_id": seg.video_id, "class_id": seg.class_id,
                                 "start_sec": seg.start_sec, "end_sec": seg.end_sec}) + "\n")


def make_prototypes(rng, num_classes, width):
    """Unit-norm class prototypes plus a shared background prototype."""
    protos = rng.normal(size=(num_classes + 1, width))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _place_segments(rng, num_snippets, count, len_min, len_max, gap):
    """Non-overlapping segments with at least `gap` background snippets
    around each; returns [(start, end)) or None if they cannot fit."""
    lengths = rng.integers(len_min, len_max + 1, size=count)
    slack = num_snippets - int(lengths.sum()) - gap * (count + 1)
    if slack < 0:
        return None
    cuts = np.sort(rng.integers(0, slack + 1, size=count))
    starts = []
    cursor = 0
    for i in range(count):
        start = cursor + gap + (cuts[i] if i == 0 else cuts[i] - cuts[i - 1])
        starts.append(start)
        cursor = start + int(lengths[i])
    return [(int(s), int(s + l)) for s, l in zip(starts, lengths)]


def _segment_profile(start, end, width, num_snippets):
    """Trapezoid blend profile for one segment: linear ramps of `width`
    snippets straddle each boundary (ceil(width/2) on the action side, the
    rest just outside), so both sides of every cut are ambiguous."""
    inside = (width + 1) // 2
    outside = width - inside
    t = np.arange(num_snippets, dtype=np.float64)
    rise = (t - (start - outside) + 1) / (width + 1)
    fall = ((end - 1 + outside) - t + 1) / (width + 1)
    return np.clip(np.minimum(rise, fall), 0.0, 1.0)


def generate_video(rng, config, protos, class_id, num_snippets):
    """Features (T, 2d) and segment list for one single-class video."""
    width2 = 2 * config.feature_dim
    count = int(rng.integers(config.segments_min, config.segments_max + 1))
    gap = max(2 * config.transition_width + 4, 8)
    len_max = min(config.segment_len_max, num_snippets - 2 * gap)
    segments = None
    while segments is None and count >= 1:
        segments = _place_segments(rng, num_snippets, count,
                                   config.segment_len_min, len_max, gap)
        if segments is None:
            count -= 1
    if segments is None:
        raise ConfigError(
            f"cannot fit any segment of {config.segment_len_min}..{config.segment_len_max} "
            f"snippets plus gaps into a {num_snippets}-snippet video")

    background = protos[-1]
    proto = protos[class_id]
    alpha = np.zeros(num_snippets)
    for start, end in segments:
        alpha = np.maximum(alpha, _segment_profile(start, end, config.transition_width,
                                                   num_snippets))

    # Interior glitches: short runs of action snippets drop to an ambiguous
    # blend level (think: occlusion or an odd camera angle persisting a few
    # snippets). Scored without comparison context these land on either
    # side of a threshold cut, fragmenting the detected interval.
    core_positions = np.flatnonzero(alpha >= 1.0)
    starts = core_positions[rng.random(len(core_positions)) < config.glitch_rate / 2.0]
    for start in starts:
        width = int(rng.integers(1, 4))
        level = float(rng.uniform(0.4, 0.7))
        for t in range(start, min(start + width, num_snippets)):
            if alpha[t] >= 1.0:
                alpha[t] = level

    clean = alpha[:, None] * proto + (1.0 - alpha[:, None]) * background

    # Ambiguous snippets also carry a video-specific off-subspace component
    # (an unfamiliar appearance), strongest where the blend is most mixed.
    # Snippet-wise classification of these is underdetermined by video
    # labels alone; within-video comparison is not.
    distractor = rng.normal(size=width2)
    distractor /= np.linalg.norm(distractor)
    bump = 2.0 * np.minimum(alpha, 1.0 - alpha)
    hard = config.distractor_strength * bump[:, None] * distractor

    noise = rng.normal(scale=config.noise_sigma, size=(num_snippets, width2)) \
        if config.noise_sigma > 0 else 0.0
    return clean + hard + noise, segments


def generate_synthetic(config, out_dir):
    """Write features/, train/test manifests and ground-truth files.

    Returns a dict of output paths. Deterministic in config.seed.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    protos = make_prototypes(rng, config.num_classes, 2 * config.feature_dim)

    sec_per_snip = config.snippet_frames / config.fps
    records, segments = [], []
    for i in range(config.num_videos):
        video_id = f"v{i:04d}"
        class_id = i % config.num_classes
        num_snippets = int(rng.integers(config.snippet_min, config.snippet_max + 1))
        feats, segs = generate_video(rng, config, protos, class_id, num_snippets)
        rel = f"features/{video_id}.feat"
        write_features(out_dir / rel, feats)
        records.append(VideoRecord(video_id, rel, [class_id], config.fps,
                                   config.snippet_frames,
                                   extra={"num_snippets": num_snippets}))
        for start, end in segs:
            segments.append(GroundTruthSegment(video_id, class_id,
                                               start * sec_per_snip, end * sec_per_snip))

    num_test = int(round(config.num_videos * config.test_fraction))
    train, test = records[:config.num_videos - num_test], records[config.num_videos - num_test:]
    test_ids = {r.video_id for r in test}
    paths = {
        "train_manifest": out_dir / "train.jsonl",
        "test_manifest": out_dir / "test.jsonl",
        "train_gt": out_dir / "gt_train.jsonl",
        "test_gt": out_dir / "gt_test.jsonl",
    }
    write_manifest(paths["train_manifest"], train)
    write_manifest(paths["test_manifest"], test)
    write_gt(paths["train_gt"], [s for s in segments if s.video_id not in test_ids])
    write_gt(paths["test_gt"], [s for s in segments if s.video_id in test_ids])
    return paths
