"""Flat `key = value` run configuration with schema validation.

One file drives every subcommand; defaults reproduce the reference
hyper-parameter setting. CLI --set overrides win over the file.
"""

from dataclasses import dataclass, fields

import numpy as np

from cola.data import SynthConfig
from cola.errors import ConfigError
from cola.inference import InferConfig
from cola.losses import LossConfig
from cola.mining import MiningConfig
from cola.model import ModelConfig
from cola.trainer import TrainConfig


@dataclass
class RunConfig:
    # model
    feature_dim: int = 16
    num_classes: int = 5
    embed_kernel: int = 3
    cls_kernel: int = 1
    dropout_rate: float = 0.7
    # mining
    binarize_threshold: float = 0.5
    mask_small: int = 3
    mask_large: int = 6
    easy_ratio: int = 5
    hard_ratio: int = 20
    # losses
    snico_weight: float = 0.01
    temperature: float = 0.07
    num_negatives: int = 0          # 0 -> as many as the mined easy count
    # training
    sample_length: int = 50
    batch_size: int = 16
    epochs: int = 100
    learning_rate: float = 1e-4
    seed: int = 42
    snapshot_every: int = 0
    # inference
    class_threshold: float = 0.2
    cas_thresholds: str = "0:0.25:0.025"
    nms_iou: float = 0.6
    margin_frac: float = 0.25
    # evaluation
    iou_grid: str = "0.1:0.7:0.1"
    # synthetic data
    num_videos: int = 250
    test_fraction: float = 0.2
    snippet_min: int = 60
    snippet_max: int = 120
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

    def model_config(self):
        return ModelConfig(self.feature_dim, self.num_classes, self.embed_kernel,
                           self.cls_kernel, self.dropout_rate)

    def mining_config(self):
        return MiningConfig(self.binarize_threshold, self.mask_small, self.mask_large,
                            self.easy_ratio, self.hard_ratio)

    def loss_config(self):
        return LossConfig(self.snico_weight, self.temperature, self.num_negatives)

    def train_config(self):
        return TrainConfig(self.model_config(), self.mining_config(), self.loss_config(),
                           self.sample_length, self.batch_size, self.epochs,
                           self.learning_rate, self.seed, self.snapshot_every)

    def infer_config(self):
        return InferConfig(self.class_threshold, parse_grid(self.cas_thresholds),
                           self.nms_iou, self.margin_frac)

    def synth_config(self):
        return SynthConfig(
            num_classes=self.num_classes, num_videos=self.num_videos,
            test_fraction=self.test_fraction, snippet_min=self.snippet_min,
            snippet_max=self.snippet_max, feature_dim=self.feature_dim,
            segments_min=self.segments_min, segments_max=self.segments_max,
            segment_len_min=self.segment_len_min, segment_len_max=self.segment_len_max,
            transition_width=self.transition_width,
            distractor_strength=self.distractor_strength, glitch_rate=self.glitch_rate,
            noise_sigma=self.noise_sigma,
            fps=self.fps, snippet_frames=self.snippet_frames, seed=self.seed)

    def eval_grid(self):
        return parse_grid(self.iou_grid)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_grid(spec):
    """'start:stop:step' inclusive grid, or a comma list of values."""
    try:
        if ":" in str(spec):
            start, stop, step = (float(v) for v in str(spec).split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            count = int(round((stop - start) / step))
            values = [start + i * step for i in range(count + 1)]
            return tuple(v for v in values if v <= stop + 1e-9)
        return tuple(float(v) for v in str(spec).split(","))
    except ValueError as exc:
        raise ConfigError(f"bad grid spec {spec!r}; expected start:stop:step or v1,v2,...") \
            from exc


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int" or kind is int:
            return int(raw)
        if kind == "float" or kind is float:
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {kind}") from exc


def apply_assignments(config, assignments):
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"bad assignment {item!r}; expected key=value")
        key, _, raw = item.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(_FIELD_TYPES))}")
        setattr(config, key, _coerce(key, raw))
    return config


def load_config(path=None, overrides=()):
    """Defaults, then the file's `key = value` lines, then CLI overrides."""
    config = RunConfig()
    if path is not None:
        assignments = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                assignments.append(stripped)
        try:
            apply_assignments(config, assignments)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    apply_assignments(config, overrides)
    validate(config)
    return config


def validate(config):
    """Instantiate every sub-config so their invariants run."""
    try:
        config.model_config()
        config.mining_config()
        config.loss_config()
        config.train_config()
        config.infer_config()
        config.synth_config()
        grid = config.eval_grid()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    if len(grid) == 0:
        raise ConfigError("iou_grid is empty")
    if not np.all(np.isfinite(grid)):
        raise ConfigError("iou_grid has non-finite entries")
    return config


def write_default_config(path):
    lines = ["# one key = value per line; '#' starts a comment"]
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {getattr(RunConfig(), f.name)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
