"""Deterministic training loop: sampling, forward, mining, losses, Adam.

One master seed drives everything (parameter init, epoch shuffles, snippet
jitter, dropout, snippet sampling) through a single generator consumed in a
fixed order, so identical (manifest, config) runs produce byte-identical
checkpoints and logs on one platform.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cola import data as data_io
from cola import losses as loss_ops
from cola import mining as mining_ops
from cola import model as model_ops
from cola.errors import TrainingDiverged
from cola.losses import LossConfig
from cola.mining import MiningConfig
from cola.model import ModelConfig
from cola.numerics import adam_step


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(16, 5))
    mining: MiningConfig = field(default_factory=MiningConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sample_length: int = 50     # snippets fed to the model per video
    batch_size: int = 16
    epochs: int = 200
    learning_rate: float = 1e-4
    seed: int = 42
    snapshot_every: int = 0     # epochs between mining dumps; 0 disables

    def __post_init__(self):
        if self.sample_length < self.mining.mask_large + 1:
            raise ValueError("sample_length must exceed the large mining mask")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def sample_snippet_indices(num_available, length, rng, mode):
    """Map `length` model positions onto original snippet indices.

    Each position owns an equal share of the video; `uniform` jitters within
    the share (training), `linspace` takes its center (inference).
    """
    if num_available < 1:
        raise ValueError("video has no snippets")
    positions = np.arange(length, dtype=np.float64)
    if mode == "uniform":
        offsets = rng.random(length)
    elif mode == "linspace":
        offsets = 0.5
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    idx = np.floor((positions + offsets) * num_available / length).astype(np.int64)
    return np.minimum(idx, num_available - 1)


@dataclass
class EpochStats:
    epoch: int
    loss_a: float
    loss_s: float
    loss_total: float
    degenerate_count: int
    clamp_count: int = 0

    def to_json(self):
        return {"epoch": self.epoch, "loss_a": self.loss_a, "loss_s": self.loss_s,
                "loss_total": self.loss_total, "degenerate_count": self.degenerate_count}


class FeatureCache:
    """Loads each video's feature matrix once; desk-scale datasets fit in RAM."""

    def __init__(self, manifest_dir):
        self.manifest_dir = manifest_dir
        self._cache = {}

    def get(self, record):
        if record.video_id not in self._cache:
            path = data_io.resolve_feature_path(record, self.manifest_dir)
            self._cache[record.video_id] = data_io.read_features(path)
        return self._cache[record.video_id]


def video_step(raw, label_ids, params, cfg, rng):
    """Loss terms and accumulated (unscaled) gradients for one training video."""
    out = model_ops.forward(raw, params, cfg.model, training=True, rng=rng)
    sets = mining_ops.mine_snippets(out.actionness, cfg.mining, rng)

    easy_count = cfg.mining.easy_count(raw.shape[0])
    aggregate, probs, top_idx = loss_ops.video_class_scores(out.tcas, easy_count)
    target = loss_ops.normalize_label(label_ids, cfg.model.num_classes)
    loss_a, d_aggregate, clamps = loss_ops.action_loss(probs, target)
    d_tcas = loss_ops.scatter_topk_grad(d_aggregate, top_idx, raw.shape[0], easy_count)

    loss_s, d_embedded, info = loss_ops.snico_loss(out.embedded, sets, cfg.loss, rng)
    loss_ops.combine(loss_a, loss_s, cfg.loss.snico_weight)  # divergence check
    d_emb = d_embedded * cfg.loss.snico_weight if cfg.loss.snico_weight > 0.0 else None
    model_ops.backward(raw, out, params, cfg.model, d_tcas, d_emb)
    return loss_a, loss_s, info["degenerate"], clamps


def dump_mining(records, cache, params, model_cfg, mining_cfg, rng, path):
    """Inference-mode mining over each full feature sequence, one JSON line
    per video (feeds the hard-snippet distance diagnostic)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            raw = cache.get(rec)
            out = model_ops.forward(raw, params, model_cfg, training=False)
            sets = mining_ops.mine_snippets(out.actionness, mining_cfg, rng)
            obj = {"video_id": rec.video_id, **sets.to_json(),
                   "actionness": [round(float(a), 6) for a in out.actionness]}
            fh.write(json.dumps(obj) + "\n")


def train(records, cfg, out_dir, manifest_dir="."):
    """Run the full loop; writes init.ckpt, model.ckpt, metrics.jsonl and
    optional mining snapshots under out_dir. Returns the epoch stats list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = FeatureCache(manifest_dir)
    rng = np.random.default_rng(cfg.seed)
    params = model_ops.init_params(cfg.model, rng)
    model_ops.save_checkpoint(out_dir / "init.ckpt", cfg.model, params)

    stats = []
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as log:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(records))
            sums = np.zeros(3)
            degenerate = clamps = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                for vid in batch:
                    rec = records[vid]
                    feats = cache.get(rec)
                    idx = sample_snippet_indices(feats.shape[0], cfg.sample_length,
                                                 rng, "uniform")
                    try:
                        loss_a, loss_s, degen, nclamp = video_step(
                            feats[idx], rec.label_set, params, cfg, rng)
                    except TrainingDiverged:
                        model_ops.save_checkpoint(out_dir / "model.ckpt", cfg.model, params)
                        raise
                    sums += (loss_a, loss_s, loss_a + cfg.loss.snico_weight * loss_s)
                    degenerate += int(degen)
                    clamps += nclamp
                bad = [slot for slot in params.slots() if not np.all(np.isfinite(slot.grad))]
                if bad:
                    model_ops.save_checkpoint(out_dir / "model.ckpt", cfg.model, params)
                    raise TrainingDiverged("non-finite gradient after batch accumulation")
                scale = 1.0 / len(batch)
                for slot in params.slots():
                    slot.grad *= scale  # batch mean
                    adam_step(slot, cfg.learning_rate)
            means = sums / len(records)
            stat = EpochStats(epoch, float(means[0]), float(means[1]), float(means[2]),
                              degenerate, clamps)
            stats.append(stat)
            log.write(json.dumps(stat.to_json()) + "\n")
            if cfg.snapshot_every and (epoch + 1) % cfg.snapshot_every == 0:
                dump_mining(records, cache, params, cfg.model, cfg.mining,
                            np.random.default_rng(cfg.seed),
                            out_dir / f"mining_epoch{epoch + 1}.jsonl")

    model_ops.save_checkpoint(out_dir / "model.ckpt", cfg.model, params)
    return stats
