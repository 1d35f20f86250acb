"""End-to-end synthetic experiment: contrastive training vs plain baseline.

Generates (or reuses) a synthetic dataset, trains the model with and
without the contrastive term over a list of seeds, localizes on the test
split, and reports mAP@0.5 per variant plus the hard-snippet distance
diagnostic at the first seed's initial and final checkpoints.
"""

import dataclasses
import json
from pathlib import Path

import numpy as np

from cola import data as data_io
from cola import evaluation, inference, mining, model, trainer

MRDO_DELTAS = (0.2, 0.4, 0.6, 0.8, 1.0)


def ensure_dataset(config, data_dir):
    data_dir = Path(data_dir)
    expected = {
        "train_manifest": data_dir / "train.jsonl",
        "test_manifest": data_dir / "test.jsonl",
        "train_gt": data_dir / "gt_train.jsonl",
        "test_gt": data_dir / "gt_test.jsonl",
    }
    if all(p.exists() for p in expected.values()):
        return expected
    return data_io.generate_synthetic(config.synth_config(), data_dir)


def run_variant(run_cfg, records, out_dir, manifest_dir, seed, snico_weight,
                num_negatives=None):
    """Train one variant and localize the given records' test set later."""
    cfg = run_cfg.train_config()
    cfg = dataclasses.replace(cfg, seed=seed,
                              loss=dataclasses.replace(cfg.loss, snico_weight=snico_weight))
    if num_negatives is not None:
        cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss,
                                                                num_negatives=num_negatives))
    stats = trainer.train(records, cfg, out_dir, manifest_dir=manifest_dir)
    return cfg, stats


def localize_and_eval(run_cfg, checkpoint, test_records, gt, manifest_dir, preds_path=None):
    model_cfg, params = model.load_checkpoint(checkpoint)
    proposals, errors = inference.localize(
        test_records, params, model_cfg, run_cfg.mining_config(), run_cfg.infer_config(),
        run_cfg.sample_length, manifest_dir=manifest_dir)
    if preds_path is not None:
        inference.write_proposals(preds_path, proposals, errors)
    report = evaluation.evaluate(proposals, gt, run_cfg.eval_grid())
    return proposals, report


def map_at(report, threshold=0.5):
    key = min(report.map_per_threshold, key=lambda t: abs(t - threshold))
    return report.map_per_threshold[key]


def mined_hard_snippets(run_cfg, checkpoint, records, manifest_dir, seed=0):
    """Inference-mode mining over full sequences: {video_id: hard indices}."""
    model_cfg, params = model.load_checkpoint(checkpoint)
    rng = np.random.default_rng(seed)
    mining_cfg = run_cfg.mining_config()
    hard, lengths = {}, {}
    for rec in sorted(records, key=lambda r: r.video_id):
        raw = data_io.read_features(data_io.resolve_feature_path(rec, manifest_dir))
        out = model.forward(raw, params, model_cfg, training=False)
        sets = mining.mine_snippets(out.actionness, mining_cfg, rng)
        hard[rec.video_id] = np.concatenate([sets.hard_action,
                                             sets.hard_background]).tolist()
        lengths[rec.video_id] = raw.shape[0]
    return hard, lengths


def mrdo_curve(run_cfg, checkpoint, records, gt, manifest_dir, deltas=MRDO_DELTAS):
    hard, lengths = mined_hard_snippets(run_cfg, checkpoint, records, manifest_dir)
    gt_by_video = {}
    for seg in gt:
        rec = next(r for r in records if r.video_id == seg.video_id)
        per = rec.seconds_per_snippet()
        gt_by_video.setdefault(seg.video_id, []).append(
            (seg.start_sec / per, seg.end_sec / per))
    return {delta: evaluation.mrdo(hard, gt_by_video, lengths, delta)[0]
            for delta in deltas}


def run_experiment(run_cfg, work_dir, seeds, with_negative_ablation=False,
                   data_dir=None, progress=lambda msg: None):
    """Full study; returns a JSON-ready summary dict."""
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    data_dir = Path(data_dir) if data_dir else work_dir / "data"
    paths = ensure_dataset(run_cfg, data_dir)

    train_records = data_io.read_manifest(paths["train_manifest"], training=True)
    test_records = data_io.read_manifest(paths["test_manifest"])
    gt = data_io.read_gt(paths["test_gt"])

    variants = {"baseline": dict(snico_weight=0.0),
                "contrastive": dict(snico_weight=run_cfg.snico_weight)}
    if with_negative_ablation:
        variants["contrastive_s1"] = dict(snico_weight=run_cfg.snico_weight,
                                          num_negatives=1)

    results = {name: [] for name in variants}
    checkpoints = {}
    for seed in seeds:
        for name, kwargs in variants.items():
            out_dir = work_dir / f"{name}_seed{seed}"
            progress(f"training {name} (seed {seed})")
            run_variant(run_cfg, train_records, out_dir, data_dir, seed, **kwargs)
            preds_path = out_dir / "preds.jsonl"
            _, report = localize_and_eval(run_cfg, out_dir / "model.ckpt", test_records,
                                          gt, data_dir, preds_path)
            results[name].append(map_at(report, 0.5))
            with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
                json.dump(report.to_json(), fh, indent=2, sort_keys=True)
            checkpoints[(name, seed)] = out_dir

    first = seeds[0]
    progress("hard-snippet distance diagnostic")
    contrast_dir = checkpoints[("contrastive", first)]
    mrdo_initial = mrdo_curve(run_cfg, contrast_dir / "init.ckpt", test_records, gt, data_dir)
    mrdo_final = mrdo_curve(run_cfg, contrast_dir / "model.ckpt", test_records, gt, data_dir)

    summary = {
        "seeds": list(seeds),
        "map50": {name: vals for name, vals in results.items()},
        "map50_mean": {name: float(np.mean(vals)) for name, vals in results.items()},
        "mrdo_initial": {f"{d:g}": v for d, v in mrdo_initial.items()},
        "mrdo_final": {f"{d:g}": v for d, v in mrdo_final.items()},
    }
    summary["delta_map50"] = (summary["map50_mean"]["contrastive"]
                              - summary["map50_mean"]["baseline"])
    with open(work_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def format_summary(summary):
    lines = ["setting        loss            mAP@0.5 (mean over seeds)"]
    mean = summary["map50_mean"]
    contrast = mean["contrastive"]
    base = mean["baseline"]
    lines.append(f"contrastive    action+snico    {contrast * 100:6.1f}%")
    lines.append(f"baseline       action only     {base * 100:6.1f}%  "
                 f"({(base - contrast) * 100:+.1f})")
    if "contrastive_s1" in mean:
        s1 = mean["contrastive_s1"]
        lines.append(f"contrastive S=1 action+snico   {s1 * 100:6.1f}%  "
                     f"({(s1 - contrast) * 100:+.1f})")
    lines.append("")
    lines.append("hard-snippet mean relative distance (initial -> final checkpoint)")
    for key in summary["mrdo_initial"]:
        lines.append(f"  delta={key}: {summary['mrdo_initial'][key]:.4f} -> "
                     f"{summary['mrdo_final'][key]:.4f}")
    return "\n".join(lines)
