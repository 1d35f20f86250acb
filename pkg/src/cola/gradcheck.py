"""Finite-difference verification of the full training gradient.

The total loss is evaluated with dropout disabled and all stochastic draws
(snippet jitter, hard sampling, contrastive positives/negatives) frozen by
reseeding the same generator per call, so central differences probe exactly
the function the analytic backward differentiates. Instances are screened
for safe margins around the discrete selections (binarization, top-k) so an
epsilon step cannot flip set membership.
"""

from dataclasses import dataclass

import numpy as np

from cola import losses as loss_ops
from cola import mining as mining_ops
from cola import model as model_ops
from cola.losses import LossConfig
from cola.mining import MiningConfig
from cola.model import ModelConfig

EPS = 1e-4
REL_TOL = 1e-3
ABS_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    passed: bool


def _total_loss(raw, label_ids, params, model_cfg, mining_cfg, loss_cfg, sampling_seed):
    rng = np.random.default_rng(sampling_seed)
    out = model_ops.forward(raw, params, model_cfg, training=True, rng=rng)
    sets = mining_ops.mine_snippets(out.actionness, mining_cfg, rng)
    easy_count = mining_cfg.easy_count(raw.shape[0])
    _, probs, top_idx = loss_ops.video_class_scores(out.tcas, easy_count)
    target = loss_ops.normalize_label(label_ids, model_cfg.num_classes)
    loss_a, d_aggregate, _ = loss_ops.action_loss(probs, target)
    loss_s, d_embedded, _ = loss_ops.snico_loss(out.embedded, sets, loss_cfg, rng)
    total = loss_a + loss_cfg.snico_weight * loss_s
    return total, out, sets, d_aggregate, top_idx, easy_count, d_embedded


def _margins(out, sets, mining_cfg, easy_count):
    """Distance of the instance from every discrete decision boundary."""
    act_margin = float(np.min(np.abs(out.actionness - mining_cfg.binarize_threshold)))
    col_sorted = -np.sort(-out.tcas, axis=0)
    if easy_count < out.tcas.shape[0]:
        topk_margin = float(np.min(col_sorted[easy_count - 1] - col_sorted[easy_count]))
    else:
        topk_margin = np.inf
    scores = out.actionness
    pools = np.concatenate([sets.easy_action, sets.easy_background])
    easy_margin = np.inf
    if len(pools) >= 2:
        svals = np.sort(scores[pools])
        gaps = np.diff(svals)
        easy_margin = float(gaps.min()) if len(gaps) else np.inf
    return min(act_margin, topk_margin, easy_margin)


def build_instance(num_snippets=16, feature_dim=8, num_classes=3, snico_weight=0.01,
                   margin=1e-3, max_seeds=50):
    """First seeded instance whose discrete selections sit at safe margins."""
    model_cfg = ModelConfig(feature_dim, num_classes, dropout_rate=0.0)
    mining_cfg = MiningConfig()
    loss_cfg = LossConfig(snico_weight=snico_weight, num_negatives=2)
    for seed in range(max_seeds):
        rng = np.random.default_rng(seed)
        raw = rng.normal(size=(num_snippets, model_cfg.width))
        params = model_ops.init_params(model_cfg, rng)
        label_ids = [int(rng.integers(num_classes))]
        _, out, sets, *_rest = _total_loss(raw, label_ids, params, model_cfg,
                                           mining_cfg, loss_cfg, sampling_seed=seed + 1000)
        easy_count = mining_cfg.easy_count(num_snippets)
        if len(sets.inner) and len(sets.outer) and not sets.degenerate \
                and _margins(out, sets, mining_cfg, easy_count) > margin:
            return raw, label_ids, params, model_cfg, mining_cfg, loss_cfg, seed + 1000
    raise RuntimeError("no instance with safe decision margins found")


def analytic_gradients(raw, label_ids, params, model_cfg, mining_cfg, loss_cfg, seed):
    params.zero_grads()
    total, out, sets, d_aggregate, top_idx, easy_count, d_embedded = _total_loss(
        raw, label_ids, params, model_cfg, mining_cfg, loss_cfg, seed)
    d_tcas = loss_ops.scatter_topk_grad(d_aggregate, top_idx, raw.shape[0], easy_count)
    d_emb = d_embedded * loss_cfg.snico_weight if loss_cfg.snico_weight > 0 else None
    model_ops.backward(raw, out, params, model_cfg, d_tcas, d_emb)
    return total, {name: slot.grad.copy() for name, slot in params.named_slots()}


def finite_difference_gradients(raw, label_ids, params, model_cfg, mining_cfg,
                                loss_cfg, seed, eps=EPS):
    grads = {}
    for name, slot in params.named_slots():
        grad = np.zeros_like(slot.value)
        flat = slot.value.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _total_loss(raw, label_ids, params, model_cfg, mining_cfg,
                             loss_cfg, seed)[0]
            flat[i] = orig - eps
            fm = _total_loss(raw, label_ids, params, model_cfg, mining_cfg,
                             loss_cfg, seed)[0]
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads[name] = grad
    return grads


def relative_errors(analytic, numeric):
    errs = {}
    for name in analytic:
        a, n = analytic[name], numeric[name]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR)
        errs[name] = float(np.max(np.abs(a - n) / scale))
    return errs


def run_full_model_check(snico_weight=0.01, rel_tol=REL_TOL):
    """One result per parameter tensor of the T=16, d=8, C=3 instance."""
    instance = build_instance(snico_weight=snico_weight)
    raw, label_ids, params, model_cfg, mining_cfg, loss_cfg, seed = instance
    _, analytic = analytic_gradients(*instance)
    numeric = finite_difference_gradients(raw, label_ids, params, model_cfg,
                                          mining_cfg, loss_cfg, seed)
    errs = relative_errors(analytic, numeric)
    return [GradCheckResult(f"full-model[{name}] w={snico_weight}", err, err <= rel_tol)
            for name, err in errs.items()]


def run_conv_check(rel_tol=REL_TOL):
    """Convolution backward vs central differences on random small tensors."""
    from cola.numerics import conv1d_backward, conv1d_forward
    results = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        inp = rng.normal(size=(int(rng.integers(2, 9)), int(rng.integers(1, 9))))
        kernel = rng.normal(size=(int(rng.integers(1, 5)), inp.shape[1],
                                  int(rng.integers(1, 5))))
        bias = rng.normal(size=kernel.shape[0])
        weights = rng.normal(size=(inp.shape[0], kernel.shape[0]))
        analytic = dict(zip("ikb", conv1d_backward(weights, inp, kernel)))
        numeric = {}
        for key, arr in (("i", inp), ("k", kernel), ("b", bias)):
            grad = np.zeros_like(arr)
            flat, gflat = arr.ravel(), grad.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + EPS
                fp = float((conv1d_forward(inp, kernel, bias) * weights).sum())
                flat[j] = orig - EPS
                fm = float((conv1d_forward(inp, kernel, bias) * weights).sum())
                flat[j] = orig
                gflat[j] = (fp - fm) / (2 * EPS)
            numeric[key] = grad
        errs = relative_errors(analytic, numeric)
        worst = max(errs.values())
        results.append(GradCheckResult(f"conv1d-backward seed {seed}", worst,
                                       worst <= rel_tol))
    return results


def run_suite():
    results = run_conv_check()
    results += run_full_model_check(snico_weight=0.01)
    results += run_full_model_check(snico_weight=1.0)
    return results
