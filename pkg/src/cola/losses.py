"""Video classification loss and the snippet contrastive loss, with gradients.

The classification (action) loss is cross-entropy between the normalized
video label and the softmax of per-class top-k mean activations; its
gradient routes only to the selected top-k snippets per class.

The contrastive (SniCo) loss treats every mined hard snippet as a query in
a temperature-scaled (S+1)-way discrimination against one easy positive and
S easy negatives, all projected to the unit sphere. Hard action queries pull
toward easy action and away from easy background; hard background queries
the reverse. Gradients flow into the embedded features at the participating
snippet rows.
"""

from dataclasses import dataclass

import numpy as np

from cola.errors import DegenerateVector, TrainingDiverged
from cola.numerics import softmax_rows

LOG_CLAMP = 1e-12
ZERO_NORM_EPS = 1e-12


@dataclass
class LossConfig:
    snico_weight: float = 0.01   # balance factor on the contrastive term
    temperature: float = 0.07
    num_negatives: int = 0       # 0 -> use the mined easy count

    def __post_init__(self):
        if self.snico_weight < 0:
            raise ValueError("snico_weight must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.num_negatives < 0:
            raise ValueError("num_negatives must be >= 0")


def normalize_label(label_ids, num_classes):
    """Multi-hot video label normalized to a simplex vector."""
    y = np.zeros(num_classes)
    y[list(label_ids)] = 1.0
    total = y.sum()
    if total == 0:
        raise ValueError("video has no labels")
    return y / total


def video_class_scores(tcas, easy_count):
    """Per-class mean of the top-k activations, then softmax over classes.

    Returns (aggregate (C,), probabilities (C,), top-k row indices (k, C)).
    """
    num_snippets = tcas.shape[0]
    if easy_count > num_snippets:
        raise ValueError(f"top-k count {easy_count} exceeds {num_snippets} snippets")
    order = np.argsort(-tcas, axis=0, kind="stable")
    top_idx = order[:easy_count]
    aggregate = np.take_along_axis(tcas, top_idx, axis=0).mean(axis=0)
    return aggregate, softmax_rows(aggregate), top_idx


def action_loss(probs, target):
    """Cross-entropy -sum(target * log p) and its gradient w.r.t. the
    pre-softmax aggregate (probs - target). Returns (loss, grad, clamps)."""
    clamped = 0
    safe = probs.copy()
    low = safe < LOG_CLAMP
    if np.any(low & (target > 0)):
        clamped = int(np.count_nonzero(low & (target > 0)))
        safe[low] = LOG_CLAMP
    loss = -float(np.sum(target * np.log(safe)))
    return loss, probs - target, clamped


def scatter_topk_grad(d_aggregate, top_idx, num_snippets, easy_count):
    """Route the aggregate gradient back onto the selected snippets."""
    d_tcas = np.zeros((num_snippets, d_aggregate.shape[0]))
    per_entry = d_aggregate / easy_count
    np.add.at(d_tcas, (top_idx, np.arange(d_aggregate.shape[0])[None, :]),
              np.broadcast_to(per_entry, top_idx.shape))
    return d_tcas


def _unit(vec):
    norm = float(np.linalg.norm(vec))
    if norm < ZERO_NORM_EPS:
        raise DegenerateVector("zero-norm vector cannot be unit-normalized")
    return vec / norm, norm


def nce_term(query, positive, negatives, temperature):
    """Temperature-scaled discrimination of the positive among S negatives.

    All vectors are unit-normalized first. Returns the scalar loss and the
    gradients w.r.t. the raw (unnormalized) query, positive and negatives.
    """
    negatives = np.atleast_2d(negatives)
    if negatives.shape[0] < 1:
        raise ValueError("need at least one negative")
    uq, nq = _unit(query)
    up, npos = _unit(positive)
    un = np.empty_like(negatives, dtype=np.float64)
    nn = np.empty(negatives.shape[0])
    for s in range(negatives.shape[0]):
        un[s], nn[s] = _unit(negatives[s])

    sims = np.concatenate(([uq @ up], un @ uq)) / temperature
    shifted = sims - sims.max()
    weights = np.exp(shifted)
    probs = weights / weights.sum()
    loss = float(np.log(weights.sum()) + sims.max() - sims[0])

    # d loss / d similarity = (probs - onehot_positive) / temperature,
    # then back through the unit-sphere projection of each raw vector.
    d_sims = probs.copy()
    d_sims[0] -= 1.0
    d_sims /= temperature

    d_uq = d_sims[0] * up + d_sims[1:] @ un
    d_query = (d_uq - (d_uq @ uq) * uq) / nq
    d_up = d_sims[0] * uq
    d_positive = (d_up - (d_up @ up) * up) / npos
    d_negatives = np.empty_like(un)
    for s in range(negatives.shape[0]):
        d_un = d_sims[1 + s] * uq
        d_negatives[s] = (d_un - (d_un @ un[s]) * un[s]) / nn[s]
    return loss, d_query, d_positive, d_negatives


def _refinement(embedded, queries, positives_pool, negatives_pool, cfg, rng, d_embedded):
    """Mean nce_term over queries; one positive and S negatives drawn per
    query. Accumulates feature gradients; returns (loss, skipped pairs)."""
    available = len(negatives_pool)
    requested = cfg.num_negatives if cfg.num_negatives > 0 else available
    num_neg = min(requested, available)
    lowered = requested - num_neg
    skipped = 0
    terms = []
    grads = []
    for q in queries:
        pos = int(rng.choice(positives_pool))
        negs = rng.choice(negatives_pool, size=num_neg, replace=False)
        try:
            loss, dq, dp, dn = nce_term(embedded[q], embedded[pos],
                                        embedded[negs], cfg.temperature)
        except DegenerateVector:
            skipped += 1
            continue
        terms.append(loss)
        grads.append((q, pos, negs, dq, dp, dn))
    if not terms:
        return 0.0, skipped, lowered
    scale = 1.0 / len(terms)
    for q, pos, negs, dq, dp, dn in grads:
        d_embedded[q] += scale * dq
        d_embedded[pos] += scale * dp
        for s, neg in enumerate(negs):
            d_embedded[neg] += scale * dn[s]
    return float(np.mean(terms)), skipped, lowered


def snico_loss(embedded, sets, cfg, rng):
    """Hard-action and hard-background refinements on one video.

    Returns (loss, d_embedded, info). A refinement whose query set or easy
    pools are empty contributes 0 and is flagged in info.
    """
    d_embedded = np.zeros_like(embedded)
    info = {"skipped_pairs": 0, "negatives_lowered": 0,
            "ha_active": False, "hb_active": False}
    total = 0.0

    num_ea, num_eb = len(sets.easy_action), len(sets.easy_background)
    if len(sets.hard_action) and num_ea and num_eb:
        loss, skipped, lowered = _refinement(embedded, sets.hard_action, sets.easy_action,
                                             sets.easy_background, cfg, rng, d_embedded)
        total += loss
        info["skipped_pairs"] += skipped
        info["negatives_lowered"] += lowered
        info["ha_active"] = True
    if len(sets.hard_background) and num_ea and num_eb:
        loss, skipped, lowered = _refinement(embedded, sets.hard_background, sets.easy_background,
                                             sets.easy_action, cfg, rng, d_embedded)
        total += loss
        info["skipped_pairs"] += skipped
        info["negatives_lowered"] += lowered
        info["hb_active"] = True
    info["degenerate"] = not (info["ha_active"] or info["hb_active"])
    return total, d_embedded, info


def combine(loss_a, loss_s, snico_weight):
    total = loss_a + snico_weight * loss_s
    if not np.isfinite(total):
        raise TrainingDiverged(f"non-finite loss: action={loss_a}, contrastive={loss_s}")
    return total
