"""Hard and easy snippet mining from the binarized actionness.

Hard snippets sit in the differential regions of two erosions (inner, on the
action side) or two dilations (outer, on the background side) of the
binarized actionness. Easy snippets are the top/bottom actionness scorers
outside those regions.

Window placement for a mask of size k: left radius floor((k-1)/2), right
radius ceil((k-1)/2). Positions outside the sequence read as 0 for both
operations, so erosion shrinks runs touching the sequence borders.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MiningConfig:
    binarize_threshold: float = 0.5
    mask_small: int = 3
    mask_large: int = 6
    easy_ratio: int = 5     # easy count = max(1, T // easy_ratio)
    hard_ratio: int = 20    # hard count = max(1, T // hard_ratio)

    def __post_init__(self):
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must be in (0, 1)")
        if self.mask_small < 1:
            raise ValueError("mask_small must be >= 1")
        if self.mask_large <= self.mask_small:
            raise ValueError("mask_large must exceed mask_small")
        if self.easy_ratio < 1 or self.hard_ratio < 1:
            raise ValueError("selection ratios must be >= 1")

    def easy_count(self, num_snippets):
        return max(1, num_snippets // self.easy_ratio)

    def hard_count(self, num_snippets):
        return max(1, num_snippets // self.hard_ratio)


@dataclass
class SnippetSets:
    """Index sets mined from one video's actionness."""

    inner: np.ndarray            # boundary region on the action side
    outer: np.ndarray            # boundary region on the background side
    hard_action: np.ndarray      # size hard_count, sampled from inner (may repeat)
    hard_background: np.ndarray  # size hard_count, sampled from outer (may repeat)
    easy_action: np.ndarray      # up to easy_count, top actionness outside regions
    easy_background: np.ndarray  # up to easy_count, bottom actionness outside regions
    hard_count: int
    easy_count: int
    degenerate: bool = False     # no easy candidates at all
    flags: list = field(default_factory=list)

    def to_json(self):
        return {
            "inner": self.inner.tolist(),
            "outer": self.outer.tolist(),
            "HA": self.hard_action.tolist(),
            "HB": self.hard_background.tolist(),
            "EA": self.easy_action.tolist(),
            "EB": self.easy_background.tolist(),
        }


def binarize(actionness, threshold):
    """1 where actionness >= threshold (the boundary counts as action)."""
    return (np.asarray(actionness) >= threshold).astype(np.uint8)


def _window_bounds(mask_size):
    left = (mask_size - 1) // 2
    return left, mask_size - 1 - left


def _padded_windows(bits, mask_size):
    left, right = _window_bounds(mask_size)
    padded = np.zeros(len(bits) + left + right, dtype=np.uint8)
    padded[left:left + len(bits)] = bits
    return np.lib.stride_tricks.sliding_window_view(padded, mask_size)


def dilate(bits, mask_size):
    """OR over the window at each position."""
    if mask_size == 1:
        return np.asarray(bits, dtype=np.uint8).copy()
    return _padded_windows(bits, mask_size).max(axis=1)


def erode(bits, mask_size):
    """AND over the window at each position (border overhang reads 0)."""
    if mask_size == 1:
        return np.asarray(bits, dtype=np.uint8).copy()
    return _padded_windows(bits, mask_size).min(axis=1)


def boundary_regions(bits, mask_small, mask_large):
    """(inner, outer) index arrays from the two-scale erosion/dilation."""
    inner = np.flatnonzero((erode(bits, mask_small) == 1) & (erode(bits, mask_large) == 0))
    outer = np.flatnonzero((dilate(bits, mask_large) == 1) & (dilate(bits, mask_small) == 0))
    return inner, outer


def _sample_region(region, count, rng):
    if len(region) == 0:
        return np.empty(0, dtype=np.int64)
    replace = len(region) < count
    return np.sort(rng.choice(region, size=count, replace=replace))


def mine_hard(inner, outer, hard_count, rng):
    """Uniform draws from each region; with replacement only when the region
    is smaller than the requested count. Empty region -> empty set."""
    return _sample_region(inner, hard_count, rng), _sample_region(outer, hard_count, rng)


def mine_easy(actionness, inner, outer, easy_count):
    """Top/bottom actionness outside the boundary regions, ties to the
    smaller index; the action side fills first when candidates are scarce."""
    num = len(actionness)
    excluded = np.zeros(num, dtype=bool)
    excluded[inner] = True
    excluded[outer] = True
    candidates = np.flatnonzero(~excluded)
    if len(candidates) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, True

    scores = np.asarray(actionness)[candidates]
    desc = candidates[np.lexsort((candidates, -scores))]
    easy_action = desc[:easy_count]
    taken = set(easy_action.tolist())
    asc = candidates[np.lexsort((candidates, scores))]
    easy_background = np.array([t for t in asc if t not in taken][:easy_count], dtype=np.int64)
    return np.sort(easy_action), np.sort(easy_background), False


def mine_snippets(actionness, config, rng):
    """Full mining pass for one video; pure given the rng handle."""
    num = len(actionness)
    bits = binarize(actionness, config.binarize_threshold)
    inner, outer = boundary_regions(bits, config.mask_small, config.mask_large)
    hard_count = config.hard_count(num)
    easy_count = config.easy_count(num)
    hard_action, hard_background = mine_hard(inner, outer, hard_count, rng)
    easy_action, easy_background, degenerate = mine_easy(actionness, inner, outer, easy_count)

    flags = []
    if len(inner) == 0:
        flags.append("inner-empty")
    if len(outer) == 0:
        flags.append("outer-empty")
    if degenerate:
        flags.append("no-easy-candidates")
    return SnippetSets(inner, outer, hard_action, hard_background,
                       easy_action, easy_background, hard_count, easy_count,
                       degenerate, flags)
