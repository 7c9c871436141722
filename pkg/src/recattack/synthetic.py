"""Planted-structure synthetic corpora.

Items are partitioned into latent groups and each user walks a first-order
process that stays inside the current item's group with probability p_stay,
otherwise jumps to an item of another group. Within a group, draws favor
popular items (Zipf-like skew) and items close to the current one on the
group's ring (locality), so co-occurrence carries both a popularity
hierarchy and neighborhood structure. That structure gives collaborative
signals and stealth comparisons something real to measure at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import InteractionCorpus
from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    num_items: int = 200
    num_users: int = 500
    num_groups: int = 10
    p_stay: float = 0.8
    min_len: int = 10
    max_len: int = 50
    continue_prob: float = 0.9
    popularity_skew: float = 0.5  # Zipf exponent of item draw weights
    locality: float = 8.0  # ring-distance scale of within-group draws; 0 = off
    seed: int = 0

    def __post_init__(self):
        if self.num_items < 10 or self.num_users < 10:
            raise ConfigError("need at least 10 items and 10 users")
        if not (1 <= self.num_groups <= self.num_items):
            raise ConfigError("num_groups must be in [1, num_items]")
        if not (0.0 <= self.p_stay <= 1.0):
            raise ConfigError("p_stay must be in [0, 1]")
        if not (3 <= self.min_len <= self.max_len):
            raise ConfigError("need 3 <= min_len <= max_len")
        if not (0.0 <= self.continue_prob < 1.0):
            raise ConfigError("continue_prob must be in [0, 1)")
        if self.popularity_skew < 0:
            raise ConfigError("popularity_skew must be >= 0")
        if self.locality < 0:
            raise ConfigError("locality must be >= 0")


def item_groups(spec: SyntheticSpec) -> np.ndarray:
    """Group id per item; contiguous blocks, remainders spread over the first groups."""
    return (np.arange(spec.num_items) * spec.num_groups) // spec.num_items


def item_weights(spec: SyntheticSpec) -> np.ndarray:
    """Unnormalized draw weight per item: 1/(1 + rank_in_group)^skew.

    Lower ids inside a group are drawn more often, giving every group the
    same popularity hierarchy (skew 0 restores uniform draws).
    """
    groups = item_groups(spec)
    rank = np.arange(spec.num_items) - np.searchsorted(groups, groups)
    return 1.0 / (1.0 + rank) ** spec.popularity_skew


def _draw(rng, pool: np.ndarray, weights: np.ndarray) -> int:
    w = weights / weights.sum()
    return int(pool[rng.choice(pool.size, p=w)])


def gen_synthetic_corpus(spec: SyntheticSpec) -> InteractionCorpus:
    """Draw a corpus from the planted-group process, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    groups = item_groups(spec)
    members = [np.flatnonzero(groups == g) for g in range(spec.num_groups)]
    pop = item_weights(spec)
    sequences = []
    for _ in range(spec.num_users):
        length = spec.min_len
        while length < spec.max_len and rng.random() < spec.continue_prob:
            length += 1
        allitems = np.arange(spec.num_items)
        cur = _draw(rng, allitems, pop)
        seq = [cur]
        for _ in range(length - 1):
            g = groups[cur]
            own = members[g]
            if rng.random() < spec.p_stay and own.size > 1:
                # stay in the group, but avoid an immediate self-repeat
                pool = own[own != cur]
                w = pop[pool]
                if spec.locality > 0:
                    # favor ring neighbors of the current item inside the group
                    ranks = np.searchsorted(own, pool)
                    cur_rank = int(np.searchsorted(own, cur))
                    dist = np.abs(ranks - cur_rank)
                    dist = np.minimum(dist, own.size - dist)
                    w = w * np.exp(-dist / spec.locality)
            else:
                pool = np.flatnonzero(groups != g)
                w = pop[pool]
            if pool.size == 0:  # single group: every jump stays internal
                pool = own[own != cur]
                w = pop[pool]
            nxt = _draw(rng, pool, w)
            seq.append(nxt)
            cur = nxt
        sequences.append(tuple(seq))
    return InteractionCorpus(
        users=tuple(f"u{i}" for i in range(spec.num_users)),
        sequences=tuple(sequences),
        num_items=spec.num_items,
    )
