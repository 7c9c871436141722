"""Autoregressive synthesis of query sequences against a black box.

Each synthetic sequence starts from a uniformly random seed item; the black
box is queried with the running prefix and the next item is drawn from the
returned top-k positions under a sampling policy. Every intermediate
(prefix, ranking) pair is kept, which maximizes training pairs per query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import BlackBox, BudgetExhausted, QuerySet

POLICY_KINDS = ("position_decay", "rank_temperature", "uniform")


@dataclass(frozen=True)
class SamplerPolicy:
    """Distribution over ranked positions 1..k.

    position_decay: P(j) ~ alpha^(j-1), alpha in (0, 1).
    rank_temperature: P(j) ~ exp(-j / tau), tau > 0 (rank is the only
    observable signal, so the temperature acts on positions).
    uniform: P(j) = 1/k.
    """

    kind: str = "position_decay"
    alpha: float = 0.9
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown sampler policy {self.kind!r}")
        if self.kind == "position_decay" and not (0.0 < self.alpha < 1.0):
            raise ValueError("position_decay needs alpha in (0, 1)")
        if self.kind == "rank_temperature" and self.tau <= 0:
            raise ValueError("rank_temperature needs tau > 0")

    def position_weights(self, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError("k must be >= 1")
        j = np.arange(1, k + 1, dtype=np.float64)
        if self.kind == "position_decay":
            w = self.alpha ** (j - 1.0)
        elif self.kind == "rank_temperature":
            w = np.exp(-j / self.tau)
        else:
            w = np.ones(k)
        return w / w.sum()


def generate_sequences(
    bb: BlackBox,
    policy: SamplerPolicy,
    count: int,
    maxlen: int,
    seed: int = 0,
) -> QuerySet:
    """Synthesize `count` sequences of length `maxlen`, recording every pair.

    A budget hit mid-generation stops immediately; the pairs collected so
    far are returned with the truncated flag set.
    """
    if maxlen < 2:
        raise ValueError("maxlen must be >= 2")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    pairs: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    for _ in range(count):
        seq = [int(rng.integers(bb.num_items))]
        while len(seq) < maxlen:
            try:
                ranked = bb.query(seq)
            except BudgetExhausted:
                return QuerySet(pairs=pairs, truncated=True)
            pairs.append((tuple(seq), ranked))
            w = policy.position_weights(len(ranked))
            seq.append(int(ranked[rng.choice(len(ranked), p=w)]))
    return QuerySet(pairs=pairs, truncated=False)
