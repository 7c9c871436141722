"""Ranking-quality, fidelity, attack and stealth metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from .corpus import CoMatrix, corel
from .oracle import BlackBox
from .recmodel import recommend_topk


def ranked_topk(ranker, x, k: int) -> list[int]:
    """Top-k list from either a BlackBox or a raw parameter set."""
    if isinstance(ranker, BlackBox):
        ranked = ranker.query(x)
        if len(ranked) < k:
            raise ValueError("black box returns fewer items than requested k")
        return list(ranked[:k])
    return recommend_topk(ranker, x, k)


def recall_at_k(ranked, truth: int, k: int) -> float:
    """1 if the held-out item is among the first k, else 0."""
    if k > len(ranked):
        raise ValueError("k exceeds ranked list length")
    return 1.0 if truth in list(ranked[:k]) else 0.0


def ndcg_at_k(ranked, truth: int, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(rank+1) if ranked within k, else 0."""
    if k > len(ranked):
        raise ValueError("k exceeds ranked list length")
    top = list(ranked[:k])
    if truth not in top:
        return 0.0
    return 1.0 / math.log2(top.index(truth) + 2)


def agreement_at_k(list_b, list_w, k: int) -> float:
    """Fraction of shared items between two top-k sets."""
    if k > len(list_b) or k > len(list_w):
        raise ValueError("k exceeds a ranked list length")
    return len(set(list_b[:k]) & set(list_w[:k])) / k


def target_exposure(ranker, sequences, target: int, k: int):
    """(hit-rate@k, mean reciprocal rank) of the target across user sequences."""
    seqs = list(sequences)
    if not seqs:
        raise ValueError("no sequences to evaluate")
    hits = 0.0
    rr = 0.0
    for x in seqs:
        top = ranked_topk(ranker, x, k)
        if target in top:
            hits += 1.0
            rr += 1.0 / (top.index(target) + 1)
    return hits / len(seqs), rr / len(seqs)


def plausibility_score(z, m: CoMatrix, kind: str = "jaccard") -> float:
    """Mean relatedness of adjacent items; a quantitative stealth proxy."""
    seq = [int(i) for i in z]
    if len(seq) < 2:
        raise ValueError("sequence must have at least two items")
    vals = [corel(m, a, b, kind) for a, b in zip(seq, seq[1:])]
    return float(sum(vals) / len(vals))


@dataclass
class MetricReport:
    """Flat name -> value metric record with text/JSON/CSV serialization."""

    values: dict[str, float] = field(default_factory=dict)

    def set(self, name: str, value) -> None:
        self.values[name] = float(value)

    def get(self, name: str) -> float:
        return self.values[name]

    def as_text(self) -> str:
        return "\n".join(f"{k} = {self.values[k]:.6g}" for k in sorted(self.values))

    def to_json(self) -> str:
        return json.dumps({k: self.values[k] for k in sorted(self.values)}, indent=2)

    def csv_rows(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "value"])
        for k in sorted(self.values):
            writer.writerow([k, repr(self.values[k])])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(values={k: float(v) for k, v in json.loads(text).items()})
