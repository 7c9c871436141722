"""Reference sequential recommender with an explicit embedder/scorer split.

The model keeps one V x d embedding table E and a per-item bias b. A sequence
is embedded row-wise, pooled by a recency-decayed mean (weights proportional
to gamma^(T-t), most recent position weighted 1), and scored against every
item as s_i = <hidden, E_i> + b_i. Everything is small enough that gradients
are written out by hand, which keeps the model usable both as a trainable
victim/surrogate and as a differentiable building block for attacks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .corpus import SplitDataset

log = logging.getLogger(__name__)

PARAMS_MAGIC = b"seqrec-params-v1\n"


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass
class RecommenderParams:
    """Item embeddings, item biases and the recency decay of the encoder."""

    emb: np.ndarray  # (V, d) float64
    bias: np.ndarray  # (V,) float64
    gamma: float

    def __post_init__(self):
        self.emb = np.asarray(self.emb, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.emb.ndim != 2 or self.bias.shape != (self.emb.shape[0],):
            raise ValueError("emb must be (V, d) and bias (V,)")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")

    @property
    def num_items(self) -> int:
        return int(self.emb.shape[0])

    @property
    def dim(self) -> int:
        return int(self.emb.shape[1])

    def copy(self) -> "RecommenderParams":
        return RecommenderParams(self.emb.copy(), self.bias.copy(), self.gamma)

    def freeze(self) -> "RecommenderParams":
        """Return a read-only view of the parameters."""
        emb = self.emb.view()
        bias = self.bias.view()
        emb.flags.writeable = False
        bias.flags.writeable = False
        return replace(self, emb=emb, bias=bias)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 128
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def init_params(num_items: int, dim: int, gamma: float = 0.8, seed: int = 0) -> RecommenderParams:
    """Fresh parameters: embeddings uniform in [-0.1, 0.1], biases zero."""
    rng = np.random.default_rng(seed)
    emb = rng.uniform(-0.1, 0.1, size=(num_items, dim))
    return RecommenderParams(emb=emb, bias=np.zeros(num_items), gamma=float(gamma))


def position_weights(gamma: float, length: int) -> np.ndarray:
    """Normalized recency weights gamma^(T-t) for positions t = 1..T."""
    if length < 1:
        raise ValueError("length must be >= 1")
    w = gamma ** np.arange(length - 1, -1, -1, dtype=np.float64)
    return w / w.sum()


def embed(params: RecommenderParams, x) -> np.ndarray:
    """Embedding rows for a sequence; row t equals E[x_t]."""
    idx = np.asarray(x, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("sequence must be non-empty")
    if idx.min() < 0 or idx.max() >= params.num_items:
        raise ValueError("item id out of range")
    return params.emb[idx]


def encode(params: RecommenderParams, rows: np.ndarray) -> np.ndarray:
    """Pool embedded rows into a hidden state by the recency-decayed mean."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return position_weights(params.gamma, rows.shape[0]) @ rows


def score_all(params: RecommenderParams, hidden: np.ndarray) -> np.ndarray:
    """Score every item: s_i = <hidden, E_i> + b_i."""
    return params.emb @ np.asarray(hidden, dtype=np.float64) + params.bias


def forward_scores(params: RecommenderParams, x) -> np.ndarray:
    """Convenience: scores of all items for a raw sequence."""
    return score_all(params, encode(params, embed(params, x)))


def _pad_batch(prefixes, gamma: float):
    """Left-aligned index/weight matrices; padded slots get weight 0."""
    n = len(prefixes)
    maxlen = max(len(p) for p in prefixes)
    idx = np.zeros((n, maxlen), dtype=np.int64)
    wts = np.zeros((n, maxlen), dtype=np.float64)
    for r, seq in enumerate(prefixes):
        t = len(seq)
        idx[r, :t] = seq
        wts[r, :t] = position_weights(gamma, t)
    return idx, wts


def _softmax_rows(scores: np.ndarray):
    shifted = scores - scores.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    logz = np.log(ex.sum(axis=1)) + scores.max(axis=1)
    return probs, logz


def _ce_batch(params: RecommenderParams, idx, wts, targets):
    """Mean CE loss over a padded batch plus gradients (dE, db, dH).

    dH is the per-row gradient of the mean loss w.r.t. the pooled hidden
    state, needed to push gradients back into the encoder input.
    """
    n = idx.shape[0]
    hidden = np.einsum("bt,btd->bd", wts, params.emb[idx])
    scores = hidden @ params.emb.T + params.bias
    probs, logz = _softmax_rows(scores)
    rows = np.arange(n)
    loss = float(np.mean(logz - scores[rows, targets]))

    gs = probs
    gs[rows, targets] -= 1.0
    gs /= n
    d_bias = gs.sum(axis=0)
    d_emb = gs.T @ hidden
    d_hidden = gs @ params.emb
    np.add.at(
        d_emb,
        idx.ravel(),
        (wts[:, :, None] * d_hidden[:, None, :]).reshape(-1, params.dim),
    )
    return loss, d_emb, d_bias, d_hidden


def ce_loss_and_grads(params: RecommenderParams, x, target: int):
    """Next-item cross-entropy and its exact gradients.

    Returns (loss, d_emb, d_bias, gpos). gpos is the derivative of the loss
    w.r.t. the last embedded row (the input slot of the most recent item),
    i.e. w_T * sum_i (softmax(s)_i - [i == target]) * E_i with w_T the
    encoder weight of the last position.
    """
    if not (0 <= target < params.num_items):
        raise ValueError("target out of range")
    idx, wts = _pad_batch([list(x)], params.gamma)
    loss, d_emb, d_bias, d_hidden = _ce_batch(
        params, idx, wts, np.asarray([target], dtype=np.int64)
    )
    gpos = wts[0, len(x) - 1] * d_hidden[0]
    return loss, d_emb, d_bias, gpos


def adam_step(value, grad, m, v, step, cfg: TrainConfig) -> None:
    """One Adam update with decoupled weight decay, in place."""
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * grad * grad
    mhat = m / (1.0 - cfg.beta1 ** step)
    vhat = v / (1.0 - cfg.beta2 ** step)
    value -= cfg.learning_rate * (
        mhat / (np.sqrt(vhat) + cfg.eps) + cfg.weight_decay * value
    )


def train(params: RecommenderParams, data: SplitDataset, cfg: TrainConfig) -> RecommenderParams:
    """Train by next-item CE over every (prefix, next) pair of the train split.

    Returns a new parameter set; the input is left untouched. Deterministic
    for a fixed seed. Raises TrainingDiverged on a non-finite batch loss.
    """
    pairs = [
        (seq[:j], seq[j])
        for seq in data.train
        if len(seq) >= 2
        for j in range(1, len(seq))
    ]
    if not pairs:
        raise ValueError("training split yields no (prefix, target) pairs")
    out = params.copy()
    if cfg.epochs == 0:
        return out
    rng = np.random.default_rng(cfg.seed)
    m_emb = np.zeros_like(out.emb)
    v_emb = np.zeros_like(out.emb)
    m_bias = np.zeros_like(out.bias)
    v_bias = np.zeros_like(out.bias)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(pairs), cfg.batch_size):
            batch = [pairs[i] for i in order[start : start + cfg.batch_size]]
            idx, wts = _pad_batch([p for p, _ in batch], out.gamma)
            targets = np.asarray([t for _, t in batch], dtype=np.int64)
            loss, d_emb, d_bias, _ = _ce_batch(out, idx, wts, targets)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite CE loss at epoch {epoch}, step {step}: {loss}"
                )
            step += 1
            adam_step(out.emb, d_emb, m_emb, v_emb, step, cfg)
            adam_step(out.bias, d_bias, m_bias, v_bias, step, cfg)
            epoch_loss += loss * len(batch)
        log.debug("epoch %d mean CE %.4f", epoch, epoch_loss / len(pairs))
    return out


def recommend_topk(params: RecommenderParams, x, k: int, exclude_seen: bool = False) -> list[int]:
    """Top-k item ids by score, descending, ties broken by ascending id.

    Items already present in x are kept unless exclude_seen is set.
    """
    v = params.num_items
    if not (1 <= k <= v):
        raise ValueError("k must be in [1, V]")
    scores = forward_scores(params, x)
    if exclude_seen:
        scores = scores.copy()
        scores[list(set(int(i) for i in x))] = -np.inf
    order = np.lexsort((np.arange(v), -scores))
    return [int(i) for i in order[:k]]


def save_params(params: RecommenderParams, path) -> None:
    """Flat binary dump: magic line, "V d gamma" header, E row-major, then b."""
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(f"{params.num_items} {params.dim} {params.gamma!r}\n".encode())
        fh.write(np.ascontiguousarray(params.emb, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.bias, dtype="<f8").tobytes())


def load_params(path) -> RecommenderParams:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != PARAMS_MAGIC:
            raise ValueError(f"{path}: not a recognized parameter file")
        try:
            v_str, d_str, g_str = fh.readline().split()
            v, d, gamma = int(v_str), int(d_str), float(g_str)
        except ValueError:
            raise ValueError(f"{path}: malformed parameter header") from None
        payload = fh.read()
    need = (v * d + v) * 8
    if len(payload) != need:
        raise ValueError(f"{path}: expected {need} payload bytes, got {len(payload)}")
    emb = np.frombuffer(payload[: v * d * 8], dtype="<f8").reshape(v, d).copy()
    bias = np.frombuffer(payload[v * d * 8 :], dtype="<f8").copy()
    return RecommenderParams(emb=emb, bias=bias, gamma=gamma)
