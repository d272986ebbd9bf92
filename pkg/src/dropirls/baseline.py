"""Explicit-corruption training: M sampled corrupted copies per example."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Dataset, Task
from .linear import (DataBlock, LinearModel, Loss, TrainConfig, TrainingError, _check_labels, fit_blocks,
                     make_block)
from .noise import NoiseModel, sample

log = logging.getLogger(__name__)

#: Corpora with more corrupted rows than this are regenerated on every sweep.
STREAM_THRESHOLD = 500_000
#: Examples per sampling chunk; each chunk has its own seeded generator.
CHUNK_EXAMPLES = 256


@dataclass(frozen=True)
class ExplicitCorpus:
    """The N*M corrupted rows of ``source``, produced chunk by chunk.

    Chunk ``j`` covers examples [j*CHUNK_EXAMPLES, (j+1)*CHUNK_EXAMPLES) and
    draws from ``default_rng([seed, j])``, so every pass over the corpus (and
    every run with the same seed) yields identical rows.
    """

    source: Dataset
    M: int
    seed: int
    noise: NoiseModel

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")

    @property
    def size(self) -> int:
        return len(self.source) * self.M

    def _chunk(self, j: int) -> tuple[sp.csr_matrix, np.ndarray]:
        lo = j * CHUNK_EXAMPLES
        hi = min(lo + CHUNK_EXAMPLES, len(self.source))
        rows = np.repeat(np.arange(lo, hi), self.M)
        rng = np.random.default_rng([int(self.seed), j])
        X = sample(self.source.X[rows], self.noise, rng)
        return sp.csr_matrix(X), self.source.y[rows]

    def __iter__(self):
        n_chunks = -(-len(self.source) // CHUNK_EXAMPLES)
        for j in range(n_chunks):
            yield self._chunk(j)

    def materialize(self) -> Dataset:
        parts = list(self)
        if not parts:
            return Dataset(sp.csr_matrix((0, self.source.dim)), np.zeros(0), self.source.task)
        X = sp.vstack([p[0] for p in parts], format="csr")
        y = np.concatenate([p[1] for p in parts])
        return Dataset(X, y, self.source.task, self.source.n_classes)


class _BlockStream:
    """Re-iterable view of a corpus as engine blocks with weight 1/M."""

    def __init__(self, corpus: ExplicitCorpus, weights: np.ndarray | None = None):
        self.corpus = corpus
        self.weights = weights

    def __iter__(self):
        w = 1.0 / self.corpus.M
        offset = 0
        for X, y in self.corpus:
            n = X.shape[0]
            scale = np.full(n, w)
            if self.weights is not None:
                scale *= self.weights[offset:offset + n]
            offset += n
            yield make_block(X, y, NoiseModel.none(), scale)


def train_explicit(data: Dataset, cfg: TrainConfig, M: int, seed, engine: Loss | str = Loss.HINGE,
                   stream_threshold: int = STREAM_THRESHOLD) -> LinearModel:
    """Train ``engine`` on M corrupted copies of every example.

    The copies come from ``cfg.noise``; training itself is noise-free with
    each copy weighted 1/M, i.e. the empirical average of the loss over the
    sampled corruptions.
    """
    loss = Loss(engine)
    if loss is Loss.EPS_INSENSITIVE and data.task is not Task.REGRESSION:
        raise TrainingError("the epsilon-insensitive engine needs a regression dataset")
    _check_labels(data, loss)
    corpus = ExplicitCorpus(data, int(M), int(seed), cfg.noise)
    stream = _BlockStream(corpus)
    if corpus.size <= stream_threshold:
        blocks: list[DataBlock] | _BlockStream = list(stream)
    else:
        log.info("streaming %d corrupted rows", corpus.size)
        blocks = stream
    train_cfg = cfg.with_(noise=NoiseModel.none())
    res = fit_blocks(blocks, data.dim, train_cfg, loss)
    return LinearModel(res.w_aug[:-1].copy(), float(res.w_aug[-1]), loss, cfg.noise, tuple(res.trace))


def explicit_objective(model: LinearModel, data: Dataset, cfg: TrainConfig, M: int, seed) -> float:
    """Average regularized loss over M sampled corruptions, at a fixed model."""
    from .linear import variational_objective

    corpus = ExplicitCorpus(data, int(M), int(seed), cfg.noise).materialize()
    return variational_objective(model, corpus, cfg.with_(noise=NoiseModel.none()),
                                 sample_weight=np.full(len(corpus), 1.0 / M))
