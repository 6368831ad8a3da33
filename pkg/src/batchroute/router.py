"""Nearest-neighbour estimate of each model's unbatched utility for a query."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Query
from .scaling import ScalingFn

METRICS = ("cosine", "euclidean")
DEFAULT_K = 5
DEFAULT_METRIC = "cosine"


@dataclass(frozen=True)
class Router:
    embeddings: np.ndarray  # n' x d
    labels: np.ndarray  # n' x K, entries 0/1
    k_neighbors: int = DEFAULT_K
    metric: str = DEFAULT_METRIC

    def __post_init__(self):
        X = np.asarray(self.embeddings, dtype=float)
        Y = np.asarray(self.labels, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError("embeddings and labels must be matrices with matching rows")
        if X.shape[0] == 0:
            raise ValueError("router needs at least one training point")
        if not 1 <= self.k_neighbors <= X.shape[0]:
            raise ValueError(f"k_neighbors={self.k_neighbors} must lie in [1, {X.shape[0]}]")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        object.__setattr__(self, "embeddings", X)
        object.__setattr__(self, "labels", Y)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def n_models(self) -> int:
        return self.labels.shape[1]

    def _distances(self, Q: np.ndarray) -> np.ndarray:
        X = self.embeddings
        if self.metric == "euclidean":
            sq = (Q ** 2).sum(1)[:, None] + (X ** 2).sum(1)[None, :] - 2 * Q @ X.T
            return np.sqrt(np.maximum(sq, 0.0))
        qn = np.linalg.norm(Q, axis=1)[:, None]
        xn = np.linalg.norm(X, axis=1)[None, :]
        denom = np.where(qn * xn == 0, 1.0, qn * xn)
        return 1.0 - (Q @ X.T) / denom

    def predict(self, embeddings, chunk: int = 4096) -> np.ndarray:
        """Mean label vector of the k nearest training points, one row per input row.

        Equal distances are resolved in favour of the lower training index.
        """
        Q = np.atleast_2d(np.asarray(embeddings, dtype=float))
        if Q.shape[1] != self.dim:
            raise ValueError(f"embedding dimension {Q.shape[1]} != router dimension {self.dim}")
        out = np.empty((Q.shape[0], self.n_models))
        k = self.k_neighbors
        for s in range(0, Q.shape[0], chunk):
            D = self._distances(Q[s:s + chunk])
            nn = np.argsort(D, axis=1, kind="stable")[:, :k]
            out[s:s + chunk] = self.labels[nn].mean(axis=1)
        return out

    def to_dict(self) -> dict:
        return {
            "k_neighbors": self.k_neighbors,
            "metric": self.metric,
            "embeddings": self.embeddings.tolist(),
            "labels": self.labels.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Router":
        return cls(np.array(d["embeddings"], dtype=float), np.array(d["labels"], dtype=float),
                   int(d["k_neighbors"]), d["metric"])


def train_router(training: Sequence[Query], k_neighbors: int = DEFAULT_K,
                 metric: str = DEFAULT_METRIC) -> Router:
    if not training:
        raise ValueError("training set is empty")
    missing = [q.id for q in training if q.truth_utilities is None]
    if missing:
        raise ValueError(f"training labels required; missing on {missing[:5]}")
    X = np.stack([q.embedding for q in training])
    Y = np.array([q.truth_utilities for q in training], dtype=float)
    return Router(X, Y, k_neighbors, metric)


def estimate_unbatched_utility(router: Router, query: Query) -> np.ndarray:
    return router.predict(query.embedding)[0]


def proxy_utility(u1: float, scaling: ScalingFn, b: int) -> float:
    """Unbatched utility scaled by the model's decay at batch size ``b``."""
    if not 0.0 <= u1 <= 1.0:
        raise ValueError(f"unbatched utility {u1} outside [0, 1]")
    return u1 * scaling(b)
