"""Fixed-capacity FIFO feature queues and similarity-ranked retrieval.

Queues store L2-normalized copies of the pushed embeddings, so cosine
similarity against a unit query reduces to a dot product. Entries are
constants with respect to any loss graph.
"""

import numpy as np

from . import backends
from .errors import ContractError, DomainError
from .numerics import l2_normalize, stable_topk_indices


class FeatureQueue:
    """FIFO of unit-normalized embedding vectors; oldest evicted first."""

    def __init__(self, capacity: int, dim: int):
        if capacity <= 0 or dim <= 0:
            raise ContractError("capacity and dim must be positive")
        self.capacity = capacity
        self.dim = dim
        self._entries = np.empty((0, dim), dtype=np.float64)

    def __len__(self) -> int:
        return self._entries.shape[0]

    def entries(self) -> np.ndarray:
        """Stored vectors in FIFO order (index 0 is oldest). Do not mutate."""
        return self._entries

    def push(self, features) -> None:
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if feats.shape[1] != self.dim:
            raise ContractError(f"expected dim {self.dim}, got {feats.shape[1]}")
        norms = np.linalg.norm(feats, axis=1)
        if np.any(norms == 0.0):
            raise DomainError("cannot store a zero vector in the queue")
        self._append(feats / norms[:, None])

    def _append(self, unit_rows: np.ndarray) -> None:
        merged = np.concatenate([self._entries, unit_rows])
        self._entries = merged[-self.capacity:]

    def sims(self, unit_query: np.ndarray) -> np.ndarray:
        """Cosine similarity of every entry against a unit-norm query."""
        return backends.queue_sims(np.ascontiguousarray(self._entries), unit_query)


class LabeledFeatureQueue(FeatureQueue):
    """FIFO of (unit vector, class label) pairs."""

    def __init__(self, capacity: int, dim: int, num_classes: int):
        super().__init__(capacity, dim)
        if num_classes <= 0:
            raise ContractError("num_classes must be positive")
        self.num_classes = num_classes
        self._labels = np.empty(0, dtype=np.int64)

    def labels(self) -> np.ndarray:
        return self._labels

    def push(self, features, labels=None) -> None:
        if labels is None:
            raise ContractError("labeled queue push requires labels")
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if labels.shape[0] != feats.shape[0]:
            raise ContractError("features and labels length mismatch")
        if np.any((labels < 0) | (labels >= self.num_classes)):
            raise ContractError("label out of range")
        super().push(feats)
        self._labels = np.concatenate([self._labels, labels])[-self.capacity:]

    def label_mask(self, label: int) -> np.ndarray:
        return self._labels == label

    def positives_by_label(self, label: int):
        """All stored entries with the given label, in queue order."""
        idx = np.flatnonzero(self._labels == label)
        return idx, self._entries[idx]


def topk_similar(queue: FeatureQueue, z, k: int):
    """The k entries most similar to z, descending; ties favor lower index."""
    if not 1 <= k <= len(queue):
        raise ContractError(f"k={k} out of range for queue of length {len(queue)}")
    zn = l2_normalize(z)
    sims = queue.sims(zn)
    order = stable_topk_indices(sims, k, largest=True)
    return order, sims[order]


def bottomk_similar(queue: FeatureQueue, z, k: int):
    """The k entries least similar to z, ascending; ties favor lower index."""
    if not 1 <= k <= len(queue):
        raise ContractError(f"k={k} out of range for queue of length {len(queue)}")
    zn = l2_normalize(z)
    sims = queue.sims(zn)
    order = stable_topk_indices(sims, k, largest=False)
    return order, sims[order]
