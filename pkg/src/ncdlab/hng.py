"""Synthetic hard negatives for unlabeled queries.

The easiest (least similar) queue entries are interpolated with randomly
drawn labeled features, candidates are re-normalized onto the unit
sphere, and the pool is filtered down to the entries most similar to the
query. Labeled classes are disjoint from unlabeled ones, so every mixture
is a true negative. The persistent queues are never mutated.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .errors import ContractError, DomainError
from .memory import FeatureQueue, LabeledFeatureQueue, bottomk_similar
from .numerics import l2_normalize, stable_topk_indices


@dataclass
class HngConfig:
    easy_negative_count: int = 400
    mix_iterations: int = 5
    mix_coefficients: tuple = (1.0 / 3.0, 2.0 / 3.0)

    def __post_init__(self):
        self.mix_coefficients = tuple(float(m) for m in self.mix_coefficients)
        if self.easy_negative_count < 1:
            raise ContractError("easy_negative_count must be >= 1")
        if self.mix_iterations < 1:
            raise ContractError("mix_iterations must be >= 1")
        if any(not 0 < m < 1 for m in self.mix_coefficients):
            raise ContractError("mix coefficients must lie in (0, 1)")


@dataclass
class SyntheticNegativeSet:
    """Kept hard negatives plus per-vector provenance."""

    vectors: np.ndarray            # (k, H) unit rows
    sims: np.ndarray               # (k,) similarity to the generating query
    unlabeled_index: np.ndarray    # (k,) source queue position
    labeled_index: np.ndarray      # (k,) labeled partner queue position
    mix_coefficient: np.ndarray    # (k,)
    truncated_easy: bool = False   # fewer easy negatives than requested
    skipped: int = 0               # near-cancelled mixtures dropped
    disabled: bool = False         # labeled queue was empty

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def empty(cls, dim: int, disabled: bool = False) -> "SyntheticNegativeSet":
        return cls(vectors=np.empty((0, dim)), sims=np.empty(0),
                   unlabeled_index=np.empty(0, dtype=np.int64),
                   labeled_index=np.empty(0, dtype=np.int64),
                   mix_coefficient=np.empty(0), disabled=disabled)


def select_easy_negatives(queue: FeatureQueue, z, count: int, query_sims=None):
    """The `count` least-similar queue entries. When the queue is shorter
    than requested the whole queue is used and the result is flagged.

    query_sims optionally carries precomputed similarities of the
    normalized query against the queue, in queue order.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    truncated = count > len(queue)
    k = min(count, len(queue))
    if query_sims is None:
        indices, _ = bottomk_similar(queue, z, k)
    else:
        indices = stable_topk_indices(query_sims, k, largest=False)
    return indices, queue.entries()[indices], truncated


def mix(unlabeled_vec, labeled_vec, coefficient: float) -> np.ndarray:
    """Unit-normalized interpolation c*u + (1-c)*l of two unit vectors."""
    if not 0 < coefficient < 1:
        raise ContractError("mixing coefficient must lie in (0, 1)")
    raw = coefficient * np.asarray(unlabeled_vec, dtype=np.float64) \
        + (1.0 - coefficient) * np.asarray(labeled_vec, dtype=np.float64)
    if np.linalg.norm(raw) <= backends.NEAR_ZERO_NORM:
        raise DomainError("interpolation cancelled to a zero vector")
    return l2_normalize(raw)


def generate(unlabeled_queue: FeatureQueue, labeled_queue: LabeledFeatureQueue,
             z, cfg: HngConfig, rng: np.random.Generator,
             return_pool: bool = False, query_sims=None):
    """Build the per-query hard negative set.

    For each of `mix_iterations` passes, every easy negative is paired with
    an independently drawn labeled entry and mixed once per coefficient.
    The pool is then filtered to the `easy_negative_count` candidates most
    similar to the query, ties resolved by generation order.
    """
    dim = unlabeled_queue.dim
    if len(labeled_queue) == 0:
        out = SyntheticNegativeSet.empty(dim, disabled=True)
        return (out, np.empty(0)) if return_pool else out
    if len(unlabeled_queue) == 0:
        raise ContractError("unlabeled queue is empty")

    zn = l2_normalize(z)
    easy_idx, easy_vecs, truncated = select_easy_negatives(
        unlabeled_queue, zn, cfg.easy_negative_count, query_sims)
    n_easy = easy_idx.shape[0]
    n_iter = cfg.mix_iterations
    mus = np.asarray(cfg.mix_coefficients)
    partner_idx = rng.integers(0, len(labeled_queue), size=(n_iter, n_easy))

    pool, sims, norms = backends.mix_pool_sims(
        np.ascontiguousarray(easy_vecs),
        np.ascontiguousarray(labeled_queue.entries()),
        np.ascontiguousarray(partner_idx, dtype=np.int64),
        mus, zn)

    valid = norms > backends.NEAR_ZERO_NORM
    skipped = int(np.sum(~valid))
    if skipped:
        # sentinel sims sink below any cosine; drop them from a full ranking
        order = np.argsort(-sims, kind="stable")
        order = order[valid[order]]
        kept = order[:cfg.easy_negative_count]
    else:
        kept = stable_topk_indices(sims, min(cfg.easy_negative_count,
                                             sims.shape[0]), largest=True)

    n_mu = mus.shape[0]
    it = kept // (n_easy * n_mu)
    rem = kept % (n_easy * n_mu)
    easy_pos = rem // n_mu
    mu_pos = rem % n_mu

    out = SyntheticNegativeSet(
        vectors=pool[kept],
        sims=sims[kept],
        unlabeled_index=easy_idx[easy_pos],
        labeled_index=partner_idx[it, easy_pos],
        mix_coefficient=mus[mu_pos],
        truncated_easy=truncated,
        skipped=skipped,
    )
    return (out, sims) if return_pool else out


def augmented_negatives(queue_entries: np.ndarray,
                        synth: SyntheticNegativeSet) -> np.ndarray:
    """Queue entries extended with the synthetic set, as a fresh array used
    only for the current query's loss."""
    if len(synth) == 0:
        return np.array(queue_entries, copy=True)
    return np.concatenate([queue_entries, synth.vectors])


def dump_provenance(synth: SyntheticNegativeSet, fh) -> None:
    """Append one JSON line per kept vector: source indices and coefficient."""
    for u, l, c in zip(synth.unlabeled_index, synth.labeled_index,
                       synth.mix_coefficient):
        fh.write(json.dumps({"unlabeled_index": int(u), "labeled_index": int(l),
                             "mix_coefficient": float(c)}) + "\n")
