"""Small dense kernels shared by every other module.

Vectors and matrices are plain float64 numpy arrays. All arithmetic is
64-bit; downstream gradient checks rely on that.
"""

import numpy as np

from .errors import ContractError, DomainError


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ContractError(f"expected a nonempty 1-d vector, got shape {v.shape}")
    return v


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1].

    The clamp guards downstream thresholding against rounding overshoot.
    """
    a = as_vector(a)
    b = as_vector(b)
    if a.size != b.size:
        raise ContractError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity undefined for a zero-norm input")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def log_sum_exp(xs) -> float:
    """log(sum(exp(xs))) computed with a max shift; overflow-free to +-1e4."""
    xs = as_vector(xs)
    m = float(np.max(xs))
    return m + float(np.log(np.sum(np.exp(xs - m))))


def l2_normalize(v) -> np.ndarray:
    v = as_vector(v)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DomainError("cannot normalize a zero vector")
    return v / n


def softmax(logits) -> np.ndarray:
    z = as_vector(logits)
    e = np.exp(z - np.max(z))
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_vjp(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Backward of a row-wise softmax: maps dL/dp to dL/dlogits."""
    inner = np.sum(probs * dprobs, axis=1, keepdims=True)
    return probs * (dprobs - inner)


def normalize_rows(x: np.ndarray):
    """Row-wise unit normalization; returns (normalized, norms)."""
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("cannot normalize a zero row")
    return x / norms[:, None], norms


def normalize_rows_vjp(normalized: np.ndarray, norms: np.ndarray,
                       dnormalized: np.ndarray) -> np.ndarray:
    """Backward of normalize_rows: maps dL/d(x/|x|) to dL/dx."""
    inner = np.sum(normalized * dnormalized, axis=1, keepdims=True)
    return (dnormalized - inner * normalized) / norms[:, None]


def row_dots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


def stable_topk_indices(values: np.ndarray, k: int, largest: bool = True) -> np.ndarray:
    """Indices of the k largest (or smallest) values, ordered, with ties
    resolved toward the lower index. Equivalent to a stable full sort
    followed by a prefix, but O(n + k log k) via a partition."""
    n = values.shape[0]
    keys = -values if largest else values
    if k >= n:
        return np.argsort(keys, kind="stable")
    part = np.argpartition(keys, k - 1)[:k]
    boundary = keys[part].max()
    strictly = np.flatnonzero(keys < boundary)
    ties = np.flatnonzero(keys == boundary)[: k - strictly.size]
    idx = np.concatenate([strictly, ties])
    return idx[np.argsort(keys[idx], kind="stable")]
