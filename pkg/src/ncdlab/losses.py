"""Loss terms of the joint objective, each with exact analytic gradients.

Contrastive terms take raw (unnormalized) live embeddings and normalize
them inside the loss graph, so gradients flow through the normalization.
Queue entries are constants. Every similarity is a cosine, every
denominator is evaluated through a max-shifted log-sum-exp.

The shared core: for positive similarities P and denominator similarities
D at temperature t,

    loss = logsumexp(D / t) - mean(P) / t

with d(loss)/d(s) = softmax(D/t)_s / t for s in D and -1/(|P| t) for each
occurrence in P.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backends
from .errors import ContractError, NonFiniteLossError
from .numerics import (cosine_similarity, l2_normalize, normalize_rows,
                       normalize_rows_vjp, row_dots)

PROB_FLOOR = 1e-30     # cross-entropy log guard
BCE_CLAMP = 1e-12      # pairwise probability clamp for both logs


@dataclass
class ContrastiveContext:
    """A live query/augmented-view pair against constant queue negatives."""

    query: np.ndarray
    aug_view: np.ndarray
    negatives: np.ndarray       # (n, H) unit rows; may have zero rows (n == 0)
    temperature: float

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64)
        self.aug_view = np.asarray(self.aug_view, dtype=np.float64)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.negatives.ndim != 2:
            self.negatives = self.negatives.reshape(-1, self.query.shape[0])
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")


@dataclass
class NclConfig:
    pseudo_positive_count: int
    aug_weight: float

    def __post_init__(self):
        if self.pseudo_positive_count < 1:
            raise ContractError("pseudo_positive_count must be >= 1")
        if not 0 <= self.aug_weight <= 1:
            raise ContractError("aug_weight must lie in [0, 1]")


@dataclass
class PairwiseConfig:
    threshold: float

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ContractError("threshold must lie in (0, 1)")


@dataclass
class RampConfig:
    peak_weight: float
    length: int

    def __post_init__(self):
        if self.peak_weight <= 0:
            raise ContractError("peak_weight must be positive")
        if self.length < 1:
            raise ContractError("length must be >= 1")


@dataclass
class LossReport:
    """Per-step scalar values of every loss term plus the composed total."""

    ce: float = 0.0
    bce: float = 0.0
    mse: float = 0.0
    contrastive_aug: float = 0.0
    contrastive_pp: float = 0.0
    ncl: float = 0.0
    scl: float = 0.0
    omega: float = 0.0
    total: float = 0.0
    ce_clamped: int = 0
    bce_clamped: int = 0
    ncl_skipped: bool = False

    def composition_residual(self) -> float:
        return abs(self.total - (self.ce + self.bce + self.omega * self.mse
                                 + self.ncl + self.scl))


def _nce(num_sims: np.ndarray, denom_sims: np.ndarray, temperature: float):
    """Shared contrastive core; returns (loss, dnum, ddenom) wrt similarities."""
    scaled = denom_sims / temperature
    m = scaled.max()
    lse = m + np.log(np.sum(np.exp(scaled - m)))
    loss = lse - np.mean(num_sims) / temperature
    ddenom = np.exp(scaled - lse) / temperature
    dnum = np.full(num_sims.shape[0], -1.0 / (num_sims.shape[0] * temperature))
    return float(loss), dnum, ddenom


def ce_loss(probs, label: int):
    """Class-count-scaled cross-entropy: -log(p[label]) / C.

    Returns (value, grad wrt logits, clamped flag).
    """
    p = np.asarray(probs, dtype=np.float64)
    c = p.shape[0]
    if not 0 <= label < c:
        raise ContractError("label out of range")
    py = p[label]
    clamped = py < PROB_FLOOR
    value = -np.log(max(py, PROB_FLOOR)) / c
    dlogits = p.copy()
    dlogits[label] -= 1.0
    dlogits /= c
    return float(value), dlogits, clamped


def pairwise_pseudo_label(zi, zj, threshold: float) -> int:
    """1 iff cosine similarity >= threshold (inclusive)."""
    return int(cosine_similarity(zi, zj) >= threshold)


def bce_loss(pi, pj, same_label: int):
    """Binary cross-entropy on the inner product of two head outputs.

    Returns (value, dpi, dpj, clamped flag). The product is clamped away
    from {0, 1} before the logs; gradients use the clamped value.
    """
    pi = np.asarray(pi, dtype=np.float64)
    pj = np.asarray(pj, dtype=np.float64)
    if pi.shape != pj.shape:
        raise ContractError("head output shape mismatch")
    p = float(pi @ pj)
    clamped = not BCE_CLAMP <= p <= 1.0 - BCE_CLAMP
    pc = min(max(p, BCE_CLAMP), 1.0 - BCE_CLAMP)
    y = float(same_label)
    value = -y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)
    dp = -y / pc + (1.0 - y) / (1.0 - pc)
    return float(value), dp * pj, dp * pi, clamped


def consistency_loss(pl1, pl2, pu1, pu2):
    """Mean squared distance between the two views' head predictions,
    scaled by 1/C per head. Returns (value, dpl1, dpl2, dpu1, dpu2)."""
    pl1 = np.asarray(pl1, dtype=np.float64)
    pl2 = np.asarray(pl2, dtype=np.float64)
    pu1 = np.asarray(pu1, dtype=np.float64)
    pu2 = np.asarray(pu2, dtype=np.float64)
    if pl1.shape != pl2.shape or pu1.shape != pu2.shape:
        raise ContractError("view prediction shape mismatch")
    dl = pl1 - pl2
    du = pu1 - pu2
    cl = pl1.shape[0]
    cu = pu1.shape[0]
    value = float(dl @ dl / cl + du @ du / cu)
    return value, 2.0 * dl / cl, -2.0 * dl / cl, 2.0 * du / cu, -2.0 * du / cu


def ramp_weight(t: float, cfg: RampConfig) -> float:
    """peak * exp(-5 (1 - min(t, T)/T)^2); reaches the peak at t = T."""
    if t < 0:
        raise ContractError("epoch must be nonnegative")
    frac = min(t, cfg.length) / cfg.length
    return cfg.peak_weight * float(np.exp(-5.0 * (1.0 - frac) ** 2))


def _normalized_pair(ctx: ContrastiveContext):
    zn = l2_normalize(ctx.query)
    hn = l2_normalize(ctx.aug_view)
    s_aug = float(np.clip(zn @ hn, -1.0, 1.0))
    return zn, hn, s_aug


def _chain_to_raw(vec_raw, vec_n, dvec_n):
    norm = np.linalg.norm(vec_raw)
    return (dvec_n - (vec_n @ dvec_n) * vec_n) / norm


def contrastive_aug(ctx: ContrastiveContext):
    """Single-positive contrastive loss of the query against its augmented
    view, with queue entries as negatives. Returns (value, dquery, daug)."""
    zn, hn, s_aug = _normalized_pair(ctx)
    neg_sims = backends.queue_sims(np.ascontiguousarray(ctx.negatives), zn) \
        if ctx.negatives.shape[0] else np.empty(0)
    denom = np.concatenate([[s_aug], neg_sims])
    loss, dnum, ddenom = _nce(np.array([s_aug]), denom, ctx.temperature)
    ds_aug = dnum[0] + ddenom[0]
    dzn = ds_aug * hn + ctx.negatives.T @ ddenom[1:]
    dhn = ds_aug * zn
    return loss, _chain_to_raw(ctx.query, zn, dzn), _chain_to_raw(ctx.aug_view, hn, dhn)


def contrastive_pp(ctx: ContrastiveContext, pp_indices):
    """Pseudo-positive contrastive term: queue entries at pp_indices act as
    positives while the denominator still sums over the augmented-view
    similarity plus the whole negative set. Returns (value, dquery, daug)."""
    pp_indices = np.asarray(pp_indices, dtype=np.int64)
    if pp_indices.size == 0:
        raise ContractError("pseudo-positive set must be nonempty")
    if np.any((pp_indices < 0) | (pp_indices >= ctx.negatives.shape[0])):
        raise ContractError("pseudo-positive index out of range")
    zn, hn, s_aug = _normalized_pair(ctx)
    neg_sims = backends.queue_sims(np.ascontiguousarray(ctx.negatives), zn)
    denom = np.concatenate([[s_aug], neg_sims])
    loss, dnum, ddenom = _nce(neg_sims[pp_indices], denom, ctx.temperature)
    ds_neg = ddenom[1:].copy()
    np.add.at(ds_neg, pp_indices, dnum)
    dzn = ddenom[0] * hn + ctx.negatives.T @ ds_neg
    dhn = ddenom[0] * zn
    return loss, _chain_to_raw(ctx.query, zn, dzn), _chain_to_raw(ctx.aug_view, hn, dhn)


def ncl_loss(ctx: ContrastiveContext, pp_indices, aug_weight: float):
    """Weighted combination of the augmented-positive and pseudo-positive
    terms. Returns (value, dquery, daug, aug_value, pp_value); the boundary
    weights 0 and 1 reproduce the single terms bitwise."""
    if aug_weight == 1.0:
        value, dq, da = contrastive_aug(ctx)
        return value, dq, da, value, 0.0
    if aug_weight == 0.0:
        value, dq, da = contrastive_pp(ctx, pp_indices)
        return value, dq, da, 0.0, value
    va, dqa, daa = contrastive_aug(ctx)
    vp, dqp, dap = contrastive_pp(ctx, pp_indices)
    w = aug_weight
    return (w * va + (1 - w) * vp, w * dqa + (1 - w) * dqp,
            w * daa + (1 - w) * dap, va, vp)


def scl_loss(query, aug_view, positive_indices, queue: np.ndarray,
             temperature: float):
    """Supervised contrastive loss: the positive set is the augmented view
    plus every same-label queue entry; the denominator is the augmented
    view plus the whole labeled queue. Returns (value, dquery, daug)."""
    ctx = ContrastiveContext(query, aug_view, queue, temperature)
    pos_idx = np.asarray(positive_indices, dtype=np.int64)
    if np.any((pos_idx < 0) | (pos_idx >= ctx.negatives.shape[0])):
        raise ContractError("positive index out of range")
    zn, hn, s_aug = _normalized_pair(ctx)
    q_sims = backends.queue_sims(np.ascontiguousarray(ctx.negatives), zn) \
        if ctx.negatives.shape[0] else np.empty(0)
    num = np.concatenate([[s_aug], q_sims[pos_idx]])
    denom = np.concatenate([[s_aug], q_sims])
    loss, dnum, ddenom = _nce(num, denom, temperature)
    ds_aug = dnum[0] + ddenom[0]
    ds_q = ddenom[1:].copy()
    np.add.at(ds_q, pos_idx, dnum[1:])
    dzn = ds_aug * hn + ctx.negatives.T @ ds_q
    dhn = ds_aug * zn
    return loss, _chain_to_raw(ctx.query, zn, dzn), _chain_to_raw(ctx.aug_view, hn, dhn)


def total_loss(ce: float, bce: float, mse: float, omega: float, ncl: float,
               scl: float, contrastive_aug: float = 0.0,
               contrastive_pp: float = 0.0, ce_clamped: int = 0,
               bce_clamped: int = 0, ncl_skipped: bool = False) -> LossReport:
    """Compose the per-term scalars into a report; aborts on non-finite input."""
    for name, value in (("ce", ce), ("bce", bce), ("mse", mse), ("omega", omega),
                        ("ncl", ncl), ("scl", scl)):
        if not np.isfinite(value):
            raise NonFiniteLossError(name, value)
    return LossReport(
        ce=ce, bce=bce, mse=mse, contrastive_aug=contrastive_aug,
        contrastive_pp=contrastive_pp, ncl=ncl, scl=scl, omega=omega,
        total=ce + bce + omega * mse + ncl + scl,
        ce_clamped=ce_clamped, bce_clamped=bce_clamped, ncl_skipped=ncl_skipped,
    )


# ----------------------------------------------------------------------
# Vectorized per-batch equivalents used by the training loop. Each matches
# the corresponding single-sample operation averaged over its units; the
# unit tests pin that equivalence.

def ce_batch(probs: np.ndarray, labels: np.ndarray):
    """Mean scaled CE over a batch; returns (value, dlogits, clamp count)."""
    b, c = probs.shape
    rows = np.arange(b)
    py = probs[rows, labels]
    clamped = int(np.sum(py < PROB_FLOOR))
    value = float(np.mean(-np.log(np.maximum(py, PROB_FLOOR)) / c))
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= c * b
    return value, dlogits, clamped


def bce_batch(probs1: np.ndarray, probs2: np.ndarray, embeds1_n: np.ndarray,
              threshold: float):
    """Pairwise BCE over unordered pairs (i < j) of the unlabeled half.

    Pseudo-labels come from view-1 embedding similarities; the probability
    term crosses views: view-1 head of i against view-2 head of j.
    Returns (value, dprobs1, dprobs2, clamp count).
    """
    u = probs1.shape[0]
    if u < 2:
        return 0.0, np.zeros_like(probs1), np.zeros_like(probs2), 0
    sims = np.clip(embeds1_n @ embeds1_n.T, -1.0, 1.0)
    iu = np.triu_indices(u, k=1)
    y = (sims[iu] >= threshold).astype(np.float64)
    pmat = probs1 @ probs2.T
    p = pmat[iu]
    clamped = int(np.sum((p < BCE_CLAMP) | (p > 1.0 - BCE_CLAMP)))
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n_pairs = p.shape[0]
    value = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)))
    dp = (-y / pc + (1.0 - y) / (1.0 - pc)) / n_pairs
    dpmat = np.zeros_like(pmat)
    dpmat[iu] = dp
    return value, dpmat @ probs2, dpmat.T @ probs1, clamped


def consistency_batch(pl1: np.ndarray, pl2: np.ndarray,
                      pu1: np.ndarray, pu2: np.ndarray):
    """Mean consistency over paired rows of both halves."""
    nl, cl = pl1.shape
    nu, cu = pu1.shape
    dl = pl1 - pl2
    du = pu1 - pu2
    value = float(np.sum(dl * dl) / (cl * nl) + np.sum(du * du) / (cu * nu))
    gl = 2.0 * dl / (cl * nl)
    gu = 2.0 * du / (cu * nu)
    return value, gl, -gl, gu, -gu


def ncl_batch(zn: np.ndarray, hn: np.ndarray, queue: np.ndarray,
              pp_idx, aug_weight: float, temperature: float,
              extra_sims=None, extra_vecs=None):
    """Per-query neighborhood contrastive values and gradients.

    extra_sims (U, E) / extra_vecs (U, E, H) optionally extend each query's
    denominator with its own synthetic negatives; -inf similarity rows are
    padding and contribute nothing.

    Returns (aug_vals, pp_vals, ncl_vals, dzn, dhn), all per query and
    unscaled (no batch mean applied).
    """
    u, n = zn.shape[0], queue.shape[0]
    t = temperature
    s_aug = np.clip(row_dots(zn, hn), -1.0, 1.0)
    s_queue = np.clip(zn @ queue.T, -1.0, 1.0)
    parts = [s_aug[:, None], s_queue]
    if extra_sims is not None:
        parts.append(extra_sims)
    a = np.concatenate(parts, axis=1) / t
    m = a.max(axis=1)
    lse = m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))
    g = np.exp(a - lse[:, None]) / t          # denominator-side gradients

    aug_vals = lse - s_aug / t
    if aug_weight == 1.0:
        pp_vals = np.zeros(u)
        ncl_vals = aug_vals
    else:
        rows = np.arange(u)[:, None]
        pp_vals = lse - np.mean(s_queue[rows, pp_idx], axis=1) / t
        ncl_vals = pp_vals if aug_weight == 0.0 else \
            aug_weight * aug_vals + (1.0 - aug_weight) * pp_vals

    ds_aug = g[:, 0] - aug_weight / t
    gq = g[:, 1:1 + n].copy()
    if aug_weight != 1.0:
        k = pp_idx.shape[1]
        gq[np.arange(u)[:, None], pp_idx] -= (1.0 - aug_weight) / (k * t)
    dzn = ds_aug[:, None] * hn + gq @ queue
    if extra_sims is not None:
        dzn += np.einsum("ue,ueh->uh", g[:, 1 + n:], extra_vecs)
    dhn = ds_aug[:, None] * zn
    return aug_vals, pp_vals, ncl_vals, dzn, dhn


def scl_batch(zn: np.ndarray, hn: np.ndarray, queue: np.ndarray,
              pos_mask: np.ndarray, temperature: float):
    """Per-query supervised contrastive values and gradients.

    pos_mask (U, n) marks same-label queue entries; the augmented view is
    always a positive. Returns (vals, dzn, dhn) per query, unscaled.
    """
    u = zn.shape[0]
    t = temperature
    s_aug = np.clip(row_dots(zn, hn), -1.0, 1.0)
    s_queue = np.clip(zn @ queue.T, -1.0, 1.0) if queue.shape[0] else np.zeros((u, 0))
    a = np.concatenate([s_aug[:, None], s_queue], axis=1) / t
    m = a.max(axis=1)
    lse = m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))
    g = np.exp(a - lse[:, None]) / t

    n_pos = 1.0 + pos_mask.sum(axis=1)
    num_mean = (s_aug + np.sum(s_queue * pos_mask, axis=1)) / n_pos
    vals = lse - num_mean / t

    ds_aug = g[:, 0] - 1.0 / (n_pos * t)
    gq = g[:, 1:] - pos_mask / (n_pos * t)[:, None]
    dzn = ds_aug[:, None] * hn + gq @ queue
    dhn = ds_aug[:, None] * zn
    return vals, dzn, dhn
