"""Pure-numpy implementations of the hot per-query kernels.

Drop-in fallback for the compiled extension: same signatures, same
sentinel conventions. Rows whose interpolation nearly cancels keep a
zero vector, their recorded norm, and a sentinel similarity of -2.0
(strictly below any cosine value).
"""

import numpy as np

NEAR_ZERO_NORM = 1e-12
INVALID_SIM = -2.0


def queue_sims(queue: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Dot products of unit rows against a unit query, clamped to [-1, 1]."""
    return np.clip(queue @ z, -1.0, 1.0)


def mix_pool_sims(easy: np.ndarray, labeled: np.ndarray,
                  partner_idx: np.ndarray, mix_coeffs: np.ndarray,
                  z: np.ndarray):
    """Interpolate easy negatives with labeled partners and score the pool.

    Candidates are generated in (iteration, easy index, coefficient) order
    and unit-normalized. Returns (pool, sims, norms) where norms are the
    pre-normalization lengths.
    """
    n_iter, n_easy = partner_idx.shape
    n_mu = mix_coeffs.shape[0]
    dim = easy.shape[1]
    mus = mix_coeffs[None, None, :, None]
    raw = mus * easy[None, :, None, :] + (1.0 - mus) * labeled[partner_idx][:, :, None, :]
    raw = raw.reshape(n_iter * n_easy * n_mu, dim)
    norms = np.linalg.norm(raw, axis=1)
    valid = norms > NEAR_ZERO_NORM
    pool = np.zeros_like(raw)
    pool[valid] = raw[valid] / norms[valid, None]
    sims = np.full(raw.shape[0], INVALID_SIM)
    sims[valid] = np.clip(pool[valid] @ z, -1.0, 1.0)
    return pool, sims, norms
