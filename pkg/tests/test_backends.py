import numpy as np
import pytest

from conftest import unit_rows
from ncdlab import backends
from ncdlab.backends import _kernels_np

try:
    from ncdlab.backends import _kernels_cy
except ImportError:
    _kernels_cy = None

needs_compiled = pytest.mark.skipif(_kernels_cy is None,
                                    reason="compiled extension not built")


def random_mix_inputs(seed, n_easy=12, n_labeled=9, n_iter=4, dim=7):
    rng = np.random.default_rng(seed)
    easy = unit_rows(rng, n_easy, dim)
    labeled = unit_rows(rng, n_labeled, dim)
    partner_idx = rng.integers(0, n_labeled, size=(n_iter, n_easy))
    mus = np.array([1.0 / 3.0, 2.0 / 3.0])
    z = unit_rows(rng, 1, dim)[0]
    return easy, labeled, partner_idx, mus, z


def test_backend_name_is_known():
    assert backends.BACKEND in ("numpy", "compiled")


def test_numpy_queue_sims_clamps():
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = _kernels_np.queue_sims(q, np.array([1.0, 0.0]))
    assert out[0] == 1.0 and out[1] == 0.0


def test_numpy_mix_pool_generation_order():
    easy, labeled, partner_idx, mus, z = random_mix_inputs(0, n_easy=3, n_iter=2)
    pool, sims, norms = _kernels_np.mix_pool_sims(easy, labeled, partner_idx, mus, z)
    row = 0
    for it in range(2):
        for i in range(3):
            partner = labeled[partner_idx[it, i]]
            for mu in mus:
                raw = mu * easy[i] + (1 - mu) * partner
                expected = raw / np.linalg.norm(raw)
                np.testing.assert_allclose(pool[row], expected, atol=1e-14)
                row += 1
    assert row == pool.shape[0]


def test_numpy_mix_pool_sentinel_for_cancelled_rows():
    e = np.array([[1.0, 0.0]])
    l = np.array([[-1.0, 0.0]])
    idx = np.zeros((1, 1), dtype=np.int64)
    pool, sims, norms = _kernels_np.mix_pool_sims(e, l, idx, np.array([0.5]),
                                                  np.array([1.0, 0.0]))
    assert sims[0] == _kernels_np.INVALID_SIM
    assert norms[0] <= _kernels_np.NEAR_ZERO_NORM
    np.testing.assert_array_equal(pool[0], 0.0)


@needs_compiled
class TestCompiledAgreesWithNumpy:
    def test_queue_sims(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            q = unit_rows(rng, 64, 16)
            z = unit_rows(rng, 1, 16)[0]
            np.testing.assert_allclose(_kernels_cy.queue_sims(q, z),
                                       _kernels_np.queue_sims(q, z), atol=1e-12)

    def test_mix_pool_sims(self):
        for seed in range(8):
            easy, labeled, partner_idx, mus, z = random_mix_inputs(seed)
            p1, s1, n1 = _kernels_cy.mix_pool_sims(easy, labeled, partner_idx, mus, z)
            p2, s2, n2 = _kernels_np.mix_pool_sims(easy, labeled, partner_idx, mus, z)
            np.testing.assert_allclose(p1, p2, atol=1e-12)
            np.testing.assert_allclose(s1, s2, atol=1e-12)
            np.testing.assert_allclose(n1, n2, atol=1e-12)

    def test_sentinel_convention_matches(self):
        e = np.array([[0.6, 0.8]])
        l = np.array([[-0.6, -0.8]])
        idx = np.zeros((1, 1), dtype=np.int64)
        mus = np.array([0.5])
        z = np.array([1.0, 0.0])
        p1, s1, _ = _kernels_cy.mix_pool_sims(e, l, idx, mus, z)
        p2, s2, _ = _kernels_np.mix_pool_sims(e, l, idx, mus, z)
        assert s1[0] == s2[0] == _kernels_np.INVALID_SIM
        np.testing.assert_array_equal(p1, p2)


def test_bench_command_runs():
    from ncdlab.cli import main
    assert main(["bench", "--repeats", "2"]) == 0
