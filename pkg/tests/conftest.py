"""Shared test helpers: tiny model factories and the finite-difference
gradient harness used by the loss and acceptance suites."""

import numpy as np
from hypothesis import HealthCheck, settings

from ncdlab.model import EncoderSpec, ModelState

settings.register_profile("suite", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


def tiny_model(seed, input_dim=4, hidden=(5,), embed_dim=3,
               labeled_classes=3, unlabeled_classes=3) -> ModelState:
    spec = EncoderSpec(input_dim, hidden, embed_dim)
    return ModelState(spec, labeled_classes, unlabeled_classes,
                      np.random.default_rng(seed))


def unit_rows(rng, n, dim):
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def param_arrays(ms):
    for layer, frozen in ms.parameters():
        if frozen:
            continue
        yield layer.weight, layer.weight_grad
        yield layer.bias, layer.bias_grad


def finite_difference_max_rel(ms, evaluate, evaluate_with_grads, h=1e-5):
    """Max over all unfrozen parameters of
    |analytic - central difference| / max(1, |analytic|)."""
    ms.zero_grads()
    evaluate_with_grads(ms)
    analytic = [grad.copy() for _, grad in param_arrays(ms)]
    ms.zero_grads()
    worst = 0.0
    for (param, _), grads in zip(param_arrays(ms), analytic):
        flat = param.ravel()
        gflat = grads.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate(ms)
            flat[i] = orig - h
            down = evaluate(ms)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            rel = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]))
            worst = max(worst, rel)
    return worst
