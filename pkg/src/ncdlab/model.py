"""Shared MLP encoder with two softmax classifier heads.

The encoder maps inputs through rectified hidden layers into a linear
embedding layer. Gradients are hand-derived, accumulate into per-parameter
buffers, and are consumed by momentum SGD. A frozen prefix of encoder
layers receives no gradient and no updates.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import softmax_rows, softmax_rows_vjp


@dataclass
class EncoderSpec:
    input_dim: int
    hidden_dims: tuple = (64, 64)
    embed_dim: int = 32

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.input_dim <= 0 or self.embed_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise ContractError("all encoder dimensions must be positive")

    @property
    def depth(self) -> int:
        return len(self.hidden_dims) + 1


class Layer:
    """One affine layer with matching gradient buffers."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self.weight_grad = np.zeros_like(weight)
        self.bias_grad = np.zeros_like(bias)

    @classmethod
    def init(cls, rng: np.random.Generator, out_dim: int, in_dim: int) -> "Layer":
        bound = 1.0 / np.sqrt(in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return cls(weight, np.zeros(out_dim))

    def zero_grad(self):
        self.weight_grad[:] = 0.0
        self.bias_grad[:] = 0.0


@dataclass
class Tape:
    """Activations recorded by one forward pass, consumed by backward."""

    x: np.ndarray
    pre: list            # per encoder layer pre-activations
    acts: list           # per encoder layer outputs (post-rectifier)
    z: np.ndarray
    logits_l: np.ndarray
    probs_l: np.ndarray
    logits_u: np.ndarray
    probs_u: np.ndarray
    version: int = 0


class ModelState:
    """Encoder layers plus the labeled and unlabeled classifier heads."""

    def __init__(self, spec: EncoderSpec, num_labeled_classes: int,
                 num_unlabeled_classes: int, rng: np.random.Generator):
        if num_labeled_classes <= 0 or num_unlabeled_classes <= 0:
            raise ContractError("head sizes must be positive")
        self.spec = spec
        self.num_labeled_classes = num_labeled_classes
        self.num_unlabeled_classes = num_unlabeled_classes
        dims = [spec.input_dim, *spec.hidden_dims, spec.embed_dim]
        self.layers = [Layer.init(rng, dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
        self.labeled_head = Layer.init(rng, num_labeled_classes, spec.embed_dim)
        self.unlabeled_head = Layer.init(rng, num_unlabeled_classes, spec.embed_dim)
        self.frozen_prefix = 0
        self._version = 0

    def parameters(self):
        """Yield (layer, frozen) in a fixed order: encoder bottom-up, heads."""
        for i, layer in enumerate(self.layers):
            yield layer, i < self.frozen_prefix
        yield self.labeled_head, False
        yield self.unlabeled_head, False

    def zero_grads(self):
        for layer, _ in self.parameters():
            layer.zero_grad()

    def forward_batch(self, x: np.ndarray) -> Tape:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.spec.input_dim:
            raise ContractError(f"expected input dim {self.spec.input_dim}, got {x.shape[1]}")
        pre = []
        acts = []
        a = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            p = a @ layer.weight.T + layer.bias
            pre.append(p)
            a = np.maximum(p, 0.0) if i < last else p
            acts.append(a)
        z = a
        logits_l = z @ self.labeled_head.weight.T + self.labeled_head.bias
        logits_u = z @ self.unlabeled_head.weight.T + self.unlabeled_head.bias
        return Tape(x=x, pre=pre, acts=acts, z=z,
                    logits_l=logits_l, probs_l=softmax_rows(logits_l),
                    logits_u=logits_u, probs_u=softmax_rows(logits_u),
                    version=self._version)

    def forward(self, x):
        """Single-sample forward; returns (z, probs_l, probs_u, tape)."""
        tape = self.forward_batch(np.asarray(x, dtype=np.float64)[None, :])
        return tape.z[0], tape.probs_l[0], tape.probs_u[0], tape

    def backward_batch(self, tape: Tape, dz=None, dprobs_l=None, dprobs_u=None,
                       dlogits_l=None, dlogits_u=None) -> None:
        """Accumulate exact chain-rule gradients from a matching forward.

        Head gradients may arrive in probability space (dprobs_*) or logit
        space (dlogits_*); both are chained onto the embedding.
        """
        if tape.version != self._version:
            raise ContractError("stale tape: parameters changed since forward")
        dz_total = np.zeros_like(tape.z) if dz is None else np.array(dz, dtype=np.float64)

        for head, probs, dp, dl in (
            (self.labeled_head, tape.probs_l, dprobs_l, dlogits_l),
            (self.unlabeled_head, tape.probs_u, dprobs_u, dlogits_u),
        ):
            dlog = None
            if dp is not None:
                dlog = softmax_rows_vjp(probs, dp)
            if dl is not None:
                dlog = dl if dlog is None else dlog + dl
            if dlog is None:
                continue
            head.weight_grad += dlog.T @ tape.z
            head.bias_grad += dlog.sum(axis=0)
            dz_total = dz_total + dlog @ head.weight

        delta = dz_total
        for k in range(len(self.layers) - 1, -1, -1):
            if k < self.frozen_prefix:
                break
            layer = self.layers[k]
            inp = tape.acts[k - 1] if k > 0 else tape.x
            layer.weight_grad += delta.T @ inp
            layer.bias_grad += delta.sum(axis=0)
            if k - 1 >= self.frozen_prefix and k > 0:
                delta = (delta @ layer.weight) * (tape.pre[k - 1] > 0.0)


@dataclass
class OptimizerState:
    """Momentum SGD with stepwise learning-rate decay at epoch milestones."""

    learning_rate: float
    momentum: float
    milestones: tuple = ()
    decay: float = 0.1
    velocities: list = field(default_factory=list)
    initial_rate: float = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.initial_rate is None:
            self.initial_rate = self.learning_rate

    @classmethod
    def for_model(cls, ms: ModelState, learning_rate: float, momentum: float,
                  milestones=(), decay: float = 0.1) -> "OptimizerState":
        opt = cls(learning_rate, momentum, tuple(milestones), decay)
        for layer, _ in ms.parameters():
            opt.velocities.append((np.zeros_like(layer.weight), np.zeros_like(layer.bias)))
        return opt

    def set_epoch(self, epoch: int) -> None:
        passed = sum(1 for m in self.milestones if epoch >= m)
        self.learning_rate = self.initial_rate * self.decay ** passed


def sgd_step(ms: ModelState, opt: OptimizerState) -> None:
    """v <- momentum*v + g; p <- p - lr*v on unfrozen parameters; grads cleared."""
    for (layer, frozen), (vw, vb) in zip(ms.parameters(), opt.velocities):
        if not frozen:
            vw *= opt.momentum
            vw += layer.weight_grad
            layer.weight -= opt.learning_rate * vw
            vb *= opt.momentum
            vb += layer.bias_grad
            layer.bias -= opt.learning_rate * vb
        layer.zero_grad()
    ms._version += 1


def freeze_prefix(ms: ModelState, n_layers: int) -> None:
    """Mask the first n encoder layers from gradients and updates.

    The final embedding layer must stay trainable, so n must be < depth.
    """
    if not 0 <= n_layers < len(ms.layers):
        raise ContractError(f"n_layers={n_layers} out of range [0, {len(ms.layers)})")
    ms.frozen_prefix = n_layers


def save_checkpoint(ms: ModelState, path, seed: int) -> None:
    """JSON checkpoint; float serialization round-trips bit-exactly."""
    doc = {
        "encoder_spec": {
            "input_dim": ms.spec.input_dim,
            "hidden_dims": list(ms.spec.hidden_dims),
            "embed_dim": ms.spec.embed_dim,
        },
        "num_labeled_classes": ms.num_labeled_classes,
        "num_unlabeled_classes": ms.num_unlabeled_classes,
        "frozen_prefix": ms.frozen_prefix,
        "seed": seed,
        "layers": [
            {"weight": l.weight.tolist(), "bias": l.bias.tolist()} for l in ms.layers
        ],
        "labeled_head": {"weight": ms.labeled_head.weight.tolist(),
                         "bias": ms.labeled_head.bias.tolist()},
        "unlabeled_head": {"weight": ms.unlabeled_head.weight.tolist(),
                           "bias": ms.unlabeled_head.bias.tolist()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Rebuild a ModelState from a checkpoint; returns (model, seed)."""
    with open(path) as fh:
        doc = json.load(fh)
    spec = EncoderSpec(**doc["encoder_spec"])
    ms = ModelState(spec, doc["num_labeled_classes"], doc["num_unlabeled_classes"],
                    np.random.default_rng(0))
    for layer, saved in zip(ms.layers, doc["layers"]):
        layer.weight = np.array(saved["weight"], dtype=np.float64)
        layer.bias = np.array(saved["bias"], dtype=np.float64)
        layer.weight_grad = np.zeros_like(layer.weight)
        layer.bias_grad = np.zeros_like(layer.bias)
    for layer, saved in ((ms.labeled_head, doc["labeled_head"]),
                         (ms.unlabeled_head, doc["unlabeled_head"])):
        layer.weight = np.array(saved["weight"], dtype=np.float64)
        layer.bias = np.array(saved["bias"], dtype=np.float64)
        layer.weight_grad = np.zeros_like(layer.weight)
        layer.bias_grad = np.zeros_like(layer.bias)
    ms.frozen_prefix = doc["frozen_prefix"]
    return ms, doc["seed"]
