"""Seeded synthetic datasets with disjoint labeled and unlabeled classes.

Each class is an isotropic unit-variance Gaussian whose mean sits on a
sphere of configurable radius. Hidden labels of the unlabeled split exist
only for evaluation; batches never carry them.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class AugmentationConfig:
    """Stochastic view generation: scalar scale jitter plus additive noise."""

    noise_sigma: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be nonnegative")
        if not 0 <= self.scale_jitter < 1:
            raise ContractError("scale_jitter must lie in [0, 1)")


@dataclass
class NcdDataset:
    input_dim: int
    num_labeled_classes: int
    num_unlabeled_classes: int
    seed: int
    labeled_x: np.ndarray      # (n_l, D)
    labeled_y: np.ndarray      # (n_l,)
    unlabeled_x: np.ndarray    # (n_u, D)
    unlabeled_hidden_y: np.ndarray  # (n_u,), evaluation-side only
    class_means: np.ndarray | None = None  # generative centroids, eval-side only

    def to_json_file(self, path) -> None:
        doc = {
            "D": self.input_dim,
            "C_l": self.num_labeled_classes,
            "C_u": self.num_unlabeled_classes,
            "seed": self.seed,
            "labeled": [
                {"x": x.tolist(), "y": int(y)}
                for x, y in zip(self.labeled_x, self.labeled_y)
            ],
            "unlabeled": [
                {"x": x.tolist(), "hidden_y": int(y)}
                for x, y in zip(self.unlabeled_x, self.unlabeled_hidden_y)
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def from_json_file(cls, path) -> "NcdDataset":
        with open(path) as fh:
            doc = json.load(fh)
        labeled = doc["labeled"]
        unlabeled = doc["unlabeled"]
        return cls(
            input_dim=doc["D"],
            num_labeled_classes=doc["C_l"],
            num_unlabeled_classes=doc["C_u"],
            seed=doc["seed"],
            labeled_x=np.array([r["x"] for r in labeled], dtype=np.float64),
            labeled_y=np.array([r["y"] for r in labeled], dtype=np.int64),
            unlabeled_x=np.array([r["x"] for r in unlabeled], dtype=np.float64),
            unlabeled_hidden_y=np.array([r["hidden_y"] for r in unlabeled], dtype=np.int64),
        )


@dataclass
class Batch:
    """One joint training batch; view2 arrays are augmented copies of view1."""

    labeled_x: np.ndarray
    labeled_view2: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_view2: np.ndarray

    @property
    def size(self) -> int:
        return self.labeled_x.shape[0] + self.unlabeled_x.shape[0]


def generate_dataset(input_dim: int, num_labeled_classes: int,
                     num_unlabeled_classes: int, per_class: int,
                     separation: float, seed: int) -> NcdDataset:
    """Draw class means on a sphere of radius `separation`, then unit
    Gaussian clusters around them. The first labeled-class block forms the
    labeled split, the rest the unlabeled split."""
    if min(input_dim, num_labeled_classes, num_unlabeled_classes, per_class) <= 0:
        raise ContractError("all counts must be positive")
    if separation <= 0:
        raise ContractError("separation must be positive")
    rng = np.random.default_rng(seed)
    total = num_labeled_classes + num_unlabeled_classes
    directions = rng.standard_normal((total, input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = directions * separation

    xs = []
    ys = []
    for c in range(total):
        xs.append(means[c] + rng.standard_normal((per_class, input_dim)))
        ys.append(np.full(per_class, c, dtype=np.int64))
    xs = np.concatenate(xs)
    ys = np.concatenate(ys)

    n_l = num_labeled_classes * per_class
    return NcdDataset(
        input_dim=input_dim,
        num_labeled_classes=num_labeled_classes,
        num_unlabeled_classes=num_unlabeled_classes,
        seed=seed,
        labeled_x=xs[:n_l],
        labeled_y=ys[:n_l],
        unlabeled_x=xs[n_l:],
        unlabeled_hidden_y=ys[n_l:] - num_labeled_classes,
        class_means=means,
    )


def make_view(x, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view: (1 + u) * x + eps with scalar u and Gaussian eps.

    Draws are consumed even when the config zeroes them out, so the stream
    layout does not depend on the augmentation strength.
    """
    x = np.asarray(x, dtype=np.float64)
    u = rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)
    eps = rng.standard_normal(x.shape) * cfg.noise_sigma
    return (1.0 + u) * x + eps


def make_views(xs: np.ndarray, cfg: AugmentationConfig,
               rng: np.random.Generator) -> np.ndarray:
    """Row-wise make_view with an independent jitter scalar per row."""
    u = rng.uniform(-cfg.scale_jitter, cfg.scale_jitter, size=xs.shape[0])
    eps = rng.standard_normal(xs.shape) * cfg.noise_sigma
    return (1.0 + u)[:, None] * xs + eps


def next_batch(ds: NcdDataset, batch_size: int, cfg: AugmentationConfig,
               rng: np.random.Generator) -> Batch:
    """Draw batch_size/2 labeled and batch_size/2 unlabeled samples
    uniformly with replacement, and build second views for each."""
    if batch_size % 2 != 0:
        raise ContractError("batch size must be even")
    if ds.labeled_x.shape[0] == 0 or ds.unlabeled_x.shape[0] == 0:
        raise ContractError("both splits must be nonempty")
    half = batch_size // 2
    li = rng.integers(0, ds.labeled_x.shape[0], size=half)
    ui = rng.integers(0, ds.unlabeled_x.shape[0], size=half)
    lx = ds.labeled_x[li]
    ux = ds.unlabeled_x[ui]
    return Batch(
        labeled_x=lx,
        labeled_view2=make_views(lx, cfg, rng),
        labeled_y=ds.labeled_y[li],
        unlabeled_x=ux,
        unlabeled_view2=make_views(ux, cfg, rng),
    )
