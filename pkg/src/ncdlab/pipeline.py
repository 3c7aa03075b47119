"""Three-stage training protocol, ablation presets, configuration, seeding.

Stage 1 pretrains the encoder on a label-agnostic 4-way transform
prediction pretext. Stage 2 fits the labeled head with cross-entropy on
the labeled split, freezing the first hidden layer. Stage 3 runs joint
discovery training: cross-entropy, pairwise BCE on the unlabeled half,
view-consistency, and (from their start epochs) the neighborhood
contrastive terms with optional synthetic hard negatives.

One master seed derives independent substreams for dataset generation,
initialization, each stage's batching, and hard-negative partner draws,
so ablation toggles never perturb unrelated randomness.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace, asdict

import numpy as np

from . import evaluation, hng, losses
from .data import (AugmentationConfig, Batch, NcdDataset, generate_dataset,
                   next_batch)
from .errors import ConfigError, ContractError
from .memory import FeatureQueue, LabeledFeatureQueue
from .model import (EncoderSpec, Layer, ModelState, OptimizerState,
                    freeze_prefix, save_checkpoint, sgd_step)
from .numerics import (normalize_rows, normalize_rows_vjp, softmax_rows,
                       stable_topk_indices)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationFlags:
    """Term toggles; each preset flips exactly the terms its row names."""

    drop_ssl: bool = False
    drop_ce: bool = False
    drop_bce: bool = False
    drop_cs: bool = False
    enable_ncl: bool = True
    drop_pp: bool = False      # augmented-positive only (weight 1)
    drop_ap: bool = False      # pseudo-positives only (weight 0)
    drop_scl: bool = False     # no contrastive term on labeled queries
    enable_hng: bool = True


PRESETS = {
    "baseline": AblationFlags(enable_ncl=False, enable_hng=False),
    "baseline_wo_ssl": AblationFlags(drop_ssl=True, enable_ncl=False, enable_hng=False),
    "baseline_wo_ce": AblationFlags(drop_ce=True, enable_ncl=False, enable_hng=False),
    "baseline_wo_bce": AblationFlags(drop_bce=True, enable_ncl=False, enable_hng=False),
    "baseline_wo_cs": AblationFlags(drop_cs=True, enable_ncl=False, enable_hng=False),
    "ncl_wo_pp": AblationFlags(drop_pp=True, enable_hng=False),
    "ncl_wo_ap": AblationFlags(drop_ap=True, enable_hng=False),
    "ncl_wo_la": AblationFlags(drop_scl=True, enable_hng=False),
    "ncl": AblationFlags(enable_hng=False),
    "ncl_hng": AblationFlags(),
}

PRESET_SETS = {
    "table2": ["baseline_wo_ssl", "baseline_wo_ce", "baseline_wo_bce",
               "baseline_wo_cs", "baseline"],
    "table3": ["baseline", "ncl_wo_pp", "ncl_wo_ap", "ncl_wo_la", "ncl",
               "ncl_hng"],
}


@dataclass
class RunConfig:
    # dataset
    input_dim: int = 16
    labeled_classes: int = 5
    unlabeled_classes: int = 5
    per_class: int = 200
    separation: float = 4.0
    noise_sigma: float = 0.3
    scale_jitter: float = 0.1
    # encoder
    hidden_dims: tuple = (64, 64)
    embed_dim: int = 32
    # optimizer
    learning_rate: float = 0.1
    momentum: float = 0.9
    lr_milestones: tuple = (40, 55)
    lr_decay: float = 0.1
    # schedule
    pretext_epochs: int = 10
    supervised_epochs: int = 20
    discovery_epochs: int = 60
    batch_size: int = 128
    ncl_start_epoch: int = 2
    hng_start_epoch: int = 4
    # contrastive machinery
    queue_capacity: int = 2000
    temperature: float = 0.05
    pair_threshold: float = 0.95
    aug_positive_weight: float = 0.2
    easy_negative_count: int = 400
    mix_iterations: int = 5
    mix_coefficients: tuple = (1.0 / 3.0, 2.0 / 3.0)
    ramp_peak: float = 2.0
    ramp_length: int = 15
    # bookkeeping
    seed: int = 0
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        self.lr_milestones = tuple(self.lr_milestones)
        self.mix_coefficients = tuple(self.mix_coefficients)
        if self.batch_size % 2 != 0:
            raise ConfigError("batch_size must be even")

    @property
    def pseudo_positive_count(self) -> int:
        return max(1, self.queue_capacity // self.unlabeled_classes // 2)

    def effective_aug_weight(self) -> float:
        if self.ablation.drop_pp:
            return 1.0
        if self.ablation.drop_ap:
            return 0.0
        return self.aug_positive_weight

    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec(self.input_dim, self.hidden_dims, self.embed_dim)

    def augmentation(self) -> AugmentationConfig:
        return AugmentationConfig(self.noise_sigma, self.scale_jitter)

    def hng_config(self) -> hng.HngConfig:
        return hng.HngConfig(self.easy_negative_count, self.mix_iterations,
                             self.mix_coefficients)

    def ncl_config(self) -> losses.NclConfig:
        return losses.NclConfig(self.pseudo_positive_count,
                                self.effective_aug_weight())

    def ramp(self) -> losses.RampConfig:
        return losses.RampConfig(self.ramp_peak, self.ramp_length)


def default_config() -> RunConfig:
    """The frozen synthetic benchmark configuration."""
    return RunConfig()


_CONFIG_FIELDS = {f.name for f in fields(RunConfig)} - {"ablation"}
_ABLATION_FIELDS = {f.name for f in fields(AblationFlags)}


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _CONFIG_FIELDS - {"ablation"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: v for k, v in doc.items() if k != "ablation"}
    ablation = doc.get("ablation", {})
    if not isinstance(ablation, dict):
        raise ConfigError("ablation must be a JSON object")
    unknown = set(ablation) - _ABLATION_FIELDS
    if unknown:
        raise ConfigError(f"unknown ablation keys: {sorted(unknown)}")
    try:
        return RunConfig(ablation=AblationFlags(**ablation), **kwargs)
    except (TypeError, ContractError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: RunConfig) -> dict:
    doc = asdict(cfg)
    doc["hidden_dims"] = list(cfg.hidden_dims)
    doc["lr_milestones"] = list(cfg.lr_milestones)
    doc["mix_coefficients"] = list(cfg.mix_coefficients)
    return doc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def _substreams(master_seed: int) -> dict:
    names = ("dataset", "init", "pretext", "supervised", "discovery", "hng")
    children = np.random.SeedSequence(master_seed).spawn(len(names))
    return dict(zip(names, children))


def build_dataset(cfg: RunConfig) -> NcdDataset:
    data_seed = int(np.random.default_rng(_substreams(cfg.seed)["dataset"])
                    .integers(0, 2 ** 63))
    return generate_dataset(cfg.input_dim, cfg.labeled_classes,
                            cfg.unlabeled_classes, cfg.per_class,
                            cfg.separation, data_seed)


def build_model(cfg: RunConfig) -> ModelState:
    rng = np.random.default_rng(_substreams(cfg.seed)["init"])
    return ModelState(cfg.encoder_spec(), cfg.labeled_classes,
                      cfg.unlabeled_classes, rng)


def _steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return max(1, math.ceil(n_samples / batch_size))


def _random_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def stage1_pretext(ms: ModelState, ds: NcdDataset, epochs: int,
                   batch_size: int, rng: np.random.Generator,
                   learning_rate: float, momentum: float) -> dict:
    """Label-agnostic pretraining: predict which of four fixed random
    orthogonal transforms was applied to the input. All layers train; the
    auxiliary head is discarded afterwards."""
    dim = ds.input_dim
    transforms = np.stack([_random_orthogonal(rng, dim) for _ in range(4)])
    aux = Layer.init(rng, 4, ms.spec.embed_dim)
    aux_vel = (np.zeros_like(aux.weight), np.zeros_like(aux.bias))
    inputs = np.concatenate([ds.labeled_x, ds.unlabeled_x])

    freeze_prefix(ms, 0)
    opt = OptimizerState.for_model(ms, learning_rate, momentum)
    steps = _steps_per_epoch(inputs.shape[0], batch_size)
    for _ in range(epochs):
        for _ in range(steps):
            idx = rng.integers(0, inputs.shape[0], size=batch_size)
            cls = rng.integers(0, 4, size=batch_size)
            xb = np.einsum("bij,bj->bi", transforms[cls], inputs[idx])
            tape = ms.forward_batch(xb)
            probs = softmax_rows(tape.z @ aux.weight.T + aux.bias)
            _, dlogits, _ = losses.ce_batch(probs, cls)
            aux.weight_grad += dlogits.T @ tape.z
            aux.bias_grad += dlogits.sum(axis=0)
            ms.backward_batch(tape, dz=dlogits @ aux.weight)
            sgd_step(ms, opt)
            for param, grad, vel in ((aux.weight, aux.weight_grad, aux_vel[0]),
                                     (aux.bias, aux.bias_grad, aux_vel[1])):
                vel *= momentum
                vel += grad
                param -= learning_rate * vel
            aux.zero_grad()

    idx = rng.integers(0, inputs.shape[0], size=512)
    cls = rng.integers(0, 4, size=512)
    xb = np.einsum("bij,bj->bi", transforms[cls], inputs[idx])
    tape = ms.forward_batch(xb)
    logits = tape.z @ aux.weight.T + aux.bias
    accuracy = float(np.mean(np.argmax(logits, axis=1) == cls))
    return {"pretext_accuracy": accuracy}


def stage2_supervised(ms: ModelState, ds: NcdDataset, epochs: int,
                      batch_size: int, rng: np.random.Generator,
                      learning_rate: float, momentum: float) -> dict:
    """Cross-entropy training on the labeled split with the first hidden
    layer frozen; reports labeled train accuracy."""
    freeze_prefix(ms, 1 if len(ms.layers) > 1 else 0)
    opt = OptimizerState.for_model(ms, learning_rate, momentum)
    n = ds.labeled_x.shape[0]
    steps = _steps_per_epoch(n, batch_size)
    for _ in range(epochs):
        for _ in range(steps):
            idx = rng.integers(0, n, size=batch_size)
            tape = ms.forward_batch(ds.labeled_x[idx])
            _, dlogits, _ = losses.ce_batch(tape.probs_l, ds.labeled_y[idx])
            ms.backward_batch(tape, dlogits_l=dlogits)
            sgd_step(ms, opt)
    tape = ms.forward_batch(ds.labeled_x)
    accuracy = float(np.mean(np.argmax(tape.probs_l, axis=1) == ds.labeled_y))
    return {"labeled_accuracy": accuracy}


def discovery_step(ms: ModelState, batch: Batch, unlabeled_queue: FeatureQueue,
                   labeled_queue: LabeledFeatureQueue, cfg: RunConfig,
                   omega: float, ncl_active: bool, hng_active: bool,
                   hng_rng, opt: OptimizerState = None,
                   hng_debug_fh=None, push: bool = True) -> losses.LossReport:
    """One joint training step: forward both views of both halves, compute
    the enabled loss terms, backpropagate, update, then push view-1
    features to the queues."""
    flags = cfg.ablation
    n_l = batch.labeled_x.shape[0]
    n_u = batch.unlabeled_x.shape[0]
    sl = slice(0, n_l)
    su = slice(n_l, n_l + n_u)
    x1 = np.concatenate([batch.labeled_x, batch.unlabeled_x])
    x2 = np.concatenate([batch.labeled_view2, batch.unlabeled_view2])
    t1 = ms.forward_batch(x1)
    t2 = ms.forward_batch(x2)

    dlogits_l1 = None
    dprobs_l1 = np.zeros_like(t1.probs_l)
    dprobs_l2 = np.zeros_like(t2.probs_l)
    dprobs_u1 = np.zeros_like(t1.probs_u)
    dprobs_u2 = np.zeros_like(t2.probs_u)
    dz1 = np.zeros_like(t1.z)
    dz2 = np.zeros_like(t2.z)

    ce = bce = mse = ncl = scl = aug = pp = 0.0
    ce_clamped = bce_clamped = 0
    ncl_skipped = False

    if not flags.drop_ce:
        ce, dlog, ce_clamped = losses.ce_batch(t1.probs_l[sl], batch.labeled_y)
        dlogits_l1 = np.zeros_like(t1.logits_l)
        dlogits_l1[sl] = dlog

    zn1_u = norms1_u = None
    if not flags.drop_bce or (ncl_active and len(unlabeled_queue) > 0):
        zn1_u, norms1_u = normalize_rows(t1.z[su])

    if not flags.drop_bce:
        bce, dp1, dp2, bce_clamped = losses.bce_batch(
            t1.probs_u[su], t2.probs_u[su], zn1_u, cfg.pair_threshold)
        dprobs_u1[su] += dp1
        dprobs_u2[su] += dp2

    if not flags.drop_cs:
        mse, gl1, gl2, gu1, gu2 = losses.consistency_batch(
            t1.probs_l[sl], t2.probs_l[sl], t1.probs_u[su], t2.probs_u[su])
        dprobs_l1[sl] += omega * gl1
        dprobs_l2[sl] += omega * gl2
        dprobs_u1[su] += omega * gu1
        dprobs_u2[su] += omega * gu2

    if ncl_active:
        ncl_cfg = cfg.ncl_config()
        k1 = ncl_cfg.pseudo_positive_count
        aug_weight = ncl_cfg.aug_weight
        if len(unlabeled_queue) < k1:
            ncl_skipped = True
            log.debug("ncl skipped: queue %d < pseudo-positive count %d",
                      len(unlabeled_queue), k1)
        else:
            hn2_u, hnorms2_u = normalize_rows(t2.z[su])
            queue_mat = unlabeled_queue.entries()
            sims_mat = np.clip(zn1_u @ queue_mat.T, -1.0, 1.0)
            pp_idx = None
            if aug_weight != 1.0:
                pp_idx = np.stack([stable_topk_indices(row, k1, largest=True)
                                   for row in sims_mat])
            extra_sims = extra_vecs = None
            if hng_active:
                hcfg = cfg.hng_config()
                kept = [hng.generate(unlabeled_queue, labeled_queue, zn1_u[i],
                                     hcfg, hng_rng, query_sims=sims_mat[i])
                        for i in range(n_u)]
                if hng_debug_fh is not None:
                    for synth in kept:
                        hng.dump_provenance(synth, hng_debug_fh)
                width = max((len(s) for s in kept), default=0)
                if width:
                    extra_sims = np.full((n_u, width), -np.inf)
                    extra_vecs = np.zeros((n_u, width, ms.spec.embed_dim))
                    for i, synth in enumerate(kept):
                        extra_sims[i, :len(synth)] = synth.sims
                        extra_vecs[i, :len(synth)] = synth.vectors
            aug_vals, pp_vals, ncl_vals, dzn, dhn = losses.ncl_batch(
                zn1_u, hn2_u, queue_mat, pp_idx, aug_weight, cfg.temperature,
                extra_sims, extra_vecs)
            aug = float(np.mean(aug_vals))
            pp = float(np.mean(pp_vals))
            ncl = float(np.mean(ncl_vals))
            dz1[su] += normalize_rows_vjp(zn1_u, norms1_u, dzn / n_u)
            dz2[su] += normalize_rows_vjp(hn2_u, hnorms2_u, dhn / n_u)

        if not flags.drop_scl:
            zn1_l, norms1_l = normalize_rows(t1.z[sl])
            hn2_l, hnorms2_l = normalize_rows(t2.z[sl])
            pos_mask = labeled_queue.labels()[None, :] == batch.labeled_y[:, None]
            vals, dzn, dhn = losses.scl_batch(
                zn1_l, hn2_l, labeled_queue.entries(), pos_mask, cfg.temperature)
            scl = float(np.mean(vals))
            dz1[sl] += normalize_rows_vjp(zn1_l, norms1_l, dzn / n_l)
            dz2[sl] += normalize_rows_vjp(hn2_l, hnorms2_l, dhn / n_l)

    report = losses.total_loss(ce, bce, mse, omega, ncl, scl,
                               contrastive_aug=aug, contrastive_pp=pp,
                               ce_clamped=ce_clamped, bce_clamped=bce_clamped,
                               ncl_skipped=ncl_skipped)

    ms.backward_batch(t1, dz=dz1, dprobs_l=dprobs_l1, dprobs_u=dprobs_u1,
                      dlogits_l=dlogits_l1)
    ms.backward_batch(t2, dz=dz2, dprobs_l=dprobs_l2, dprobs_u=dprobs_u2)
    if opt is not None:
        sgd_step(ms, opt)

    if push:
        unlabeled_queue.push(t1.z[su])
        labeled_queue.push(t1.z[sl], batch.labeled_y)
    return report


@dataclass
class EpochMetrics:
    epoch: int
    acc: float
    report: losses.LossReport


def stage3_discovery(ms: ModelState, ds: NcdDataset, cfg: RunConfig,
                     batch_rng: np.random.Generator,
                     hng_rng: np.random.Generator,
                     metrics_path=None, hng_debug_fh=None):
    """Joint discovery training; evaluates clustering accuracy each epoch.

    Returns (per-epoch metrics, per-step reports, queues).
    """
    flags = cfg.ablation
    freeze_prefix(ms, 1 if len(ms.layers) > 1 else 0)
    opt = OptimizerState.for_model(ms, cfg.learning_rate, cfg.momentum,
                                   cfg.lr_milestones, cfg.lr_decay)
    unlabeled_queue = FeatureQueue(cfg.queue_capacity, cfg.embed_dim)
    labeled_queue = LabeledFeatureQueue(cfg.queue_capacity, cfg.embed_dim,
                                        cfg.labeled_classes)
    aug_cfg = cfg.augmentation()
    ramp = cfg.ramp()
    n_total = ds.labeled_x.shape[0] + ds.unlabeled_x.shape[0]
    steps = _steps_per_epoch(n_total, cfg.batch_size)

    history = []
    step_reports = []
    for epoch in range(cfg.discovery_epochs):
        opt.set_epoch(epoch)
        omega = 0.0 if flags.drop_cs else losses.ramp_weight(epoch, ramp)
        ncl_active = flags.enable_ncl and epoch >= cfg.ncl_start_epoch
        hng_active = (flags.enable_hng and ncl_active
                      and epoch >= cfg.hng_start_epoch)
        sums = np.zeros(7)  # ce, bce, mse, aug, pp, ncl, scl
        for _ in range(steps):
            batch = next_batch(ds, cfg.batch_size, aug_cfg, batch_rng)
            report = discovery_step(ms, batch, unlabeled_queue, labeled_queue,
                                    cfg, omega, ncl_active, hng_active,
                                    hng_rng, opt, hng_debug_fh)
            step_reports.append(report)
            sums += (report.ce, report.bce, report.mse, report.contrastive_aug,
                     report.contrastive_pp, report.ncl, report.scl)
        means = sums / steps
        epoch_report = losses.total_loss(
            means[0], means[1], means[2], omega, means[5], means[6],
            contrastive_aug=means[3], contrastive_pp=means[4])
        preds = evaluation.assign_clusters(ms, ds.unlabeled_x)
        result = evaluation.clustering_acc(ds.unlabeled_hidden_y, preds,
                                           cfg.unlabeled_classes)
        history.append(EpochMetrics(epoch, result.acc, epoch_report))
        if metrics_path is not None:
            evaluation.append_metrics(metrics_path, epoch, result.acc,
                                      epoch_report)
    return history, step_reports, unlabeled_queue, labeled_queue


def run_experiment(cfg: RunConfig, preset: str = None, out_dir=None,
                   hng_debug_path=None) -> dict:
    """Execute stages 1-3 under the given preset and write the artifacts.

    Returns a result dict with the summary, stage accuracies, per-epoch
    history, and per-step reports.
    """
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; "
                              f"choose from {sorted(PRESETS)}")
        cfg = replace(cfg, ablation=PRESETS[preset])
    streams = _substreams(cfg.seed)
    ds = build_dataset(cfg)
    ms = build_model(cfg)

    info = {"pretext_accuracy": None, "labeled_accuracy": None}
    if not cfg.ablation.drop_ssl:
        info.update(stage1_pretext(ms, ds, cfg.pretext_epochs, cfg.batch_size,
                                   np.random.default_rng(streams["pretext"]),
                                   cfg.learning_rate, cfg.momentum))
    info.update(stage2_supervised(ms, ds, cfg.supervised_epochs, cfg.batch_size,
                                  np.random.default_rng(streams["supervised"]),
                                  cfg.learning_rate, cfg.momentum))

    metrics_path = None
    debug_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        with open(metrics_path, "w"):
            pass
    if hng_debug_path is not None:
        debug_fh = open(hng_debug_path, "w")
    try:
        history, step_reports, *_ = stage3_discovery(
            ms, ds, cfg, np.random.default_rng(streams["discovery"]),
            np.random.default_rng(streams["hng"]), metrics_path, debug_fh)
    finally:
        if debug_fh is not None:
            debug_fh.close()

    final_acc = history[-1].acc if history else 0.0
    best_acc = max((m.acc for m in history), default=0.0)
    summary = {"final_acc": final_acc, "best_acc": best_acc,
               "seed": cfg.seed, "preset": preset if preset else "default"}

    if out_dir is not None:
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh)
        save_checkpoint(ms, os.path.join(out_dir, "checkpoint.json"), cfg.seed)
        tape = ms.forward_batch(ds.unlabeled_x)
        with open(os.path.join(out_dir, "embeddings.jsonl"), "w") as fh:
            for z, y in zip(tape.z, ds.unlabeled_hidden_y):
                fh.write(json.dumps({"z": z.tolist(), "hidden_y": int(y)}) + "\n")

    return {"summary": summary, "history": history,
            "step_reports": step_reports, "model": ms, "dataset": ds, **info}
