"""Optimisation loop, evaluation protocol, checkpoints and metrics logging."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as D
from . import estimators, evaluation, geometry, inference
from .model import Model, ModelConfig
from .tensor import NonFiniteError

log = logging.getLogger(__name__)

OUT_DIR_ENV = "HIERPART_OUT_DIR"


class TrainingAborted(RuntimeError):
    pass


class IncompatibleCheckpoint(ValueError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    data: str | None = None
    out_dir: str | None = None
    eval_mode: str | None = None
    eval_samples: int = 100

    def __post_init__(self):
        if not (self.lr >= 0 and self.batch_size > 0 and self.epochs > 0 and self.eval_samples > 0):
            raise ValueError("lr must be >= 0 and batch size, epochs, eval samples positive")
        if self.eval_mode is not None and self.eval_mode not in inference.INFERENCE_MODES:
            raise ValueError(f"unknown inference mode {self.eval_mode!r}")

    @property
    def inference_mode(self):
        return self.eval_mode or inference.default_mode(self.model.estimator)


# --------------------------------------------------------------------------
# data


@dataclass
class Instance:
    cloud: D.LabeledCloud
    points: np.ndarray
    graph: geometry.KnnGraph


def prepare(cloud, k_nn):
    pts = geometry.normalize_cloud(cloud.points)
    graph, _ = geometry.prepare_graph(pts, k_nn)
    return Instance(cloud, pts, graph)


@dataclass
class Dataset:
    train: list
    test: list
    num_top: int
    num_mid: int

    @classmethod
    def from_clouds(cls, train, test, k_nn):
        first = (train or test)[0]
        return cls([prepare(c, k_nn) for c in train], [prepare(c, k_nn) for c in test], first.num_top, first.num_mid)

    @classmethod
    def from_manifest(cls, path, k_nn):
        man = D.read_manifest(path)
        train = [D.read_cloud(p) for p in man.paths("train")]
        test = [D.read_cloud(p) for p in man.paths("test")]
        return cls.from_clouds(train, test, k_nn)


def batch(instances):
    pts = np.concatenate([i.points for i in instances])
    graph = geometry.merge_graphs([i.graph for i in instances])
    top = np.concatenate([i.cloud.top for i in instances])
    return pts, graph, top


# --------------------------------------------------------------------------
# optimiser


def adam_step(params, grads, lr, step, beta1=0.9, beta2=0.999, eps=1e-8):
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p in params:
        g = grads[p.name]
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        p.data = p.data - lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)


# --------------------------------------------------------------------------
# evaluation


def evaluate_model(model, instances, mode, num_samples=100, seed=0, repeats=1):
    """Top-level OA (direct) and middle-level OA (per-instance matching).

    MC mode repeats the whole pass ``repeats`` times with independent draws
    and reports the mean and standard deviation of the top-level OA.
    """
    cfg = model.config
    mid_counts = []
    for inst in instances:
        pred = inference.infer_middle(model, inst.points, inst.graph)
        mid_counts.append(
            evaluation.matched_counts(pred, inst.cloud.mid, cfg.num_latent_classes, inst.cloud.num_mid)
        )
    mid = evaluation.overall_accuracy(mid_counts)

    runs = 1 if mode == "mpl" else repeats
    top_oas = []
    for r in range(runs):
        counts = []
        for k, inst in enumerate(instances):
            rng = np.random.default_rng(np.random.SeedSequence([seed, r, k]))
            _, labels = inference.infer_top(model, inst.points, inst.graph, mode, num_samples, rng)
            counts.append(evaluation.top_level_counts(labels, inst.cloud.top))
        top_oas.append(evaluation.overall_accuracy(counts).oa)
    return {
        "top_oa": float(np.mean(top_oas)),
        "top_oa_std": float(np.std(top_oas, ddof=1)) if len(top_oas) > 1 else 0.0,
        "mid_oa": mid.oa,
        "mode": mode,
        "samples": num_samples if mode == "mc" else None,
        "repeats": runs,
    }


def check_compatible(model, dataset, num_latent=None):
    cfg = model.config
    if cfg.num_top_classes != dataset.num_top:
        raise IncompatibleCheckpoint(
            f"checkpoint has {cfg.num_top_classes} top classes, data has {dataset.num_top}"
        )
    if num_latent is not None and num_latent != cfg.num_latent_classes:
        raise IncompatibleCheckpoint(
            f"checkpoint has {cfg.num_latent_classes} latent classes, {num_latent} requested"
        )


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: Model
    metrics: list = field(default_factory=list)
    best_epoch: int | None = None


def _append_metrics(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def train(config, dataset=None, evaluate_every=1, callback=None):
    """Train from scratch; deterministic given ``config.seed``.

    A non-finite loss or gradient raises :class:`TrainingAborted` before the
    optimizer step, so the checkpoints on disk are those of the last
    completed epoch.

    When ``config.out_dir`` is set, ``last.hpk`` and ``best.hpk`` are
    rewritten every epoch and one JSON record per epoch is appended to
    ``metrics.jsonl``. ``evaluate_every=0`` skips per-epoch test metrics.
    """
    cfg = config
    if dataset is None:
        if cfg.data is None:
            raise ValueError("no dataset given")
        dataset = Dataset.from_manifest(cfg.data, cfg.model.k_nn)
    if cfg.model.num_top_classes != dataset.num_top:
        raise ValueError(f"model expects {cfg.model.num_top_classes} top classes, data has {dataset.num_top}")
    out = cfg.out_dir or os.environ.get(OUT_DIR_ENV)
    if out:
        os.makedirs(out, exist_ok=True)
    model = Model.init(cfg.model, cfg.seed)
    params = model.parameters()
    result = TrainResult(model)
    best_score = -math.inf
    step = 0
    n_train = len(dataset.train)
    meta = {"train": {k: v for k, v in asdict(cfg).items() if k != "model"}}

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n_train)
        losses, zhat, clamps = [], [], 0
        for b, start in enumerate(range(0, n_train, cfg.batch_size)):
            insts = [dataset.train[i] for i in order[start : start + cfg.batch_size]]
            pts, graph, top = batch(insts)
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, b, 1]))
            try:
                report = estimators.compute_loss(model, pts, graph, top, rng, training=True)
            except NonFiniteError as exc:
                raise TrainingAborted(f"non-finite values at epoch {epoch}, batch {b}: {exc}") from exc
            if not np.isfinite(report.loss) or not all(np.all(np.isfinite(g)) for g in report.grads.values()):
                raise TrainingAborted(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            step += 1
            adam_step(params, report.grads, cfg.lr, step, cfg.beta1, cfg.beta2, cfg.eps)
            losses.append(report.loss)
            if "zhat_mean" in report.aux:
                zhat.append(report.aux["zhat_mean"])
                clamps += report.aux["clamp_count"]

        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if zhat:
            record["zhat_mean"] = float(np.mean(zhat))
            record["clamp_count"] = int(clamps)
        if evaluate_every and (epoch % evaluate_every == 0 or epoch == cfg.epochs) and dataset.test:
            ev = evaluate_model(model, dataset.test, cfg.inference_mode, cfg.eval_samples, cfg.seed)
            record.update(top_oa=ev["top_oa"], mid_oa=ev["mid_oa"], mode=ev["mode"])
            score = 0.5 * (ev["top_oa"] + ev["mid_oa"])
            if score > best_score:
                best_score = score
                result.best_epoch = epoch
                if out:
                    model.save(os.path.join(out, "best.hpk"), {**meta, "epoch": epoch})
        record["seconds"] = time.perf_counter() - t0
        if out:
            model.save(os.path.join(out, "last.hpk"), {**meta, "epoch": epoch})
            _append_metrics(os.path.join(out, "metrics.jsonl"), record)
        result.metrics.append(record)
        log.info("epoch %d: %s", epoch, record)
        if callback is not None:
            callback(model, record)
    return result
