"""Batched training for every autoencoder variant."""

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import models
from .nn import AdaBelief, LrSchedule, OptimizerError, schedule_next

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised on a non-finite loss or gradient; carries the last finite state."""

    def __init__(self, message, last_good=None, batch=None, log=None):
        super().__init__(message)
        self.last_good = last_good
        self.batch = batch
        self.log = log


@dataclass
class TrainConfig:
    model: models.ModelSpec
    batch_size: int = 20
    schedule: LrSchedule = field(default_factory=LrSchedule)
    kappa_w: float = 1.0
    kappa_w_on_u: bool = False
    weak_init: str = "svd"
    seed: int = 0
    shuffle: bool = True
    restarts: int = 1
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.weak_init not in ("svd", "random"):
            raise ValueError(f"weak_init must be 'svd' or 'random', got {self.weak_init!r}")
        if not self.kappa_w > 0:
            raise ValueError("kappa_w must be positive")
        spec = self.model
        if spec.variant == "rrae_strong" and self.batch_size < spec.k_max:
            raise models.ConfigurationError(
                f"batch size {self.batch_size} is smaller than k_max={spec.k_max}")


@dataclass
class TrainLog:
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stage: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    stage_rates: list = field(default_factory=list)
    final_terms: dict = field(default_factory=dict)

    @property
    def n_batches(self):
        return len(self.loss)

    def per_100_batches(self, warmup=10):
        """Wall-clock seconds of the 100 consecutive batches after ``warmup``.

        Shorter logs fall back to the mean step time scaled to 100 batches.
        """
        ms = np.asarray(self.wall_ms)
        if ms.size == 0:
            return float("nan")
        if ms.size >= warmup + 100:
            return float(ms[warmup:warmup + 100].sum() / 1000)
        return float(ms.mean() * 100 / 1000)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["batch", "stage", "lr", "loss", "wall_ms"])
            for i, (st, lr, lo, ms) in enumerate(zip(self.stage, self.lr, self.loss, self.wall_ms)):
                w.writerow([i, st, repr(lr), repr(lo), f"{ms:.4f}"])


def epoch_batches(n, batch_size, rng, shuffle=True, min_size=1):
    """Index batches for one epoch; the tail batch may be short.

    A tail with fewer than ``min_size`` columns is merged into the batch
    before it (the strong formulation cannot truncate a batch narrower than k_max).
    """
    order = rng.permutation(n) if shuffle else np.arange(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_size:
        batches[-2:] = [np.concatenate(batches[-2:])]
    return batches


def _min_batch(config):
    return config.model.k_max if config.model.variant == "rrae_strong" else 1


def _batch_stream(n, batch_size, rng, shuffle, min_size=1):
    while True:
        yield from epoch_batches(n, batch_size, rng, shuffle, min_size)


def normalize_columns(U):
    return U / np.linalg.norm(U, axis=0, keepdims=True)


def fresh_state(config, X):
    state = models.init_state(config.model, config.seed, n_samples=X.shape[1])
    if config.model.variant == "rrae_weak" and config.weak_init == "svd":
        models.init_weak_from_latent(state, X)
    return state


def train_step(state, opt, X, idx, lr, config):
    """One forward/backward/update.  Returns (new params, loss value, info)."""
    nodes = models.as_nodes(state)
    total, info = models.loss(state, X[:, idx], idx, nodes)
    total.backward()
    grads = {k: n.grad for k, n in nodes.items()}
    scale = {}
    if state.spec.variant == "rrae_weak":
        scale["A"] = config.kappa_w
        if config.kappa_w_on_u:
            scale["U"] = config.kappa_w
    new = opt.step(state.params, grads, lr, scale)
    if "U" in new:
        new["U"] = normalize_columns(new["U"])
    return new, float(total.value[0, 0]), info


def train(dataset, config, on_step=None, state=None):
    """Train ``config.model`` on the normalised training snapshots of ``dataset``.

    ``on_step(batch, state, idx, info)`` is called after every update.
    """
    X = dataset.Xn
    n = X.shape[1]
    if state is None:
        state = fresh_state(config, X)
    rng = np.random.Generator(np.random.Philox(config.seed + 104729))
    batches = _batch_stream(n, config.batch_size, rng, config.shuffle, _min_batch(config))
    opt = AdaBelief()
    schedule = config.schedule
    tlog = TrainLog(stage_rates=schedule.rates())
    info = None
    for stage, lr in enumerate(tlog.stage_rates):
        stage_losses = []
        while True:
            idx = next(batches)
            t0 = time.perf_counter()
            try:
                params, value, info = train_step(state, opt, X, idx, lr, config)
            except (ad.NumericalError, OptimizerError) as exc:
                raise TrainingDivergedError(
                    f"training diverged at batch {tlog.n_batches} (stage {stage}, lr {lr:g}): {exc}",
                    last_good=state, batch=tlog.n_batches, log=tlog) from exc
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at batch {tlog.n_batches}", state, tlog.n_batches, tlog)
            state = models.ModelState(state.spec, params, state.meta)
            tlog.wall_ms.append((time.perf_counter() - t0) * 1000)
            tlog.loss.append(value)
            tlog.lr.append(lr)
            tlog.stage.append(stage)
            stage_losses.append(value)
            if on_step is not None:
                on_step(tlog.n_batches - 1, state, idx, info)
            if schedule_next(schedule, stage_losses, stage).stop_stage:
                break
        log.info("stage %d (lr %g) ended after %d batches, best loss %.4g",
                 stage, lr, len(stage_losses), min(stage_losses))
        if config.checkpoint_dir:
            ckdir = Path(config.checkpoint_dir)
            ckdir.mkdir(parents=True, exist_ok=True)
            models.save_checkpoint(ckdir / f"seed{config.seed}-stage{stage}.npz", state, dataset.norm)
    if info is not None:
        tlog.final_terms = {k: float(v.value[0, 0]) for k, v in info["terms"].items()}
    state.meta.update({"seed": config.seed, "batches": tlog.n_batches})
    return state, tlog


def encode_all(state, X):
    return models.encode(state, X).value


def finalize_basis(state, dataset):
    """Basis/coefficients used for interpolation, computed on the whole training set.

    Strong: truncated SVD of the full latent, replacing anything seen during
    batching.  Weak: the trained U and A.  Others: identity basis over the raw latent.
    """
    Y = encode_all(state, dataset.Xn)
    return models.factorize_latent(state, Y)


def training_error(state, fac, dataset):
    """Global relative error (%) of decoding the finalized training coefficients."""
    from .data import denormalize

    pred = denormalize(models.decode(state, fac.U @ fac.A).value, dataset.norm)
    return float(np.linalg.norm(dataset.X - pred) / np.linalg.norm(dataset.X) * 100)


def train_best(dataset, config, on_step=None):
    """Run ``config.restarts`` trainings on consecutive seeds and keep the lowest training error.

    Selection only looks at the training snapshots.  Returns
    (state, log, factorization, per-restart training errors).
    """
    best = None
    errors = []
    for r in range(config.restarts):
        cfg = replace(config, seed=config.seed + r, restarts=1)
        state, tlog = train(dataset, cfg, on_step=on_step)
        fac = finalize_basis(state, dataset)
        err = training_error(state, fac, dataset)
        errors.append(err)
        log.info("restart %d (seed %d): training error %.3f%%", r, cfg.seed, err)
        if best is None or err < best[3]:
            best = (state, tlog, fac, err)
    return best[0], best[1], best[2], errors


def time_batches(dataset, config, n=100, warmup=10, state=None):
    """Mean wall-clock seconds per ``n`` optimizer steps after ``warmup`` steps."""
    X = dataset.Xn
    cols = X.shape[1]
    if state is None:
        state = fresh_state(config, X)
    rng = np.random.Generator(np.random.Philox(config.seed + 104729))
    batches = _batch_stream(cols, config.batch_size, rng, config.shuffle, _min_batch(config))
    opt = AdaBelief()
    lr = config.schedule.initial_rate
    for _ in range(warmup):
        params, _, _ = train_step(state, opt, X, next(batches), lr, config)
        state = models.ModelState(state.spec, params)
    t0 = time.perf_counter()
    for _ in range(n):
        params, _, _ = train_step(state, opt, X, next(batches), lr, config)
        state = models.ModelState(state.spec, params)
    return (time.perf_counter() - t0) * 100 / n
