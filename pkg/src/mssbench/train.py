"""Desk-scale training for the extractor: losses, Adam, plateau LR halving,
early stopping, and the crop/augment sampling pipeline.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import tasnet
from .dataset import AugmentConfig, MixtureSample, augment, target_pair, training_crop
from .errors import DivergenceError, InvalidArgument

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4
    lr0: float = 1e-3
    plateau_patience: int = 5
    lr_factor: float = 0.5
    early_stop_patience: int = 20
    loss: str = "l1"
    seed: int = 0
    crop_s: float = 3.0
    min_delta: float = 1e-6
    max_steps: int | None = None
    augment_gain_db: float = 6.0
    augment_swap_prob: float = 0.5

    def __post_init__(self):
        for f in ("epochs", "batch_size", "plateau_patience", "early_stop_patience"):
            if getattr(self, f) < 1:
                raise InvalidArgument(f"{f} must be positive")
        if not 0.0 < self.lr_factor < 1.0:
            raise InvalidArgument("lr_factor must lie in (0, 1)")
        if self.loss not in LOSSES:
            raise InvalidArgument(f"unknown loss {self.loss!r}")


def loss_l1(estimates, references) -> float:
    return float(ad.l1_loss([ad.Var(e) for e in estimates], [ad.Var(r) for r in references]).value)


def loss_neg_snr(estimates, references) -> float:
    return float(ad.neg_snr_loss([ad.Var(e) for e in estimates], [ad.Var(r) for r in references]).value)


LOSSES = {"l1": ad.l1_loss, "neg_snr": ad.neg_snr_loss}


def backward(tape: ad.Tape, loss: ad.Var) -> dict:
    return tape.backward(loss)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(weights: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new (weights, state) and leaves inputs untouched."""
    t = state.t + 1
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_w[name] = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_w, AdamState(new_m, new_v, t)


class PlateauSchedule:
    """LR halving on plateau and early stopping, with independent patience counters.

    Call :meth:`step` once per epoch with the validation loss; it returns
    ``True`` when training should stop.
    """

    def __init__(self, lr0: float, factor: float = 0.5, plateau_patience: int = 5,
                 early_stop_patience: int = 20, min_delta: float = 1e-6):
        self.lr = lr0
        self.factor = factor
        self.plateau_patience = plateau_patience
        self.early_stop_patience = early_stop_patience
        self.min_delta = min_delta
        self.best = np.inf
        self.plateau_bad = 0
        self.stop_bad = 0
        self.epoch = 0
        self.halved_at: list[int] = []
        self.improved = False

    def step(self, valid_loss: float) -> bool:
        self.epoch += 1
        self.improved = valid_loss < self.best - self.min_delta
        if self.improved:
            self.best = valid_loss
            self.plateau_bad = self.stop_bad = 0
            return False
        self.plateau_bad += 1
        self.stop_bad += 1
        if self.plateau_bad >= self.plateau_patience:
            self.lr *= self.factor
            self.plateau_bad = 0
            self.halved_at.append(self.epoch)
        return self.stop_bad >= self.early_stop_patience


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    valid_loss: float


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _pairs(samples, target):
    mix, tgt, res = zip(*(target_pair(s, target) for s in samples))
    stack = lambda bufs: np.stack([b.samples for b in bufs])
    return stack(mix), stack(tgt), stack(res)


def batch_loss(weights, model_cfg, mixture, target, residual, loss: str, tape=None):
    outs = tasnet.forward(mixture, model_cfg, weights, tape)
    refs = [tape.constant(target), tape.constant(residual)] if tape else [ad.Var(target), ad.Var(residual)]
    return LOSSES[loss](outs[:2], refs)


def _valid_crops(valid_pool, cfg: TrainConfig):
    crops = []
    for i, s in enumerate(valid_pool):
        if s.duration_s > cfg.crop_s:
            s = training_crop(s, cfg.crop_s, _derive_seed(cfg.seed, 1, i))
        crops.append(s)
    return crops


def validation_loss(weights, model_cfg, samples, target, loss):
    vals = []
    for s in samples:
        mix, tgt, res = _pairs([s], target)
        vals.append(float(batch_loss(weights, model_cfg, mix, tgt, res, loss).value))
    return float(np.mean(vals))


def fit(model_cfg: tasnet.TasNetConfig, train_cfg: TrainConfig, train_pool: list, valid_pool: list,
        target: str, init_weights: dict | None = None, valid_loss_fn=None, progress=None):
    """Train an extractor for ``target``.  Returns ``(best_weights, history)``.

    ``valid_loss_fn(weights, epoch)`` replaces the validation pass when given.
    """
    if not train_pool or not valid_pool:
        raise InvalidArgument("train and validation pools must be non-empty")
    cfg = train_cfg
    weights = init_weights if init_weights is not None else tasnet.init_weights(model_cfg, cfg.seed)
    weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
    state = AdamState()
    sched = PlateauSchedule(cfg.lr0, cfg.lr_factor, cfg.plateau_patience, cfg.early_stop_patience, cfg.min_delta)
    aug_cfg = AugmentConfig(cfg.augment_gain_db, cfg.augment_swap_prob)
    valid = _valid_crops(valid_pool, cfg)
    history: list[EpochRecord] = []
    best = copy.deepcopy(weights)
    steps = 0

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(_derive_seed(cfg.seed, 0, epoch))
        order = rng.permutation(len(train_pool))
        lr = sched.lr
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            batch = []
            for j in order[start:start + cfg.batch_size]:
                s = train_pool[j]
                s = training_crop(s, min(cfg.crop_s, s.duration_s), _derive_seed(cfg.seed, 2, epoch, int(j)))
                batch.append(augment(s, _derive_seed(cfg.seed, 3, epoch, int(j)), aug_cfg))
            mix, tgt, res = _pairs(batch, target)
            tape = ad.Tape()
            loss = batch_loss(weights, model_cfg, mix, tgt, res, cfg.loss, tape)
            value = float(loss.value)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", history)
            grads = tape.backward(loss)
            weights, state = adam_step(weights, grads, state, lr)
            losses.append(value)
            steps += 1

        if valid_loss_fn is not None:
            vloss = float(valid_loss_fn(weights, epoch))
        else:
            vloss = validation_loss(weights, model_cfg, valid, target, cfg.loss)
        if not np.isfinite(vloss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", history)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(EpochRecord(epoch, lr, train_loss, vloss))
        stop = sched.step(vloss)
        if sched.improved:
            best = copy.deepcopy(weights)
        log.info("epoch %d lr %.3g train %.5f valid %.5f", epoch, lr, train_loss, vloss)
        if progress is not None:
            progress(history[-1])
        if stop or (cfg.max_steps is not None and steps >= cfg.max_steps):
            break
    return best, history


def history_rows(history: list[EpochRecord]) -> list[dict]:
    return [asdict(r) for r in history]
