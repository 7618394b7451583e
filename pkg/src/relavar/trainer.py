"""Training: dropout, truncated BPTT over session-parallel windows, and
Adagrad with Nesterov momentum."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from relavar.data import Session, SessionBatch, batcher
from relavar.errors import ConfigError, NumericError
from relavar.model import PARAM_NAMES, Model
from relavar.numerics import Rng, derive_seed, sigmoid
from relavar.objective import cross_entropy_batch, top1_grad
from relavar.vgru import StepTape, kl_batch, kl_grad_batch, step_batch, step_backward_batch

log = logging.getLogger(__name__)

STEP_SIZES = (0.005, 0.01, 0.05, 0.1)
MOMENTA = (0.0, 0.1, 0.2, 0.3, 0.4)
LOSSES = ("cross-entropy", "top1")
ADAGRAD_EPS = 1e-8


@dataclass
class TrainConfig:
    latent_dim: int = 100
    batch_size: int = 50
    step_size: float = 0.05
    momentum: float = 0.1
    dropout: float = 0.5
    epochs: int = 10
    seed: int = 0
    loss: str = "cross-entropy"
    kl_weight: float = 1.0
    gamma_train: int = 1
    bptt_window: int = 1
    shuffle: bool = False

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not any(np.isclose(self.step_size, s, rtol=0, atol=1e-12) for s in STEP_SIZES):
            raise ConfigError(f"step_size must be one of {STEP_SIZES}, got {self.step_size}")
        if not any(np.isclose(self.momentum, s, rtol=0, atol=1e-12) for s in MOMENTA):
            raise ConfigError(f"momentum must be one of {MOMENTA}, got {self.momentum}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be >= 0")
        if self.gamma_train < 1:
            raise ConfigError("gamma_train must be >= 1")
        if self.bptt_window < 1:
            raise ConfigError("bptt_window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def dropout_mask(shape, rate: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability ``rate``, else 1/(1-rate)."""
    n = int(np.prod(shape))
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(n).reshape(shape) >= rate
    return keep / (1.0 - rate)


def apply_dropout(v, rate: float, rng: Rng, training: bool = True) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return v.copy()
    return v * dropout_mask(v.shape, rate, rng)


class AdagradNesterov:
    """Adagrad step sizes with Nesterov momentum applied on top.

    Per weight: ``G += g**2``; ``a = lr * g / (sqrt(G) + 1e-8)``;
    ``u = mu * u - a``; ``w += mu * u - a``.
    """

    def __init__(self, model: Model, step_size: float, momentum: float):
        self.step_size = step_size
        self.momentum = momentum
        self.accum = model.zeros_like()
        self.velocity = model.zeros_like()
        self.skipped = 0

    def update(self, model: Model, grads: dict[str, np.ndarray]) -> bool:
        if not all(np.all(np.isfinite(grads[n])) for n in PARAM_NAMES):
            self.skipped += 1
            log.warning("non-finite gradient; update skipped (%d so far)", self.skipped)
            return False
        for name in PARAM_NAMES:
            g = grads[name]
            acc = self.accum[name]
            acc += g * g
            adaptive = self.step_size * g / (np.sqrt(acc) + ADAGRAD_EPS)
            vel = self.velocity[name]
            vel *= self.momentum
            vel -= adaptive
            model.params[name] += self.momentum * vel - adaptive
        return True


@dataclass
class WindowNoise:
    """Reparameterization noise and dropout multipliers for a window, one
    (B, gamma, D) array per step. Reusing the same object makes the forward
    pass a deterministic function of the weights."""

    eps: list[np.ndarray]
    masks: list[np.ndarray]


def draw_noise(rng: Rng, n_steps: int, batch_size: int, gamma: int, latent_dim: int, rate: float) -> WindowNoise:
    eps, masks = [], []
    shape = (batch_size, gamma, latent_dim)
    for _ in range(n_steps):
        eps.append(rng.standard_normal(int(np.prod(shape))).reshape(shape))
        masks.append(dropout_mask(shape, rate, rng))
    return WindowNoise(eps, masks)


@dataclass
class _StepCache:
    batch: SessionBatch
    tape: StepTape
    h_drop: np.ndarray
    dlogits: np.ndarray
    weight: np.ndarray


@dataclass
class WindowResult:
    objective: float
    event_loss: np.ndarray  # (T, B) data + kl_weight * kl, zero on inactive lanes
    data_loss: np.ndarray
    kl: np.ndarray
    lane_start: np.ndarray  # (T, B, D+1) state each lane stepped from
    carry: np.ndarray
    n_events: int
    no_negatives: int = 0
    caches: list[_StepCache] = field(default_factory=list, repr=False)


def _top1_lane_grads(lg: np.ndarray, batch: SessionBatch):
    """TOP1 over in-batch negatives (other active lanes' targets)."""
    B, G, _ = lg.shape
    loss = np.zeros(B)
    grad = np.zeros_like(lg)
    missing = 0
    pool = batch.targets[batch.active]
    for b in np.flatnonzero(batch.active):
        t = batch.targets[b]
        negs = pool[pool != t]
        if negs.size == 0:
            missing += 1
            continue
        for g in range(G):
            val, dg = top1_grad(lg[b, g], int(t), negs)
            loss[b] += val / G
            grad[b, g] = dg
    return loss, grad, missing


def forward_window(
    model: Model,
    batches: Sequence[SessionBatch],
    carry: np.ndarray,
    noise: WindowNoise,
    config: TrainConfig,
) -> WindowResult:
    """Run the cell over a window of batches and assemble the training objective.

    The objective is the mean over active (step, lane) events of
    ``data_loss + kl_weight * KL``; lanes with the reset flag restart from the
    prior state.
    """
    cell, Wy = model.cell, model.params["Wy"]
    D = model.latent_dim
    T, B = len(batches), carry.shape[0]
    event_loss = np.zeros((T, B))
    data_loss = np.zeros((T, B))
    kls = np.zeros((T, B))
    lane_start = np.zeros((T, B, D + 1))
    n_events = int(sum(b.active.sum() for b in batches))
    caches = []
    missing = 0
    for t, batch in enumerate(batches):
        s_prev = np.where(batch.reset[:, None], 0.0, carry)
        lane_start[t] = s_prev
        tape = step_batch(cell, s_prev, batch.inputs)
        mu, lv = tape.s_new[:, :D], tape.s_new[:, D]
        kl = kl_batch(mu, lv)
        eps, mask = noise.eps[t], noise.masks[t]
        h = mu[:, None, :] + np.exp(0.5 * lv)[:, None, None] * eps
        h_drop = h * mask
        lg = h_drop @ Wy.T
        if config.loss == "cross-entropy":
            targets = np.broadcast_to(batch.targets[:, None], lg.shape[:2])
            loss_bg, dlg = cross_entropy_batch(sigmoid(lg), targets)
            data = loss_bg.mean(axis=1)
        else:
            data, dlg, miss = _top1_lane_grads(lg, batch)
            missing += miss
        active = batch.active.astype(np.float64)
        data = data * active
        kl = kl * active
        data_loss[t], kls[t] = data, kl
        event_loss[t] = data + config.kl_weight * kl
        weight = active / max(n_events, 1)
        caches.append(_StepCache(batch, tape, h_drop, dlg, weight))
        carry = tape.s_new
    objective = float(event_loss.sum() / max(n_events, 1))
    return WindowResult(objective, event_loss, data_loss, kls, lane_start, carry, n_events, missing, caches)


def backward_window(model: Model, result: WindowResult, noise: WindowNoise, config: TrainConfig) -> dict[str, np.ndarray]:
    """Gradient of ``result.objective`` with respect to every weight.

    Gradients stop at the window start and at lane resets.
    """
    cell, Wy = model.cell, model.params["Wy"]
    D = model.latent_dim
    grads = model.zeros_like()
    G = config.gamma_train
    g_future = None
    for t in reversed(range(len(result.caches))):
        c = result.caches[t]
        mu, lv = c.tape.s_new[:, :D], c.tape.s_new[:, D]
        dlg = c.dlogits * (c.weight / G)[:, None, None]
        grads["Wy"] += np.einsum("bgm,bgd->md", dlg, c.h_drop)
        dh = (dlg @ Wy) * noise.masks[t]
        g_state = np.zeros_like(c.tape.s_new) if g_future is None else g_future
        g_state[:, :D] += dh.sum(axis=1)
        g_state[:, D] += (dh * noise.eps[t]).sum(axis=(1, 2)) * 0.5 * np.exp(0.5 * lv)
        kmu, klv = kl_grad_batch(mu, lv)
        scale = config.kl_weight * c.weight
        g_state[:, :D] += kmu * scale[:, None]
        g_state[:, D] += klv * scale
        g_prev = step_backward_batch(c.tape, g_state, cell, grads)
        g_future = np.where(c.batch.reset[:, None], 0.0, g_prev)
    return grads


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    mean_kl: float
    mean_data_loss: float
    steps: int
    updates: int
    events: int
    masked_lanes: int
    skipped_updates: int
    no_negatives: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class Trainer:
    """Owns the model, optimizer state and training random stream."""

    def __init__(self, model: Model, config: TrainConfig, rng: Rng | None = None):
        self.model = model
        self.config = config
        self.optimizer = AdagradNesterov(model, config.step_size, config.momentum)
        self.rng = rng if rng is not None else Rng(derive_seed(config.seed, "train"))
        self.epoch = 0
        self.step = 0

    @classmethod
    def create(cls, n_items: int, config: TrainConfig) -> "Trainer":
        model = Model.initialize(config.latent_dim, n_items, Rng(derive_seed(config.seed, "init")))
        return cls(model, config)

    def _windows(self, stream: Iterable[SessionBatch]):
        window = []
        for batch in stream:
            window.append(batch)
            if len(window) == self.config.bptt_window:
                yield window
                window = []
        if window:
            yield window

    def train_epoch(self, sessions: Sequence[Session]) -> EpochReport:
        cfg = self.config
        order = self.rng.permutation(len(sessions)) if cfg.shuffle else None
        usable = sum(1 for s in sessions if len(s) >= 2)
        if usable == 0:
            raise ValueError("training corpus has no session with two or more events")
        lanes = min(cfg.batch_size, usable)
        carry = np.zeros((lanes, self.model.latent_dim + 1))
        tot_loss = tot_kl = tot_data = 0.0
        steps = updates = events = masked = missing = 0
        skipped_before = self.optimizer.skipped
        for window in self._windows(batcher(sessions, cfg.batch_size, order)):
            noise = draw_noise(self.rng, len(window), lanes, cfg.gamma_train, self.model.latent_dim, cfg.dropout)
            result = forward_window(self.model, window, carry, noise, cfg)
            grads = backward_window(self.model, result, noise, cfg)
            if self.optimizer.update(self.model, grads):
                updates += 1
            carry = result.carry
            steps += len(window)
            events += result.n_events
            masked += sum(int((~b.active).sum()) for b in window)
            missing += result.no_negatives
            tot_loss += result.event_loss.sum()
            tot_kl += result.kl.sum()
            tot_data += result.data_loss.sum()
            self.step += 1
        self.epoch += 1
        bad = [n for n in PARAM_NAMES if not np.all(np.isfinite(self.model.params[n]))]
        if bad:
            raise NumericError(f"non-finite weights after epoch {self.epoch}: {bad}")
        n = max(events, 1)
        return EpochReport(
            epoch=self.epoch,
            mean_loss=float(tot_loss / n),
            mean_kl=float(tot_kl / n),
            mean_data_loss=float(tot_data / n),
            steps=steps,
            updates=updates,
            events=events,
            masked_lanes=masked,
            skipped_updates=self.optimizer.skipped - skipped_before,
            no_negatives=missing,
        )

    def fit(self, sessions: Sequence[Session], epochs: int | None = None,
            callback: Callable[[EpochReport], None] | None = None) -> list[EpochReport]:
        """Train until ``self.epoch`` reaches ``epochs`` (default ``config.epochs``)."""
        target = self.config.epochs if epochs is None else epochs
        reports = []
        while self.epoch < target:
            report = self.train_epoch(sessions)
            reports.append(report)
            if callback is not None:
                callback(report)
        return reports


def train_epoch(trainer: Trainer, sessions: Sequence[Session]) -> EpochReport:
    return trainer.train_epoch(sessions)
