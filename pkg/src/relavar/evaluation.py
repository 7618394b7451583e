"""Monte-Carlo prediction and Recall@K / MRR@K evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from relavar.data import Session
from relavar.errors import ConfigError
from relavar.model import Model
from relavar.numerics import Rng, derive_seed, sigmoid
from relavar.vgru import PosteriorState, init_state, step

MODES = ("mc-mean", "mean-state")


@dataclass
class EvalConfig:
    k: int = 20
    gamma_eval: int = 10
    mode: str = "mc-mean"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.gamma_eval < 1:
            raise ConfigError("gamma_eval must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class EvalReport:
    k: int
    recall_at_k: float
    mrr_at_k: float
    events_evaluated: int
    events_skipped: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in self.to_dict().items())

    def to_jsonl(self) -> str:
        counts = {"events_evaluated": self.events_evaluated, "events_skipped": self.events_skipped}
        lines = [
            {"metric": f"recall@{self.k}", "value": self.recall_at_k, **counts},
            {"metric": f"mrr@{self.k}", "value": self.mrr_at_k, **counts},
        ]
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)

    def write(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        txt = prefix.with_name(prefix.name + ".txt")
        jsonl = prefix.with_name(prefix.name + ".jsonl")
        txt.write_text(self.to_text())
        jsonl.write_text(self.to_jsonl())
        return txt, jsonl


def predict_scores(model: Model, state: PosteriorState, config: EvalConfig, rng: Rng) -> np.ndarray:
    """Item scores for the next action.

    ``mc-mean`` averages ``sigmoid(Wy h)`` over ``gamma_eval`` posterior
    samples; ``mean-state`` scores the posterior mean directly.
    """
    Wy = model.params["Wy"]
    if config.mode == "mean-state":
        return sigmoid(Wy @ state.mu)
    eps = rng.standard_normal(config.gamma_eval * state.latent_dim).reshape(config.gamma_eval, state.latent_dim)
    h = state.mu + np.exp(0.5 * state.log_var) * eps
    return sigmoid(h @ Wy.T).mean(axis=0)


def rank_of(scores, target: int) -> int:
    """1-based rank of ``target``; ties go to the smaller index."""
    scores = np.asarray(scores)
    if not 0 <= target < scores.shape[0]:
        raise IndexError(f"target {target} out of range")
    s = scores[target]
    return 1 + int(np.count_nonzero(scores > s)) + int(np.count_nonzero(scores[:target] == s))


def top_k(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` best items, best first, using the same tie rule as :func:`rank_of`."""
    scores = np.asarray(scores)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:k]


def metrics_from_ranks(ranks: Sequence[int], k: int) -> tuple[float, float]:
    """Recall@k and MRR@k; sums are exactly rounded so the result does not
    depend on event order."""
    ranks = [int(r) for r in ranks]
    if not ranks:
        return 0.0, 0.0
    hits = sum(1 for r in ranks if r <= k)
    rr = math.fsum(1.0 / r for r in ranks if r <= k)
    return hits / len(ranks), rr / len(ranks)


def session_ranks(model: Model, session: Session, config: EvalConfig) -> tuple[list[int], int]:
    """Teacher-forced ranks of every next item in one session, plus the
    number of skipped events (items outside the model's vocabulary)."""
    rng = Rng(derive_seed(config.seed, session.session_id))
    cell = model.cell
    state = init_state(model.latent_dim)
    ranks = []
    skipped = 0
    items = session.items
    for i in range(len(items) - 1):
        x, y = items[i], items[i + 1]
        if not 0 <= x < model.n_items:
            skipped += len(items) - 1 - i
            break
        state, _ = step(cell, state, x)
        if not 0 <= y < model.n_items:
            skipped += 1
            continue
        ranks.append(rank_of(predict_scores(model, state, config, rng), y))
    return ranks, skipped


def evaluate(model: Model, sessions: Sequence[Session], config: EvalConfig) -> EvalReport:
    """Recall@K and MRR@K over every consecutive event pair of every session.

    Each session draws its noise from a stream keyed by ``(seed, session_id)``,
    so the report does not depend on session order.
    """
    ranks: list[int] = []
    skipped = 0
    for s in sessions:
        r, sk = session_ranks(model, s, config)
        ranks.extend(r)
        skipped += sk
    recall, mrr = metrics_from_ranks(ranks, config.k)
    return EvalReport(config.k, recall, mrr, len(ranks), skipped)


def session_state(model: Model, items: Sequence[int]) -> PosteriorState:
    state = init_state(model.latent_dim)
    cell = model.cell
    for x in items:
        state, _ = step(cell, state, x)
    return state


def recommend(model: Model, items: Sequence[int], k: int, config: EvalConfig) -> list[tuple[int, float]]:
    """Top-``k`` (item index, score) pairs after feeding ``items`` through the cell."""
    if not items:
        raise ValueError("need at least one item to recommend from")
    state = session_state(model, items)
    rng = Rng(derive_seed(config.seed, "recommend"))
    scores = predict_scores(model, state, config, rng)
    return [(int(i), float(scores[i])) for i in top_k(scores, min(k, model.n_items))]
