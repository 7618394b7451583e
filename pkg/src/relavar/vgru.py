"""Variational GRU cell.

The recurrent state is the concatenation ``[mu, log_var]`` of length D+1: the
mean of an isotropic Gaussian posterior over the latent activations and the
log of its single shared variance. The GRU gates act on that whole vector;
latent activations are sampled from the posterior but never fed back.

Every function has a batched form operating on arrays with a leading lane
axis (``*_batch``); the unbatched forms are thin wrappers used by the
evaluation and recommendation paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from relavar.numerics import Rng, sigmoid

CELL_PARAMS = ("Wz", "Uz", "Wr", "Ur", "W", "U")


@dataclass
class VgruParams:
    """Gate matrices. Input matrices are (D+1, m) and indexed by item column;
    recurrent matrices are (D+1, D+1)."""

    Wz: np.ndarray
    Uz: np.ndarray
    Wr: np.ndarray
    Ur: np.ndarray
    W: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        n_state, m = self.W.shape
        for name in ("Wz", "Wr", "W"):
            if getattr(self, name).shape != (n_state, m):
                raise ValueError(f"{name} must have shape {(n_state, m)}")
        for name in ("Uz", "Ur", "U"):
            if getattr(self, name).shape != (n_state, n_state):
                raise ValueError(f"{name} must have shape {(n_state, n_state)}")
        if n_state < 2:
            raise ValueError("latent dimension must be at least 1")

    @property
    def latent_dim(self) -> int:
        return self.W.shape[0] - 1

    @property
    def n_items(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, latent_dim: int, n_items: int) -> "VgruParams":
        n = latent_dim + 1
        return cls(
            Wz=np.zeros((n, n_items)),
            Uz=np.zeros((n, n)),
            Wr=np.zeros((n, n_items)),
            Ur=np.zeros((n, n)),
            W=np.zeros((n, n_items)),
            U=np.zeros((n, n)),
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in CELL_PARAMS}


@dataclass
class PosteriorState:
    mu: np.ndarray
    log_var: float

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[0]

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_var))

    def as_vector(self) -> np.ndarray:
        return np.append(self.mu, self.log_var)

    @classmethod
    def from_vector(cls, s) -> "PosteriorState":
        s = np.asarray(s, dtype=np.float64)
        return cls(mu=s[:-1].copy(), log_var=float(s[-1]))


@dataclass
class LatentSample:
    h: np.ndarray
    eps: np.ndarray


@dataclass
class GateActivations:
    z: np.ndarray
    r: np.ndarray
    h_cand: np.ndarray


@dataclass
class StepTape:
    """Forward record for one (possibly batched) step."""

    items: np.ndarray
    s_prev: np.ndarray
    gates: GateActivations
    s_new: np.ndarray
    samples: list = field(default_factory=list)


def init_state(latent_dim: int) -> PosteriorState:
    if latent_dim < 1:
        raise ValueError("latent dimension must be at least 1")
    return PosteriorState(mu=np.zeros(latent_dim), log_var=0.0)


def _check_items(params: VgruParams, items: np.ndarray) -> None:
    if items.size and (items.min() < 0 or items.max() >= params.n_items):
        bad = items[(items < 0) | (items >= params.n_items)][0]
        raise IndexError(f"item index {bad} out of range for {params.n_items} items")


def step_batch(params: VgruParams, s_prev: np.ndarray, items) -> StepTape:
    """Advance ``B`` lanes at once. ``s_prev`` has shape (B, D+1)."""
    items = np.asarray(items, dtype=np.int64)
    s_prev = np.asarray(s_prev, dtype=np.float64)
    if s_prev.ndim != 2 or s_prev.shape[1] != params.latent_dim + 1:
        raise ValueError(f"state shape {s_prev.shape} does not match latent dim {params.latent_dim}")
    _check_items(params, items)
    z = sigmoid(params.Wz[:, items].T + s_prev @ params.Uz.T)
    r = sigmoid(params.Wr[:, items].T + s_prev @ params.Ur.T)
    h_cand = np.tanh(params.W[:, items].T + (r * s_prev) @ params.U.T)
    s_new = (1.0 - z) * s_prev + z * h_cand
    return StepTape(items=items, s_prev=s_prev, gates=GateActivations(z, r, h_cand), s_new=s_new)


def step(params: VgruParams, prev: PosteriorState, item: int) -> tuple[PosteriorState, GateActivations]:
    if not 0 <= int(item) < params.n_items:
        raise IndexError(f"item index {item} out of range for {params.n_items} items")
    if prev.latent_dim != params.latent_dim:
        raise ValueError("state dimension does not match parameters")
    tape = step_batch(params, prev.as_vector()[None, :], [item])
    g = tape.gates
    return PosteriorState.from_vector(tape.s_new[0]), GateActivations(g.z[0], g.r[0], g.h_cand[0])


def step_backward_batch(
    tape: StepTape, grad_s_new: np.ndarray, params: VgruParams, grads: dict[str, np.ndarray]
) -> np.ndarray:
    """Reverse-mode pass for :func:`step_batch`.

    Accumulates parameter gradients into ``grads`` (keyed by matrix name) and
    returns the gradient with respect to ``tape.s_prev``.
    """
    s, z, r, hc = tape.s_prev, tape.gates.z, tape.gates.r, tape.gates.h_cand
    g = np.asarray(grad_s_new, dtype=np.float64)
    cols = (slice(None), tape.items)

    grad_s = g * (1.0 - z)

    da_h = g * z * (1.0 - hc * hc)
    rs = r * s
    np.add.at(grads["W"], cols, da_h.T)
    grads["U"] += da_h.T @ rs
    d_rs = da_h @ params.U
    grad_s += d_rs * r

    da_r = d_rs * s * r * (1.0 - r)
    np.add.at(grads["Wr"], cols, da_r.T)
    grads["Ur"] += da_r.T @ s
    grad_s += da_r @ params.Ur

    da_z = g * (hc - s) * z * (1.0 - z)
    np.add.at(grads["Wz"], cols, da_z.T)
    grads["Uz"] += da_z.T @ s
    grad_s += da_z @ params.Uz
    return grad_s


def zero_grads(params: VgruParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.as_dict().items()}


def step_backward(
    tape: StepTape, grad_state_out, params: VgruParams, grads: dict[str, np.ndarray] | None = None
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Unbatched convenience form; accepts a tape from :func:`step_batch` with one lane."""
    if grads is None:
        grads = zero_grads(params)
    g = np.asarray(grad_state_out, dtype=np.float64).reshape(tape.s_prev.shape)
    grad_in = step_backward_batch(tape, g, params, grads)
    return grad_in.reshape(np.shape(grad_state_out)), grads


def reparameterize(mu: np.ndarray, log_var: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """``mu + exp(log_var / 2) * eps`` with ``log_var`` broadcast over the last axis."""
    return mu + np.exp(0.5 * np.asarray(log_var))[..., None] * eps


def sample(state: PosteriorState, rng: Rng, eps=None) -> LatentSample:
    if eps is None:
        eps = rng.standard_normal(state.latent_dim)
    eps = np.asarray(eps, dtype=np.float64)
    h = state.mu + np.exp(0.5 * state.log_var) * eps
    return LatentSample(h=h, eps=eps)


def kl_batch(mu: np.ndarray, log_var: np.ndarray) -> np.ndarray:
    """KL[N(mu, e^lv I) || N(0, I)] along the last axis of ``mu``."""
    d = mu.shape[-1]
    var = np.exp(log_var)
    # var - 1 - log_var is nonnegative in exact arithmetic; clip rounding noise near 0
    return 0.5 * (np.sum(mu * mu, axis=-1) + d * np.maximum(var - 1.0 - log_var, 0.0))


def kl_grad_batch(mu: np.ndarray, log_var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = mu.shape[-1]
    return mu.copy(), 0.5 * d * (np.exp(log_var) - 1.0)


def kl(state: PosteriorState) -> float:
    return float(kl_batch(state.mu, np.float64(state.log_var)))


def kl_grad(state: PosteriorState) -> tuple[np.ndarray, float]:
    gmu, glv = kl_grad_batch(state.mu, np.float64(state.log_var))
    return gmu, float(glv)
