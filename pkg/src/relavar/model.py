"""Trainable weights of the full recommender: the variational GRU cell plus
the item output layer."""

from __future__ import annotations

import numpy as np

from relavar.numerics import Rng
from relavar.objective import OutputParams
from relavar.vgru import CELL_PARAMS, VgruParams

PARAM_NAMES = CELL_PARAMS + ("Wy",)


def glorot_init(shape: tuple[int, int], rng: Rng) -> np.ndarray:
    """Glorot-normal matrix: N(0, 2 / (fan_in + fan_out)) with fan_in = cols, fan_out = rows."""
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise ValueError(f"invalid matrix shape {shape}")
    std = np.sqrt(2.0 / (rows + cols))
    return std * rng.standard_normal(rows * cols).reshape(rows, cols)


def param_shapes(latent_dim: int, n_items: int) -> dict[str, tuple[int, int]]:
    n = latent_dim + 1
    return {
        "Wz": (n, n_items),
        "Uz": (n, n),
        "Wr": (n, n_items),
        "Ur": (n, n),
        "W": (n, n_items),
        "U": (n, n),
        "Wy": (n_items, latent_dim),
    }


class Model:
    """Named float64 weight matrices, in the fixed order of ``PARAM_NAMES``."""

    def __init__(self, params: dict[str, np.ndarray]):
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.params = {name: np.ascontiguousarray(params[name], dtype=np.float64) for name in PARAM_NAMES}
        expected = param_shapes(self.latent_dim, self.n_items)
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, latent_dim: int, n_items: int, rng: Rng) -> "Model":
        shapes = param_shapes(latent_dim, n_items)
        return cls({name: glorot_init(shapes[name], rng) for name in PARAM_NAMES})

    @classmethod
    def zeros(cls, latent_dim: int, n_items: int) -> "Model":
        return cls({name: np.zeros(shape) for name, shape in param_shapes(latent_dim, n_items).items()})

    @property
    def latent_dim(self) -> int:
        return self.params["Wy"].shape[1]

    @property
    def n_items(self) -> int:
        return self.params["Wy"].shape[0]

    @property
    def cell(self) -> VgruParams:
        return VgruParams(**{name: self.params[name] for name in CELL_PARAMS})

    @property
    def output(self) -> OutputParams:
        return OutputParams(self.params["Wy"])

    def copy(self) -> "Model":
        return Model({name: arr.copy() for name, arr in self.params.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}

    def n_weights(self) -> int:
        return sum(arr.size for arr in self.params.values())

    def equals(self, other: "Model") -> bool:
        return all(np.array_equal(self.params[n], other.params[n]) for n in PARAM_NAMES)
