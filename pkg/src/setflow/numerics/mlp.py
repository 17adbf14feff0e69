from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T

_ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}


@dataclass
class Mlp:
    """Fully connected network; hidden layers are activated, the last is linear.

    With ``zero_init_last`` the final weight and bias start at zero, so a fresh
    network maps every input to the zero vector.
    """

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str] = field(default_factory=list)
    zero_init_last: bool = False

    @classmethod
    def build(cls, widths, rng: np.random.Generator, activation="relu",
              zero_init_last=False) -> "Mlp":
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad layer widths {widths}")
        weights, biases = [], []
        n_layers = len(widths) - 1
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == n_layers - 1
            if last and zero_init_last:
                w = np.zeros((fan_in, fan_out))
            else:
                gain = 1.0 if last else 2.0
                w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in)
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(widths, weights, biases, [activation] * (n_layers - 1), zero_init_last)

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}layers.{i}.weight"] = w
            out[f"{prefix}layers.{i}.bias"] = b
        return out

    def __call__(self, x, tape: T.GradTape | None = None):
        return mlp_forward(self, x, tape)


def mlp_forward(net: Mlp, x, tape: T.GradTape | None = None):
    """Apply ``net`` to the trailing axis of ``x``.

    Pass ``tape`` to record the computation for :func:`~setflow.numerics.backward`.
    ``x`` may itself be a recorded ``Var``.
    """
    if T.value(x).shape[-1] != net.in_dim:
        raise ValueError(f"input width {T.value(x).shape[-1]} != network input {net.in_dim}")
    if tape is None:
        tape = T._tape_of(x)
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if tape is not None:
            w, b = tape.param(w), tape.param(b)
        h = T.add(T.matmul(h, w), b)
        if i < last:
            h = _ACTIVATIONS[net.activations[i]](h)
    return h
