"""Bijections on a single vector space: affine coupling, batch norm, Real NVP blocks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .numerics import Mlp, mlp_forward
from .numerics import tape as T

DEFAULT_CLAMP = 5.0


def soft_clamp(raw, c: float):
    """``c * tanh(raw / c)``: smooth, bounded log-scale."""
    return T.mul(c, T.tanh(T.mul(raw, 1.0 / c)))


class AffineCoupling:
    """Real NVP affine coupling on ``R^dim``.

    Parity 0 passes the first ``floor(dim/2)`` coordinates through and
    transforms the rest; parity 1 does the opposite, so two couplings of
    opposite parity touch every coordinate once.
    """

    def __init__(self, dim: int, parity: int, hidden, rng: np.random.Generator,
                 ctx_dim: int = 0, clamp: float = DEFAULT_CLAMP, activation: str = "relu"):
        if dim < 2:
            raise ValueError("coupling needs dim >= 2")
        if clamp <= 0:
            raise ValueError("clamp must be positive")
        self.dim, self.parity, self.ctx_dim, self.clamp = dim, parity % 2, ctx_dim, clamp
        d = dim // 2
        lo, hi = slice(0, d), slice(d, dim)
        self.pass_slice, self.trans_slice = (lo, hi) if self.parity == 0 else (hi, lo)
        n_pass = len(range(dim)[self.pass_slice])
        widths = [n_pass + ctx_dim, *hidden, dim - n_pass]
        self.s_net = Mlp.build(widths, rng, activation, zero_init_last=True)
        self.t_net = Mlp.build(widths, rng, activation, zero_init_last=True)

    @property
    def split(self) -> int:
        """Count of pass-through coordinates."""
        return len(range(self.dim)[self.pass_slice])

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {**self.s_net.named_parameters(prefix + "s."),
                **self.t_net.named_parameters(prefix + "t.")}

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {}

    def _scale_shift(self, x_pass, ctx, tape):
        if (ctx is None) != (self.ctx_dim == 0):
            raise ValueError(f"coupling expects context of width {self.ctx_dim}, got "
                             f"{'none' if ctx is None else T.value(ctx).shape[-1]}")
        inp = x_pass if ctx is None else T.concat([x_pass, ctx], axis=-1)
        log_scale = soft_clamp(mlp_forward(self.s_net, inp, tape), self.clamp)
        return log_scale, mlp_forward(self.t_net, inp, tape)

    def _join(self, passed, transformed):
        parts = [passed, transformed] if self.parity == 0 else [transformed, passed]
        return T.concat(parts, axis=-1)

    def forward(self, x, ctx=None, tape=None):
        """``(y, logdet)``; logdet is the sum of the clamped log-scales."""
        xp = T.index(x, (..., self.pass_slice))
        xt = T.index(x, (..., self.trans_slice))
        log_scale, shift = self._scale_shift(xp, ctx, tape)
        yt = T.add(T.mul(xt, T.exp(log_scale)), shift)
        return self._join(xp, yt), T.sum(log_scale, axis=-1)

    def inverse(self, y, ctx=None):
        """``(x, logdet of the forward map at x)``."""
        y = np.asarray(y)
        yp, yt = y[..., self.pass_slice], y[..., self.trans_slice]
        log_scale, shift = self._scale_shift(yp, ctx, None)
        xt = (yt - shift) * np.exp(-log_scale)
        return self._join(yp, xt), log_scale.sum(axis=-1)


class BatchNormBijection:
    """Batch normalization used as an invertible layer.

    Training mode normalizes with the batch statistics (and folds them into
    the running averages); inference mode uses the running averages. The
    per-dimension scale is stored as ``log_gamma`` so it stays positive.
    ``inverse`` always uses the running statistics.
    """

    def __init__(self, dim: int, momentum: float = 0.9, eps: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.dim, self.momentum, self.eps = dim, momentum, eps
        self.log_gamma = np.zeros(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.training = False
        self.update_running = True

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + "log_gamma": self.log_gamma, prefix + "beta": self.beta}

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + "running_mean": self.running_mean, prefix + "running_var": self.running_var}

    def forward(self, x, ctx=None, tape=None):
        xv = T.value(x)
        lead = xv.shape[:-1]
        log_gamma, beta = self.log_gamma, self.beta
        if tape is not None:
            log_gamma, beta = tape.param(log_gamma), tape.param(beta)
        if self.training:
            rows = T.reshape(x, (-1, self.dim))
            n = T.value(rows).shape[0]
            if n < 2:
                raise ValueError("batch norm in training mode needs at least 2 rows")
            mu = T.mean(rows, axis=0)
            centered = T.sub(x, mu)
            var = T.mean(T.reshape(T.mul(centered, centered), (-1, self.dim)), axis=0)
            if self.update_running:
                m = self.momentum
                self.running_mean *= m
                self.running_mean += (1.0 - m) * T.value(mu)
                self.running_var *= m
                self.running_var += (1.0 - m) * T.value(var)
        else:
            centered = T.sub(x, self.running_mean)
            var = self.running_var
        half_log_var = T.mul(0.5, T.log(T.add(var, self.eps)))
        log_scale = T.sub(log_gamma, half_log_var)
        y = T.add(T.mul(centered, T.exp(log_scale)), beta)
        logdet = T.broadcast_to(T.sum(log_scale), lead)
        return y, logdet

    def inverse(self, y, ctx=None):
        y = np.asarray(y)
        log_scale = self.log_gamma - 0.5 * np.log(self.running_var + self.eps)
        x = (y - self.beta) * np.exp(-log_scale) + self.running_mean
        return x, np.broadcast_to(log_scale.sum(), y.shape[:-1])


@dataclass
class RealNvpBlock:
    """Composition of couplings with alternating parity, optionally interleaved with batch norm."""

    layers: list = field(default_factory=list)

    @classmethod
    def build(cls, dim: int, hidden, rng: np.random.Generator, n_couplings: int = 2,
              ctx_dim: int = 0, clamp: float = DEFAULT_CLAMP, batchnorm: bool = False,
              activation: str = "relu", bn_momentum: float = 0.9, bn_eps: float = 1e-5):
        layers = []
        for i in range(n_couplings):
            layers.append(AffineCoupling(dim, i % 2, hidden, rng, ctx_dim, clamp, activation))
            if batchnorm:
                layers.append(BatchNormBijection(dim, bn_momentum, bn_eps))
        return cls(layers)

    def __post_init__(self):
        parities = [l.parity for l in self.layers if isinstance(l, AffineCoupling)]
        if any(a == b for a, b in zip(parities, parities[1:])):
            raise ValueError("consecutive couplings must alternate parity")

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{prefix}{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_buffers(f"{prefix}{i}."))
        return out

    def forward(self, x, ctx=None, tape=None):
        if not self.layers:
            raise ValueError("empty Real NVP block")
        total = None
        for layer in self.layers:
            x, ld = layer.forward(x, ctx, tape)
            total = ld if total is None else T.add(total, ld)
        return x, total

    def inverse(self, y, ctx=None):
        if not self.layers:
            raise ValueError("empty Real NVP block")
        total = 0.0
        for layer in reversed(self.layers):
            y, ld = layer.inverse(y, ctx)
            total = total + ld
        return y, total


coupling_forward = AffineCoupling.forward
coupling_inverse = AffineCoupling.inverse
batchnorm_forward = BatchNormBijection.forward
realnvp_forward = RealNvpBlock.forward


def realnvp_inverse(block: RealNvpBlock, y, ctx=None):
    return block.inverse(y, ctx)[0]


def numerical_jacobian(f: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        fp = np.asarray(f(x + e), dtype=np.float64).ravel()
        fm = np.asarray(f(x - e), dtype=np.float64).ravel()
        cols.append((fp - fm) / (2.0 * step))
    return np.stack(cols, axis=1)


def numerical_jacobian_logdet(f: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-5) -> float:
    """log|det J_f(x)| from a central-difference Jacobian and pivoted LU."""
    jac = numerical_jacobian(f, x, step)
    if jac.shape[0] != jac.shape[1]:
        raise ValueError(f"map is not dimension-preserving: Jacobian shape {jac.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)  # singularity raised below
        lu, _ = scipy.linalg.lu_factor(jac, check_finite=True)
    diag = np.abs(np.diag(lu))
    if np.any(diag == 0.0):
        raise np.linalg.LinAlgError("singular Jacobian: map is not invertible at x")
    return float(np.log(diag).sum())
