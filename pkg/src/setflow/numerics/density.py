from __future__ import annotations

import math

import numpy as np

from . import tape as T

LOG_2PI = math.log(2.0 * math.pi)
#: differential entropy of a univariate standard normal
ENTROPY_PER_DIM = 0.5 * math.log(2.0 * math.pi * math.e)


def gaussian_logpdf(x):
    """Log-density of N(0, I) over the trailing axis."""
    d = T.value(x).shape[-1]
    return T.mul(-0.5, T.add(T.sum(T.mul(x, x), axis=-1), d * LOG_2PI))


def gaussian_entropy_total(G: int) -> float:
    if G < 0:
        raise ValueError("dimension count must be non-negative")
    return G * ENTROPY_PER_DIM
