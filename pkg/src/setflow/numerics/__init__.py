"""Array substrate: reverse-mode tape, MLPs, Adam and Gaussian densities."""

from . import tape as ops
from .density import ENTROPY_PER_DIM, LOG_2PI, gaussian_entropy_total, gaussian_logpdf
from .gradcheck import GradCheckReport, grad_check
from .mlp import Mlp, mlp_forward
from .optim import AdamState, adam_step
from .tape import GradTape, Var, backward

__all__ = [
    "ENTROPY_PER_DIM", "LOG_2PI", "AdamState", "GradCheckReport", "GradTape", "Mlp", "Var",
    "adam_step", "backward", "gaussian_entropy_total", "gaussian_logpdf", "grad_check",
    "mlp_forward", "ops",
]
