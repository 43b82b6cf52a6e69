"""Hyper input convex neural networks: architectures, training, constructions and OT."""
from . import _backend
from .nets import (
    ConvexNet, Gate, LogSumExpGate, MaxGate, SingleGate, build_net, check_convexity,
    init_groupmax, init_hycnn, init_icnn_hoedt, init_mlp,
)
from .tensor import (
    ConfigurationError, ContractViolation, DivergenceError, Rng, UnsupportedGate,
    logsumexp2, matvec, sample_lognormal, softplus, softplus_inverse,
)

backend = _backend.name

__version__ = "0.1.0"
