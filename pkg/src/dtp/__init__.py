"""Differential target propagation for equal-width feedforward networks."""
from .netcore import (ActivationKind, ForwardTrace, Network,
                      NumericalOverflowError, activation_apply,
                      activation_derivative, activation_inverse, forward,
                      init_weights, layer_decode, layer_encode)

__version__ = "0.1.0"

__all__ = [
    "ActivationKind", "ForwardTrace", "Network", "NumericalOverflowError",
    "activation_apply", "activation_derivative", "activation_inverse",
    "forward", "init_weights", "layer_decode", "layer_encode",
]
