"""Network definition, activations and the forward pass.

Every layer maps a width-``d`` vector to a width-``d`` vector:

    encoder  f_l(u) = W_l  sigma(u)
    decoder  g_l(v) = Om_l sigma(v)

When ``bias`` is enabled the presynaptic vector ``sigma(u)`` is augmented with
a trailing constant 1, so the weight matrices are ``d x (d + 1)``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

LEAKY_RELU = "leaky_relu"
SMOOTH_LEAKY_RELU = "smooth_leaky_relu"

SQUARED = "squared"
UNSQUARED = "unsquared"

ORTHOGONAL = "orthogonal"
GAUSSIAN = "gaussian"
TRANSPOSE_INIT = "transpose"
RANDOM_INIT = "random"

DEFAULT_SLOPE = 0.1
NORM_CLAMP = 1e-12


class NumericalOverflowError(FloatingPointError):
    """A non-finite value appeared while propagating through ``layer``."""

    def __init__(self, layer: int, message: str | None = None):
        self.layer = layer
        super().__init__(message or f"non-finite activation at layer {layer}")


@dataclass(frozen=True)
class ActivationKind:
    """Strictly monotone (hence invertible) elementwise non-linearity.

    ``leaky_relu``: u for u >= 0, slope * u otherwise.  slope = 1 is the identity.
    ``smooth_leaky_relu``: slope * u + (1 - slope) * softplus(u); a C-infinity
    stand-in used where curvature matters (second-order remainder checks).
    """

    kind: str = LEAKY_RELU
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.kind not in (LEAKY_RELU, SMOOTH_LEAKY_RELU):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if not 0.0 < self.slope <= 1.0:
            raise ValueError(f"slope must lie in (0, 1], got {self.slope}")

    @classmethod
    def identity(cls) -> "ActivationKind":
        return cls(LEAKY_RELU, 1.0)

    @classmethod
    def leaky_relu(cls, slope: float = DEFAULT_SLOPE) -> "ActivationKind":
        return cls(LEAKY_RELU, slope)

    @classmethod
    def smooth_leaky_relu(cls, slope: float = DEFAULT_SLOPE) -> "ActivationKind":
        return cls(SMOOTH_LEAKY_RELU, slope)

    @property
    def is_identity(self) -> bool:
        return self.kind == LEAKY_RELU and self.slope == 1.0


def activation_apply(a: ActivationKind, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if a.kind == LEAKY_RELU:
        if a.slope == 1.0:
            return u.copy()
        return np.where(u >= 0.0, u, a.slope * u)
    return a.slope * u + (1.0 - a.slope) * np.logaddexp(0.0, u)


def activation_derivative(a: ActivationKind, u) -> np.ndarray:
    """Elementwise sigma'(u); leaky ReLU takes the right-derivative 1 at 0."""
    u = np.asarray(u, dtype=float)
    if a.kind == LEAKY_RELU:
        return np.where(u >= 0.0, 1.0, a.slope)
    sig = 0.5 * (1.0 + np.tanh(0.5 * u))
    return a.slope + (1.0 - a.slope) * sig


def activation_inverse(a: ActivationKind, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if a.kind == LEAKY_RELU:
        if a.slope == 1.0:
            return v.copy()
        return np.where(v >= 0.0, v, v / a.slope)
    # Newton on a convex increasing function with derivative in [slope, 1].
    u = np.where(v >= 0.0, v, v / a.slope)
    for _ in range(100):
        step = (activation_apply(a, u) - v) / activation_derivative(a, u)
        u = u - step
        if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(u))):
            break
    return u


@dataclass
class Network:
    encoder_weights: list
    decoder_weights: list
    activation: ActivationKind = field(default_factory=ActivationKind)
    bias: bool = False

    def __post_init__(self):
        self.encoder_weights = [np.array(w, dtype=float) for w in self.encoder_weights]
        self.decoder_weights = [np.array(w, dtype=float) for w in self.decoder_weights]
        if len(self.encoder_weights) != len(self.decoder_weights):
            raise ValueError("encoder and decoder lists must have the same length")
        if not self.encoder_weights:
            raise ValueError("network needs at least one layer")
        d = self.encoder_weights[0].shape[0]
        shape = (d, d + int(self.bias))
        for w in self.encoder_weights + self.decoder_weights:
            if w.shape != shape:
                raise ValueError(f"weight shape {w.shape}, expected {shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite")

    @property
    def layer_count(self) -> int:
        return len(self.encoder_weights)

    @property
    def width(self) -> int:
        return self.encoder_weights[0].shape[0]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def presynaptic(self, u) -> np.ndarray:
        """sigma(u), with the constant bias unit appended when enabled."""
        s = activation_apply(self.activation, u)
        if self.bias:
            s = np.append(s, 1.0)
        return s

    def _check_layer(self, l: int):
        if not 1 <= l <= self.layer_count:
            raise IndexError(f"layer index {l} outside 1..{self.layer_count}")


def layer_encode(net: Network, l: int, u) -> np.ndarray:
    """f_l(u) = W_l sigma(u), layers indexed from 1."""
    net._check_layer(l)
    return net.encoder_weights[l - 1] @ net.presynaptic(u)


def layer_decode(net: Network, l: int, v) -> np.ndarray:
    """g_l(v) = Omega_l sigma(v)."""
    net._check_layer(l)
    return net.decoder_weights[l - 1] @ net.presynaptic(v)


@dataclass
class ForwardTrace:
    """Cached forward quantities for one input.

    ``normalized_inputs[l-1]`` is the presynaptic vector of layer ``l`` divided
    by its squared norm (or by its norm under the unsquared convention); it is
    zeroed and ``clamped[l-1]`` set when the squared norm is below the clamp.
    """

    activations: list
    presynaptic: list
    normalized_inputs: list
    input_norms_sq: list
    clamped: list
    norm_convention: str = SQUARED

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def layer_count(self) -> int:
        return len(self.activations) - 1


def normalize_presynaptic(s: np.ndarray, convention: str = SQUARED,
                          clamp: float = NORM_CLAMP):
    """Return (n, ||s||^2, clamped) for a presynaptic vector."""
    norm_sq = float(s @ s)
    if norm_sq < clamp:
        return np.zeros_like(s), norm_sq, True
    if convention == SQUARED:
        return s / norm_sq, norm_sq, False
    if convention == UNSQUARED:
        return s / np.sqrt(norm_sq), norm_sq, False
    raise ValueError(f"unknown norm convention {convention!r}")


def forward(net: Network, x, norm_convention: str = SQUARED,
            clamp: float = NORM_CLAMP) -> ForwardTrace:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.width,):
        raise ValueError(f"input shape {x.shape}, expected ({net.width},)")
    if not np.all(np.isfinite(x)):
        raise NumericalOverflowError(0, "non-finite input")
    hs, pres, ns, norms, clamped = [x.copy()], [], [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for l, w in enumerate(net.encoder_weights, start=1):
            s = net.presynaptic(hs[-1])
            h = w @ s
            if not np.all(np.isfinite(h)):
                raise NumericalOverflowError(l)
            n, norm_sq, was_clamped = normalize_presynaptic(s, norm_convention, clamp)
            hs.append(h)
            pres.append(s)
            ns.append(n)
            norms.append(norm_sq)
            clamped.append(was_clamped)
    return ForwardTrace(hs, pres, ns, norms, clamped, norm_convention)


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def init_weights(width: int, layers: int, scheme: str = ORTHOGONAL,
                 seed: int = 0, decoder_init: str = TRANSPOSE_INIT,
                 activation: ActivationKind | None = None,
                 bias: bool = False) -> Network:
    """Deterministic initialisation.

    ``scheme`` is ``orthogonal`` (Haar-random orthogonal W_l) or ``gaussian``
    (entries N(0, 1/d)).  Decoders are W_l^T (``transpose``) or drawn
    independently with the same scheme (``random``).  Bias columns start at 0.
    """
    if width < 1 or layers < 1:
        raise ValueError("width and layers must be >= 1")
    rng = np.random.default_rng(seed)

    def draw():
        if scheme == ORTHOGONAL:
            return _orthogonal(rng, width)
        if scheme == GAUSSIAN:
            return rng.standard_normal((width, width)) / np.sqrt(width)
        raise ValueError(f"unknown init scheme {scheme!r}")

    def with_bias(w):
        return np.hstack([w, np.zeros((width, 1))]) if bias else w

    enc, dec = [], []
    for _ in range(layers):
        w = draw()
        enc.append(with_bias(w))
        if decoder_init == TRANSPOSE_INIT:
            dec.append(with_bias(w.T.copy()))
        elif decoder_init == RANDOM_INIT:
            dec.append(with_bias(draw()))
        else:
            raise ValueError(f"unknown decoder init {decoder_init!r}")
    return Network(enc, dec, activation or ActivationKind(), bias)
