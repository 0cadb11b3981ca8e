"""Weight-update and target-scaling rules.

The core rule moves a layer exactly onto its target in one step:

    dW_l = (tau_l - h_l) sigma(h_{l-1})^T / ||sigma(h_{l-1})||^2

so that (W_l + dW_l) sigma(h_{l-1}) = tau_l.  The influence-scaled variant
multiplies it by ||tau_L - h_L||^2 / ||tau_l - h_l||^2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netcore import NORM_CLAMP, ForwardTrace, Network

DTP1 = "dtp1"
DTP1_GENERIC = "dtp1_generic"
DTP_SCALED = "dtp_scaled"
DECODER = "decoder"

STABILITY_OFF = "off"
STABILITY_UNIFORM = "uniform"

INFLUENCE_CAP = 1e4


def mse_loss(h, y) -> float:
    r = np.asarray(h, dtype=float) - np.asarray(y, dtype=float)
    return 0.5 * float(r @ r)


def mse_gradient(h, y) -> np.ndarray:
    return np.asarray(h, dtype=float) - np.asarray(y, dtype=float)


LOSSES = {"mse": (mse_loss, mse_gradient)}


def init_output_target(h_L, y, beta: float, loss: str = "mse") -> np.ndarray:
    """tau_L = h_L - beta * dL/dh_L."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    _, grad = LOSSES[loss]
    h_L = np.asarray(h_L, dtype=float)
    return h_L - beta * grad(h_L, y)


@dataclass
class WeightDelta:
    layer: int
    delta: np.ndarray
    rule: str
    skipped: bool = False


@dataclass
class TargetState:
    """Per-layer targets and the bookkeeping needed to scale updates.

    ``scale_factors[l]`` is the magnitude removed by stability normalisation:
    the DTP1 target change of layer l is ``scale_factors[l] * (targets[l] -
    activations[l])``.  ``influence_factors[l]`` caches the influence ratio once
    :func:`influence_scale` has computed it.
    """

    activations: list
    targets: list
    scale_factors: list = field(default_factory=list)
    influence_factors: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.activations)
        if len(self.targets) != n:
            raise ValueError("targets and activations differ in length")
        if not self.scale_factors:
            self.scale_factors = [1.0] * n
        if not self.influence_factors:
            self.influence_factors = [None] * n

    @classmethod
    def from_trace(cls, trace: ForwardTrace, targets) -> "TargetState":
        return cls([h.copy() for h in trace.activations],
                   [np.asarray(t, dtype=float).copy() for t in targets])

    @property
    def layer_count(self) -> int:
        return len(self.activations) - 1

    def gap(self, l: int) -> np.ndarray:
        """DTP1 target change tau_l - h_l (with stability scaling undone)."""
        return self.scale_factors[l] * (self.targets[l] - self.activations[l])

    def dtp1_target(self, l: int) -> np.ndarray:
        return self.activations[l] + self.gap(l)

    @property
    def layer_gap_sq(self) -> list:
        return [float(g @ g) for g in map(self.gap, range(len(self.targets)))]

    @property
    def output_gap_sq(self) -> float:
        g = self.gap(self.layer_count)
        return float(g @ g)


def _presynaptic_delta(gap, n, layer, rule, clamped) -> WeightDelta:
    if clamped:
        return WeightDelta(layer, np.zeros((gap.size, n.size)), rule, skipped=True)
    return WeightDelta(layer, np.outer(gap, n), rule)


def dtp1_weight_update(trace: ForwardTrace, l: int, tau_l) -> WeightDelta:
    """Single-layer update landing h_l on tau_l (uses the trace's normaliser)."""
    gap = np.asarray(tau_l, dtype=float) - trace.activations[l]
    return _presynaptic_delta(gap, trace.normalized_inputs[l - 1], l, DTP1,
                              trace.clamped[l - 1])


def neuron_parameter_jacobians(presynaptic: np.ndarray, width: int) -> list:
    """Per-neuron blocks d h_i / d W_{i,:} of a dense layer.

    Neuron i depends only on its own incoming row, so the full parameter
    Jacobian is block diagonal with one 1 x p block sigma(h_{l-1})^T per neuron.
    """
    return [presynaptic[None, :] for _ in range(width)]


def dtp1_generic_update(trace: ForwardTrace, l: int, tau_l,
                        layer_form: str = "dense",
                        clamp: float = NORM_CLAMP) -> WeightDelta:
    """Pseudo-inverse form J^T (J J^T)^{-1} (tau_l - h_l), solved block by block."""
    if layer_form != "dense":
        raise ValueError(f"unsupported layer form {layer_form!r}")
    gap = np.asarray(tau_l, dtype=float) - trace.activations[l]
    s = trace.presynaptic[l - 1]
    rows = []
    for i, jac in enumerate(neuron_parameter_jacobians(s, gap.size)):
        block = jac @ jac.T
        if block[0, 0] < clamp:
            return WeightDelta(l, np.zeros((gap.size, s.size)), DTP1_GENERIC,
                               skipped=True)
        rows.append(jac.T @ np.linalg.solve(block, gap[i:i + 1]))
    return WeightDelta(l, np.vstack(rows), DTP1_GENERIC)


def influence_scale(state: TargetState, l: int, cap: float = INFLUENCE_CAP) -> float:
    """||tau_L - h_L||^2 / ||tau_l - h_l||^2, capped at ``cap``.

    A zero layer gap (or a ratio above the cap) returns the cap.  The value is
    also stored in ``state.influence_factors[l]``.
    """
    if l == state.layer_count:
        factor = 1.0
    else:
        layer_sq = state.layer_gap_sq[l]
        out_sq = state.output_gap_sq
        if layer_sq == 0.0 or out_sq > cap * layer_sq:
            factor = cap
        else:
            factor = out_sq / layer_sq
    state.influence_factors[l] = factor
    return factor


def dtp_scaled_update(trace: ForwardTrace, state: TargetState, l: int,
                      cap: float = INFLUENCE_CAP) -> WeightDelta:
    factor = influence_scale(state, l, cap)
    base = dtp1_weight_update(trace, l, state.dtp1_target(l))
    return WeightDelta(l, factor * base.delta, DTP_SCALED, base.skipped)


def decoder_update(net: Network, trace: ForwardTrace, l: int, beta_dec: float,
                   power: float = 2.0, clamp: float = NORM_CLAMP) -> WeightDelta:
    """Reconstruction step pulling g_l(h_l) toward h_{l-1}.

    dOmega_l = beta_dec (h_{l-1} - g_l(h_l)) sigma(h_l)^T / ||sigma(h_l)||^power
    """
    s = net.presynaptic(trace.activations[l])
    recon = net.decoder_weights[l - 1] @ s
    err = trace.activations[l - 1] - recon
    norm_sq = float(s @ s)
    if norm_sq < clamp:
        return WeightDelta(l, np.zeros_like(net.decoder_weights[l - 1]), DECODER,
                           skipped=True)
    return WeightDelta(l, beta_dec * np.outer(err, s) / norm_sq ** (power / 2.0),
                       DECODER)


def apply_deltas(net: Network, deltas, decoder: bool = False) -> Network:
    """Add deltas in place, summed in layer order; returns ``net``."""
    weights = net.decoder_weights if decoder else net.encoder_weights
    for d in sorted(deltas, key=lambda d: d.layer):
        weights[d.layer - 1] = weights[d.layer - 1] + d.delta
    return net


def branch_weights(h_A, targets, clamp: float = NORM_CLAMP) -> np.ndarray:
    """Convex weights proportional to 1 / ||tau_X - h_A||^2 over branches X.

    Branches whose gap is below the clamp dominate: they share all the weight
    equally.
    """
    h_A = np.asarray(h_A, dtype=float)
    gaps = np.array([float(np.sum((np.asarray(t) - h_A) ** 2)) for t in targets])
    degenerate = gaps < clamp
    if degenerate.any():
        return degenerate / degenerate.sum()
    inv = 1.0 / gaps
    return inv / inv.sum()


def branch_combine_targets(h_A, tau_BA, tau_CA, clamp: float = NORM_CLAMP):
    """Combine two branch targets; returns ``(target, gamma)``.

    When both gaps are degenerate the branches agree with h_A, which is
    returned with gamma = 0.5.
    """
    h_A = np.asarray(h_A, dtype=float)
    tau_BA = np.asarray(tau_BA, dtype=float)
    tau_CA = np.asarray(tau_CA, dtype=float)
    gaps = [float(np.sum((t - h_A) ** 2)) for t in (tau_BA, tau_CA)]
    if max(gaps) < clamp:
        return h_A.copy(), 0.5
    gamma = float(branch_weights(h_A, [tau_BA, tau_CA], clamp)[0])
    return gamma * tau_BA + (1.0 - gamma) * tau_CA, gamma


def normalize_target_scale(state: TargetState, mode: str = STABILITY_OFF,
                           clamp: float = NORM_CLAMP) -> TargetState:
    """Rescale target changes to unit norm, keeping the removed magnitude.

    After ``uniform`` normalisation each ``targets[l] - activations[l]`` has
    unit norm and ``scale_factors[l]`` holds the factor that restores the DTP1
    change.  Layers with a gap norm below ``sqrt(clamp)`` are left as they are.
    """
    if mode == STABILITY_OFF:
        return state
    if mode != STABILITY_UNIFORM:
        raise ValueError(f"unknown stability mode {mode!r}")
    targets, scales = [], []
    for l in range(len(state.targets)):
        gap = state.gap(l)
        norm = float(np.linalg.norm(gap))
        if norm * norm < clamp:
            targets.append(state.targets[l].copy())
            scales.append(state.scale_factors[l])
        else:
            targets.append(state.activations[l] + gap / norm)
            scales.append(norm)
    return TargetState([h.copy() for h in state.activations], targets, scales,
                       list(state.influence_factors))
