"""Approximate layer inverses for target propagation.

All single-layer routines take the layer's encoder ``f`` and decoder ``g`` as
plain callables, so they work for any map pair, not only network layers.

Iterations and what they converge to:

* input correction:  u <- u + tau - f(g(u)),            target g(u_T)
  contracts when f o g - id is alpha-Lipschitz with alpha < 1.
* output iterative:  u <- u + g(tau) - g(f(u)),         target u_T
  contracts when g o f - id is alpha-Lipschitz with alpha < 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .netcore import ForwardTrace, Network, layer_decode, layer_encode

SIMPLE = "simple"
INPUT_CORRECTION = "input_correction"
OUTPUT_STEP = "output_step"
OUTPUT_ITERATIVE = "output_iterative"
OUTPUT_ITERATIVE_SEEDED = "output_iterative_seeded"
METHODS = (SIMPLE, INPUT_CORRECTION, OUTPUT_STEP, OUTPUT_ITERATIVE,
           OUTPUT_ITERATIVE_SEEDED)

JACOBI = "jacobi"
GAUSS_SEIDEL = "gauss_seidel"

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 100
DIVERGENCE_STREAK = 3
RATIO_BLOWUP = 1.5

Map = Callable[[np.ndarray], np.ndarray]


class NonContractiveError(ArithmeticError):
    """Increment norms kept growing: the auto-encoder is too far from an inverse."""

    def __init__(self, estimated_alpha: float, layer: int | None = None,
                 increment_norms=()):
        self.estimated_alpha = estimated_alpha
        self.layer = layer
        self.increment_norms = list(increment_norms)
        where = "" if layer is None else f" at layer {layer}"
        super().__init__(
            f"inverse iteration diverging{where} (estimated alpha {estimated_alpha:.4g})")


class InsufficientIterationsError(ValueError):
    pass


@dataclass(frozen=True)
class InversionMethod:
    name: str = OUTPUT_ITERATIVE
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown inversion method {self.name!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class InversionResult:
    target: np.ndarray
    iterations_used: int
    increment_norms: list = field(default_factory=list)
    converged: bool = False
    estimated_alpha: float = 0.0
    # last decoder input (input correction) or last iterate (output iteration)
    last_input: np.ndarray | None = None


def _successive_ratios(norms) -> list:
    ratios = []
    for prev, cur in zip(norms[:-1], norms[1:]):
        if prev == 0.0:
            break
        ratios.append(cur / prev)
    return ratios


def _geometric_ratio(norms) -> float:
    """Lenient alpha estimate used to annotate results; never raises."""
    if norms and norms[-1] == 0.0 and len(norms) <= 2:
        return 0.0
    ratios = _successive_ratios(norms)
    if not ratios:
        return math.nan
    if min(ratios) == 0.0:
        return 0.0
    return float(np.exp(np.mean(np.log(ratios))))


def estimate_contraction_alpha(result) -> float:
    """Geometric mean of successive increment-norm ratios.

    Accepts an :class:`InversionResult` or a sequence of increment norms.
    Returns ``inf`` when any ratio reaches 1.5, and 0 when the iteration hit an
    exact fixed point.
    """
    norms = list(result.increment_norms if isinstance(result, InversionResult)
                 else result)
    if norms and norms[-1] == 0.0 and len(norms) < 3:
        return 0.0
    if len(norms) < 3:
        raise InsufficientIterationsError(
            f"need at least 3 increment norms, got {len(norms)}")
    ratios = _successive_ratios(norms)
    if any(r >= RATIO_BLOWUP for r in ratios):
        return math.inf
    return _geometric_ratio(norms)


def _growth_streak(norms, streak: int) -> int:
    """Length of the run of strictly growing increments ending at the last one."""
    run = streak
    if len(norms) >= 2 and norms[-1] > norms[-2]:
        return run + 1
    return 0


def invert_input_correction(encode: Map, decode: Map, tau_y,
                            max_iters: int = DEFAULT_MAX_ITERS,
                            tol: float = DEFAULT_TOL) -> InversionResult:
    """Correct the decoder input until f(g(u)) hits ``tau_y``."""
    tau_y = np.asarray(tau_y, dtype=float)
    u = tau_y.copy()
    norms, streak, converged = [], 0, False
    for _ in range(max_iters):
        u_next = u + tau_y - encode(decode(u))
        norms.append(float(np.linalg.norm(u - u_next)))
        u = u_next
        if norms[-1] < tol:
            converged = True
            break
        streak = _growth_streak(norms, streak)
        if streak >= DIVERGENCE_STREAK:
            raise NonContractiveError(max(1.0, _geometric_ratio(norms)),
                                      increment_norms=norms)
    return InversionResult(decode(u), len(norms), norms, converged,
                           _geometric_ratio(norms), u)


def invert_output_step(encode: Map, decode: Map, tau_y, u_last=None) -> np.ndarray:
    """One output-side correction: g(tau) + g(u) - g(f(g(u)))."""
    tau_y = np.asarray(tau_y, dtype=float)
    u = tau_y if u_last is None else np.asarray(u_last, dtype=float)
    x_prime = decode(u)
    return decode(tau_y) + x_prime - decode(encode(x_prime))


def invert_output_iterative(encode: Map, decode: Map, tau_y, init=None,
                            max_iters: int = DEFAULT_MAX_ITERS,
                            tol: float = DEFAULT_TOL) -> InversionResult:
    """Iterate u <- u + g(tau) - g(f(u)) from ``init`` (default g(tau))."""
    tau_y = np.asarray(tau_y, dtype=float)
    g_tau = decode(tau_y)
    u = g_tau.copy() if init is None else np.asarray(init, dtype=float).copy()
    norms, streak, converged = [], 0, False
    for _ in range(max_iters):
        step = g_tau - decode(encode(u))
        u = u + step
        norms.append(float(np.linalg.norm(step)))
        if norms[-1] < tol:
            converged = True
            break
        streak = _growth_streak(norms, streak)
        if streak >= DIVERGENCE_STREAK:
            raise NonContractiveError(max(1.0, _geometric_ratio(norms)),
                                      increment_norms=norms)
    return InversionResult(u, len(norms), norms, converged,
                           _geometric_ratio(norms), u)


def invert_layer(encode: Map, decode: Map, tau_y,
                 method: InversionMethod) -> InversionResult:
    """Dispatch one layer inversion by method name.

    ``output_step`` runs the input correction first and then applies the single
    output-side correction at its last iterate.  ``output_iterative_seeded``
    starts the output iteration from the input-correction target.
    """
    tau_y = np.asarray(tau_y, dtype=float)
    if method.name == SIMPLE:
        return InversionResult(decode(tau_y), 0, [], True, 0.0, tau_y.copy())
    if method.name == OUTPUT_ITERATIVE:
        return invert_output_iterative(encode, decode, tau_y, None,
                                       method.max_iters, method.tol)
    seed = invert_input_correction(encode, decode, tau_y, method.max_iters,
                                   method.tol)
    if method.name == INPUT_CORRECTION:
        return seed
    if method.name == OUTPUT_STEP:
        seed.target = invert_output_step(encode, decode, tau_y, seed.last_input)
        return seed
    return invert_output_iterative(encode, decode, tau_y, seed.target,
                                   method.max_iters, method.tol)


def _layer_maps(net: Network, l: int):
    return (lambda u: layer_encode(net, l, u)), (lambda v: layer_decode(net, l, v))


def propagate_targets_simple(net: Network, trace: ForwardTrace, tau_L) -> list:
    """tau_{l-1} = g_l(tau_l) all the way down to tau_0."""
    L = net.layer_count
    taus = [None] * (L + 1)
    taus[L] = np.asarray(tau_L, dtype=float).copy()
    for l in range(L, 0, -1):
        taus[l - 1] = layer_decode(net, l, taus[l])
    return taus


def propagate_targets_sequential(net: Network, trace: ForwardTrace, tau_L,
                                 method: InversionMethod):
    """Invert layer by layer from the top, each to convergence before the next.

    Returns ``(targets, results)``; both are indexed 0..L and ``results[l]``
    describes how ``targets[l]`` was obtained (``None`` for l = L).
    """
    L = net.layer_count
    taus = [None] * (L + 1)
    results = [None] * (L + 1)
    taus[L] = np.asarray(tau_L, dtype=float).copy()
    for l in range(L, 0, -1):
        encode, decode = _layer_maps(net, l)
        try:
            res = invert_layer(encode, decode, taus[l], method)
        except NonContractiveError as err:
            raise NonContractiveError(err.estimated_alpha, l - 1,
                                      err.increment_norms) from None
        taus[l - 1] = res.target
        results[l - 1] = res
    return taus, results


def parallel_target_relaxation(net: Network, trace: ForwardTrace, tau_L,
                               stopping_precision: float = DEFAULT_TOL,
                               max_sweeps: int = DEFAULT_MAX_ITERS,
                               schedule: str = JACOBI):
    """Relax all hidden-layer targets simultaneously.

    Targets start from the plain decoder pass tau_{l-1} = g_l(tau_l); every
    sweep then applies tau_{l-1} += g_l(tau_l) - g_l(f_l(tau_{l-1})) to each
    layer 2..L.  Under ``jacobi`` all layers read the previous sweep's values;
    under ``gauss_seidel`` layers are swept top-down reading fresh values.
    Stops once ||delta tau_1|| < stopping_precision or after ``max_sweeps``.

    The input is clamped: ``targets[0]`` is h_0.  Returns ``(targets, results)``
    with ``results[l]`` set for the relaxed layers 1..L-1.
    """
    if schedule not in (JACOBI, GAUSS_SEIDEL):
        raise ValueError(f"unknown relaxation schedule {schedule!r}")
    L = net.layer_count
    taus = [None] * (L + 1)
    taus[L] = np.asarray(tau_L, dtype=float).copy()
    for l in range(L, 1, -1):
        taus[l - 1] = layer_decode(net, l, taus[l])
    taus[0] = trace.activations[0].copy()
    results = [None] * (L + 1)
    if L == 1:
        return taus, results

    norms = {k: [] for k in range(1, L)}
    streaks = {k: 0 for k in range(1, L)}
    converged = False
    for sweep in range(1, max_sweeps + 1):
        source = taus if schedule == GAUSS_SEIDEL else list(taus)
        for l in range(L, 1, -1):
            step = (layer_decode(net, l, source[l])
                    - layer_decode(net, l, layer_encode(net, l, source[l - 1])))
            taus[l - 1] = taus[l - 1] + step
            norms[l - 1].append(float(np.linalg.norm(step)))
        # growth is expected while the output target travels down the stack
        if sweep > L:
            for k in norms:
                streaks[k] = _growth_streak(norms[k], streaks[k])
                if streaks[k] >= DIVERGENCE_STREAK:
                    raise NonContractiveError(max(1.0, _geometric_ratio(norms[k])),
                                              k, norms[k])
        if norms[1][-1] < stopping_precision:
            converged = True
            break

    for k in range(1, L):
        results[k] = InversionResult(taus[k], len(norms[k]), norms[k], converged,
                                     _geometric_ratio(norms[k][L - 1:] or norms[k]),
                                     taus[k])
    return taus, results


def compute_targets(net: Network, trace: ForwardTrace, tau_L,
                    method: InversionMethod, schedule: str = JACOBI):
    """Targets for every layer using the configured inversion method.

    ``output_iterative`` is the parallel relaxation; the other methods invert
    sequentially layer by layer.
    """
    if method.name == SIMPLE:
        taus = propagate_targets_simple(net, trace, tau_L)
        return taus, [None] * len(taus)
    if method.name == OUTPUT_ITERATIVE:
        return parallel_target_relaxation(net, trace, tau_L, method.tol,
                                          method.max_iters, schedule)
    return propagate_targets_sequential(net, trace, tau_L, method)
