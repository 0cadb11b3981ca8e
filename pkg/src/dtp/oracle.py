"""Ground truth for checking target propagation.

Analytic backprop, Jacobians, finite differences, exact inverses and explicit
Gauss-Newton directions.  Everything here is dense and deliberately plain;
it exists to verify, not to train.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .netcore import (ForwardTrace, Network, activation_derivative,
                      activation_inverse, forward)
from .updates import mse_gradient, mse_loss

FD_STEP = 1e-5
MAX_CONDITION = 1e8


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message: str, smallest_eigenvalue: float | None = None,
                 condition: float | None = None):
        self.smallest_eigenvalue = smallest_eigenvalue
        self.condition = condition
        super().__init__(message)


@dataclass
class JacobianStack:
    """``J[l]`` = d h_L / d h_l for l = 0..L; ``per_layer[k-1]`` = f'_k(h_{k-1})."""

    J: list
    per_layer: list


def network_output(net: Network, x) -> np.ndarray:
    return forward(net, x).output


def network_loss(net: Network, x, y) -> float:
    return mse_loss(network_output(net, x), y)


def layer_derivative(net: Network, l: int, u) -> np.ndarray:
    """f_l'(u) = W_l diag(sigma'(u)) (bias column dropped)."""
    w = net.encoder_weights[l - 1][:, :net.width]
    return w * activation_derivative(net.activation, u)[None, :]


def layer_jacobians(net: Network, trace: ForwardTrace) -> JacobianStack:
    L = net.layer_count
    per_layer = [layer_derivative(net, k, trace.activations[k - 1])
                 for k in range(1, L + 1)]
    J = [None] * (L + 1)
    J[L] = np.eye(net.width)
    for l in range(L, 0, -1):
        J[l - 1] = J[l] @ per_layer[l - 1]
    return JacobianStack(J, per_layer)


def backprop_gradients(net: Network, trace: ForwardTrace, y):
    """Reverse-mode gradients of 0.5 ||h_L - y||^2.

    Returns ``(grad_h, grad_W)``: ``grad_h[l]`` = dL/dh_l for l = 0..L and
    ``grad_W[l-1]`` = dL/dW_l for l = 1..L.
    """
    L = net.layer_count
    grad_h = [None] * (L + 1)
    grad_W = [None] * L
    grad_h[L] = mse_gradient(trace.output, y)
    for l in range(L, 0, -1):
        grad_W[l - 1] = np.outer(grad_h[l], trace.presynaptic[l - 1])
        grad_h[l - 1] = layer_derivative(net, l, trace.activations[l - 1]).T @ grad_h[l]
    return grad_h, grad_W


def finite_difference_weight_gradients(net: Network, x, y,
                                       step: float = FD_STEP) -> list:
    """Central differences of the loss with respect to every encoder weight."""
    grads = []
    probe = net.copy()
    for k, w in enumerate(net.encoder_weights):
        g = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            orig = probe.encoder_weights[k][idx]
            probe.encoder_weights[k][idx] = orig + step
            up = network_loss(probe, x, y)
            probe.encoder_weights[k][idx] = orig - step
            down = network_loss(probe, x, y)
            probe.encoder_weights[k][idx] = orig
            g[idx] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def finite_difference_jacobian(fn, u, step: float = FD_STEP) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    cols = []
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = step
        cols.append((np.asarray(fn(u + e)) - np.asarray(fn(u - e))) / (2.0 * step))
    return np.stack(cols, axis=1)


def solve_checked(A, b, max_condition: float = 1e12):
    """LU solve that refuses ill-conditioned systems instead of regularising."""
    A = np.asarray(A, dtype=float)
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > max_condition:
        eig = np.linalg.eigvalsh(0.5 * (A + A.T)) if A.shape[0] == A.shape[1] else None
        raise SingularSystemError(
            f"system is singular to working precision (cond {cond:.3g})",
            None if eig is None else float(eig.min()), cond)
    lu, piv = scipy.linalg.lu_factor(A)
    return scipy.linalg.lu_solve((lu, piv), b)


def gauss_newton_direction(J, grad_hl, beta: float, damping: float = 0.0) -> np.ndarray:
    """Solve (J^T J + damping I) v = -beta grad_hl."""
    J = np.asarray(J, dtype=float)
    G = J.T @ J + damping * np.eye(J.shape[1])
    rhs = -beta * np.asarray(grad_hl, dtype=float)
    try:
        return solve_checked(G, rhs)
    except SingularSystemError as err:
        smallest = float(np.linalg.eigvalsh(G).min())
        raise SingularSystemError(
            f"Gauss-Newton matrix singular (smallest eigenvalue {smallest:.3g})",
            smallest, err.condition) from None


def sgd_output_effect(J, tau_gap_L) -> np.ndarray:
    """Output movement J J^T (tau_L - h_L) caused by an SGD step on h_l."""
    J = np.asarray(J, dtype=float)
    return J @ (J.T @ np.asarray(tau_gap_L, dtype=float))


def _check_invertible(w, l):
    cond = float(np.linalg.cond(w))
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise SingularSystemError(f"W_{l} is near-singular (cond {cond:.3g})",
                                  condition=cond)


def exact_inverse_decoders(net: Network) -> Network:
    """Copy of a linear network whose decoders are the exact inverses W_l^{-1}."""
    if not net.activation.is_identity or net.bias:
        raise ValueError("exact decoders need the identity activation and no bias")
    out = net.copy()
    for l, w in enumerate(net.encoder_weights, start=1):
        _check_invertible(w, l)
        out.decoder_weights[l - 1] = np.linalg.inv(w)
    return out


def exact_layer_inverse(net: Network, l: int, v) -> np.ndarray:
    """f_l^{-1}(v) = sigma^{-1}(A^{-1}(v - b)) for any invertible activation."""
    w = net.encoder_weights[l - 1]
    a = w[:, :net.width]
    _check_invertible(a, l)
    v = np.asarray(v, dtype=float)
    if net.bias:
        v = v - w[:, -1]
    return activation_inverse(net.activation, np.linalg.solve(a, v))


def exact_inverse_targets(net: Network, tau_L) -> list:
    """Targets tau_0..tau_L obtained by exact layer inversion."""
    L = net.layer_count
    taus = [None] * (L + 1)
    taus[L] = np.asarray(tau_L, dtype=float).copy()
    for l in range(L, 0, -1):
        taus[l - 1] = exact_layer_inverse(net, l, taus[l])
    return taus


def dense_parameter_jacobian(presynaptic, width: int) -> np.ndarray:
    """Full d x (d*p) Jacobian of h = W s with respect to row-major vec(W)."""
    s = np.asarray(presynaptic, dtype=float)
    return np.kron(np.eye(width), s[None, :])


def dense_dtp1_update(trace: ForwardTrace, l: int, tau_l) -> np.ndarray:
    """DTP1 delta via the explicit Moore-Penrose pseudo-inverse of the Jacobian."""
    s = trace.presynaptic[l - 1]
    d = trace.activations[l].size
    jac = dense_parameter_jacobian(s, d)
    gap = np.asarray(tau_l, dtype=float) - trace.activations[l]
    return (np.linalg.pinv(jac) @ gap).reshape(d, s.size)


def autoencoder_deviation(encoder, decoder, kind: str = "reverse") -> float:
    """Spectral norm of (A - I) for a linear auto-encoder A.

    ``reverse`` is f o g (A = W Omega), ``regular`` is g o f (A = Omega W).  This
    is the exact Lipschitz constant of the auto-encoder minus the identity.
    """
    W = np.asarray(encoder, dtype=float)
    Om = np.asarray(decoder, dtype=float)
    A = W @ Om if kind == "reverse" else Om @ W
    return float(np.linalg.norm(A - np.eye(A.shape[0]), 2))


def cosine(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(a @ b / (na * nb))


def train_backprop_sgd(net: Network, xs, ys, lr: float = 0.05, epochs: int = 100,
                       seed: int = 0):
    """Plain per-sample backprop SGD baseline; returns ``(net, epoch_mse)``.

    ``epoch_mse[0]`` is the loss before training.
    """
    net = net.copy()
    rng = np.random.default_rng(seed)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)

    def dataset_mse():
        return float(np.mean([network_loss(net, x, y) for x, y in zip(xs, ys)]))

    history = [dataset_mse()]
    for _ in range(epochs):
        for i in rng.permutation(len(xs)):
            trace = forward(net, xs[i])
            _, grad_W = backprop_gradients(net, trace, ys[i])
            for k, g in enumerate(grad_W):
                net.encoder_weights[k] = net.encoder_weights[k] - lr * g
        history.append(dataset_mse())
    return net, history
