"""Shared builders for seeded test networks."""
import numpy as np

from dtp.netcore import ActivationKind, Network


def well_conditioned(rng, d, spread=0.5):
    """Random orthogonal matrix with singular values in [1 - spread/2, 1 + spread/2]."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    return q * rng.uniform(1.0 - spread / 2, 1.0 + spread / 2, d)


def perturbed_linear_net(rng, d, layers, eps=0.05, activation=None):
    """Linear net whose decoders are W^{-1} plus an eps-scaled Gaussian perturbation."""
    enc = [well_conditioned(rng, d) for _ in range(layers)]
    dec = [np.linalg.inv(w) + eps * rng.standard_normal((d, d)) / np.sqrt(d) for w in enc]
    return Network(enc, dec, activation or ActivationKind.identity())


def exact_linear_net(rng, d, layers):
    return perturbed_linear_net(rng, d, layers, eps=0.0)


def contraction(w, omega, side):
    """Spectral norm of (W Omega - I) ('reverse') or (Omega W - I) ('regular')."""
    a = w @ omega if side == "reverse" else omega @ w
    return float(np.linalg.norm(a - np.eye(a.shape[0]), 2))
