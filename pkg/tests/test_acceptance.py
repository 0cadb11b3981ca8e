"""Acceptance criteria, one test each, printing a PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest
from helpers import exact_linear_net, perturbed_linear_net, well_conditioned

from dtp.harness.config import TrainConfig
from dtp.harness.trainer import run_training
from dtp.inversion import (InversionMethod, NonContractiveError,
                           estimate_contraction_alpha, invert_input_correction,
                           invert_output_iterative, parallel_target_relaxation,
                           propagate_targets_sequential)
from dtp.netcore import ActivationKind, forward, init_weights
from dtp.oracle import (autoencoder_deviation, backprop_gradients, cosine,
                        dense_dtp1_update, exact_inverse_targets,
                        finite_difference_weight_gradients, gauss_newton_direction,
                        layer_jacobians)
from dtp.updates import (apply_deltas, dtp1_generic_update, dtp1_weight_update,
                         init_output_target, mse_loss)


def report(capsys, number, name, ok, detail, elapsed):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail} ({elapsed:.2f} s)"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


def random_instance(rng):
    """Random nonlinear net, input and layer-l target near h_l."""
    d, layers = int(rng.integers(2, 17)), int(rng.integers(1, 5))
    act = ActivationKind.leaky_relu(float(rng.uniform(0.05, 1.0)))
    net = init_weights(d, layers, "gaussian", int(rng.integers(1 << 30)), activation=act,
                       bias=bool(rng.integers(2)))
    trace = forward(net, rng.standard_normal(d))
    l = int(rng.integers(1, layers + 1))
    tau = trace.activations[l] + rng.uniform(1e-3, 1.0) * rng.standard_normal(d)
    return net, trace, l, tau


def criterion_1(capsys=None):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        net, trace, l, tau = random_instance(rng)
        w = net.encoder_weights[l - 1] + dtp1_weight_update(trace, l, tau).delta
        err = np.linalg.norm(w @ trace.presynaptic[l - 1] - tau) / (1 + np.linalg.norm(tau))
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    return report(capsys, 1, "exact target recovery", ok,
                  f"worst scaled residual {worst:.2e} (tol 1e-10, limit 5 s)", elapsed)


def criterion_2(capsys=None):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_generic = worst_dense = 0.0
    for i in range(1000):
        net, trace, l, tau = random_instance(rng)
        closed = dtp1_weight_update(trace, l, tau).delta
        generic = dtp1_generic_update(trace, l, tau).delta
        worst_generic = max(worst_generic, float(np.max(np.abs(closed - generic))))
        if i < 100:
            dense = dense_dtp1_update(trace, l, tau)
            worst_dense = max(worst_dense, float(np.max(np.abs(closed - dense))))
    elapsed = time.perf_counter() - start
    ok = worst_generic <= 1e-10 and worst_dense <= 1e-10 and elapsed < 30
    return report(capsys, 2, "derivation equivalence", ok,
                  f"block form {worst_generic:.2e}, dense pseudo-inverse {worst_dense:.2e} "
                  "(tol 1e-10, limit 30 s)", elapsed)


def criterion_3(capsys=None):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    min_cos, ratios = 1.0, []
    for _ in range(100):
        net = exact_linear_net(rng, int(rng.integers(2, 9)), 3)
        d = net.width
        x, y = rng.standard_normal(d), rng.standard_normal(d)
        trace = forward(net, x)
        grad_h, _ = backprop_gradients(net, trace, y)
        stack = layer_jacobians(net, trace)
        errors = {}
        for beta in (1e-3, 5e-4):
            taus = exact_inverse_targets(net, init_output_target(trace.output, y, beta))
            errs = []
            for l in (1, 2):
                dtp = taus[l] - trace.activations[l]
                gn = gauss_newton_direction(stack.J[l], grad_h[l], beta)
                if beta == 1e-3:
                    min_cos = min(min_cos, cosine(dtp, gn))
                errs.append(np.linalg.norm(dtp - gn) / np.linalg.norm(dtp))
            errors[beta] = errs
        ratios.extend(a / b if b > 0 else np.inf for a, b in zip(errors[1e-3], errors[5e-4]))
    elapsed = time.perf_counter() - start
    ratios = np.array(ratios)
    in_band = float(np.mean((ratios >= 1.5) & (ratios <= 2.5)))
    ok = min_cos >= 0.999 and in_band == 1.0 and elapsed < 60
    return report(capsys, 3, "Gauss-Newton equivalence", ok,
                  f"min cosine {min_cos:.6f}; halving ratio median {np.median(ratios):.3f}, "
                  f"{in_band:.0%} in [1.5, 2.5]", elapsed)


def criterion_4(capsys=None):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    scalar = estimate_contraction_alpha(
        invert_input_correction(lambda u: 2.0 * u, lambda v: 0.6 * v, np.array([1.2])))
    checked, violations = 0, 0
    while checked < 100:
        d = int(rng.integers(2, 9))
        w = well_conditioned(rng, d)
        omega = np.linalg.inv(w) + rng.uniform(0.01, 0.4) * rng.standard_normal((d, d)) / np.sqrt(d)
        alpha = autoencoder_deviation(w, omega, "reverse")
        if not alpha < 0.9:
            continue
        checked += 1
        res = invert_input_correction(lambda u: w @ u, lambda v: omega @ v,
                                      rng.standard_normal(d))
        norms = res.increment_norms
        ratios = [b / a for a, b in zip(norms[:-1], norms[1:])]
        violations += sum(r > alpha + 0.05 for r in ratios[1:])
    elapsed = time.perf_counter() - start
    ok = abs(scalar - 0.2) <= 1e-6 and violations == 0 and elapsed < 30
    return report(capsys, 4, "exponential convergence", ok,
                  f"scalar ratio {scalar:.8f}; {checked} layers with alpha < 0.9, "
                  f"{violations} ratio violations", elapsed)


def criterion_5(capsys=None):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    tau_y = 1.7
    res = invert_output_iterative(lambda u: 2.0 * u, lambda v: 0.4 * v, np.array([tau_y]))
    scalar_err = abs(res.target[0] - 0.5 * tau_y)
    scalar_ratio = estimate_contraction_alpha(res)
    checked, misses = 0, 0
    while checked < 100:
        d = int(rng.integers(2, 9))
        w = well_conditioned(rng, d)
        omega = np.linalg.inv(w) + rng.uniform(0.01, 0.4) * rng.standard_normal((d, d)) / np.sqrt(d)
        tau = rng.standard_normal(d)
        if not autoencoder_deviation(w, omega, "regular") < 0.9:
            continue
        checked += 1
        try:
            out = invert_output_iterative(lambda u: w @ u, lambda v: omega @ v, tau, None, 100)
        except NonContractiveError:
            misses += 1
            continue
        residual = np.linalg.norm(omega @ (w @ out.target) - omega @ tau)
        misses += not (residual < 1e-6 and out.iterations_used <= 100)
    elapsed = time.perf_counter() - start
    ok = scalar_err < 1e-6 and abs(scalar_ratio - 0.2) <= 1e-6 and misses == 0
    return report(capsys, 5, "output-iterative fixed point", ok,
                  f"scalar |u - 0.5 tau| {scalar_err:.1e}, ratio {scalar_ratio:.8f}; "
                  f"{checked - misses}/{checked} vector cases converged", elapsed)


def criterion_6(capsys=None):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    decreased = 0
    for _ in range(1000):
        net = init_weights(4, 3, "gaussian", int(rng.integers(1 << 30)))
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        trace = forward(net, x)
        taus = exact_inverse_targets(net, init_output_target(trace.output, y, 1e-3))
        l = int(rng.integers(1, 4))
        apply_deltas(net, [dtp1_weight_update(trace, l, taus[l])])
        decreased += mse_loss(forward(net, x).output, y) < mse_loss(trace.output, y)
    worst = 0.0
    for _ in range(100):
        net = exact_linear_net(rng, 4, 3)
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        trace = forward(net, x)
        taus = exact_inverse_targets(net, init_output_target(trace.output, y, 1e-3))
        l = int(rng.integers(1, 4))
        apply_deltas(net, [dtp1_weight_update(trace, l, taus[l])])
        actual = mse_loss(trace.output, y) - mse_loss(forward(net, x).output, y)
        gap = trace.output - y
        worst = max(worst, abs(actual / (1e-3 * float(gap @ gap)) - 1))
    elapsed = time.perf_counter() - start
    ok = decreased >= 990 and worst <= 0.1
    return report(capsys, 6, "loss decrease", ok,
                  f"{decreased}/1000 decreased; worst linear mismatch {worst:.2%}", elapsed)


def criterion_7(capsys=None):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    precision = TrainConfig().stopping_precision
    worst = 0.0
    for _ in range(50):
        d, layers = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        net = perturbed_linear_net(rng, d, layers, 0.05)
        trace = forward(net, rng.standard_normal(d))
        tau_L = init_output_target(trace.output, rng.standard_normal(d), 0.1)
        par, _ = parallel_target_relaxation(net, trace, tau_L, precision, 500, "jacobi")
        seq, _ = propagate_targets_sequential(
            net, trace, tau_L, InversionMethod("output_iterative", 500, precision * 1e-3))
        worst = max(worst, max(np.linalg.norm(par[l] - seq[l]) for l in range(1, layers)))
    elapsed = time.perf_counter() - start
    ok = worst <= 2 * precision
    return report(capsys, 7, "parallel vs sequential relaxation", ok,
                  f"worst target distance {worst:.2e} (limit {2 * precision:.0e})", elapsed)


def criterion_8(capsys=None):
    start = time.perf_counter()
    _, records, _ = run_training(TrainConfig())
    linear_elapsed = time.perf_counter() - start
    epochs = [r.loss for r in records if r.kind == "epoch"]
    linear_ratio = epochs[-1] / epochs[0]
    _, records, _ = run_training(TrainConfig(dataset="rotated_nonlinear", epochs=200))
    epochs = [r.loss for r in records if r.kind == "epoch"]
    nonlinear_ratio = epochs[-1] / epochs[0]
    elapsed = time.perf_counter() - start
    ok = linear_ratio <= 0.1 and linear_elapsed < 60 and nonlinear_ratio <= 0.3
    return report(capsys, 8, "end-to-end training", ok,
                  f"linear map ratio {linear_ratio:.3f} (limit 0.1) in {linear_elapsed:.1f} s; "
                  f"rotated nonlinear ratio {nonlinear_ratio:.3f} (limit 0.3)", elapsed)


def criterion_9(capsys=None):
    rng = np.random.default_rng(9)
    start = time.perf_counter()
    worst_fd = worst_chain = 0.0
    for _ in range(100):
        d, layers = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        act = ActivationKind.smooth_leaky_relu(float(rng.uniform(0.05, 0.5)))
        net = init_weights(d, layers, "gaussian", int(rng.integers(1 << 30)), activation=act)
        x, y = rng.standard_normal(d), rng.standard_normal(d)
        trace = forward(net, x)
        _, grads = backprop_gradients(net, trace, y)
        for a, b in zip(grads, finite_difference_weight_gradients(net, x, y)):
            worst_fd = max(worst_fd, np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
        stack = layer_jacobians(net, trace)
        for l in range(layers):
            worst_chain = max(worst_chain, float(np.max(np.abs(
                stack.J[l] - stack.J[l + 1] @ stack.per_layer[l]))))
    elapsed = time.perf_counter() - start
    ok = worst_fd < 1e-5 and worst_chain <= 1e-10
    return report(capsys, 9, "oracle integrity", ok,
                  f"finite-difference rel error {worst_fd:.2e}, chain {worst_chain:.2e}", elapsed)


def criterion_10(capsys=None, tmp_path=None):
    import tempfile
    from pathlib import Path
    tmp = Path(tmp_path or tempfile.mkdtemp())
    exe = shutil.which("dtp")
    base = [exe] if exe else [sys.executable, "-m", "dtp.harness.cli"]
    start = time.perf_counter()
    outputs = []
    for run in ("a", "b"):
        out = tmp / f"verify_{run}.jsonl"
        proc = subprocess.run(base + ["verify", "--seed", "7", "--out", str(out)],
                              capture_output=True, check=False)
        summary = out.with_suffix(".summary.txt").read_bytes()
        outputs.append((proc.returncode, proc.stdout, summary, out.read_bytes()))
    elapsed = time.perf_counter() - start
    ok = outputs[0] == outputs[1] and outputs[0][0] == 0
    return report(capsys, 10, "determinism", ok,
                  f"exit codes {outputs[0][0]}/{outputs[1][0]}, summaries "
                  f"{'identical' if outputs[0][2] == outputs[1][2] else 'differ'}", elapsed)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda c: c.__name__)
def test_criterion(criterion, capsys):
    assert criterion(capsys)


def test_criterion_10(capsys, tmp_path):
    assert criterion_10(capsys, tmp_path)


if __name__ == "__main__":
    results = [c() for c in CRITERIA] + [criterion_10()]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
