"""Per-example training step, epoch loop and metrics records."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..inversion import NonContractiveError, compute_targets
from ..netcore import Network, forward, init_weights
from ..updates import (DTP1, DTP_SCALED, TargetState, WeightDelta,
                       apply_deltas, decoder_update, dtp1_weight_update,
                       influence_scale, init_output_target, mse_loss,
                       normalize_target_scale)
from .config import DTP_CONVEX, TrainConfig
from .datasets import Dataset, make_dataset

logger = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


@dataclass
class MetricsRecord:
    """One logged row.

    ``kind`` is ``sample`` (one training step; ``loss`` is the pre-update
    per-sample loss) or ``epoch`` (``loss`` is the dataset MSE after the
    epoch; epoch 0 is the initial MSE).  Per-layer lists are indexed by layer
    1..L, except ``alphas`` which is indexed by target layer 0..L-1.
    """

    epoch: int
    sample: int | None
    loss: float
    kind: str = "sample"
    target_gaps: list = field(default_factory=list)
    influence: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    sweeps: int = 0
    failed: bool = False
    wall_time: float = 0.0

    def to_json(self, include_timing: bool = False) -> str:
        row = {
            "epoch": self.epoch, "sample": self.sample, "kind": self.kind,
            "loss": self.loss, "target_gaps": self.target_gaps,
            "influence": self.influence, "alphas": self.alphas,
            "sweeps": self.sweeps, "failed": self.failed,
        }
        if include_timing:
            row["wall_time"] = self.wall_time
        return json.dumps({k: _clean(v) for k, v in row.items()}, sort_keys=True)


def write_metrics(records, path, include_timing: bool = False) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json(include_timing) + "\n")


def feedforward_deltas(trace, state: TargetState, scaling: str,
                       cap: float = 1e4) -> list:
    """Weight changes for every layer from one set of targets.

    ``dtp1`` applies the unscaled single-layer rule everywhere, ``dtp_scaled``
    multiplies each layer by its influence ratio, ``dtp_convex`` normalises
    those ratios to sum to one so the layers share a single output step.
    """
    L = state.layer_count
    factors = [1.0] * (L + 1)
    if scaling in (DTP_SCALED, DTP_CONVEX):
        factors = [1.0] + [influence_scale(state, l, cap) for l in range(1, L + 1)]
    if scaling == DTP_CONVEX:
        total = sum(factors[1:])
        factors = [f / total for f in factors]
    deltas = []
    for l in range(1, L + 1):
        base = dtp1_weight_update(trace, l, state.dtp1_target(l))
        rule = DTP1 if scaling == DTP1 else scaling
        deltas.append(WeightDelta(l, factors[l] * base.delta, rule, base.skipped))
    return deltas


def compute_step(net: Network, x, y, config: TrainConfig):
    """Run one example through the algorithm without touching the encoders.

    Decoder updates ARE applied to ``net`` (they precede target computation).
    Returns ``(deltas, record)``; ``deltas`` is None when relaxation diverged.
    """
    start = time.perf_counter()
    trace = forward(net, x, config.norm_convention)
    loss = mse_loss(trace.output, y)
    L = net.layer_count

    dec = [decoder_update(net, trace, l, config.decoder_lr, config.decoder_power)
           for l in range(1, L + 1)]
    apply_deltas(net, dec, decoder=True)

    tau_L = init_output_target(trace.output, y, config.beta)
    record = MetricsRecord(0, None, loss)
    try:
        taus, results = compute_targets(net, trace, tau_L, config.method,
                                        config.relaxation)
    except NonContractiveError as err:
        logger.debug("relaxation diverged: %s", err)
        record.failed = True
        record.alphas = [err.estimated_alpha if err.layer == l else None
                         for l in range(L)]
        record.wall_time = time.perf_counter() - start
        return None, record

    state = normalize_target_scale(TargetState.from_trace(trace, taus),
                                   config.stability_mode)
    deltas = feedforward_deltas(trace, state, config.scaling, config.influence_cap)
    record.target_gaps = [float(np.sqrt(g)) for g in state.layer_gap_sq[1:]]
    record.influence = [influence_scale(state, l, config.influence_cap)
                        for l in range(1, L + 1)]
    record.alphas = [None if r is None else r.estimated_alpha for r in results[:L]]
    record.sweeps = max([r.iterations_used for r in results if r is not None],
                        default=0)
    record.wall_time = time.perf_counter() - start
    return deltas, record


def train_step(net: Network, x, y, config: TrainConfig):
    """One full update on example (x, y); mutates and returns ``net``.

    Order: forward pass, decoder updates from the forward activations, output
    target, target propagation/relaxation, feedforward weight updates.  A
    diverging relaxation skips the feedforward update but keeps the decoder one.
    """
    deltas, record = compute_step(net, x, y, config)
    if deltas is not None:
        apply_deltas(net, deltas)
    return net, record


def dataset_mse(net: Network, dataset: Dataset) -> float:
    return float(np.mean([mse_loss(forward(net, x).output, y)
                          for x, y in zip(dataset.xs, dataset.ys)]))


def train(net: Network, dataset: Dataset, config: TrainConfig,
          shuffle_seed: int | None = None):
    """Epoch loop around :func:`train_step`; mutates ``net``.

    Returns ``(net, records)``.  Raises :class:`TrainingAborted` after more than
    ``failure_budget`` consecutive diverging examples.
    """
    rng = np.random.default_rng(config.seed if shuffle_seed is None else shuffle_seed)
    records = [MetricsRecord(0, None, dataset_mse(net, dataset), kind="epoch")]
    failures = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            pending = []
            for i in batch:
                deltas, rec = compute_step(net, dataset.xs[i], dataset.ys[i], config)
                rec.epoch, rec.sample = epoch, int(i)
                if config.granularity == "sample":
                    records.append(rec)
                if deltas is None:
                    failures += 1
                    if failures > config.failure_budget:
                        raise TrainingAborted(
                            f"{failures} consecutive diverging examples "
                            f"(epoch {epoch}, sample {i})")
                    continue
                failures = 0
                pending.append(deltas)
            if pending:
                scale = 1.0 / len(pending)
                for per_layer in zip(*pending):
                    total = sum(d.delta for d in per_layer) * scale
                    apply_deltas(net, [WeightDelta(per_layer[0].layer, total,
                                                   per_layer[0].rule)])
        records.append(MetricsRecord(epoch, None, dataset_mse(net, dataset),
                                     kind="epoch"))
    return net, records


def seeds_for(seed: int) -> tuple:
    """Independent integer seeds for (dataset, initialisation, shuffling)."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)


def build_network(config: TrainConfig, width: int, seed: int) -> Network:
    return init_weights(width, config.layers, config.init_scheme, seed,
                        config.decoder_init, config.activation_kind, config.bias)


def load_dataset(config: TrainConfig, seed: int) -> Dataset:
    return make_dataset(config.dataset, config.width, config.n_samples, seed,
                        config.dataset_path, config.activation_kind)


def run_training(config: TrainConfig):
    """Build dataset and network from ``config`` and train; returns
    ``(net, records, dataset)``."""
    data_seed, init_seed, shuffle_seed = seeds_for(config.seed)
    dataset = load_dataset(config, data_seed)
    net = build_network(config, dataset.width, init_seed)
    net, records = train(net, dataset, config, shuffle_seed)
    return net, records, dataset
