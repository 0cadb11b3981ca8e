"""Synthetic equal-width regression tasks and the CSV dataset format.

Inputs are drawn as |N(0, 1)| so that sigma(x) = x under a leaky ReLU: both
tasks are then exactly representable by a two-layer network.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..netcore import ActivationKind, activation_apply


class DatasetParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class Dataset:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.shape != self.ys.shape or self.xs.ndim != 2:
            raise ValueError("xs and ys must be equal-shape (n, d) arrays")

    def __len__(self):
        return len(self.xs)

    @property
    def width(self) -> int:
        return self.xs.shape[1]


def random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def make_dataset(kind: str, width: int = 8, n: int = 64, seed: int = 0,
                 path=None, activation: ActivationKind | None = None) -> Dataset:
    """``linear_map``: y = Q x.  ``rotated_nonlinear``: y = Q sigma(P x).
    ``csv``: read from ``path``.  Q and P are seeded random orthogonal matrices.
    """
    if kind == "csv":
        return read_csv(path)
    rng = np.random.default_rng(seed)
    q = random_orthogonal(rng, width)
    xs = np.abs(rng.standard_normal((n, width)))
    if kind == "linear_map":
        return Dataset(xs, xs @ q.T)
    if kind == "rotated_nonlinear":
        p = random_orthogonal(rng, width)
        act = activation or ActivationKind()
        return Dataset(xs, activation_apply(act, xs @ p.T) @ q.T)
    raise ValueError(f"unknown dataset kind {kind!r}")


def write_csv(dataset: Dataset, path) -> None:
    rows = np.hstack([dataset.xs, dataset.ys])
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path) -> Dataset:
    xs, ys, arity = [], [], None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if arity is None:
            arity = len(cells)
            if arity % 2 or arity == 0:
                raise DatasetParseError(path, lineno,
                                        f"expected an even column count, got {arity}")
        elif len(cells) != arity:
            raise DatasetParseError(path, lineno,
                                    f"expected {arity} columns, got {len(cells)}")
        try:
            row = [float(c) for c in cells]
        except ValueError as err:
            raise DatasetParseError(path, lineno, str(err)) from None
        xs.append(row[:arity // 2])
        ys.append(row[arity // 2:])
    if not xs:
        raise DatasetParseError(path, 0, "no samples")
    return Dataset(np.array(xs), np.array(ys))
