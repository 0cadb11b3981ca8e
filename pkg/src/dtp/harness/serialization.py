"""Whole-network save/load as a single portable text file.

Layout (one item per line, whitespace separated)::

    dtp-network 1
    layers <L> width <d> bias <0|1>
    activation <kind> <slope>
    encoder <l>
    <d rows of d or d+1 decimals, row-major>
    decoder <l>
    ...

Floats are written with ``repr`` so a save/load round trip is exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..netcore import ActivationKind, Network

MAGIC = "dtp-network"
FORMAT_VERSION = 1


class NetworkFormatError(ValueError):
    pass


def _matrix_lines(w: np.ndarray) -> list:
    return [" ".join(repr(float(v)) for v in row) for row in w]


def dumps_network(net: Network) -> str:
    lines = [f"{MAGIC} {FORMAT_VERSION}",
             f"layers {net.layer_count} width {net.width} bias {int(net.bias)}",
             f"activation {net.activation.kind} {net.activation.slope!r}"]
    for l in range(1, net.layer_count + 1):
        lines.append(f"encoder {l}")
        lines.extend(_matrix_lines(net.encoder_weights[l - 1]))
        lines.append(f"decoder {l}")
        lines.extend(_matrix_lines(net.decoder_weights[l - 1]))
    return "\n".join(lines) + "\n"


def loads_network(text: str) -> Network:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    pos = 0

    def take(expected_head=None):
        nonlocal pos
        if pos >= len(lines):
            raise NetworkFormatError("unexpected end of file")
        fields = lines[pos]
        pos += 1
        if expected_head is not None and fields[0] != expected_head:
            raise NetworkFormatError(
                f"line {pos}: expected {expected_head!r}, got {fields[0]!r}")
        return fields

    try:
        head = take(MAGIC)
        if int(head[1]) != FORMAT_VERSION:
            raise NetworkFormatError(f"unsupported format version {head[1]}")
        dims = take("layers")
        L, d, bias = int(dims[1]), int(dims[3]), bool(int(dims[5]))
        act = take("activation")
        activation = ActivationKind(act[1], float(act[2]))
        cols = d + int(bias)
        enc, dec = [], []
        for l in range(1, L + 1):
            for name, out in (("encoder", enc), ("decoder", dec)):
                if int(take(name)[1]) != l:
                    raise NetworkFormatError(f"line {pos}: {name} blocks out of order")
                rows = [take() for _ in range(d)]
                if any(len(r) != cols for r in rows):
                    raise NetworkFormatError(f"{name} {l}: expected {cols} columns")
                out.append(np.array(rows, dtype=float))
    except (IndexError, ValueError) as err:
        if isinstance(err, NetworkFormatError):
            raise
        raise NetworkFormatError(f"line {pos}: {err}") from None
    if pos != len(lines):
        raise NetworkFormatError(f"line {pos + 1}: trailing content")
    return Network(enc, dec, activation, bias)


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net))


def load_network(path) -> Network:
    return loads_network(Path(path).read_text())
