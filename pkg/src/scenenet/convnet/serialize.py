"""SCNM model checkpoints and SCNA activation exports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import _binio
from ..errors import FileFormatError
from .network import Architecture, Network, layer_specs

MODEL_MAGIC = b"SCNM"
MODEL_VERSION = 1
ACTIVATION_MAGIC = b"SCNA"
ACTIVATION_VERSION = 1


def _descriptor(net: Network) -> str:
    layers = [
        {"kind": s.kind, "arg": s.arg, "param_shapes": [list(p) for p in s.param_shapes]}
        for s in net.specs
    ]
    return json.dumps(
        {"architecture": net.arch.to_dict(), "classes": net.classes, "layers": layers},
        sort_keys=True, separators=(",", ":"),
    )


def encode_model(net: Network, stats_blob: bytes = b"") -> bytes:
    w = _binio.Writer()
    w.magic(MODEL_MAGIC)
    w.u32(MODEL_VERSION)
    w.text(_descriptor(net))
    w.u32(len(net.params))
    for p in net.params:
        w.u32(p.ndim)
        for dim in p.shape:
            w.u32(dim)
        w.floats(p)
    w.blob(stats_blob)
    return w.getvalue()


def decode_model(raw: bytes) -> tuple[Network, Optional[bytes]]:
    """Parse a checkpoint; returns the network and the embedded stats blob (or None)."""
    r = _binio.Reader(raw, "SCNM")
    r.expect_magic(MODEL_MAGIC)
    r.expect_version(MODEL_VERSION)
    try:
        desc = json.loads(r.text())
        arch = Architecture.from_dict(desc["architecture"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FileFormatError(f"SCNM architecture descriptor is invalid: {exc}") from exc
    expected = [[list(p) for p in s.param_shapes] for s in layer_specs(arch)]
    if [layer.get("param_shapes") for layer in desc.get("layers", [])] != expected:
        raise FileFormatError("SCNM layer list does not match its architecture")
    params = []
    for _ in range(r.u32()):
        shape = tuple(r.u32() for _ in range(r.u32()))
        params.append(r.floats(shape))
    stats = r.blob()
    r.finish()
    try:
        net = Network(arch, params, classes=desc.get("classes"))
    except ValueError as exc:
        raise FileFormatError(f"SCNM parameters do not fit the architecture: {exc}") from exc
    return net, (stats or None)


def write_activation_export(path, activations: np.ndarray, index_rows: Sequence[Sequence]):
    """Write ``activations`` to ``path`` (SCNA) and the row labels to ``path + '.tsv'``.

    ``index_rows`` holds one ``(clip_id, window_index, variant, scene)`` per row.
    """
    activations = np.asarray(activations, dtype=np.float32)
    if activations.ndim != 2 or activations.shape[0] != len(index_rows):
        raise ValueError("activations must be [rows, columns] with one index row per activation row")
    w = _binio.Writer()
    w.magic(ACTIVATION_MAGIC)
    w.u32(ACTIVATION_VERSION)
    w.u32(activations.shape[0])
    w.u32(activations.shape[1])
    w.floats(activations)
    path = Path(path)
    path.write_bytes(w.getvalue())
    with open(str(path) + ".tsv", "w", newline="\n", encoding="utf-8") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["row", "clip_id", "window_index", "variant", "scene"])
        for i, row in enumerate(index_rows):
            out.writerow([i, *row])


def read_activation_export(path) -> tuple[np.ndarray, list[list[str]]]:
    r = _binio.Reader(Path(path).read_bytes(), "SCNA")
    r.expect_magic(ACTIVATION_MAGIC)
    r.expect_version(ACTIVATION_VERSION)
    rows, cols = r.u32(), r.u32()
    data = r.floats((rows, cols))
    r.finish()
    with open(str(path) + ".tsv", encoding="utf-8") as fh:
        index = list(csv.reader(fh, delimiter="\t"))[1:]
    return data, index
