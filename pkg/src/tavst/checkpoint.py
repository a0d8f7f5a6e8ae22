"""Checkpoint file format.

Layout: the header line ``TAVST-CKPT v1``, then one record per tensor in
name-sorted order: a text line ``name<TAB>rank<TAB>dim...`` followed by the
tensor's raw little-endian float32 values. Round-trips are bit-exact.
"""

from __future__ import annotations

import numpy as np

HEADER = b"TAVST-CKPT v1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(params, path) -> None:
    with open(path, "wb") as fh:
        fh.write(HEADER)
        for name, tensor in sorted(params.items()):
            dims = tensor.data.shape
            fields = [name, str(len(dims))] + [str(d) for d in dims]
            fh.write(("\t".join(fields) + "\n").encode("utf-8"))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def _read_line(fh) -> bytes:
    chunk = bytearray()
    while True:
        b = fh.read(1)
        if not b:
            return bytes(chunk)
        chunk += b
        if b == b"\n":
            return bytes(chunk)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint into a name -> float32 array mapping."""
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(HEADER)) != HEADER:
            raise CheckpointError(f"{path}: missing TAVST-CKPT v1 header")
        while True:
            line = _read_line(fh)
            if not line:
                break
            fields = line.decode("utf-8").rstrip("\n").split("\t")
            if len(fields) < 2:
                raise CheckpointError(f"{path}: malformed record line {fields!r}")
            name = fields[0]
            try:
                rank = int(fields[1])
                dims = tuple(int(d) for d in fields[2:])
            except ValueError:
                raise CheckpointError(f"{path}: malformed record line {fields!r}") from None
            if len(dims) != rank:
                raise CheckpointError(
                    f"{path}: record {name!r} declares rank {rank} but {len(dims)} dims"
                )
            count = int(np.prod(dims, dtype=np.int64)) if dims else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return arrays
