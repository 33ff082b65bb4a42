"""Binary checkpoints of trained models.

Layout (all integers little-endian u32)::

    b"AGAN" | version | json_len | json bytes
    then per network until EOF:
    name_len | name | tensor_count | per tensor: rank | dims... | f64 LE values

The JSON header carries the training config, dataset spec, iteration and
the architecture of every network so that parameters can be rebuilt.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import TrainingConfig
from .networks import MLPSpec, NetworkParams, Role
from .trainers import TrainedModel

MAGIC = b"AGAN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _network_meta(params: NetworkParams) -> dict:
    spec = params.spec
    return {
        "role": params.role.value,
        "layer_sizes": list(spec.layer_sizes),
        "hidden_activation": spec.hidden_activation,
        "output_activation": spec.output_activation,
        "init": spec.init,
        "init_scale": spec.init_scale,
        "noise_dim": params.noise_dim,
    }


def encode_checkpoint(model: TrainedModel, dataset_spec: dict | None = None, image_shape=None) -> bytes:
    header = {
        "image_shape": list(image_shape) if image_shape else None,
        "algorithm": model.algorithm,
        "config": model.config.to_dict(),
        "dataset": dataset_spec,
        "dataset_kind": model.dataset_kind,
        "iteration": model.iteration,
        "networks": {name: _network_meta(p) for name, p in model.networks.items()},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for name, params in model.networks.items():
        raw = name.encode("utf-8")
        arrays = params.arrays()
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", len(arrays)))
        for a in arrays:
            parts.append(struct.pack(f"<{1 + a.ndim}I", a.ndim, *a.shape))
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        values = struct.unpack(f"<{count}I", self.take(4 * count))
        return values[0] if count == 1 else values

    @property
    def done(self) -> bool:
        return self.pos == len(self.buf)


def decode_checkpoint(buf: bytes) -> tuple[TrainedModel, dict]:
    """Return the model and the decoded JSON header."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    networks = {}
    while not r.done:
        name = r.take(r.u32()).decode("utf-8")
        arrays = []
        for _ in range(r.u32()):
            rank = r.u32()
            dims = r.u32(rank) if rank > 1 else ((r.u32(),) if rank == 1 else ())
            count = int(np.prod(dims, dtype=np.int64))
            arrays.append(np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims))
        meta = header["networks"].get(name)
        if meta is None:
            raise CheckpointError(f"network {name!r} missing from the header")
        spec = MLPSpec(
            tuple(meta["layer_sizes"]),
            meta["hidden_activation"],
            meta["output_activation"],
            meta["init"],
            meta["init_scale"],
        )
        tensors = [Tensor(a) for a in arrays]
        try:
            networks[name] = NetworkParams(
                Role(meta["role"]), spec, tuple(tensors[0::2]), tuple(tensors[1::2]), meta["noise_dim"]
            )
        except ValueError as exc:
            raise CheckpointError(f"network {name!r}: {exc}") from exc
    if set(networks) != set(header["networks"]):
        raise CheckpointError("checkpoint is missing network data")
    config = TrainingConfig.from_dict(header["config"])
    model = TrainedModel(header["algorithm"], config, networks, header["iteration"], header["dataset_kind"])
    return model, header


def save_checkpoint(path, model: TrainedModel, dataset_spec: dict | None = None, image_shape=None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(model, dataset_spec, image_shape))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[TrainedModel, dict]:
    return decode_checkpoint(Path(path).read_bytes())
