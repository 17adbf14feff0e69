"""Binary checkpoints.

Layout: ``b"SETFLOW\\0"``, u32 format version, u64 metadata length, UTF-8
JSON metadata (sorted keys), then every tensor as little-endian float64 in the
sorted key order listed in the metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .model import SetFlowModel
from .numerics import AdamState

MAGIC = b"SETFLOW\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    step: int
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam: AdamState | None = None
    rng_state: dict | None = None

    @classmethod
    def capture(cls, config: RunConfig, model: SetFlowModel, step: int = 0,
                adam: AdamState | None = None, rng: np.random.Generator | None = None) -> "Checkpoint":
        return cls(config, step,
                   {k: v.copy() for k, v in model.named_parameters().items()},
                   {k: v.copy() for k, v in model.named_buffers().items()},
                   None if adam is None else AdamState(
                       adam.lr, adam.beta1, adam.beta2, adam.eps,
                       {k: v.copy() for k, v in adam.m.items()},
                       {k: v.copy() for k, v in adam.v.items()}, adam.t),
                   None if rng is None else rng.bit_generator.state)

    def build_model(self) -> SetFlowModel:
        model = SetFlowModel(self.config.model, rng=0)
        _assign(model.named_parameters(), self.params, "parameter")
        _assign(model.named_buffers(), self.buffers, "buffer")
        return model.eval()

    def build_rng(self) -> np.random.Generator:
        if self.rng_state is None:
            return np.random.default_rng(self.config.train.seed)
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng_state
        return rng

    def to_bytes(self) -> bytes:
        tensors = {f"param/{k}": v for k, v in self.params.items()}
        tensors.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        meta = {"config": self.config.to_flat(), "step": self.step, "rng": self.rng_state,
                "adam": None}
        if self.adam is not None:
            a = self.adam
            meta["adam"] = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
            tensors.update({f"adam.m/{k}": v for k, v in a.m.items()})
            tensors.update({f"adam.v/{k}": v for k, v in a.v.items()})
        keys = sorted(tensors)
        meta["tensors"] = [[k, list(tensors[k].shape)] for k in keys]
        blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        parts = [MAGIC, struct.pack("<IQ", VERSION, len(blob)), blob]
        parts += [np.ascontiguousarray(tensors[k], dtype="<f8").tobytes() for k in keys]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:8] != MAGIC:
            raise CheckpointError("not a Set Flow checkpoint (bad magic)")
        version, n = struct.unpack_from("<IQ", raw, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 8 + 12
        meta = json.loads(raw[off:off + n])
        off += n
        tensors = {}
        for key, shape in meta["tensors"]:
            count = int(np.prod(shape))
            if off + 8 * count > len(raw):
                raise CheckpointError(f"truncated checkpoint at tensor {key}")
            tensors[key] = np.frombuffer(raw, "<f8", count, off).reshape(shape).astype(np.float64)
            off += 8 * count
        if off != len(raw):
            raise CheckpointError("trailing bytes after last tensor")

        def group(prefix):
            return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

        adam = None
        if meta["adam"] is not None:
            a = meta["adam"]
            adam = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"],
                             group("adam.m/"), group("adam.v/"), a["t"])
        config = RunConfig.from_flat(meta["config"])
        return cls(config, meta["step"], group("param/"), group("buffer/"), adam, meta["rng"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _assign(target: dict[str, np.ndarray], source: dict[str, np.ndarray], what: str) -> None:
    missing = set(target) - set(source)
    extra = set(source) - set(target)
    if missing or extra:
        raise CheckpointError(f"{what} keys do not match the model: missing {sorted(missing)[:5]}, "
                              f"unexpected {sorted(extra)[:5]}")
    for k, arr in target.items():
        if arr.shape != source[k].shape:
            raise CheckpointError(f"{what} {k}: shape {source[k].shape} != model {arr.shape}")
        arr[...] = source[k]


save_checkpoint = Checkpoint.save
load_checkpoint = Checkpoint.load
