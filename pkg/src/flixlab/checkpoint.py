"""Binary checkpoints: magic, JSON manifest, raw float64 payload.

Layout::

    b"FLIXCKPT"                      8 bytes
    manifest length                  uint64, little-endian
    manifest                         UTF-8 JSON
    payload                          little-endian float64, row-major,
                                     tensors in manifest order

``kind`` is ``"adapter"`` (frozen base plus both adapter banks) or
``"dense"`` (merged serving weights, no adapter tensors).
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapters import AdapterBank
from .errors import ConfigError
from .features import FeatureRegistry
from .model import DenseModel, FrozenBase, TaggerModel

MAGIC = b"FLIXCKPT"
FORMAT_VERSION = 1


class CheckpointError(ConfigError):
    """File is not a readable flixlab checkpoint."""


@dataclass
class Checkpoint:
    manifest: dict
    model: object

    @property
    def kind(self):
        return self.manifest["kind"]

    @property
    def experiment(self):
        return self.manifest.get("experiment")


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _tensors(model):
    if isinstance(model, TaggerModel):
        out = [("embed", model.base.embed), ("w1", model.base.w1), ("w2", model.base.w2)]
        for layer, bank in (("bank1", model.bank1), ("bank2", model.bank2)):
            for f, a, b in zip(model.registry, bank.a, bank.b):
                out += [(f"{layer}.a.{f.name}", a), (f"{layer}.b.{f.name}", b)]
        return out
    return [("embed", model.embed), ("w1", model.w1), ("w2", model.w2)]


def encode(model, **meta):
    tensors = _tensors(model)
    manifest = {"format_version": FORMAT_VERSION,
                "kind": "adapter" if isinstance(model, TaggerModel) else "dense",
                "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors]}
    if isinstance(model, TaggerModel):
        manifest["registry"] = model.registry.to_json()
        manifest["adapter_scale"] = [model.bank1.scale, model.bank2.scale]
    manifest.update(meta)
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for _, t in tensors)
    return MAGIC + struct.pack("<Q", len(head)) + head + payload


def decode(blob):
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError("not a flixlab checkpoint (bad magic header)")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        manifest = json.loads(blob[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError("checkpoint manifest is not valid UTF-8 JSON") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    payload = blob[16 + n:]
    sizes = [int(np.prod(t["shape"])) for t in manifest["tensors"]]
    if len(payload) != 8 * sum(sizes):
        raise CheckpointError(f"payload holds {len(payload)} bytes, manifest declares "
                              f"{8 * sum(sizes)}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    tensors, at = {}, 0
    for t, size in zip(manifest["tensors"], sizes):
        tensors[t["name"]] = values[at:at + size].reshape(t["shape"]).copy()
        at += size

    if manifest["kind"] == "dense":
        model = DenseModel(tensors["embed"], tensors["w1"], tensors["w2"])
        return Checkpoint(manifest, model)
    registry = FeatureRegistry.from_json(manifest["registry"])
    base = FrozenBase(tensors["embed"], tensors["w1"], tensors["w2"])
    s1, s2 = manifest.get("adapter_scale", [1.0, 1.0])
    banks = []
    for layer, (d, k), scale in (("bank1", base.w1.shape, s1), ("bank2", base.w2.shape, s2)):
        banks.append(AdapterBank([tensors[f"{layer}.a.{f.name}"] for f in registry],
                                 [tensors[f"{layer}.b.{f.name}"] for f in registry],
                                 d, k, scale))
    return Checkpoint(manifest, TaggerModel(base, registry, *banks))


def save_checkpoint(path, model, **meta):
    """Write ``model`` atomically; extra keyword fields go into the manifest."""
    atomic_write(path, encode(model, **meta))


def load_checkpoint(path):
    return decode(Path(path).read_bytes())
