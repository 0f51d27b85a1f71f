"""Binary checkpoints: magic, version, a JSON header and float64 little-endian tensors."""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..language import serialize_domain
from .model import RelevanceModel

MAGIC = b"RELNET\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def domain_hash(domain) -> str:
    return hashlib.sha256(serialize_domain(domain).encode()).hexdigest()[:16]


def save_model(path, model: RelevanceModel, domain, extra: dict = None) -> None:
    names = model.names()
    header = {
        "version": VERSION,
        "domain_hash": domain_hash(domain),
        "vocab": list(model.vocab),
        "schemas": {k: list(v) for k, v in sorted(model.schemas.items())},
        "seed": model.seed,
        "width": model.width,
        "hidden": model.hidden,
        "blocks": model.blocks,
        "tensors": [[n, list(model.params[n].shape)] for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_model(path, domain=None):
    """Returns (model, header). With a domain, the header hash must match it."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise CheckpointError("not a relevance-model checkpoint")
    off = len(MAGIC)
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off:off + n].decode())
    off += n
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    if domain is not None and header["domain_hash"] != domain_hash(domain):
        raise CheckpointError("checkpoint was trained for a different domain")
    params = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
        params[name] = arr.copy()
    if off != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    model = RelevanceModel(tuple(header["vocab"]), {k: tuple(v) for k, v in header["schemas"].items()},
                           header["seed"], header["width"], header["hidden"], header["blocks"], params)
    return model, header
