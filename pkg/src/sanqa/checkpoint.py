"""Binary model checkpoints: magic SANC, config text block, named f64 tensors.

Layout, all integers little-endian u32:
    "SANC" | version | config_len | config utf-8 (key=value lines)
    repeated until EOF:
        name_len | name utf-8 | rank | extent*rank | float64 payload

Round-trips are bitwise exact.
"""

import struct

import numpy as np

from .attention import ModelConfig, build_model
from .errors import FormatError

MAGIC = b"SANC"
VERSION = 1


def save_checkpoint(path, model):
    params = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        config = model.config.to_kv().encode("utf-8")
        fh.write(struct.pack("<II", VERSION, len(config)))
        fh.write(config)
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            shape = tensor.values.shape
            fh.write(struct.pack("<I", len(shape)))
            for extent in shape:
                fh.write(struct.pack("<I", extent))
            fh.write(tensor.values.astype("<f8", copy=False).tobytes())


def _read_exact(fh, n, path, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated while reading {what}")
    return data


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path, "magic") != MAGIC:
            raise FormatError(f"{path}: not a SANC checkpoint")
        version, config_len = struct.unpack("<II", _read_exact(fh, 8, path, "header"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported SANC version {version}")
        config = ModelConfig.from_kv(_read_exact(fh, config_len, path, "config").decode("utf-8"))
        records = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError(f"{path}: truncated record header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, path, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, path, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, path, "shape"))
            count = int(np.prod(shape)) if rank else 1
            payload = _read_exact(fh, 8 * count, path, f"tensor '{name}'")
            records[name] = np.frombuffer(payload, dtype="<f8").reshape(shape)

    model = build_model(config, seed=0)
    params = model.named_parameters()
    if set(records) != set(params):
        missing = set(params) - set(records)
        extra = set(records) - set(params)
        raise FormatError(f"{path}: parameter set mismatch (missing {missing}, extra {extra})")
    for name, tensor in params.items():
        if records[name].shape != tensor.values.shape:
            raise FormatError(
                f"{path}: '{name}' has shape {records[name].shape}, "
                f"expected {tensor.values.shape}")
        tensor.values = records[name].astype(np.float64)
    return model
