"""Binary checkpoint format for named model parameters.

Layout (all integers little-endian):

    magic "PRTR" | version u32 | config_len u32 | config JSON bytes |
    repeated records until EOF:
        name_len u32 | name bytes | dtype u8 (0=f32, 1=f64) | rank u8 |
        dims u32[rank] | payload (row-major)

Round-trip save -> load reproduces every parameter bit-exactly; the record
name set must match the model's parameter catalog exactly on restore.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ContractError
from .nn import ModelConfig

MAGIC = b"PRTR"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(path, config, params):
    """Write ``params`` ({name: Tensor or ndarray}) with the model config."""
    cfg_bytes = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        for name in sorted(params):
            arr = np.ascontiguousarray(getattr(params[name], "data", params[name]))
            if arr.dtype not in _CODES:
                raise ContractError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Read (ModelConfig, {name: ndarray}) from a checkpoint file."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ContractError(f"{path} is not a checkpoint (bad magic {blob[:4]!r})")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, 8)
    off = 12
    config = ModelConfig.from_dict(json.loads(blob[off : off + cfg_len].decode("utf-8")))
    off += cfg_len
    params = {}
    while off < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        dtype = np.dtype(_DTYPES[code])
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(dims).copy()
        off += count * dtype.itemsize
        params[name] = arr
    return config, params


def restore_model(path, model_factory):
    """Rebuild a model from a checkpoint, enforcing catalog equality."""
    config, params = load_checkpoint(path)
    model = model_factory(config)
    catalog = model.named_parameters()
    missing = sorted(set(catalog) - set(params))
    extra = sorted(set(params) - set(catalog))
    if missing or extra:
        raise ContractError(
            f"checkpoint/model parameter mismatch: missing {missing}, unexpected {extra}")
    for name, tensor in catalog.items():
        arr = params[name]
        if arr.shape != tensor.data.shape:
            raise ContractError(
                f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype) if arr.dtype != tensor.data.dtype else arr
    return model, config
