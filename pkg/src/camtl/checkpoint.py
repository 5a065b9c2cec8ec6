"""Self-describing binary checkpoint container.

Layout (all integers little-endian):

    magic    4 bytes  b"CAMT"
    version  u32      format version (currently 1)
    config   u64 length + UTF-8 JSON (canonical: sorted keys)
    count    u32      number of parameter blobs
    blob*:   name (u32 length + UTF-8)
             ndim (u32) + dims (u32 each)
             data (u64 byte length + raw little-endian float64)

Parameters are written in sorted-name order and the config JSON is
canonical, so save -> load -> save is byte-identical. Loading validates
magic, version, completeness, and every shape before touching a model; a
truncated or corrupt file never yields a partial model.
"""

import json
import struct

import numpy as np

MAGIC = b"CAMT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str, config_dict: dict, params: dict) -> None:
    """Write config plus named float64 arrays; sorted, canonical, atomic-ish."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    config_bytes = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob += struct.pack("<Q", len(config_bytes))
    blob += config_bytes
    names = sorted(params)
    blob += struct.pack("<I", len(names))
    for name in names:
        data = np.ascontiguousarray(getattr(params[name], "data", params[name]), dtype="<f8")
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", data.ndim)
        for dim in data.shape:
            blob += struct.pack("<I", dim)
        raw = data.tobytes()
        blob += struct.pack("<Q", len(raw))
        blob += raw
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path: str):
    """Returns (config_dict, {name: float64 array}); validates the container."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} (expected {MAGIC!r})")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} (expected {VERSION})")
    config_len = r.u64("config length")
    try:
        config_dict = json.loads(r.take(config_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config block: {exc}") from None
    count = r.u32("parameter count")
    params = {}
    for i in range(count):
        name_len = r.u32(f"name length of blob {i}")
        name = r.take(name_len, f"name of blob {i}").decode("utf-8")
        ndim = r.u32(f"ndim of {name}")
        shape = tuple(r.u32(f"dim of {name}") for _ in range(ndim))
        nbytes = r.u64(f"byte length of {name}")
        expected = int(np.prod(shape)) * 8 if shape else 8
        if nbytes != expected:
            raise CheckpointError(
                f"parameter {name}: byte length {nbytes} does not match shape {shape}"
            )
        raw = r.take(nbytes, f"data of {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after the last blob")
    return config_dict, params


def restore_model_params(model, params: dict) -> None:
    """Copy checkpoint arrays into a constructed model, validating shapes."""
    model_params = model.parameters()
    missing = sorted(set(model_params) - set(params))
    if missing:
        raise CheckpointError(f"checkpoint is missing parameters: {missing[:5]}")
    extra = sorted(set(params) - set(model_params))
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters: {extra[:5]}")
    for name, tensor in model_params.items():
        value = params[name]
        if value.shape != tensor.data.shape:
            raise CheckpointError(
                f"parameter {name}: shape {value.shape} does not match model {tensor.data.shape}"
            )
    for name, tensor in model_params.items():
        tensor.data[...] = params[name]
