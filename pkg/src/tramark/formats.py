"""Binary containers: TRMK1 checkpoints, TMMK1 masks, TMDS1 datasets.

All integers and floats are little-endian.
"""
import struct

import numpy as np

from .data import FormatError, LabeledDataset
from .nn import NetworkSpec
from .watermark import RegionMasks

CKPT_MAGIC = b"TRMK1"
MASK_MAGIC = b"TMMK1"
DATA_MAGIC = b"TMDS1"


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.path, self.pos = raw, path, 0

    def take(self, nbytes):
        if self.pos + nbytes > len(self.raw):
            raise FormatError(
                f"{self.path}: truncated at byte offset {len(self.raw)}, "
                f"needed {self.pos + nbytes}"
            )
        out = self.raw[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def magic(self, expect):
        got = self.take(len(expect))
        if got != expect:
            raise FormatError(f"{self.path}: bad magic {got!r} at byte offset 0, expected {expect!r}")

    def done(self):
        if self.pos != len(self.raw):
            raise FormatError(f"{self.path}: {len(self.raw) - self.pos} trailing bytes at offset {self.pos}")


def _read(path):
    with open(path, "rb") as f:
        return _Reader(f.read(), path)


def checkpoint_bytes(spec, params):
    spec.check(params)
    sizes = spec.layer_sizes
    head = CKPT_MAGIC + struct.pack(f"<I{len(sizes)}IQ", len(sizes), *sizes, spec.n_params)
    return head + np.asarray(params, dtype="<f4").tobytes()


def write_checkpoint(path, spec, params):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(spec, params))


def read_checkpoint(path):
    r = _read(path)
    r.magic(CKPT_MAGIC)
    (count,) = r.unpack("<I")
    if count < 2 or count > 64:
        raise FormatError(f"{path}: implausible layer count {count} at byte offset 5")
    sizes = r.unpack(f"<{count}I")
    (d,) = r.unpack("<Q")
    try:
        spec = NetworkSpec(sizes)
    except ValueError as e:
        raise FormatError(f"{path}: {e}")
    if d != spec.n_params:
        raise FormatError(f"{path}: header declares d={d} but layers imply {spec.n_params}")
    params = np.frombuffer(r.take(4 * d), dtype="<f4").astype(np.float32)
    r.done()
    return spec, params


def write_mask(path, masks):
    bits = np.packbits(masks.wm_mask.astype(np.uint8), bitorder="little")
    with open(path, "wb") as f:
        f.write(MASK_MAGIC + struct.pack("<I", masks.d) + bits.tobytes())


def read_mask(path, ratio=float("nan")):
    r = _read(path)
    r.magic(MASK_MAGIC)
    (d,) = r.unpack("<I")
    packed = np.frombuffer(r.take((d + 7) // 8), dtype=np.uint8)
    r.done()
    wm = np.unpackbits(packed, count=d, bitorder="little").astype(np.uint8)
    if ratio != ratio:
        ratio = float(wm.sum()) / d if d else 0.0
    return RegionMasks(wm, ratio)


def write_dataset(path, inputs, labels, class_count):
    inputs = np.ascontiguousarray(inputs, dtype="<f4")
    labels = np.asarray(labels, dtype="<u4")
    n, dim = inputs.shape
    with open(path, "wb") as f:
        f.write(DATA_MAGIC + struct.pack("<3I", n, dim, class_count))
        f.write(inputs.tobytes())
        f.write(labels.tobytes())


def read_dataset(path):
    r = _read(path)
    r.magic(DATA_MAGIC)
    n, dim, c = r.unpack("<3I")
    x = np.frombuffer(r.take(4 * n * dim), dtype="<f4").astype(np.float32).reshape(n, dim)
    y = np.frombuffer(r.take(4 * n), dtype="<u4").astype(np.int64)
    r.done()
    try:
        return LabeledDataset(x, y, int(c))
    except ValueError as e:
        raise FormatError(f"{path}: {e}")
