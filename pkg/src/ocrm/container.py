"""Binary model container.

Layout (all integers little-endian)::

    b"OCRM1"  uint32 version
    section*  each: 1-byte tag, then tag-specific payload
      b"T"  tensor record: uint32 name length, UTF-8 name, uint8 dtype code,
            uint32 rank, uint64 dims[rank], raw little-endian payload
      b"S"  SVDD record: uint8 kernel kind, fp64 gamma, fp64 c, uint64 m,
            uint64 d, fp64 sv[m*d], fp64 alpha[m], fp64 r2, fp64 centre norm^2,
            uint64 indices[m]
      b"C"  config snapshot: uint32 length, UTF-8 ``key = value`` text
    b"E"  end marker
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config, pipeline, svdd

MAGIC = b"OCRM1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
DTYPE_CODES = {dt: code for code, dt in DTYPES.items()}
KERNELS = {0: "linear", 1: "rbf"}


class ContainerError(ValueError):
    """The file is not a well-formed model container."""


@dataclass
class ModelContainer:
    tensors: dict = field(default_factory=dict)  # name -> ndarray
    svdd: svdd.SvddModel | None = None
    config_text: str = ""

    # ------------------------------------------------------------- writing
    def to_bytes(self):
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", VERSION))
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            code = DTYPE_CODES.get(np.dtype(dt))
            if code is None:
                raise ContainerError(f"{name}: unsupported dtype {arr.dtype}")
            raw = name.encode("utf-8")
            out.write(b"T" + struct.pack("<I", len(raw)) + raw)
            out.write(struct.pack("<BI", code, arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.write(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
        if self.svdd is not None:
            out.write(b"S" + _svdd_bytes(self.svdd))
        raw = self.config_text.encode("utf-8")
        out.write(b"C" + struct.pack("<I", len(raw)) + raw)
        out.write(b"E")
        return out.getvalue()

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    # ------------------------------------------------------------- reading
    @classmethod
    def from_bytes(cls, buf):
        r = _Reader(buf)
        if r.take(len(MAGIC)) != MAGIC:
            raise ContainerError("bad magic; not a model container")
        (version,) = r.unpack("<I")
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        box = cls()
        while True:
            tag = r.take(1)
            if tag == b"E":
                break
            if tag == b"T":
                (n,) = r.unpack("<I")
                name = r.take(n).decode("utf-8")
                code, rank = r.unpack("<BI")
                if code not in DTYPES:
                    raise ContainerError(f"{name}: unknown dtype code {code}")
                dims = r.unpack(f"<{rank}Q")
                dt = DTYPES[code]
                count = int(np.prod(dims, dtype=np.int64))
                box.tensors[name] = np.frombuffer(r.take(count * dt.itemsize), dt).reshape(dims).astype(dt.newbyteorder("="))
            elif tag == b"S":
                box.svdd = _read_svdd(r)
            elif tag == b"C":
                (n,) = r.unpack("<I")
                box.config_text = r.take(n).decode("utf-8")
            else:
                raise ContainerError(f"unknown section tag {tag!r} at offset {r.pos - 1}")
        if r.pos != len(buf):
            raise ContainerError("trailing bytes after end marker")
        return box

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())

    def svdd_bytes(self):
        return None if self.svdd is None else _svdd_bytes(self.svdd)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ContainerError("truncated container")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, n, dtype="<f8"):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(n * dt.itemsize), dt).astype(dt.newbyteorder("="))


def _svdd_bytes(m):
    kind = {v: k for k, v in KERNELS.items()}[m.kernel.kind]
    n, d = m.support_vectors.shape
    parts = [struct.pack("<BddQQ", kind, m.kernel.gamma, m.c, n, d),
             np.ascontiguousarray(m.support_vectors, "<f8").tobytes(),
             np.ascontiguousarray(m.alphas, "<f8").tobytes(),
             struct.pack("<dd", m.r2, m.center_norm2),
             np.ascontiguousarray(m.indices, "<u8").tobytes()]
    return b"".join(parts)


def _read_svdd(r):
    kind, gamma, c, n, d = r.unpack("<BddQQ")
    if kind not in KERNELS:
        raise ContainerError(f"unknown kernel code {kind}")
    sv = r.array(n * d).reshape(n, d)
    alphas = r.array(n)
    r2, cn2 = r.unpack("<dd")
    idx = r.array(n, "<u8").astype(np.int64)
    return svdd.SvddModel(support_vectors=sv, alphas=alphas, c=c, kernel=svdd.KernelSpec(KERNELS[kind], gamma),
                          center_norm2=cn2, r2=r2, indices=idx)


# ------------------------------------------------------- model round trip

HISTORY_KEYS = ("l_mse", "loss_G", "loss_D")


def pack_model(model, svdd_model=None):
    """Container holding the networks, loss history, config and SVDD stage."""
    tensors = dict(model.nets.state_dict())
    for key in HISTORY_KEYS:
        tensors[f"history.{key}"] = np.asarray(model.history[key], dtype=np.float64)
    return ModelContainer(tensors, svdd_model, config.to_text(model.config))


def unpack_model(box):
    """Rebuild a :class:`~ocrm.pipeline.Detector` from a container."""
    cfg = config.train_config_from_text(box.config_text)
    nets = pipeline.build_networks(cfg)
    state = {k: v for k, v in box.tensors.items() if not k.startswith("history.")}
    try:
        nets.load_state_dict(state)
    except KeyError as exc:
        raise ContainerError(f"container is missing network tensors: {exc}") from exc
    nets.eval()
    history = {key: [float(v) for v in box.tensors.get(f"history.{key}", [])] for key in HISTORY_KEYS}
    return pipeline.Detector(pipeline.TrainedModel(nets, cfg, history), box.svdd)


def save_model(path, model, svdd_model=None):
    pack_model(model, svdd_model).save(path)


def load_model(path):
    return unpack_model(ModelContainer.load(path))
