"""Binary checkpoint archive.

Layout (little-endian)::

    b"DRLNCKPT" | version u16 | config_len u32 | config text (utf-8 "key = value" lines)
    repeated:  name_len u32 | name | dtype u8 | dims u32 x 4 | raw payload

Tensors of rank < 4 are written with trailing unit dims; readers get 4-D
arrays back and reshape to the destination parameter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .arch import Network, NetworkConfig, build_network

MAGIC = b"DRLNCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net_config: NetworkConfig
    step: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    # sampler state: batches are a pure function of (seed, step)
    seed: int = 0
    extra: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_network(cls, net: Network, **kw) -> "Checkpoint":
        params = {name: t.data.copy() for name, t in net.named_parameters()}
        return cls(net.config, params=params, **kw)

    def load_into(self, net: Network) -> None:
        named = dict(net.named_parameters())
        if set(named) != set(self.params):
            missing = sorted(set(named) - set(self.params))
            unexpected = sorted(set(self.params) - set(named))
            raise CheckpointError(f"parameter mismatch: missing={missing[:3]} unexpected={unexpected[:3]}")
        for name, t in named.items():
            arr = self.params[name]
            if arr.size != t.data.size:
                raise CheckpointError(f"{name}: checkpoint has {arr.shape}, network needs {t.shape}")
            t.data = arr.reshape(t.shape).astype(t.dtype, copy=True)

    # -- text block ---------------------------------------------------------

    def config_text(self) -> str:
        lines = [f"net.{k} = {v}" for k, v in self.net_config.to_items()]
        lines += [f"state.step = {self.step}", f"state.adam_t = {self.adam_t}", f"state.seed = {self.seed}"]
        lines += [f"extra.{k} = {v}" for k, v in sorted(self.extra.items())]
        return "".join(line + "\n" for line in lines)

    @staticmethod
    def _parse_config(text: str):
        net, state, extra = {}, {}, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition(" = ")
            section, _, name = key.partition(".")
            {"net": net, "state": state, "extra": extra}.get(section, extra)[name] = value
        return net, state, extra

    # -- binary -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        cfg = self.config_text().encode("utf-8")
        chunks = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg]
        entries = list(self.params.items())
        entries += [(f"adam.m.{k}", v) for k, v in self.adam_m.items()]
        entries += [(f"adam.v.{k}", v) for k, v in self.adam_v.items()]
        for name, arr in entries:
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            if arr.ndim > 4:
                raise CheckpointError(f"{name}: rank {arr.ndim} > 4")
            dims = tuple(arr.shape) + (1,) * (4 - arr.ndim)
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<B4I", _CODES[arr.dtype], *dims))
            chunks.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        try:
            return cls._decode(buf)
        except (struct.error, UnicodeDecodeError, KeyError, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"corrupt checkpoint: {exc}") from exc

    @classmethod
    def _decode(cls, buf: bytes) -> "Checkpoint":
        if buf[:8] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        version, cfg_len = struct.unpack_from("<HI", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 14
        net_items, state, extra = cls._parse_config(buf[pos : pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        params, m, v = {}, {}, {}
        while pos < len(buf):
            (name_len,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + name_len].decode("utf-8")
            pos += name_len
            code, *dims = struct.unpack_from("<B4I", buf, pos)
            pos += 17
            dt = _DTYPES.get(code)
            if dt is None:
                raise CheckpointError(f"{name}: unknown dtype code {code}")
            nbytes = int(np.prod(dims)) * dt.itemsize
            if pos + nbytes > len(buf):
                raise CheckpointError(f"{name}: truncated payload")
            arr = np.frombuffer(buf, dtype=dt, count=int(np.prod(dims)), offset=pos).reshape(dims)
            arr = arr.astype(dt.newbyteorder("="))
            pos += nbytes
            if name.startswith("adam.m."):
                m[name[7:]] = arr
            elif name.startswith("adam.v."):
                v[name[7:]] = arr
            else:
                params[name] = arr
        return cls(NetworkConfig.from_items(net_items), step=int(state.get("step", 0)), params=params,
                   adam_m=m, adam_v=v, adam_t=int(state.get("adam_t", 0)), seed=int(state.get("seed", 0)),
                   extra=extra)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def network_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> Network:
    net = build_network(ckpt.net_config, seed=0, dtype=dtype)
    ckpt.load_into(net)
    return net
