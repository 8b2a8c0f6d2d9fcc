"""Named parameter store and binary checkpoints.

Checkpoints are two files: a raw little-endian float32 blob and a JSON
manifest next to it listing names, shapes and byte offsets plus training
step, config hash, optimizer state and the generator state needed to
resume a run exactly.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from ..errors import InvalidCheckpointError, InvalidConfigError, ShapeMismatchError

CKPT_FORMAT = "pose9d-ckpt-v1"


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with values beyond 2 std redrawn until inside."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out


class ParamStore:
    """Named parameters with paired gradient buffers.

    Iteration follows insertion order, so update loops are reproducible.
    """

    def __init__(self, dtype=np.float32, seed: int = 0):
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, shape, init: str = "trunc_normal",
            std: float = 0.02) -> np.ndarray:
        if name in self._params:
            raise InvalidConfigError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if init == "zeros":
            w = np.zeros(shape, dtype=self.dtype)
        elif init == "ones":
            w = np.ones(shape, dtype=self.dtype)
        elif init == "trunc_normal":
            w = trunc_normal(self.rng, shape, std).astype(self.dtype)
        else:
            raise InvalidConfigError(f"unknown init {init!r}")
        self._params[name] = w
        self._grads[name] = np.zeros(shape, dtype=self.dtype)
        return w

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, g: np.ndarray) -> None:
        buf = self._grads[name]
        if g.shape != buf.shape:
            raise ShapeMismatchError(
                f"grad for {name!r}: {g.shape} vs param {buf.shape}")
        buf += g

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._params.values())

    def state_dict(self) -> dict:
        return {k: v.copy() for k, v in self._params.items()}

    def load_state(self, state: dict) -> None:
        for name, buf in self._params.items():
            if name not in state:
                raise InvalidCheckpointError(f"missing tensor {name!r}")
            src = np.asarray(state[name])
            if src.shape != buf.shape:
                raise InvalidCheckpointError(
                    f"tensor {name!r}: shape {src.shape} vs expected {buf.shape}")
            buf[...] = src.astype(self.dtype)
        extra = set(state) - set(self._params)
        if extra:
            raise InvalidCheckpointError(f"unexpected tensors {sorted(extra)}")


def save_checkpoint(path, store: ParamStore, step: int, config_hash: str,
                    optimizer: dict | None = None,
                    rng_state: dict | None = None,
                    extra: dict | None = None) -> None:
    """Write <path> (float32 blob) and <path>.json (manifest).

    extra is an arbitrary JSON-safe payload (e.g. run configuration)
    stored verbatim in the manifest.
    """
    path = Path(path)
    tensors = []
    chunks = []
    offset = 0
    named = dict(store.state_dict())
    if optimizer is not None:
        for key in ("m", "v"):
            for pname, arr in optimizer[key].items():
                named[f"opt.{key}.{pname}"] = arr
    for name, arr in named.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": CKPT_FORMAT,
        "step": int(step),
        "config_hash": config_hash,
        "crc32": zlib.crc32(blob),
        "tensors": tensors,
        "optimizer": None if optimizer is None else {"t": int(optimizer["t"])},
        "rng_state": rng_state,
        "extra": extra or {},
    }
    path.write_bytes(blob)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(manifest, indent=1))


def load_checkpoint(path):
    """Return (tensors: name -> float32 array, manifest dict).

    Raises InvalidCheckpointError on any structural inconsistency.
    """
    path = Path(path)
    mpath = path.with_suffix(path.suffix + ".json")
    if not path.exists() or not mpath.exists():
        raise InvalidCheckpointError(f"missing checkpoint file(s) at {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise InvalidCheckpointError(f"manifest is not valid JSON: {e}") from e
    if manifest.get("format") != CKPT_FORMAT:
        raise InvalidCheckpointError(f"unknown format {manifest.get('format')!r}")
    blob = path.read_bytes()
    expected = sum(t["nbytes"] for t in manifest["tensors"])
    if len(blob) != expected:
        raise InvalidCheckpointError(
            f"blob is {len(blob)} bytes, manifest says {expected}")
    if zlib.crc32(blob) != manifest["crc32"]:
        raise InvalidCheckpointError("checksum mismatch")
    tensors = {}
    for entry in manifest["tensors"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return tensors, manifest
