"""Binary checkpoint format.

Layout: magic ``ACORR1\\0``, little-endian uint32 header length, JSON header
(version, model config, parameter name/shape table, training seed and step),
then the raw float64 little-endian parameter values concatenated in header
order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CorruptFile, VersionMismatch
from .config import ModelConfig
from .model import CorrespondenceModel

MAGIC = b"ACORR1\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config: ModelConfig
    params: dict[str, np.ndarray]  # insertion-ordered
    seed: int
    step: int


def save_checkpoint(path, model: CorrespondenceModel, seed: int, step: int) -> None:
    names = []
    blobs = []
    for name, p in model.params.items():
        names.append({"name": name, "shape": list(p.data.shape)})
        blobs.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    header = json.dumps(
        {
            "version": FORMAT_VERSION,
            "config": model.config.to_json(),
            "params": names,
            "seed": seed,
            "step": step,
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    off = len(MAGIC) + 4
    if len(raw) < off + hlen:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format version {header.get('version')} != {FORMAT_VERSION}"
        )
    off += hlen
    params: dict[str, np.ndarray] = {}
    for rec in header["params"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(raw) < off + nbytes:
            raise CorruptFile(f"{path}: truncated values at {rec['name']!r}")
        params[rec["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=off)
            .reshape(shape)
            .copy()
        )
        off += nbytes
    if off != len(raw):
        raise CorruptFile(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(
        version=header["version"],
        config=ModelConfig.from_json(header["config"]),
        params=params,
        seed=int(header["seed"]),
        step=int(header["step"]),
    )


def load_model(path, expect_task: str | None = None) -> CorrespondenceModel:
    """Rebuild a model from a checkpoint; optionally enforce the task tag."""
    ckpt = load_checkpoint(path)
    if expect_task is not None and ckpt.config.task != expect_task:
        raise VersionMismatch(
            f"{path}: checkpoint task {ckpt.config.task!r}, expected {expect_task!r}"
        )
    model = CorrespondenceModel(ckpt.config, seed=ckpt.seed)
    names = model.params.names()
    if names != list(ckpt.params):
        raise VersionMismatch(f"{path}: parameter table does not match the architecture")
    for name in names:
        p = model.params[name]
        if p.data.shape != ckpt.params[name].shape:
            raise VersionMismatch(f"{path}: shape mismatch for {name!r}")
        p.data = ckpt.params[name].copy()
    return model
