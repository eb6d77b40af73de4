"""Binary PGM (P5, 8-bit) read/write for rendered views."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, values: np.ndarray) -> None:
    """Write a [0, 1] float image as binary 8-bit PGM."""
    values = np.asarray(values)
    h, w = values.shape
    data = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM back to a [0, 1] float image."""
    raw = Path(path).read_bytes()
    return decode_pgm(raw)


def decode_pgm(raw: bytes) -> np.ndarray:
    fields = []
    pos = 0
    while len(fields) < 4:
        if raw[pos : pos + 1].isspace():
            pos += 1
            continue
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(float) / 255.0
