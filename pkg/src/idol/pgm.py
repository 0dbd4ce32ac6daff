"""16-bit binary PGM (P5) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

MAXVAL = 65535


def write_pgm(path, image, scale: float = MAXVAL) -> Path:
    """Write ``image * scale`` rounded to 16-bit gray; values are clipped to [0, 65535]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    q = np.clip(np.rint(img * scale), 0, MAXVAL).astype(">u2")
    h, w = img.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii") + q.tobytes())
    return path


def read_pgm(path, scale: float = MAXVAL) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return q.astype(np.float64) / scale
