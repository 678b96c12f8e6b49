"""Binary PGM (P5) export for frames, so no imaging library is needed."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

BACKGROUND, BUILDING, PLUME = 0, 128, 255


def frame_to_gray(frame, mask=None) -> np.ndarray:
    """Map a binary or probability frame to 8-bit gray; buildings are drawn mid-gray.

    Rows are flipped so north is at the top of the image.
    """
    f = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    gray = np.rint(f * PLUME).astype(np.uint8)
    if mask is not None:
        gray[np.asarray(mask, dtype=bool)] = BUILDING
    return gray[::-1]


def write_pgm(path, gray: np.ndarray) -> Path:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", raw)
    if m is None:
        raise ValueError("not an 8-bit binary PGM file")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw[m.end():m.end() + w * h], dtype=np.uint8).reshape(h, w)
