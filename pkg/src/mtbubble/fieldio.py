"""Grid fields as raw little-endian float64 plus a plain-text header."""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "mtbubble-field 1"


def save_field(stem, array, **meta) -> tuple[Path, Path]:
    """Write ``stem.bin`` and ``stem.hdr``; returns both paths."""
    stem = Path(stem)
    arr = np.ascontiguousarray(array, dtype="<f8")
    binp, hdrp = stem.with_suffix(".bin"), stem.with_suffix(".hdr")
    arr.tofile(binp)
    lines = [MAGIC, "shape = " + " ".join(str(s) for s in arr.shape), "dtype = <f8"]
    for k in sorted(meta):
        v = meta[k]
        if isinstance(v, (list, tuple, np.ndarray)):
            v = " ".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in np.ravel(v))
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    hdrp.write_text("\n".join(lines) + "\n")
    return binp, hdrp


def load_field(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    text = stem.with_suffix(".hdr").read_text().splitlines()
    if not text or text[0] != MAGIC:
        raise ValueError(f"{stem}.hdr is not a field header")
    meta = {}
    for line in text[1:]:
        k, _, v = line.partition(" = ")
        meta[k.strip()] = v.strip()
    shape = tuple(int(s) for s in meta.pop("shape").split())
    meta.pop("dtype", None)
    arr = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape(shape)
    return arr, meta
