"""Plain-text mask files.

    GIBBS-MASK 1
    layer <name> <N>
    <N whitespace-separated tokens, each -1 or 1>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

HEADER = "GIBBS-MASK"
VERSION = "1"


class MaskFormatError(ValueError):
    pass


def export_mask(masks: dict, path):
    lines = [f"{HEADER} {VERSION}"]
    for name, x in masks.items():
        x = np.asarray(x).ravel()
        if not np.all((x == 1) | (x == -1)):
            raise MaskFormatError(f"mask {name} has entries outside {{-1, 1}}")
        if not name or any(ch.isspace() for ch in name):
            raise MaskFormatError(f"layer name {name!r} must be non-empty without whitespace")
        lines.append(f"layer {name} {x.size}")
        lines.append(" ".join("1" if v == 1 else "-1" for v in x.tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_mask(path) -> dict[str, np.ndarray]:
    tokens = Path(path).read_text(encoding="utf-8").split()
    if tokens[:2] != [HEADER, VERSION]:
        raise MaskFormatError(f"{path}: expected header '{HEADER} {VERSION}'")
    masks = {}
    i = 2
    while i < len(tokens):
        if tokens[i] != "layer" or i + 2 >= len(tokens):
            raise MaskFormatError(f"{path}: expected 'layer <name> <N>' at token {i}")
        name = tokens[i + 1]
        try:
            n = int(tokens[i + 2])
        except ValueError:
            raise MaskFormatError(f"{path}: bad count {tokens[i + 2]!r} for layer {name}") from None
        body = tokens[i + 3:i + 3 + n]
        if len(body) != n:
            raise MaskFormatError(f"{path}: layer {name} declares {n} entries, found {len(body)}")
        bad = [t for t in body if t not in ("1", "-1")]
        if bad:
            raise MaskFormatError(f"{path}: layer {name} has invalid token {bad[0]!r}")
        masks[name] = np.array([1 if t == "1" else -1 for t in body], dtype=np.int8)
        i += 3 + n
    return masks
