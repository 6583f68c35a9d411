"""Binary checkpoints.

Layout: a UTF-8 text header, then raw data in header order.

    GIBBS-CKPT 1
    param <key> <dim>x<dim>...      float64 little-endian
    state <key> <dim>x<dim>...      float64 little-endian (batch-norm moments)
    mask <layer> <N>                int8 over {-1, +1}
    end
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "GIBBS-CKPT"
VERSION = 1


def _dims(shape):
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _shape(text):
    return () if text == "scalar" else tuple(int(d) for d in text.split("x"))


def save_checkpoint(net, path, masks=None):
    masks = {k: v for k, v in (net.masks if masks is None else masks).items() if v is not None}
    params = net.parameters()
    states = {}
    for name, bn in net.batchnorms().items():
        states[f"{name}.running_mean"] = bn.running_mean
        states[f"{name}.running_var"] = bn.running_var
    header = [f"{MAGIC} {VERSION}"]
    header += [f"param {k} {_dims(v.shape)}" for k, v in params.items()]
    header += [f"state {k} {_dims(v.shape)}" for k, v in states.items()]
    header += [f"mask {k} {np.asarray(v).size}" for k, v in masks.items()]
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for v in list(params.values()) + list(states.values()):
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        for v in masks.values():
            fh.write(np.ascontiguousarray(v, dtype=np.int8).ravel().tobytes())


def load_checkpoint(path):
    """Return ``(params, states, masks)`` dictionaries."""
    raw = Path(path).read_bytes()
    lines, pos = [], 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ValueError(f"{path}: truncated checkpoint header")
        line = raw[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or lines[0].split() != [MAGIC, str(VERSION)]:
        raise ValueError(f"{path}: not a version-{VERSION} checkpoint")
    params, states, masks = {}, {}, {}
    for line in lines[1:]:
        kind, key, spec = line.split()
        if kind in ("param", "state"):
            shape = _shape(spec)
            n = int(np.prod(shape)) * 8
            arr = np.frombuffer(raw[pos:pos + n], dtype="<f8").reshape(shape).astype(np.float64)
            (params if kind == "param" else states)[key] = arr
            pos += n
        elif kind == "mask":
            n = int(spec)
            masks[key] = np.frombuffer(raw[pos:pos + n], dtype=np.int8).copy()
            pos += n
        else:
            raise ValueError(f"{path}: unknown header entry {kind!r}")
    if pos != len(raw):
        raise ValueError(f"{path}: payload size does not match header")
    return params, states, masks


def restore_checkpoint(net, path):
    params, states, masks = load_checkpoint(path)
    net.set_parameters(params)
    for name, bn in net.batchnorms().items():
        if f"{name}.running_mean" in states:
            bn.running_mean = states[f"{name}.running_mean"].copy()
            bn.running_var = states[f"{name}.running_var"].copy()
    net.set_masks(masks)
    return net
