"""Versioned binary container for weight arrays.

Byte layout (all integers little-endian)::

    magic        8 bytes   b"KNOCKNET"
    version      uint16    FORMAT_VERSION
    header_len   uint32
    header       header_len bytes of UTF-8 JSON (kind, topology, section list)
    sections     repeated, in header order:
        name_len uint16, name (UTF-8), count uint64, count x float64 (<f8)

The JSON header lists every section with its shape, so a reader can tell a
cut-off file from a malformed one and name the section that is incomplete.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..dataset import atomic_write
from ..exceptions import ModelFileError, UnsupportedModeError
from .layers import CONV_MODES
from .network import PARAM_ORDER, KnockNet, layer_lengths

MAGIC = b"KNOCKNET"
FORMAT_VERSION = 1
KIND_KNOCKNET = "knocknet"


def _pack(header, arrays):
    header = dict(header)
    header["sections"] = [{"name": n, "shape": list(np.shape(a))} for n, a in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HI", FORMAT_VERSION, len(blob)))
    out.write(blob)
    for name, a in arrays.items():
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(a, dtype="<f8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<Q", data.size))
        out.write(data.tobytes())
    return out.getvalue()


def write_container(path, header, arrays):
    """Write ``header`` (JSON-serialisable dict) and named float arrays atomically."""
    payload = _pack(header, arrays)
    atomic_write(path, lambda fh: fh.write(payload), mode="wb")


def _take(buf, pos, n, what, path):
    if pos + n > len(buf):
        raise ModelFileError(f"{path}: file truncated in {what}")
    return buf[pos:pos + n], pos + n


def read_container(path):
    """Return ``(header, arrays)`` from a container file."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ModelFileError(f"{path}: {exc.strerror or exc}") from None
    magic, pos = _take(buf, 0, len(MAGIC), "magic", path)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    raw, pos = _take(buf, pos, 6, "header", path)
    version, hlen = struct.unpack("<HI", raw)
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
    raw, pos = _take(buf, pos, hlen, "header", path)
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt header ({exc})") from None

    arrays = {}
    for sec in header.get("sections", []):
        name, shape = sec["name"], tuple(sec["shape"])
        what = f"section {name!r}"
        raw, pos = _take(buf, pos, 2, what, path)
        (nlen,) = struct.unpack("<H", raw)
        raw, pos = _take(buf, pos, nlen, what, path)
        if raw.decode("utf-8", errors="replace") != name:
            raise ModelFileError(f"{path}: expected {what}, found {raw!r}")
        raw, pos = _take(buf, pos, 8, what, path)
        (count,) = struct.unpack("<Q", raw)
        if count != int(np.prod(shape)):
            raise ModelFileError(f"{path}: {what} holds {count} values, shape {shape} needs {int(np.prod(shape))}")
        raw, pos = _take(buf, pos, 8 * count, what, path)
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(float).reshape(shape)
    if pos != len(buf):
        raise ModelFileError(f"{path}: {len(buf) - pos} trailing bytes after last section")
    return header, arrays


def save_model(net, path):
    header = {
        "kind": KIND_KNOCKNET,
        "mode": net.mode,
        "kernel_size": net.kernel_size,
        "input_length": net.input_length,
        "zero_mean_input": net.zero_mean_input,
        "layer_lengths": layer_lengths(net.kernel_size, net.input_length),
    }
    write_container(path, header, {name: net.params[name] for name in PARAM_ORDER})


def load_model(path):
    header, arrays = read_container(path)
    if header.get("kind") != KIND_KNOCKNET:
        raise ModelFileError(f"{path}: holds a {header.get('kind')!r} object, not a network")
    mode = header.get("mode")
    if mode not in CONV_MODES:
        raise UnsupportedModeError(f"{path}: unsupported convolution mode {mode!r}")
    net = KnockNet(int(header["kernel_size"]), int(header["input_length"]), mode,
                   zero_mean_input=bool(header.get("zero_mean_input", False)))
    expected = net.param_shapes()
    for name in PARAM_ORDER:
        if name not in arrays:
            raise ModelFileError(f"{path}: missing section {name!r}")
        if arrays[name].shape != tuple(expected[name]):
            raise ModelFileError(f"{path}: section {name!r} has shape {arrays[name].shape}, expected {expected[name]}")
        net.params[name] = arrays[name]
    return net
