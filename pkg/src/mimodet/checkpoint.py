"""Checkpoint serialization for GnnParams.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header
(format version, dims, rounds, metadata, tensor directory), then the named
tensors as row-major float64 little-endian, in directory order. Round-trips
are byte-exact; a JSON sidecar with training provenance sits next to the
binary when provided by the trainer.
"""

import json
import struct

import numpy as np

from .gnn import GnnDims, GnnParams, _spec

MAGIC = b"MDGNNCK1"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def save_params(params, path, metadata=None):
    """Write params to `path`; returns the header dict."""
    header = {
        "format_version": FORMAT_VERSION,
        "dims": {
            "n_u": params.dims.n_u,
            "n_h1": params.dims.n_h1,
            "n_h2": params.dims.n_h2,
            "m": params.dims.m,
            "rounds": params.dims.rounds,
        },
        "metadata": metadata or {},
        "tensors": [
            {"name": name, "shape": list(params.tensors[name].shape)}
            for name, _, _ in _spec(params.dims)
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for entry in header["tensors"]:
            arr = np.ascontiguousarray(params.tensors[entry["name"]], dtype="<f8")
            fh.write(arr.tobytes())
    return header


def load_params(path, expected_dims=None):
    """Read a checkpoint; returns (GnnParams, metadata).

    Version, dimension, and truncation problems raise distinct errors.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a recognized checkpoint file")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    body_start = len(MAGIC) + 4
    if len(raw) < body_start + header_len:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(raw[body_start : body_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {header.get('format_version')} "
            f"(expected {FORMAT_VERSION})"
        )
    dims = GnnDims(**header["dims"])
    if expected_dims is not None and dims != expected_dims:
        raise CheckpointDimensionError(
            f"{path}: checkpoint dims {dims} do not match expected {expected_dims}"
        )
    expected_entries = {name: shape for name, shape, _ in _spec(dims)}
    tensors = {}
    offset = body_start + header_len
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected_entries or shape != expected_entries[name]:
            raise CheckpointDimensionError(
                f"{path}: tensor {name!r} has shape {shape}, expected "
                f"{expected_entries.get(name)}"
            )
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(raw):
            raise CheckpointTruncatedError(f"{path}: tensor data truncated at {name!r}")
        tensors[name] = (
            np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)), offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    if set(tensors) != set(expected_entries):
        raise CheckpointDimensionError(f"{path}: tensor directory incomplete")
    return GnnParams(dims=dims, tensors=tensors), header.get("metadata", {})


def save_sidecar(path, provenance):
    """Write the JSON sidecar with dims and training provenance."""
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(provenance, fh, sort_keys=True, indent=2)
        fh.write("\n")
