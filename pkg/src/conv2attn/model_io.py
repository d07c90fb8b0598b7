"""Bit-exact binary archives for kernels, attention weights and classifiers.

Layout of a ".c2a" file:

    bytes 0..3    magic "C2A1"
    bytes 4..7    header length, unsigned 32-bit little-endian
    header        UTF-8 JSON: {"version", "dtype", "tensors", "metadata"}
    payload       raw little-endian row-major tensor data

Every tensor's byteOffset is relative to the payload start and 64-byte
aligned; the header is space-padded so the payload itself starts on a
64-byte file offset. All tensors in one archive share a dtype ("f32" or
"f64"). The metadata field carries the model kind plus whatever structure
the kind needs to rebuild and re-validate the object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .attention import MhsaWeights, RelativeBiasTable
from .construction import ConvertedModel, OffsetSet
from .convolution import ConvKernel
from .errors import (
    ArchiveError,
    ArchiveFormatError,
    ArchiveVersionError,
    InvariantViolationError,
    NumericError,
)
from .training import AttnClassifier, ConvClassifier

MAGIC = b"C2A1"
FORMAT_VERSION = 1
FILE_EXTENSION = ".c2a"
_ALIGN = 64

_DTYPE_TAGS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

KIND_CONV_KERNEL = "conv_kernel"
KIND_MHSA_WEIGHTS = "mhsa_weights"
KIND_CONVERTED = "converted_model"
KIND_CONV_CLASSIFIER = "conv_classifier"
KIND_ATTN_CLASSIFIER = "attn_classifier"


def _dtype_tag(arrays: list[np.ndarray]) -> str:
    kinds = {arr.dtype for arr in arrays}
    if len(kinds) != 1:
        raise ArchiveError(f"archive tensors must share one dtype, got {sorted(map(str, kinds))}")
    dtype = kinds.pop()
    if dtype not in _TAG_FOR_KIND:
        raise ArchiveError(f"unsupported tensor dtype {dtype}")
    return _TAG_FOR_KIND[dtype]


def _mhsa_tensors(weights: MhsaWeights) -> dict[str, np.ndarray]:
    return {
        "w_q": weights.w_q,
        "w_k": weights.w_k,
        "w_v": weights.w_v,
        "w_o": weights.w_o,
        "bias": np.stack([t.values for t in weights.bias]),
    }


def _mhsa_metadata(weights: MhsaWeights) -> dict:
    rows, cols = weights.grid
    return {
        "N_H": weights.n_heads,
        "d": weights.dim,
        "d_H": weights.d_head,
        "d_O": weights.d_out,
        "gridRows": rows,
        "gridCols": cols,
    }


def _describe(model) -> tuple[str, dict, dict[str, np.ndarray]]:
    if isinstance(model, ConvKernel):
        meta = {
            "kind": KIND_CONV_KERNEL,
            "K": model.size,
            "D_in": model.channels_in,
            "D_out": model.channels_out,
        }
        return KIND_CONV_KERNEL, meta, {"kernel": model.weights}
    if isinstance(model, ConvertedModel):
        meta = {
            "kind": KIND_CONVERTED,
            "P": model.patch,
            "K": model.kernel_size,
            "D_in": model.channels_in,
            "D_out": model.channels_out,
            "N_H": model.n_heads,
            "M": model.bias_scale,
            "boundaryMode": model.boundary,
            "headOffsetOrder": [list(o) for o in model.offsets.offsets],
        }
        meta.update(
            {k: v for k, v in _mhsa_metadata(model.weights).items() if k != "N_H"}
        )
        return KIND_CONVERTED, meta, _mhsa_tensors(model.weights)
    if isinstance(model, MhsaWeights):
        meta = {"kind": KIND_MHSA_WEIGHTS, **_mhsa_metadata(model)}
        return KIND_MHSA_WEIGHTS, meta, _mhsa_tensors(model)
    if isinstance(model, ConvClassifier):
        meta = {
            "kind": KIND_CONV_CLASSIFIER,
            "K": model.kernel.size,
            "D_in": model.kernel.channels_in,
            "D_out": model.kernel.channels_out,
            "numClasses": model.num_classes,
        }
        tensors = {
            "kernel": model.kernel.weights,
            "cls_w": model.cls_w,
            "cls_b": model.cls_b,
        }
        return KIND_CONV_CLASSIFIER, meta, tensors
    if isinstance(model, AttnClassifier):
        meta = {
            "kind": KIND_ATTN_CLASSIFIER,
            "P": model.patch,
            "boundaryMode": model.boundary,
            "rings": model.rings,
            "numClasses": model.num_classes,
            **_mhsa_metadata(model.mhsa),
        }
        tensors = _mhsa_tensors(model.mhsa)
        tensors["cls_w"] = model.cls_w
        tensors["cls_b"] = model.cls_b
        return KIND_ATTN_CLASSIFIER, meta, tensors
    raise ArchiveError(f"cannot serialize object of type {type(model).__name__}")


def save(model, path: str | Path) -> None:
    """Write a model archive; save -> load -> save is byte-identical."""
    kind, metadata, tensors = _describe(model)
    arrays = list(tensors.values())
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"tensor {name!r} contains non-finite values")
    tag = _dtype_tag(arrays)
    wire = _DTYPE_TAGS[tag]

    directory = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=wire).tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "byteOffset": offset})
        chunks.append(data)
        offset += len(data)
        pad = (-offset) % _ALIGN
        chunks.append(b"\0" * pad)
        offset += pad

    header = {
        "version": FORMAT_VERSION,
        "dtype": tag,
        "tensors": directory,
        "metadata": metadata,
    }
    header_bytes = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    pad = (-(len(MAGIC) + 4 + len(header_bytes))) % _ALIGN
    header_bytes += b" " * pad

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)


def _parse_header(raw: bytes) -> tuple[dict, bytes]:
    if len(raw) < len(MAGIC) + 4:
        raise ArchiveFormatError("file too short to be a weight archive")
    if raw[: len(MAGIC)] != MAGIC:
        raise ArchiveFormatError("bad magic bytes; not a weight archive")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_start = len(MAGIC) + 4
    if header_start + header_len > len(raw):
        raise ArchiveFormatError("declared header extends past end of file")
    try:
        header = json.loads(raw[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveFormatError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ArchiveFormatError("header must be a JSON object")
    return header, raw[header_start + header_len :]


def _read_tensors(header: dict, payload: bytes) -> dict[str, np.ndarray]:
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(f"unsupported archive version {version!r}")
    tag = header.get("dtype")
    if tag not in _DTYPE_TAGS:
        raise ArchiveFormatError(f"unknown dtype tag {tag!r}")
    wire = _DTYPE_TAGS[tag]
    entries = header.get("tensors")
    if not isinstance(entries, list):
        raise ArchiveFormatError("header tensor directory missing or malformed")

    tensors = {}
    spans = []
    for entry in entries:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            start = int(entry["byteOffset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchiveFormatError(f"malformed tensor directory entry: {entry!r}") from exc
        if name in tensors:
            raise ArchiveFormatError(f"duplicate tensor name {name!r}")
        if any(s < 0 for s in shape) or start < 0:
            raise ArchiveFormatError(f"negative shape or offset for tensor {name!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = start + count * wire.itemsize
        if end > len(payload):
            raise ArchiveFormatError(f"tensor {name!r} extends past end of payload")
        spans.append((start, end, name))
        arr = np.frombuffer(payload, dtype=wire, count=count, offset=start).reshape(shape)
        tensors[name] = arr.astype(wire.newbyteorder("="), copy=True)
    spans.sort()
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ArchiveFormatError(f"tensors {n0!r} and {n1!r} overlap in the payload")
    return tensors


def _require(metadata: dict, *names: str):
    values = []
    for name in names:
        if name not in metadata:
            raise ArchiveFormatError(f"metadata field {name!r} missing")
        values.append(metadata[name])
    return values if len(values) > 1 else values[0]


def _tensor(tensors: dict[str, np.ndarray], name: str) -> np.ndarray:
    if name not in tensors:
        raise ArchiveFormatError(f"archive is missing tensor {name!r}")
    return tensors[name]


def _build_mhsa(metadata: dict, tensors: dict[str, np.ndarray]) -> MhsaWeights:
    rows, cols = _require(metadata, "gridRows", "gridCols")
    bias = _tensor(tensors, "bias")
    if bias.ndim != 3:
        raise InvariantViolationError(f"bias tensor must be 3-dimensional, got {bias.shape}")
    tables = tuple(
        RelativeBiasTable(grid_rows=int(rows), grid_cols=int(cols), values=v) for v in bias
    )
    return MhsaWeights(
        w_q=_tensor(tensors, "w_q"),
        w_k=_tensor(tensors, "w_k"),
        w_v=_tensor(tensors, "w_v"),
        w_o=_tensor(tensors, "w_o"),
        bias=tables,
    )


def _check_declared(metadata: dict, weights: MhsaWeights) -> None:
    declared = {
        "N_H": weights.n_heads,
        "d": weights.dim,
        "d_H": weights.d_head,
        "d_O": weights.d_out,
    }
    for name, actual in declared.items():
        if name in metadata and int(metadata[name]) != actual:
            raise InvariantViolationError(
                f"metadata claims {name} = {metadata[name]} but tensors give {actual}"
            )


def load(path: str | Path):
    """Read an archive back into the exact model object that was saved."""
    raw = Path(path).read_bytes()
    header, payload = _parse_header(raw)
    tensors = _read_tensors(header, payload)
    metadata = header.get("metadata")
    if not isinstance(metadata, dict):
        raise ArchiveFormatError("metadata missing from header")
    kind = metadata.get("kind")

    try:
        if kind == KIND_CONV_KERNEL:
            kernel = ConvKernel(weights=_tensor(tensors, "kernel"))
            k, d_in, d_out = _require(metadata, "K", "D_in", "D_out")
            if (kernel.size, kernel.channels_in, kernel.channels_out) != (k, d_in, d_out):
                raise InvariantViolationError(
                    "kernel tensor shape disagrees with metadata"
                )
            return kernel
        if kind == KIND_MHSA_WEIGHTS:
            weights = _build_mhsa(metadata, tensors)
            _check_declared(metadata, weights)
            return weights
        if kind == KIND_CONVERTED:
            weights = _build_mhsa(metadata, tensors)
            _check_declared(metadata, weights)
            p, k, d_in, d_out, n_h, scale, mode, order = _require(
                metadata, "P", "K", "D_in", "D_out", "N_H", "M", "boundaryMode",
                "headOffsetOrder",
            )
            offsets = OffsetSet.for_conv(int(k), int(p))
            if [list(o) for o in offsets.offsets] != order:
                raise InvariantViolationError(
                    "headOffsetOrder does not match the row-major offset enumeration"
                )
            if int(n_h) != len(offsets):
                raise InvariantViolationError(
                    f"metadata claims N_H = {n_h} but kernel size {k} with patch {p} "
                    f"requires {len(offsets)} heads"
                )
            return ConvertedModel(
                weights=weights,
                patch=int(p),
                kernel_size=int(k),
                channels_in=int(d_in),
                channels_out=int(d_out),
                bias_scale=float(scale),
                boundary=str(mode),
                offsets=offsets,
            )
        if kind == KIND_CONV_CLASSIFIER:
            kernel = ConvKernel(weights=_tensor(tensors, "kernel"))
            return ConvClassifier(
                kernel=kernel,
                cls_w=_tensor(tensors, "cls_w"),
                cls_b=_tensor(tensors, "cls_b"),
            )
        if kind == KIND_ATTN_CLASSIFIER:
            weights = _build_mhsa(metadata, tensors)
            _check_declared(metadata, weights)
            p, mode, rings = _require(metadata, "P", "boundaryMode", "rings")
            return AttnClassifier(
                mhsa=weights,
                cls_w=_tensor(tensors, "cls_w"),
                cls_b=_tensor(tensors, "cls_b"),
                patch=int(p),
                boundary=str(mode),
                rings=int(rings),
            )
    except ArchiveError:
        raise
    except ValueError as exc:
        raise InvariantViolationError(f"archive contents violate model invariants: {exc}") from exc
    raise ArchiveFormatError(f"unknown model kind {kind!r}")
