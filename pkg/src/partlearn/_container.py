"""Shared on-disk container: JSON header, packed float64 payload, checksum.

Layout of a container file::

    #partlearn-<kind> <version>\n
    <header byte count>\n
    <header JSON, utf-8, indented>
    <arrays, row-major float64 little-endian, in manifest order>
    <32-byte sha256 of everything above>

The header is plain JSON so two files can be diffed with text tools up to
the payload; the trailing digest covers header and payload, so truncation
or bit corruption anywhere surfaces as a checksum failure.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

__all__ = [
    "ContainerError",
    "CorruptHeaderError",
    "FormatVersionError",
    "ChecksumError",
    "write_container",
    "read_container",
]

_MAGIC_PREFIX = "#partlearn-"
_DIGEST_BYTES = 32


class ContainerError(ValueError):
    """Base class for container file problems."""


class CorruptHeaderError(ContainerError):
    pass


class FormatVersionError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


def write_container(path, kind: str, header: dict, arrays: dict, version: int = 1):
    """Write `arrays` (name -> ndarray) under `header` to `path`.

    The header must not already contain an ``arrays`` key; the manifest is
    derived from the given dict, whose order fixes the payload order.
    """
    if "arrays" in header:
        raise ValueError("header key 'arrays' is reserved for the manifest")
    header = dict(header)
    header["arrays"] = [
        {"name": name, "shape": list(np.asarray(a).shape)} for name, a in arrays.items()
    ]
    blob = bytearray()
    blob += f"{_MAGIC_PREFIX}{kind} {version}\n".encode("ascii")
    header_bytes = (json.dumps(header, indent=2) + "\n").encode("utf-8")
    blob += f"{len(header_bytes)}\n".encode("ascii")
    blob += header_bytes
    for a in arrays.values():
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        blob += a.astype("<f8", copy=False).tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def read_container(path, kind: str, version: int = 1) -> tuple[dict, dict]:
    """Read a container, verifying magic, version, and checksum.

    Returns ``(header, arrays)`` with arrays as float64 ndarrays.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    nl = blob.find(b"\n")
    if nl < 0:
        raise CorruptHeaderError(f"{path}: no header line")
    try:
        magic = blob[:nl].decode("ascii")
    except UnicodeDecodeError as exc:
        raise CorruptHeaderError(f"{path}: unreadable magic line") from exc
    if not magic.startswith(_MAGIC_PREFIX):
        raise CorruptHeaderError(f"{path}: not a partlearn container")
    try:
        found_kind, found_version = magic[len(_MAGIC_PREFIX):].rsplit(" ", 1)
        found_version = int(found_version)
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: malformed magic line {magic!r}") from exc
    if found_kind != kind:
        raise CorruptHeaderError(
            f"{path}: container holds {found_kind!r}, expected {kind!r}"
        )
    if found_version != version:
        raise FormatVersionError(
            f"{path}: format version {found_version}, reader supports {version}"
        )

    nl2 = blob.find(b"\n", nl + 1)
    if nl2 < 0:
        raise CorruptHeaderError(f"{path}: missing header length line")
    try:
        header_len = int(blob[nl + 1:nl2])
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: bad header length") from exc
    header_start = nl2 + 1
    header_end = header_start + header_len
    if header_end > len(blob):
        raise CorruptHeaderError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeaderError(f"{path}: header is not valid JSON") from exc
    if not isinstance(header, dict) or "arrays" not in header:
        raise CorruptHeaderError(f"{path}: header lacks an array manifest")

    manifest = header["arrays"]
    payload_len = sum(8 * int(np.prod(entry["shape"])) for entry in manifest)
    expected = header_end + payload_len + _DIGEST_BYTES
    if len(blob) != expected:
        raise ChecksumError(
            f"{path}: file is {len(blob)} bytes, manifest implies {expected}"
        )
    digest = hashlib.sha256(blob[:-_DIGEST_BYTES]).digest()
    if digest != blob[-_DIGEST_BYTES:]:
        raise ChecksumError(f"{path}: sha256 mismatch, file is corrupt")

    arrays = {}
    offset = header_end
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape))
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = a.reshape(shape).astype(float, copy=True)
        offset += 8 * count
    return header, arrays
