"""Plume sequences, clip windows, train/test splits and the on-disk container format.

Container layout (all integers little-endian)::

    offset 0   4 bytes   magic b"STGN"
    offset 4   uint16    format version (FORMAT_VERSION)
    offset 6   uint32    header length n
    offset 10  n bytes   UTF-8 JSON header (sorted keys)
    offset 10+n uint32   CRC32 of the header bytes
    then                 payloads back to back

The header holds ``kind``, free-form ``meta`` and a ``payloads`` table of
``{name, dtype, shape, offset, nbytes, crc32}`` with offsets relative to the
start of the payload area.  Dtypes are explicit little-endian numpy codes.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"STGN"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class FormatError(ValueError):
    """A container file could not be decoded."""


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class ContractError(ValueError):
    pass


@dataclass
class PlumeSequence:
    frames: np.ndarray  # [F, H, W] uint8 occupancy
    direction: float  # radians, meteorological
    speed: float  # m/s
    mask: np.ndarray  # [H, W] uint8, 1 = building
    seq_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.mask = np.asarray(self.mask)
        if self.frames.ndim != 3 or self.frames.shape[0] < 2:
            raise ContractError(f"a sequence needs >= 2 frames of [H, W], got shape {self.frames.shape}")
        if self.mask.shape != self.frames.shape[1:]:
            raise ContractError(f"mask shape {self.mask.shape} != frame extent {self.frames.shape[1:]}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def extent(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def frames_float(self, dtype=np.float32) -> np.ndarray:
        return self.frames.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlumeSequence):
            return NotImplemented
        return (self.seq_id == other.seq_id and self.direction == other.direction
                and self.speed == other.speed and self.meta == other.meta
                and self.frames.dtype == other.frames.dtype
                and np.array_equal(self.frames, other.frames) and np.array_equal(self.mask, other.mask))


@dataclass
class Clip:
    inputs: np.ndarray  # [T, H, W]
    targets: np.ndarray  # [k, H, W]
    seq_id: str
    t0: int
    direction: float
    speed: float

    @property
    def frames(self) -> np.ndarray:
        return np.concatenate([self.inputs, self.targets], axis=0)


def clip_count(length: int, T: int, k: int, s: int) -> int:
    return (length - (T + k)) // s + 1


def make_clips(seq: PlumeSequence, T: int, k: int, s: int) -> list[Clip]:
    """Windows of ``T`` inputs and ``k`` targets starting at 0, s, 2s, ..."""
    if T < 1 or k < 0 or s < 1:
        raise ContractError(f"need T >= 1, k >= 0, s >= 1 (got T={T}, k={k}, s={s})")
    if T + k > seq.length:
        raise ContractError(f"T + k = {T + k} exceeds sequence length {seq.length}")
    frames = seq.frames_float()
    frames.setflags(write=False)
    clips = []
    for t0 in range(0, seq.length - (T + k) + 1, s):
        clips.append(Clip(inputs=frames[t0:t0 + T], targets=frames[t0 + T:t0 + T + k], seq_id=seq.seq_id,
                          t0=t0, direction=seq.direction, speed=seq.speed))
    return clips


def split(sequences: list, n_train: int, seed: int = 0) -> tuple[list, list]:
    """Seeded shuffle, then the first ``n_train`` go to training and the rest to testing."""
    if not 0 <= n_train < len(sequences):
        raise ContractError(f"n_train={n_train} must be in [0, {len(sequences)})")
    order = np.random.default_rng(seed).permutation(len(sequences))
    return [sequences[i] for i in order[:n_train]], [sequences[i] for i in order[n_train:]]


# -- container ----------------------------------------------------------------

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_hash(obj) -> str:
    return hashlib.sha256(_canonical_json(obj)).hexdigest()[:16]


def encode_container(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    table, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = np.ascontiguousarray(le).tobytes()
        table.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(blob), "crc32": zlib.crc32(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = _canonical_json({"kind": kind, "meta": meta, "payloads": table})
    return b"".join([_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)), header,
                     struct.pack("<I", zlib.crc32(header))] + blobs)


def decode_container(raw: bytes, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    if len(raw) < _PREFIX.size:
        raise TruncatedError("file shorter than the container prefix")
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"container version {version} is not supported (expected {FORMAT_VERSION})")
    start = _PREFIX.size
    if len(raw) < start + hlen + 4:
        raise TruncatedError("header truncated")
    header_bytes = raw[start:start + hlen]
    (hcrc,) = struct.unpack_from("<I", raw, start + hlen)
    if zlib.crc32(header_bytes) != hcrc:
        raise ChecksumError("header checksum mismatch")
    header = json.loads(header_bytes.decode("utf-8"))
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"expected a {expect_kind!r} container, found {kind!r}")
    base = start + hlen + 4
    arrays = {}
    for entry in header["payloads"]:
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(raw):
            raise TruncatedError(f"payload {entry['name']!r} truncated")
        blob = raw[lo:hi]
        if zlib.crc32(blob) != entry["crc32"]:
            raise ChecksumError(f"payload {entry['name']!r} checksum mismatch")
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(blob, dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="))
    return kind, header["meta"], arrays


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(kind, meta, arrays))
    return path


def read_container(path, expect_kind: str | None = None):
    return decode_container(Path(path).read_bytes(), expect_kind)


# -- typed stores -------------------------------------------------------------

SEQUENCE_EXT = ".stgs"
CHECKPOINT_EXT = ".stgc"
PREDICTION_EXT = ".stgp"


def save_sequence(path, seq: PlumeSequence) -> Path:
    meta = {"seq_id": seq.seq_id, "direction": seq.direction, "speed": seq.speed,
            "extent": list(seq.extent), "length": seq.length, "info": seq.meta}
    return write_container(path, "sequence", meta,
                           {"frames": seq.frames.astype(np.uint8), "mask": seq.mask.astype(np.uint8)})


def load_sequence(path) -> PlumeSequence:
    _, meta, arrays = read_container(path, "sequence")
    return PlumeSequence(frames=arrays["frames"], direction=meta["direction"], speed=meta["speed"],
                         mask=arrays["mask"], seq_id=meta["seq_id"], meta=meta["info"])


def load_sequence_dir(directory) -> list[PlumeSequence]:
    paths = sorted(Path(directory).glob(f"*{SEQUENCE_EXT}"))
    return [load_sequence(p) for p in paths]


def save_checkpoint(path, params, meta: dict) -> Path:
    arrays = {name: t.data if hasattr(t, "data") else np.asarray(t) for name, t in params.items()}
    meta = dict(meta)
    meta["parameter_order"] = list(arrays)
    return write_container(path, "checkpoint", meta, arrays)


def load_checkpoint(path):
    """Returns ``(ParameterSet, meta)``."""
    from .tensor import ParameterSet

    _, meta, arrays = read_container(path, "checkpoint")
    order = meta.get("parameter_order", list(arrays))
    return ParameterSet.from_arrays((name, arrays[name]) for name in order), meta


def save_predictions(path, probs: np.ndarray, meta: dict) -> Path:
    return write_container(path, "predictions", meta, {"probs": np.asarray(probs, dtype=np.float32)})


def load_predictions(path) -> tuple[np.ndarray, dict]:
    _, meta, arrays = read_container(path, "predictions")
    return arrays["probs"], meta
