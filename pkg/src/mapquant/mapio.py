"""Scene map data model, canonical JSON maps and the binary compressed container.

Input maps are JSON::

    {"num_cameras": N, "descriptor_dim": D,
     "points": [{"id": u64, "xyz": [x, y, z], "descriptor": [...D floats], "cameras": [u32, ...]}, ...]}

Descriptors are float32 values, positions float64. Compressed maps use a
little-endian container starting with ``b"MQZ1"`` and ending in a CRC-32 of
everything before it (see :func:`write_compressed`).
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import CompressedFormatError, MapFormatError
from .pq import Codebook

U64_MAX = 2**64 - 1
U32_MAX = 2**32 - 1

MAGIC = b"MQZ1"
# magic, version, M, K, D, alpha, tau, original_point_count
_HEADER = struct.Struct("<4sIIIIddQ")
_COUNT = struct.Struct("<Q")
_CRC = struct.Struct("<I")
_ENTRY_HEAD = struct.Struct("<Q3d")


def _f32(value: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.float32(value))


@dataclass(frozen=True)
class MapPoint:
    id: int
    position: tuple[float, float, float]
    descriptor: tuple[float, ...]
    cameras: tuple[int, ...]

    def __post_init__(self):
        # normalise to the canonical representation: float32 descriptor, sorted cameras
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "descriptor", tuple(_f32(v) for v in self.descriptor))
        object.__setattr__(self, "cameras", tuple(sorted(int(c) for c in self.cameras)))


@dataclass(frozen=True)
class SceneMap:
    num_cameras: int
    descriptor_dim: int
    points: tuple[MapPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        problems = _validate(self)
        if problems:
            raise MapFormatError(problems)

    def __len__(self):
        return len(self.points)

    @property
    def ids(self) -> np.ndarray:
        return np.array([p.id for p in self.points], dtype=np.uint64)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.points], dtype=np.float64).reshape(-1, 3)

    @property
    def descriptors(self) -> np.ndarray:
        return np.array([p.descriptor for p in self.points], dtype=np.float32).reshape(-1, self.descriptor_dim)

    @property
    def observation_counts(self) -> np.ndarray:
        return np.array([len(p.cameras) for p in self.points], dtype=np.int64)

    def subset(self, indices) -> "SceneMap":
        return SceneMap(self.num_cameras, self.descriptor_dim, tuple(self.points[int(i)] for i in indices))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _validate(m: SceneMap) -> list[str]:
    problems = []
    if not _is_int(m.num_cameras) or m.num_cameras < 1:
        problems.append(f"num_cameras must be a positive integer, got {m.num_cameras!r}")
    if not _is_int(m.descriptor_dim) or m.descriptor_dim < 1:
        problems.append(f"descriptor_dim must be a positive integer, got {m.descriptor_dim!r}")
    seen = set()
    for p in m.points:
        if not _is_int(p.id) or not 0 <= p.id <= U64_MAX:
            problems.append(f"point id out of u64 range at id={p.id!r}")
        elif p.id in seen:
            problems.append(f"duplicate point id at id={p.id}")
        seen.add(p.id)
        if len(p.position) != 3:
            problems.append(f"xyz must have 3 components at id={p.id}")
        elif not all(math.isfinite(v) for v in p.position):
            problems.append(f"non-finite position at id={p.id}")
        if _is_int(m.descriptor_dim) and len(p.descriptor) != m.descriptor_dim:
            problems.append(
                f"descriptor length mismatch at id={p.id}: got {len(p.descriptor)}, expected {m.descriptor_dim}"
            )
        if not all(math.isfinite(v) for v in p.descriptor):
            problems.append(f"non-finite descriptor value at id={p.id}")
        if not p.cameras:
            problems.append(f"point observed by no cameras at id={p.id}")
        if len(set(p.cameras)) != len(p.cameras):
            problems.append(f"duplicate camera index at id={p.id}")
        if _is_int(m.num_cameras):
            bad = [c for c in p.cameras if not 0 <= c < m.num_cameras]
            if bad:
                problems.append(f"camera index out of range at id={p.id}: {bad} not in [0, {m.num_cameras})")
    return problems


# ---------------------------------------------------------------------------
# JSON maps


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def parse_map(text) -> SceneMap:
    """Parse and validate a JSON map document.

    Every problem found is reported in one :class:`MapFormatError`.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MapFormatError(f"invalid UTF-8 at byte offset {e.start}") from None
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise MapFormatError(f"malformed document at byte offset {len(text[:e.pos].encode())}: {e.msg}") from None
    except ValueError as e:
        raise MapFormatError(f"malformed document: {e}") from None

    if not isinstance(doc, dict):
        raise MapFormatError("malformed document: top level must be an object")
    problems = []
    missing = [k for k in ("num_cameras", "descriptor_dim", "points") if k not in doc]
    if missing:
        raise MapFormatError(f"malformed document: missing keys {missing}")
    extra = sorted(set(doc) - {"num_cameras", "descriptor_dim", "points"})
    if extra:
        problems.append(f"malformed document: unknown keys {extra}")
    if not isinstance(doc["points"], list):
        raise MapFormatError("malformed document: 'points' must be a list")

    points = []
    for pos, raw in enumerate(doc["points"]):
        where = f"points[{pos}]"
        if not isinstance(raw, dict):
            problems.append(f"malformed point at {where}")
            continue
        pid = raw.get("id", None)
        tag = f"id={pid}" if _is_int(pid) else where
        keys = {"id", "xyz", "descriptor", "cameras"}
        if set(raw) != keys:
            problems.append(f"malformed point at {tag}: expected keys {sorted(keys)}, got {sorted(raw)}")
            continue
        xyz, desc, cams = raw["xyz"], raw["descriptor"], raw["cameras"]
        if not _is_int(pid):
            problems.append(f"point id must be an integer at {where}")
            continue
        if not isinstance(xyz, list) or not all(_is_number(v) for v in xyz):
            problems.append(f"xyz must be a list of numbers at {tag}")
            continue
        if not isinstance(desc, list) or not all(_is_number(v) for v in desc):
            problems.append(f"descriptor must be a list of numbers at {tag}")
            continue
        if not isinstance(cams, list) or not all(_is_int(c) for c in cams):
            problems.append(f"cameras must be a list of integers at {tag}")
            continue
        if any(not 0 <= c <= U32_MAX for c in cams):
            problems.append(f"camera index out of u32 range at {tag}")
            continue
        if any(math.isfinite(v) and math.isinf(_f32(v)) for v in desc):
            problems.append(f"descriptor value overflows float32 at {tag}")
            continue
        # duplicates must survive to validation, so no set() here
        try:
            points.append(MapPoint(pid, tuple(xyz), tuple(desc), tuple(cams)))
        except OverflowError:
            problems.append(f"number too large for a float at {tag}")

    try:
        m = SceneMap(doc["num_cameras"], doc["descriptor_dim"], tuple(points))
    except MapFormatError as e:
        raise MapFormatError(problems + e.problems) from None
    if problems:
        raise MapFormatError(problems)
    return m


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _fmt64(v: float) -> str:
    return repr(float(v))


def _fmt32(v: float) -> str:
    # shortest decimal that round-trips through float32
    return str(np.float32(v))


def serialize_map(m: SceneMap) -> str:
    """Canonical JSON text: fixed key order, one point per line, sorted cameras."""
    lines = [f'{{"num_cameras": {m.num_cameras}, "descriptor_dim": {m.descriptor_dim}, "points": [']
    for i, p in enumerate(m.points):
        xyz = ", ".join(_fmt64(v) for v in p.position)
        desc = ", ".join(_fmt32(v) for v in p.descriptor)
        cams = ", ".join(str(c) for c in p.cameras)
        sep = "," if i < len(m.points) - 1 else ""
        lines.append(f'  {{"id": {p.id}, "xyz": [{xyz}], "descriptor": [{desc}], "cameras": [{cams}]}}{sep}')
    lines.append("]}")
    return "\n".join(lines) + "\n"


def load_map(path) -> SceneMap:
    with open(path, "rb") as fh:
        return parse_map(fh.read())


def save_map(m: SceneMap, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_map(m))


# ---------------------------------------------------------------------------
# Compressed container


@dataclass(frozen=True, eq=False)
class CompressedMap:
    """Selected points with their PQ codes and the codebook that decodes them.

    ``ids`` (n,) uint64, ``xyz`` (n, 3) float64 and ``codes`` (n, M) int64 are
    parallel arrays; ``entries()`` yields them as ``(id, xyz, code)`` rows.
    """

    codebook: Codebook
    ids: np.ndarray
    xyz: np.ndarray
    codes: np.ndarray
    alpha: float
    tau: float
    original_point_count: int

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.uint64).reshape(-1)
        n = ids.shape[0]
        xyz = np.array(self.xyz, dtype=np.float64).reshape(n, 3)
        codes = np.array(self.codes, dtype=np.int64).reshape(n, self.codebook.M)
        for a in (ids, xyz, codes):
            a.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "original_point_count", int(self.original_point_count))

        if codes.size and (codes.min() < 0 or codes.max() >= self.codebook.K):
            raise CompressedFormatError(f"code index out of range [0, {self.codebook.K})")
        if n > self.original_point_count:
            raise CompressedFormatError(
                f"{n} entries exceed the original point count {self.original_point_count}"
            )
        if not 0 < self.alpha <= 1:
            raise CompressedFormatError(f"alpha must be in (0, 1], got {self.alpha}")
        if not self.tau >= 0:
            raise CompressedFormatError(f"tau must be >= 0, got {self.tau}")

    def __len__(self):
        return self.ids.shape[0]

    def entries(self):
        for i in range(len(self)):
            yield int(self.ids[i]), tuple(float(v) for v in self.xyz[i]), tuple(int(c) for c in self.codes[i])

    def __eq__(self, other):
        if not isinstance(other, CompressedMap):
            return NotImplemented
        return (
            self.codebook == other.codebook
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.codes, other.codes)
            and self.alpha == other.alpha
            and self.tau == other.tau
            and self.original_point_count == other.original_point_count
        )

    __hash__ = None


def _code_dtype(K: int):
    if K <= 256:
        return 1, np.dtype("u1")
    if K <= 65536:
        return 2, np.dtype("<u2")
    raise CompressedFormatError(f"K={K} exceeds the 65536 centroids a u16 index can address")


def compressed_size(M: int, K: int, D: int, n_entries: int) -> int:
    """Byte length of a container with the given shape."""
    version, dt = _code_dtype(K)
    entry = _ENTRY_HEAD.size + M * dt.itemsize
    return _HEADER.size + 4 * K * D + _COUNT.size + n_entries * entry + _CRC.size


def write_compressed(cm: CompressedMap) -> bytes:
    """Serialise to the little-endian container.

    Layout: magic ``MQZ1``; u32 version (1: u8 codes, 2: u16 codes); u32 M; u32 K;
    u32 D; f64 alpha; f64 tau; u64 original_point_count; M*K*D' float32
    centroids in (m, k, d') order; u64 entry_count; per entry u64 id, 3 x f64
    xyz, M code indices; u32 CRC-32 of all preceding bytes.
    """
    cb = cm.codebook
    version, dt = _code_dtype(cb.K)
    n = len(cm)
    head = _HEADER.pack(MAGIC, version, cb.M, cb.K, cb.dim, cm.alpha, cm.tau, cm.original_point_count)
    rec = np.dtype([("id", "<u8"), ("xyz", "<f8", (3,)), ("code", dt, (cb.M,))])
    entries = np.empty(n, dtype=rec)
    entries["id"] = cm.ids
    entries["xyz"] = cm.xyz
    entries["code"] = cm.codes
    body = b"".join([
        head,
        cb.centroids.astype("<f4").tobytes(),
        _COUNT.pack(n),
        entries.tobytes(),
    ])
    return body + _CRC.pack(zlib.crc32(body))


def read_compressed(data: bytes) -> CompressedMap:
    data = bytes(data)
    if data[:4] != MAGIC:
        raise CompressedFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size + _COUNT.size + _CRC.size:
        raise CompressedFormatError(f"truncated payload: {len(data)} bytes is shorter than the header")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    actual = zlib.crc32(body)
    if crc != actual:
        raise CompressedFormatError(f"checksum mismatch: stored {crc:#010x}, computed {actual:#010x}")

    _, version, M, K, D, alpha, tau, original = _HEADER.unpack_from(body, 0)
    if version not in (1, 2):
        raise CompressedFormatError(f"unsupported version {version}")
    if M < 1 or K < 1 or D < 1 or D % M:
        raise CompressedFormatError(f"inconsistent header M={M} K={K} D={D}")
    expected_version, dt = _code_dtype(K)
    if version != expected_version:
        raise CompressedFormatError(f"version {version} does not match K={K}")
    off = _HEADER.size
    cb_bytes = 4 * K * D
    if len(body) < off + cb_bytes + _COUNT.size:
        raise CompressedFormatError("truncated payload: codebook incomplete")
    centroids = np.frombuffer(body, dtype="<f4", count=K * D, offset=off).reshape(M, K, D // M)
    off += cb_bytes
    (n,) = _COUNT.unpack_from(body, off)
    off += _COUNT.size
    rec = np.dtype([("id", "<u8"), ("xyz", "<f8", (3,)), ("code", dt, (M,))])
    if len(body) - off != n * rec.itemsize:
        raise CompressedFormatError(
            f"truncated payload: {n} entries need {n * rec.itemsize} bytes, found {len(body) - off}"
        )
    entries = np.frombuffer(body, dtype=rec, count=n, offset=off)
    codes = entries["code"].astype(np.int64)
    if codes.size and codes.max() >= K:
        raise CompressedFormatError(f"code index {int(codes.max())} >= K={K}")
    try:
        return CompressedMap(
            codebook=Codebook(centroids),
            ids=entries["id"],
            xyz=entries["xyz"],
            codes=codes,
            alpha=alpha,
            tau=tau,
            original_point_count=original,
        )
    except Exception as e:  # noqa: BLE001 - re-labelled as a format error
        raise CompressedFormatError(str(e)) from None


def load_compressed(path) -> CompressedMap:
    with open(path, "rb") as fh:
        return read_compressed(fh.read())


def save_compressed(cm: CompressedMap, path):
    with open(path, "wb") as fh:
        fh.write(write_compressed(cm))
