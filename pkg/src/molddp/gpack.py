"""gpack: a packed, sharded container for graph datasets.

A container is a directory holding ``data.<k>`` subfiles and one
``meta.idx`` index. Node rows, directed edges, edge attributes and
targets of all graphs form four global arrays; graph ``g`` owns rows
``[node_offset[g], node_offset[g+1])`` of ``x`` and likewise for edges.
Physically every graph lives in exactly one subfile; the index records
which one and where. See FORMAT.md for the byte layout.

Writers are independent: writer ``w`` of ``W`` owns subfiles ``s`` with
``s % W == w`` and fills them round-robin. :func:`merge_index` stitches
the per-writer partial indexes together, numbering graphs in
(writer, local position) order.
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphenc import GraphSample

MAGIC = b"GPK1"
DATA_MAGIC = b"GPKD"
PART_MAGIC = b"GPKP"
VERSION = 1
CODEC_NONE = 0

VARIABLES = ("x", "edge_index", "edge_attr", "y")
_DTYPES = {"x": "<f4", "edge_index": "<i8", "edge_attr": "<f4", "y": "<f4",
           "node_offset": "<i8", "edge_offset": "<i8"}
_HEADER = struct.Struct("<4sIII")       # magic, version, n_sections | subfile id, reserved
_SECTION = struct.Struct("<4sQ")         # tag, payload length
_EXTENT = struct.Struct("<QQQII")        # offset, nbytes, rows, crc32, pad
_COUNTS = struct.Struct("<QQQIB3x")      # graphs, nodes, edges, subfiles, codec


class GpackError(Exception):
    pass


class PathExists(GpackError):
    pass


class InvalidShardConfig(GpackError):
    pass


class SchemaMismatch(GpackError):
    pass


class MissingSubfile(GpackError):
    pass


class CorruptIndex(GpackError):
    pass


class BadMagic(GpackError):
    pass


class VersionUnsupported(GpackError):
    pass


class IndexOutOfRange(GpackError, IndexError):
    pass


@dataclass(frozen=True)
class GpackSchema:
    node_feature_count: int
    edge_feature_count: int
    target_count: int = 1
    vocab: tuple[str, ...] = ()
    codec: int = CODEC_NONE
    extra: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def variables(self) -> list[tuple[str, str, tuple[str, str]]]:
        """(name, dtype, per-record shape rule) for every stored array."""
        return [
            ("x", _DTYPES["x"], ("nodes", str(self.node_feature_count))),
            ("edge_index", _DTYPES["edge_index"], ("2", "edges")),
            ("edge_attr", _DTYPES["edge_attr"], ("edges", str(self.edge_feature_count))),
            ("y", _DTYPES["y"], ("1", str(self.target_count))),
            ("node_offset", _DTYPES["node_offset"], ("graphs+1",)),
            ("edge_offset", _DTYPES["edge_offset"], ("graphs+1",)),
        ]

    def to_json(self) -> bytes:
        doc = {
            "variables": [{"name": n, "dtype": d, "shape": list(s)} for n, d, s in self.variables],
            "node_feature_count": self.node_feature_count,
            "edge_feature_count": self.edge_feature_count,
            "target_count": self.target_count,
            "vocab": list(self.vocab),
            "codec": self.codec,
            "extra": self.extra,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, raw: bytes) -> GpackSchema:
        doc = json.loads(raw)
        names = [v["name"] for v in doc["variables"]]
        if sorted(names) != sorted(VARIABLES + ("node_offset", "edge_offset")):
            raise CorruptIndex(f"schema variables {names} do not match the graph layout")
        return cls(doc["node_feature_count"], doc["edge_feature_count"], doc["target_count"],
                   tuple(doc["vocab"]), doc["codec"], doc.get("extra", {}))


@dataclass
class DatasetSummary:
    num_graphs: int
    total_nodes: int
    total_edges: int

    @property
    def avg_nodes_per_graph(self) -> float:
        return self.total_nodes / self.num_graphs if self.num_graphs else 0.0

    def line(self, name: str = "") -> str:
        return (f"{name + ': ' if name else ''}graphs={self.num_graphs} nodes={self.total_nodes} "
                f"edges={self.total_edges} avg_nodes_per_graph={self.avg_nodes_per_graph:.1f}")


@dataclass
class GpackDataset:
    path: Path
    schema: GpackSchema
    num_graphs: int
    num_subfiles: int
    ids: np.ndarray
    node_offset: np.ndarray
    edge_offset: np.ndarray
    subfile: np.ndarray
    local_node: np.ndarray
    local_edge: np.ndarray
    extents: np.ndarray     # (subfiles, 4, 3): offset, nbytes, rows per variable
    crcs: np.ndarray        # (subfiles, 4)
    subfile_sizes: np.ndarray

    def summary(self) -> DatasetSummary:
        return DatasetSummary(self.num_graphs, int(self.node_offset[-1]), int(self.edge_offset[-1]))


# -- low-level section io ---------------------------------------------------

def _write_sections(path: Path, magic: bytes, sections: list[tuple[bytes, bytes]]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(magic, VERSION, len(sections), 0))
        for tag, payload in sections:
            f.write(_SECTION.pack(tag, len(payload)))
            f.write(payload)
            f.write(struct.pack("<I", zlib.crc32(payload)))
    os.replace(tmp, path)


def _read_sections(path: Path, magic: bytes) -> dict[bytes, bytes]:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CorruptIndex(f"{path} not found; container not finalized?") from None
    if len(raw) < _HEADER.size:
        raise BadMagic(f"{path} too short to be a gpack index")
    got, version, n_sections, _ = _HEADER.unpack_from(raw, 0)
    if got != magic:
        raise BadMagic(f"{path}: bad magic {got!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: format version {version}, reader supports {VERSION}")
    pos = _HEADER.size
    out = {}
    for _ in range(n_sections):
        if pos + _SECTION.size > len(raw):
            raise CorruptIndex(f"{path}: truncated section header")
        tag, length = _SECTION.unpack_from(raw, pos)
        pos += _SECTION.size
        end = pos + length
        if end + 4 > len(raw):
            raise CorruptIndex(f"{path}: truncated section {tag!r}")
        payload = raw[pos:end]
        (crc,) = struct.unpack_from("<I", raw, end)
        if zlib.crc32(payload) != crc:
            raise CorruptIndex(f"{path}: checksum mismatch in section {tag!r}")
        out[tag] = payload
        pos = end + 4
    if pos != len(raw):
        raise CorruptIndex(f"{path}: trailing bytes after last section")
    return out


def _i64(payload: bytes, count: int, offset: int = 0) -> np.ndarray:
    return np.frombuffer(payload, dtype="<i8", count=count, offset=offset * 8).astype(np.int64)


# -- writer -------------------------------------------------------------------

class Writer:
    """Buffers graphs for the subfiles one writer owns; see :func:`create_writer`."""

    def __init__(self, path: Path, schema: GpackSchema, num_subfiles: int, writer_id: int, writer_count: int):
        self.path = path
        self.schema = schema
        self.num_subfiles = num_subfiles
        self.writer_id = writer_id
        self.writer_count = writer_count
        self.owned = [s for s in range(num_subfiles) if s % writer_count == writer_id]
        self._buf = {s: {v: [] for v in VARIABLES} for s in self.owned}
        self._rows = {s: [0, 0] for s in self.owned}
        self._index: list[tuple[int, int, int, int, int, int]] = []
        self.finalized = False

    def append(self, g: GraphSample) -> int:
        if self.finalized:
            raise GpackError("writer already finalized")
        sc = self.schema
        x = np.asarray(g.x)
        ei = np.asarray(g.edge_index)
        ea = np.asarray(g.edge_attr)
        y = np.asarray(g.y).reshape(-1)
        if x.ndim != 2 or x.shape[1] != sc.node_feature_count:
            raise SchemaMismatch(f"x has shape {x.shape}, expected (nodes, {sc.node_feature_count})")
        if ei.ndim != 2 or ei.shape[0] != 2:
            raise SchemaMismatch(f"edge_index has shape {ei.shape}, expected (2, edges)")
        if ea.ndim != 2 or ea.shape != (ei.shape[1], sc.edge_feature_count):
            raise SchemaMismatch(f"edge_attr has shape {ea.shape}, expected ({ei.shape[1]}, {sc.edge_feature_count})")
        if y.shape != (sc.target_count,):
            raise SchemaMismatch(f"y has {y.size} values, expected {sc.target_count}")
        if ei.size and (ei.min() < 0 or ei.max() >= x.shape[0]):
            raise SchemaMismatch("edge_index refers to nodes outside the graph")
        pos = len(self._index)
        s = self.owned[pos % len(self.owned)]
        buf = self._buf[s]
        buf["x"].append(np.ascontiguousarray(x, dtype="<f4"))
        buf["edge_index"].append(np.ascontiguousarray(ei, dtype="<i8"))
        buf["edge_attr"].append(np.ascontiguousarray(ea, dtype="<f4"))
        buf["y"].append(np.ascontiguousarray(y, dtype="<f4"))
        nodes, edges = x.shape[0], ei.shape[1]
        self._index.append((int(g.id), nodes, edges, s, self._rows[s][0], self._rows[s][1]))
        self._rows[s][0] += nodes
        self._rows[s][1] += edges
        return pos

    def finalize(self) -> None:
        """Write owned subfiles and this writer's partial index."""
        if self.finalized:
            return
        extents = []
        for s in self.owned:
            buf = self._buf[s]
            sc = self.schema
            blocks = {
                "x": np.concatenate(buf["x"]) if buf["x"] else np.zeros((0, sc.node_feature_count), "<f4"),
                "edge_index": (np.concatenate(buf["edge_index"], axis=1) if buf["edge_index"]
                               else np.zeros((2, 0), "<i8")),
                "edge_attr": (np.concatenate(buf["edge_attr"]) if buf["edge_attr"]
                              else np.zeros((0, sc.edge_feature_count), "<f4")),
                "y": np.concatenate(buf["y"]) if buf["y"] else np.zeros(0, "<f4"),
            }
            tmp = self.path / f"data.{s}.tmp"
            row_counts = {"x": blocks["x"].shape[0], "edge_index": blocks["edge_index"].shape[1],
                          "edge_attr": blocks["edge_attr"].shape[0], "y": len(buf["y"])}
            with open(tmp, "wb") as f:
                f.write(_HEADER.pack(DATA_MAGIC, VERSION, s, 0))
                offset = _HEADER.size
                for v in VARIABLES:
                    data = np.ascontiguousarray(blocks[v]).tobytes()
                    f.write(data)
                    extents.append((s, VARIABLES.index(v), offset, len(data), row_counts[v], zlib.crc32(data)))
                    offset += len(data)
            os.replace(tmp, self.path / f"data.{s}")
            self._buf[s] = None
        idx = np.array(self._index, dtype="<i8").reshape(-1, 6)
        ext = np.array(extents, dtype="<i8").reshape(-1, 6)
        head = struct.pack("<IIII", self.writer_id, self.writer_count, self.num_subfiles, len(self._index))
        _write_sections(self.path / f"index.{self.writer_id}.part", PART_MAGIC, [
            (b"SCHM", self.schema.to_json()),
            (b"HEAD", head),
            (b"GRPH", idx.tobytes()),
            (b"EXTS", ext.tobytes()),
        ])
        self.finalized = True

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.finalize()


def create_writer(path, schema: GpackSchema, num_subfiles: int, writer_id: int = 0,
                  writer_count: int = 1, overwrite: bool = False) -> Writer:
    path = Path(path)
    if not (0 <= writer_id < writer_count <= num_subfiles):
        raise InvalidShardConfig(
            f"need 0 <= writer_id < writer_count <= num_subfiles, got {writer_id}, {writer_count}, {num_subfiles}")
    w = Writer(path, schema, num_subfiles, writer_id, writer_count)
    mine = [path / "meta.idx", path / f"index.{writer_id}.part"] + [path / f"data.{s}" for s in w.owned]
    if path.exists():
        if not path.is_dir():
            raise PathExists(f"{path} exists and is not a directory")
        existing = [p for p in mine if p.exists()]
        if existing and not overwrite:
            raise PathExists(f"{path} already holds container files ({existing[0].name})")
        for p in existing:
            p.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return w


def append_graph(w: Writer, g: GraphSample) -> int:
    return w.append(g)


def finalize(w: Writer) -> None:
    w.finalize()


def merge_index(path, writer_count: int) -> GpackDataset:
    """Combine partial indexes into ``meta.idx`` and return the dataset metadata."""
    path = Path(path)
    parts = []
    for w in range(writer_count):
        p = path / f"index.{w}.part"
        if not p.exists():
            raise MissingSubfile(f"partial index for writer {w} missing; was it finalized?")
        try:
            parts.append(_read_sections(p, PART_MAGIC))
        except (BadMagic, VersionUnsupported) as e:
            raise CorruptIndex(str(e)) from None
    schema_raw = parts[0][b"SCHM"]
    schema = GpackSchema.from_json(schema_raw)
    num_subfiles = None
    graphs, extents = [], []
    for w, sec in enumerate(parts):
        if sec[b"SCHM"] != schema_raw:
            raise CorruptIndex(f"writer {w} used a different schema")
        wid, wc, ns, ng = struct.unpack("<IIII", sec[b"HEAD"])
        if wid != w or wc != writer_count:
            raise CorruptIndex(f"partial index {w} claims writer {wid}/{wc}")
        if num_subfiles is None:
            num_subfiles = ns
        elif ns != num_subfiles:
            raise CorruptIndex("writers disagree on the subfile count")
        graphs.append(np.frombuffer(sec[b"GRPH"], dtype="<i8").reshape(-1, 6))
        extents.append(np.frombuffer(sec[b"EXTS"], dtype="<i8").reshape(-1, 6))
    g = np.concatenate(graphs) if graphs else np.zeros((0, 6), "<i8")
    ext = np.concatenate(extents)
    n = g.shape[0]
    table = np.full((num_subfiles, len(VARIABLES), 4), -1, dtype=np.int64)
    for s, v, off, nbytes, rows, crc in ext:
        table[s, v] = (off, nbytes, rows, crc)
    if (table[:, :, 0] < 0).any():
        missing = sorted(set(np.nonzero(table[:, :, 0] < 0)[0].tolist()))
        raise MissingSubfile(f"no writer reported subfile(s) {missing}")
    sizes = np.zeros(num_subfiles, dtype=np.int64)
    for s in range(num_subfiles):
        f = path / f"data.{s}"
        if not f.exists():
            raise MissingSubfile(f"{f} missing")
        sizes[s] = _HEADER.size + table[s, :, 1].sum()
        if f.stat().st_size != sizes[s]:
            raise CorruptIndex(f"{f} has {f.stat().st_size} bytes, expected {sizes[s]}")
    node_offset = np.zeros(n + 1, dtype=np.int64)
    edge_offset = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(g[:, 1], out=node_offset[1:])
    np.cumsum(g[:, 2], out=edge_offset[1:])
    counts = _COUNTS.pack(n, int(node_offset[-1]), int(edge_offset[-1]), num_subfiles, schema.codec)
    gidx = np.concatenate([g[:, 0], node_offset, edge_offset, g[:, 3], g[:, 4], g[:, 5]]).astype("<i8")
    exts = b"".join(
        _EXTENT.pack(int(table[s, v, 0]), int(table[s, v, 1]), int(table[s, v, 2]), int(table[s, v, 3]), 0)
        for s in range(num_subfiles) for v in range(len(VARIABLES))
    ) + sizes.astype("<i8").tobytes()
    _write_sections(path / "meta.idx", MAGIC, [
        (b"SCHM", schema_raw),
        (b"CNTS", counts),
        (b"GIDX", gidx.tobytes()),
        (b"EXTS", exts),
    ])
    for w in range(writer_count):
        (path / f"index.{w}.part").unlink()
    return load_index(path)


def load_index(path) -> GpackDataset:
    path = Path(path)
    sec = _read_sections(path / "meta.idx", MAGIC)
    for tag in (b"SCHM", b"CNTS", b"GIDX", b"EXTS"):
        if tag not in sec:
            raise CorruptIndex(f"meta.idx lacks section {tag!r}")
    schema = GpackSchema.from_json(sec[b"SCHM"])
    n, nodes, edges, ns, codec = _COUNTS.unpack(sec[b"CNTS"])
    if codec != CODEC_NONE:
        raise VersionUnsupported(f"codec {codec} not supported")
    gidx = sec[b"GIDX"]
    if len(gidx) != 8 * (6 * n + 2):
        raise CorruptIndex("graph index section has the wrong length")
    ids = _i64(gidx, n, 0)
    node_offset = _i64(gidx, n + 1, n)
    edge_offset = _i64(gidx, n + 1, 2 * n + 1)
    subfile = _i64(gidx, n, 3 * n + 2)
    local_node = _i64(gidx, n, 4 * n + 2)
    local_edge = _i64(gidx, n, 5 * n + 2)
    if (node_offset[0] != 0 or edge_offset[0] != 0 or node_offset[-1] != nodes or edge_offset[-1] != edges
            or np.any(np.diff(node_offset) < 0) or np.any(np.diff(edge_offset) < 0)):
        raise CorruptIndex("offset arrays are not monotone from 0 to the recorded totals")
    if n and (subfile.min() < 0 or subfile.max() >= ns):
        raise CorruptIndex("graph assigned to a nonexistent subfile")
    raw = sec[b"EXTS"]
    if len(raw) != ns * len(VARIABLES) * _EXTENT.size + 8 * ns:
        raise CorruptIndex("extent table has the wrong length")
    extents = np.zeros((ns, len(VARIABLES), 3), dtype=np.int64)
    crcs = np.zeros((ns, len(VARIABLES)), dtype=np.int64)
    for s in range(ns):
        for v in range(len(VARIABLES)):
            off, nbytes, rows, crc, _ = _EXTENT.unpack_from(raw, (s * len(VARIABLES) + v) * _EXTENT.size)
            extents[s, v] = (off, nbytes, rows)
            crcs[s, v] = crc
    sizes = np.frombuffer(raw, dtype="<i8", offset=ns * len(VARIABLES) * _EXTENT.size).astype(np.int64)
    return GpackDataset(path, schema, n, ns, ids, node_offset, edge_offset, subfile, local_node,
                        local_edge, extents, crcs, sizes)


# -- reader -------------------------------------------------------------------

class Reader:
    """Random-access reader; safe to share between threads after construction."""

    def __init__(self, path):
        self.meta = load_index(path)
        m = self.meta
        sc = m.schema
        self.path = m.path
        self._arrays = []
        for s in range(m.num_subfiles):
            f = self.path / f"data.{s}"
            if not f.exists():
                raise MissingSubfile(f"{f} missing")
            if f.stat().st_size != m.subfile_sizes[s]:
                raise CorruptIndex(f"{f} has {f.stat().st_size} bytes, index expects {m.subfile_sizes[s]}")
            with open(f, "rb") as fh:
                magic, version, sid, _ = _HEADER.unpack(fh.read(_HEADER.size))
            if magic != DATA_MAGIC or sid != s:
                raise CorruptIndex(f"{f} is not subfile {s} of this container")
            if version != VERSION:
                raise VersionUnsupported(f"{f}: version {version}")
            arrs = {}
            for v, name in enumerate(VARIABLES):
                off, nbytes, rows = (int(t) for t in m.extents[s, v])
                if rows == 0:
                    shape = {"x": (0, sc.node_feature_count), "edge_index": (2, 0),
                             "edge_attr": (0, sc.edge_feature_count), "y": (0, sc.target_count)}[name]
                    arrs[name] = np.zeros(shape, dtype=_DTYPES[name])
                    continue
                shape = {"x": (rows, sc.node_feature_count), "edge_index": (2, rows),
                         "edge_attr": (rows, sc.edge_feature_count), "y": (rows, sc.target_count)}[name]
                if int(np.prod(shape)) * np.dtype(_DTYPES[name]).itemsize != nbytes:
                    raise CorruptIndex(f"extent of {name} in subfile {s} disagrees with its row count")
                arrs[name] = np.memmap(f, dtype=_DTYPES[name], mode="r", offset=off, shape=shape)
            self._arrays.append(arrs)
        # row of each graph within its subfile's y block
        self._y_row = np.zeros(m.num_graphs, dtype=np.int64)
        for s in range(m.num_subfiles):
            mask = m.subfile == s
            self._y_row[mask] = np.arange(np.count_nonzero(mask))

    def __len__(self) -> int:
        return self.meta.num_graphs

    @property
    def schema(self) -> GpackSchema:
        return self.meta.schema

    def summary(self) -> DatasetSummary:
        return self.meta.summary()

    def _locate(self, gid: int) -> tuple[int, int, int, int, int]:
        m = self.meta
        if not (0 <= gid < m.num_graphs):
            raise IndexOutOfRange(f"graph {gid} not in [0, {m.num_graphs})")
        nn = int(m.node_offset[gid + 1] - m.node_offset[gid])
        ne = int(m.edge_offset[gid + 1] - m.edge_offset[gid])
        return int(m.subfile[gid]), int(m.local_node[gid]), nn, int(m.local_edge[gid]), ne

    def read_graph(self, gid: int) -> GraphSample:
        gid = int(gid)
        s, n0, nn, e0, ne = self._locate(gid)
        a = self._arrays[s]
        yrow = self._y_row[gid]
        return GraphSample(
            int(self.meta.ids[gid]),
            np.array(a["x"][n0:n0 + nn], dtype=np.float32),
            np.array(a["edge_index"][:, e0:e0 + ne], dtype=np.int64),
            np.array(a["edge_attr"][e0:e0 + ne], dtype=np.float32),
            np.array(a["y"][yrow], dtype=np.float32),
        )

    def read_many(self, gids) -> dict[str, np.ndarray]:
        """Gather several graphs into concatenated arrays.

        Returns ``x``, ``edge_index`` (local to each graph), ``edge_attr``,
        ``y`` (graphs, targets), ``ids``, ``nodes`` and ``edges`` (per-graph
        counts), all in the order of ``gids``.
        """
        m = self.meta
        gids = np.asarray(gids, dtype=np.int64)
        if gids.size and (gids.min() < 0 or gids.max() >= m.num_graphs):
            bad = gids[(gids < 0) | (gids >= m.num_graphs)][0]
            raise IndexOutOfRange(f"graph {bad} not in [0, {m.num_graphs})")
        nodes = m.node_offset[gids + 1] - m.node_offset[gids]
        edges = m.edge_offset[gids + 1] - m.edge_offset[gids]
        sc = m.schema
        out_n = np.zeros(len(gids) + 1, dtype=np.int64)
        out_e = np.zeros(len(gids) + 1, dtype=np.int64)
        np.cumsum(nodes, out=out_n[1:])
        np.cumsum(edges, out=out_e[1:])
        x = np.empty((out_n[-1], sc.node_feature_count), dtype=np.float32)
        ei = np.empty((2, out_e[-1]), dtype=np.int64)
        ea = np.empty((out_e[-1], sc.edge_feature_count), dtype=np.float32)
        y = np.empty((len(gids), sc.target_count), dtype=np.float32)
        sub = m.subfile[gids]
        yrows = self._y_row[gids]
        for s in np.unique(sub):
            k = np.nonzero(sub == s)[0]
            a = self._arrays[s]
            src_n = _ranges(m.local_node[gids[k]], nodes[k])
            dst_n = _ranges(out_n[k], nodes[k])
            x[dst_n] = a["x"][src_n]
            src_e = _ranges(m.local_edge[gids[k]], edges[k])
            dst_e = _ranges(out_e[k], edges[k])
            ei[:, dst_e] = a["edge_index"][:, src_e]
            ea[dst_e] = a["edge_attr"][src_e]
            y[k] = a["y"][yrows[k]]
        return {"x": x, "edge_index": ei, "edge_attr": ea, "y": y, "ids": m.ids[gids].copy(),
                "nodes": nodes, "edges": edges}

    def verify(self) -> None:
        """Check every data block against its recorded CRC32."""
        m = self.meta
        for s in range(m.num_subfiles):
            with open(self.path / f"data.{s}", "rb") as f:
                for v, name in enumerate(VARIABLES):
                    off, nbytes, _ = (int(t) for t in m.extents[s, v])
                    f.seek(off)
                    if zlib.crc32(f.read(nbytes)) != m.crcs[s, v]:
                        raise CorruptIndex(f"checksum mismatch in {name} of subfile {s}")

    def subfile_bytes(self) -> list[int]:
        return [int(x) for x in self.meta.subfile_sizes]


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenation of ``arange(s, s + c)`` for each (s, c) pair."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(counts)
    rep_start = np.repeat(starts - (ends - counts), counts)
    return np.arange(total, dtype=np.int64) + rep_start


def open_reader(path) -> Reader:
    return Reader(path)


def read_graph(r: Reader, gid: int) -> GraphSample:
    return r.read_graph(gid)


def summary(r: Reader) -> DatasetSummary:
    return r.summary()


def write_dataset(path, samples, schema: GpackSchema, num_subfiles: int = 1,
                  overwrite: bool = False) -> GpackDataset:
    """Single-writer convenience wrapper."""
    w = create_writer(path, schema, num_subfiles, 0, 1, overwrite=overwrite)
    for g in samples:
        w.append(g)
    w.finalize()
    return merge_index(path, 1)


def remove_container(path) -> None:
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
