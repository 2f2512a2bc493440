"""Data-loading backends, sharding and batch collation.

Three interchangeable sources yield identical :class:`GraphSample` values
for the same corpus:

* ``inline``: a delimited text file of SMILES + target; every fetch
  parses and encodes the molecule again.
* ``object``: one length-prefixed binary record per graph in a keyed
  directory store (``<id // 1000>/<id>.rec``).
* ``gpack``: the packed container from :mod:`molddp.gpack`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import queue
import shutil
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gpack
from .graphenc import EDGE_FEATURES, FeatureVocab, GraphSample, build_vocab, encode_graph
from .smiles import SmilesError, parse_and_expand

BACKENDS = ("inline", "object", "gpack")


class SourceUnreadable(Exception):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{message} [record {key}]")
        self.key = key


class EmptyBatch(ValueError):
    pass


class InconsistentFeatureWidth(ValueError):
    pass


@dataclass
class Batch:
    x: np.ndarray             # (total_nodes, node_features)
    edge_index: np.ndarray    # (2, total_edges), batch-global node ids
    edge_attr: np.ndarray     # (total_edges, edge_features)
    y: np.ndarray             # (graphs,)
    batch_vector: np.ndarray  # (total_nodes,) graph slot of every node
    ids: np.ndarray           # (graphs,)

    @property
    def num_graphs(self) -> int:
        return len(self.ids)

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.x, self.edge_index, self.edge_attr, self.y, self.batch_vector, self.ids):
            h.update(str(a.dtype).encode())
            h.update(np.asarray(a.shape, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def equals(self, other: Batch) -> bool:
        return self.digest() == other.digest()


def collate(samples: list[GraphSample]) -> Batch:
    """Disjoint union of ``samples`` with edge indices shifted per graph."""
    if not samples:
        raise EmptyBatch("cannot collate an empty list of graphs")
    fn = samples[0].x.shape[1]
    fe = samples[0].edge_attr.shape[1]
    for s in samples:
        if s.x.shape[1] != fn or s.edge_attr.shape[1] != fe:
            raise InconsistentFeatureWidth(
                f"graph {s.id} has widths ({s.x.shape[1]}, {s.edge_attr.shape[1]}), expected ({fn}, {fe})")
    nodes = np.array([s.x.shape[0] for s in samples], dtype=np.int64)
    shift = np.concatenate([[0], np.cumsum(nodes)[:-1]])
    edge_index = np.concatenate([s.edge_index + k for s, k in zip(samples, shift)], axis=1)
    return Batch(
        x=np.concatenate([s.x for s in samples]),
        edge_index=edge_index.astype(np.int64, copy=False),
        edge_attr=np.concatenate([s.edge_attr for s in samples]),
        y=np.concatenate([np.asarray(s.y).reshape(-1) for s in samples]),
        batch_vector=np.repeat(np.arange(len(samples), dtype=np.int64), nodes),
        ids=np.array([s.id for s in samples], dtype=np.int64),
    )


def shard_indices(global_indices, rank: int, world_size: int, seed: int, epoch: int) -> np.ndarray:
    """This rank's slice of a (seed, epoch)-keyed global shuffle.

    Rank ``r`` takes shuffled positions ``r, r + W, r + 2W, ...``; the last
    ``n mod W`` positions are dropped so every rank holds the same count.
    """
    if not 0 <= rank < world_size:
        raise ValueError(f"rank {rank} outside [0, {world_size})")
    g = np.asarray(global_indices, dtype=np.int64)
    perm = np.random.default_rng([seed, epoch]).permutation(len(g))
    usable = (len(g) // world_size) * world_size
    return g[perm[:usable]][rank::world_size]


# -- sources -------------------------------------------------------------------

class InlineSource:
    """Delimited text with a header row; conversion happens on every fetch."""

    backend = "inline"

    def __init__(self, path, vocab: FeatureVocab | None = None, smiles_col: str = "smiles",
                 target_col: str = "gap", delimiter: str = ","):
        self.path = Path(path)
        try:
            with open(self.path, newline="") as f:
                reader = csv.reader(f, delimiter=delimiter)
                header = next(reader)
                rows = list(reader)
        except (OSError, StopIteration, csv.Error) as e:
            raise SourceUnreadable(f"cannot read {self.path}: {e}") from None
        try:
            si, ti = header.index(smiles_col), header.index(target_col)
        except ValueError:
            raise SourceUnreadable(f"{self.path} lacks columns {smiles_col!r}/{target_col!r}; header={header}") from None
        self.smiles = [r[si] for r in rows]
        try:
            self.targets = np.array([float(r[ti]) for r in rows], dtype=np.float64)
        except (ValueError, IndexError) as e:
            raise SourceUnreadable(f"bad target value in {self.path}: {e}") from None
        if vocab is None:
            elements = set()
            for k, smi in enumerate(self.smiles):
                try:
                    elements.update(a.element for a in parse_and_expand(smi).atoms)
                except SmilesError as e:
                    raise SourceUnreadable(f"unparseable SMILES: {e}", key=str(k)) from None
            vocab = build_vocab(elements)
        self.vocab = vocab

    def __len__(self) -> int:
        return len(self.smiles)

    def get(self, i: int) -> GraphSample:
        i = int(i)
        try:
            mol = parse_and_expand(self.smiles[i])
        except SmilesError as e:
            raise SourceUnreadable(f"unparseable SMILES {self.smiles[i]!r}: {e}", key=str(i)) from None
        return encode_graph(mol, self.vocab, self.targets[i], i)

    def get_batch(self, indices) -> Batch:
        return collate([self.get(i) for i in indices])


_OBJ_HEAD = struct.Struct("<4sqIIIII")  # magic, id, nodes, edges, F_n, F_e, targets
_OBJ_MAGIC = b"GOBJ"


def object_key(i: int) -> str:
    return f"{i // 1000:06d}/{i:09d}.rec"


def encode_record(g: GraphSample) -> bytes:
    x = np.ascontiguousarray(g.x, dtype="<f4")
    ei = np.ascontiguousarray(g.edge_index, dtype="<i8")
    ea = np.ascontiguousarray(g.edge_attr, dtype="<f4")
    y = np.ascontiguousarray(np.asarray(g.y).reshape(-1), dtype="<f4")
    payload = b"".join([
        _OBJ_HEAD.pack(_OBJ_MAGIC, int(g.id), x.shape[0], ei.shape[1], x.shape[1], ea.shape[1], y.size),
        x.tobytes(), ei.tobytes(), ea.tobytes(), y.tobytes(),
    ])
    return struct.pack("<I", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def decode_record(raw: bytes, key: str = "?") -> GraphSample:
    try:
        (length,) = struct.unpack_from("<I", raw, 0)
        if len(raw) != 4 + length + 4:
            raise ValueError("length prefix does not match record size")
        payload = raw[4:4 + length]
        (crc,) = struct.unpack_from("<I", raw, 4 + length)
        if zlib.crc32(payload) != crc:
            raise ValueError("checksum mismatch")
        magic, gid, n, e, fn, fe, t = _OBJ_HEAD.unpack_from(payload, 0)
        if magic != _OBJ_MAGIC:
            raise ValueError("bad record magic")
        pos = _OBJ_HEAD.size
        x = np.frombuffer(payload, "<f4", n * fn, pos).reshape(n, fn)
        pos += 4 * n * fn
        ei = np.frombuffer(payload, "<i8", 2 * e, pos).reshape(2, e)
        pos += 16 * e
        ea = np.frombuffer(payload, "<f4", e * fe, pos).reshape(e, fe)
        pos += 4 * e * fe
        y = np.frombuffer(payload, "<f4", t, pos)
        if pos + 4 * t != len(payload):
            raise ValueError("payload size disagrees with header")
    except (struct.error, ValueError) as err:
        raise SourceUnreadable(f"corrupt object record: {err}", key=key) from None
    return GraphSample(int(gid), x.astype(np.float32), ei.astype(np.int64), ea.astype(np.float32),
                       y.astype(np.float32))


def write_object_records(path, samples, start: int = 0) -> tuple[int, tuple | None]:
    """Write ``samples`` under keys ``start, start+1, ...``.

    Returns the count and the (node features, edge features, targets)
    widths of the last record, or None when nothing was written.
    """
    path = Path(path)
    n = 0
    widths = None
    made = set()
    for k, g in enumerate(samples):
        rec = path / object_key(start + k)
        if rec.parent not in made:
            rec.parent.mkdir(parents=True, exist_ok=True)
            made.add(rec.parent)
        rec.write_bytes(encode_record(g))
        widths = (g.x.shape[1], g.edge_attr.shape[1], np.asarray(g.y).size)
        n += 1
    return n, widths


def write_object_meta(path, num_graphs: int, vocab: FeatureVocab, target_count: int = 1) -> None:
    meta = {"format": "molddp-objstore", "version": 1, "num_graphs": int(num_graphs),
            "node_feature_count": vocab.node_features, "edge_feature_count": EDGE_FEATURES,
            "target_count": int(target_count), "vocab": list(vocab.elements)}
    (Path(path) / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def prepare_object_dir(path, overwrite: bool = False) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{path} is not empty")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_object_store(path, samples, vocab: FeatureVocab, overwrite: bool = False) -> int:
    """Write one record per sample, keyed by position; returns the count."""
    path = prepare_object_dir(path, overwrite)
    n, widths = write_object_records(path, samples)
    if widths is not None and widths[0] != vocab.node_features:
        raise InconsistentFeatureWidth(f"records have {widths[0]} node features, vocab implies {vocab.node_features}")
    write_object_meta(path, n, vocab, widths[2] if widths else 1)
    return n


class ObjectSource:
    backend = "object"

    def __init__(self, path):
        self.path = Path(path)
        try:
            meta = json.loads((self.path / "meta.json").read_text())
        except (OSError, ValueError) as e:
            raise SourceUnreadable(f"cannot read object store metadata in {self.path}: {e}") from None
        if meta.get("format") != "molddp-objstore":
            raise SourceUnreadable(f"{self.path} is not an object store")
        self.meta = meta
        self.vocab = FeatureVocab(tuple(meta["vocab"]))
        self._n = int(meta["num_graphs"])

    def __len__(self) -> int:
        return self._n

    def get(self, i: int) -> GraphSample:
        key = object_key(int(i))
        try:
            with open(self.path / key, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise SourceUnreadable(f"cannot read record: {e}", key=key) from None
        return decode_record(raw, key)

    def get_batch(self, indices) -> Batch:
        return collate([self.get(i) for i in indices])


class PackedSource:
    backend = "gpack"

    def __init__(self, path):
        self.path = Path(path)
        try:
            self.reader = gpack.open_reader(self.path)
        except gpack.GpackError as e:
            raise SourceUnreadable(f"cannot open container {self.path}: {e}") from None
        self.vocab = FeatureVocab(self.reader.schema.vocab) if self.reader.schema.vocab else None

    def __len__(self) -> int:
        return len(self.reader)

    def get(self, i: int) -> GraphSample:
        return self.reader.read_graph(int(i))

    def get_batch(self, indices) -> Batch:
        if len(indices) == 0:
            raise EmptyBatch("cannot collate an empty list of graphs")
        r = self.reader.read_many(indices)
        nodes = r["nodes"]
        shift = np.concatenate([[0], np.cumsum(nodes)[:-1]])
        r["edge_index"] += np.repeat(shift, r["edges"])
        return Batch(r["x"], r["edge_index"], r["edge_attr"], r["y"].reshape(-1),
                     np.repeat(np.arange(len(nodes), dtype=np.int64), nodes), r["ids"])


def open_source(backend: str, path, **kwargs):
    if backend == "inline":
        return InlineSource(path, **kwargs)
    if backend == "object":
        return ObjectSource(path)
    if backend in ("gpack", "packed"):
        return PackedSource(path)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


# -- loader ----------------------------------------------------------------------

class Loader:
    """Iterates batches of ``indices`` in order.

    By default the trailing partial batch is dropped so every batch has
    exactly ``batch_size`` graphs; ``drop_last=False`` keeps it (evaluation).

    ``load_seconds`` collects, per batch, the wall time the consumer spent
    waiting for data (with prefetch this excludes overlapped fetches).
    """

    def __init__(self, source, indices, batch_size: int, prefetch_depth: int = 0,
                 drop_last: bool = True):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.source = source
        self.indices = np.asarray(indices, dtype=np.int64)
        n = len(source)
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise IndexError(f"indices out of range for a source of {n} graphs")
        self.batch_size = batch_size
        self.prefetch_depth = prefetch_depth
        self.drop_last = drop_last
        self.load_seconds: list[float] = []

    def __len__(self) -> int:
        full, rest = divmod(len(self.indices), self.batch_size)
        return full + (1 if rest and not self.drop_last else 0)

    def _chunks(self):
        b = self.batch_size
        for k in range(len(self)):
            yield self.indices[k * b:(k + 1) * b]

    def __iter__(self):
        if self.prefetch_depth <= 0:
            for chunk in self._chunks():
                t0 = time.perf_counter()
                batch = self.source.get_batch(chunk)
                self.load_seconds.append(time.perf_counter() - t0)
                yield batch
            return
        yield from self._prefetching()

    def _prefetching(self):
        q: queue.Queue = queue.Queue(maxsize=self.prefetch_depth)
        stop = threading.Event()
        done = object()

        def work():
            try:
                for chunk in self._chunks():
                    if stop.is_set():
                        return
                    q.put(self.source.get_batch(chunk))
                q.put(done)
            except BaseException as e:  # forwarded to the consumer
                q.put(e)

        t = threading.Thread(target=work, daemon=True)
        t.start()
        try:
            while True:
                t0 = time.perf_counter()
                item = q.get()
                self.load_seconds.append(time.perf_counter() - t0)
                if item is done:
                    self.load_seconds.pop()
                    return
                if isinstance(item, BaseException):
                    self.load_seconds.pop()
                    raise item
                yield item
        finally:
            stop.set()
            while t.is_alive():
                try:
                    q.get_nowait()
                except queue.Empty:
                    t.join(0.01)


def make_loader(backend, source, indices, batch_size: int, prefetch_depth: int = 0, **source_kwargs) -> Loader:
    """Open ``source`` (a path, or an already-open source) behind ``backend``."""
    if isinstance(source, (str, Path)):
        source = open_source(backend, source, **source_kwargs)
    elif backend and getattr(source, "backend", backend) != ("gpack" if backend == "packed" else backend):
        raise ValueError(f"source is a {source.backend!r} backend, not {backend!r}")
    return Loader(source, indices, batch_size, prefetch_depth)
