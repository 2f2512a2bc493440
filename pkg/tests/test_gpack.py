import struct
import threading
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molddp import gpack
from molddp.gpack import (BadMagic, CorruptIndex, DatasetSummary, GpackSchema, IndexOutOfRange, InvalidShardConfig,
                          MissingSubfile, PathExists, SchemaMismatch, VersionUnsupported)

from conftest import random_graph

SCHEMA = GpackSchema(7, 4, 1, ("H", "C"))


def _graphs(n, seed=0):
    rng = np.random.default_rng(seed)
    return [random_graph(rng, gid=i) for i in range(n)]


def _key(g):
    return (g.id, g.x.tobytes(), g.edge_index.tobytes(), g.edge_attr.tobytes(), g.y.tobytes())


def test_roundtrip_100(tmp_path):
    gs = _graphs(100)
    gpack.write_dataset(tmp_path / "c", gs, SCHEMA, num_subfiles=3)
    r = gpack.open_reader(tmp_path / "c")
    assert len(r) == 100
    for i, g in enumerate(gs):
        assert gpack.read_graph(r, i).equals(g)
    r.verify()


def test_random_order_matches_sequential(tmp_path):
    gs = _graphs(60, seed=4)
    gpack.write_dataset(tmp_path / "c", gs, SCHEMA, num_subfiles=4)
    r = gpack.open_reader(tmp_path / "c")
    perm = np.random.default_rng(1).permutation(60)
    for i in perm:
        assert r.read_graph(i).equals(gs[i])
    many = r.read_many(perm)
    assert many["ids"].tolist() == perm.tolist()
    pos = np.concatenate([[0], np.cumsum(many["nodes"])])
    for k, i in enumerate(perm):
        assert np.array_equal(many["x"][pos[k]:pos[k + 1]], gs[i].x)


def test_out_of_range(tmp_path):
    gpack.write_dataset(tmp_path / "c", _graphs(5), SCHEMA)
    r = gpack.open_reader(tmp_path / "c")
    with pytest.raises(IndexOutOfRange):
        r.read_graph(5)
    with pytest.raises(IndexOutOfRange):
        r.read_graph(-1)
    with pytest.raises(IndexError):
        r.read_many([0, 9])


def test_two_writers_same_multiset(tmp_path):
    gs = _graphs(50, seed=2)
    gpack.write_dataset(tmp_path / "one", gs, SCHEMA, num_subfiles=4)
    for w in range(2):
        wr = gpack.create_writer(tmp_path / "two", SCHEMA, 4, w, 2)
        for g in gs[w::2]:
            gpack.append_graph(wr, g)
        gpack.finalize(wr)
    ds = gpack.merge_index(tmp_path / "two", 2)
    assert ds.num_graphs == 50
    a = gpack.open_reader(tmp_path / "one")
    b = gpack.open_reader(tmp_path / "two")
    assert Counter(_key(a.read_graph(i)) for i in range(50)) == Counter(_key(b.read_graph(i)) for i in range(50))
    # ids follow (writer, local position)
    assert b.meta.ids.tolist() == [g.id for g in gs[0::2]] + [g.id for g in gs[1::2]]
    assert b.meta.subfile[:3].tolist() == [0, 2, 0]


def test_offsets_monotone_and_summary(tmp_path):
    gs = _graphs(30)
    ds = gpack.write_dataset(tmp_path / "c", gs, SCHEMA, num_subfiles=2)
    assert ds.node_offset[0] == 0 and ds.edge_offset[0] == 0
    assert np.all(np.diff(ds.node_offset) > 0)
    assert ds.node_offset[-1] == sum(g.num_nodes for g in gs)
    s = gpack.summary(gpack.open_reader(tmp_path / "c"))
    assert s.avg_nodes_per_graph == pytest.approx(sum(g.num_nodes for g in gs) / 30)


def test_summary_table_figures():
    assert round(DatasetSummary(3_600_000, 105_800_000, 0).avg_nodes_per_graph, 1) == 29.4
    assert round(DatasetSummary(10_500_000, 550_600_000, 0).avg_nodes_per_graph, 1) == 52.4
    assert DatasetSummary(1, 7, 6).avg_nodes_per_graph == 7.0
    assert DatasetSummary(0, 0, 0).avg_nodes_per_graph == 0.0


def test_single_graph_of_seven_nodes(tmp_path):
    rng = np.random.default_rng(0)
    g = random_graph(rng, 7, 7)
    gpack.write_dataset(tmp_path / "c", [g], SCHEMA)
    assert gpack.open_reader(tmp_path / "c").summary().avg_nodes_per_graph == 7.0


def test_empty_container(tmp_path):
    gpack.write_dataset(tmp_path / "c", [], SCHEMA, num_subfiles=2)
    r = gpack.open_reader(tmp_path / "c")
    assert len(r) == 0 and r.summary().total_nodes == 0


def test_rewrite_is_byte_identical(tmp_path):
    gs = _graphs(20)
    gpack.write_dataset(tmp_path / "a", gs, SCHEMA, num_subfiles=2)
    gpack.write_dataset(tmp_path / "b", gs, SCHEMA, num_subfiles=2)
    for name in ("meta.idx", "data.0", "data.1"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_writer_errors(tmp_path):
    gpack.write_dataset(tmp_path / "c", _graphs(2), SCHEMA)
    with pytest.raises(PathExists):
        gpack.create_writer(tmp_path / "c", SCHEMA, 1)
    gpack.create_writer(tmp_path / "c", SCHEMA, 1, overwrite=True)
    with pytest.raises(InvalidShardConfig):
        gpack.create_writer(tmp_path / "d", SCHEMA, 2, 0, 3)
    with pytest.raises(InvalidShardConfig):
        gpack.create_writer(tmp_path / "d", SCHEMA, 2, 2, 2)
    w = gpack.create_writer(tmp_path / "e", SCHEMA, 1)
    g = _graphs(1)[0]
    g.x = g.x[:, :3]
    with pytest.raises(SchemaMismatch):
        w.append(g)


def test_merge_requires_all_writers(tmp_path):
    for w in range(2):
        wr = gpack.create_writer(tmp_path / "c", SCHEMA, 2, w, 2)
        wr.append(_graphs(1)[0])
        if w == 0:
            wr.finalize()
    with pytest.raises(MissingSubfile):
        gpack.merge_index(tmp_path / "c", 2)


def _container(tmp_path, n=10, subfiles=2):
    path = tmp_path / "c"
    gpack.write_dataset(path, _graphs(n), SCHEMA, num_subfiles=subfiles)
    return path


def test_truncated_subfile(tmp_path):
    path = _container(tmp_path)
    data = (path / "data.1").read_bytes()
    (path / "data.1").write_bytes(data[:-5])
    with pytest.raises(CorruptIndex):
        gpack.open_reader(path)


def test_missing_subfile(tmp_path):
    path = _container(tmp_path)
    (path / "data.0").unlink()
    with pytest.raises(MissingSubfile):
        gpack.open_reader(path)


def test_bad_magic_and_version(tmp_path):
    path = _container(tmp_path)
    raw = bytearray((path / "meta.idx").read_bytes())
    (path / "meta.idx").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagic):
        gpack.open_reader(path)
    raw[4:8] = struct.pack("<I", 99)
    (path / "meta.idx").write_bytes(bytes(raw))
    with pytest.raises(VersionUnsupported):
        gpack.open_reader(path)


def test_index_bit_flip(tmp_path):
    path = _container(tmp_path)
    raw = bytearray((path / "meta.idx").read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    (path / "meta.idx").write_bytes(bytes(raw))
    with pytest.raises(CorruptIndex):
        gpack.open_reader(path)


def test_data_bit_flip_detected_by_verify(tmp_path):
    path = _container(tmp_path)
    raw = bytearray((path / "data.0").read_bytes())
    raw[-3] ^= 0x01
    (path / "data.0").write_bytes(bytes(raw))
    r = gpack.open_reader(path)
    with pytest.raises(CorruptIndex):
        r.verify()


def test_size_bound(tmp_path):
    gs = _graphs(200)
    path = tmp_path / "c"
    gpack.write_dataset(path, gs, SCHEMA, num_subfiles=3)
    raw = sum(g.x.nbytes + g.edge_index.nbytes + g.edge_attr.nbytes + g.y.nbytes for g in gs)
    index = (path / "meta.idx").stat().st_size
    data = sum((path / f"data.{s}").stat().st_size for s in range(3))
    assert data <= raw + 3 * 16
    assert index <= 200 * 6 * 8 + 2 * 8 + 1024 + 3 * 4 * 32


def test_concurrent_reads(tmp_path):
    gs = _graphs(80, seed=9)
    gpack.write_dataset(tmp_path / "c", gs, SCHEMA, num_subfiles=3)
    r = gpack.open_reader(tmp_path / "c")
    bad = []

    def work(seed):
        for i in np.random.default_rng(seed).integers(0, 80, 200):
            if not r.read_graph(i).equals(gs[i]):
                bad.append(i)

    ts = [threading.Thread(target=work, args=(s,)) for s in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert not bad


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 25), st.integers(1, 4), st.integers(0, 10**6))
def test_roundtrip_property(tmp_path_factory, n, subfiles, seed):
    path = tmp_path_factory.mktemp("rt") / "c"
    gs = _graphs(n, seed)
    gpack.write_dataset(path, gs, SCHEMA, num_subfiles=subfiles)
    r = gpack.open_reader(path)
    assert len(r) == n
    assert all(r.read_graph(i).equals(g) for i, g in enumerate(gs))
