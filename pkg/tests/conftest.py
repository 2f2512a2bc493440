from pathlib import Path

import numpy as np
import pytest

from molddp import gpack
from molddp.corpus import generate_corpus, write_corpus_csv
from molddp.dataload import write_object_store
from molddp.graphenc import EDGE_FEATURES, build_vocab, encode_graph
from molddp.smiles import parse_and_expand

FIXTURES = Path(__file__).parent / "fixtures"


def encode_records(records, target="gap"):
    mols = [parse_and_expand(r["smiles"]) for r in records]
    vocab = build_vocab({a.element for m in mols for a in m.atoms})
    return [encode_graph(m, vocab, r[target], i) for i, (m, r) in enumerate(zip(mols, records))], vocab


def schema_for(vocab):
    return gpack.GpackSchema(vocab.node_features, EDGE_FEATURES, 1, vocab.elements)


def random_graph(rng, n_min=1, n_max=12, features=7, edge_features=EDGE_FEATURES, gid=0, dtype=np.float32):
    """Random symmetric directed graph in canonical (src, dst) order."""
    from molddp.graphenc import GraphSample
    n = int(rng.integers(n_min, n_max + 1))
    pairs = {(int(a), int(b)) for a, b in rng.integers(0, n, size=(int(rng.integers(0, 2 * n + 1)), 2)) if a != b}
    und = sorted({(min(a, b), max(a, b)) for a, b in pairs})
    attrs = {}
    for e in und:
        row = np.zeros(edge_features, dtype=dtype)
        row[rng.integers(edge_features)] = 1
        attrs[e] = row
    directed = sorted([(a, b) for a, b in und] + [(b, a) for a, b in und])
    ei = np.array(directed, dtype=np.int64).T.reshape(2, -1)
    ea = np.array([attrs[(min(a, b), max(a, b))] for a, b in directed], dtype=dtype).reshape(-1, edge_features)
    x = rng.standard_normal((n, features)).astype(dtype)
    y = rng.standard_normal(1).astype(dtype)
    return GraphSample(gid, x, ei, ea, y)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """400 synthetic molecules as CSV, object store and 3-subfile gpack."""
    root = tmp_path_factory.mktemp("corpus")
    records = generate_corpus(400, seed=11)
    csv_path = root / "corpus.csv"
    write_corpus_csv(csv_path, records)
    samples, vocab = encode_records(records)
    gpk = root / "corpus.gpack"
    gpack.write_dataset(gpk, samples, schema_for(vocab), num_subfiles=3)
    obj = root / "objects"
    write_object_store(obj, samples, vocab)
    return {"csv": csv_path, "gpack": gpk, "object": obj, "samples": samples, "vocab": vocab,
            "records": records, "root": root}


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
