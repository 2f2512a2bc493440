import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molddp.corpus import generate_corpus
from molddp.graphenc import (EDGE_FEATURES, EmptyDataset, FeatureVocab, SplitSpec, TooFewSamples, build_vocab,
                             encode_graph, split_dataset)
from molddp.smiles import Molecule, UnknownElement, parse_and_expand

HC = build_vocab(["H", "C"])


def test_vocab_sorted_by_atomic_number():
    v = build_vocab(["S", "H", "O", "C", "F", "N", "H", "C"])
    assert v.elements == ("H", "C", "N", "O", "F", "S")
    assert v.node_features == 9


def test_vocab_single_and_empty():
    assert build_vocab(["C"]).elements == ("C",)
    with pytest.raises(EmptyDataset):
        build_vocab([])
    with pytest.raises(ValueError):
        FeatureVocab(("C", "H"))


def test_methane_shapes():
    g = encode_graph(parse_and_expand("C"), HC, 1.5, 0)
    assert g.x.shape == (5, 5)
    assert g.edge_index.shape == (2, 8)
    assert g.edge_attr.shape == (8, EDGE_FEATURES)
    assert g.y.shape == (1,) and g.y.dtype == np.float32
    assert g.x[0].tolist() == [0, 1, 4, 0, 0]


def test_single_atom_no_edges():
    g = encode_graph(parse_and_expand("[C]"), HC, 0.0, 3)
    assert g.edge_index.shape == (2, 0) and g.edge_attr.shape == (0, 4)


def test_benzene_aromatic_edges():
    g = encode_graph(parse_and_expand("c1ccccc1"), HC, 0.0, 0)
    assert g.num_nodes == 12 and g.num_edges == 24
    assert int(g.edge_attr[:, 3].sum()) == 12


def test_unknown_element_in_vocab():
    with pytest.raises(UnknownElement):
        encode_graph(parse_and_expand("CO"), HC, 0.0, 0)


def test_split_sizes_and_determinism():
    tr, va, te = split_dataset(1000, SplitSpec(seed=3))
    assert (len(tr), len(va), len(te)) == (940, 20, 40)
    tr2, va2, te2 = split_dataset(1000, SplitSpec(seed=3))
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2) and np.array_equal(te, te2)
    with pytest.raises(TooFewSamples):
        split_dataset(5)


@settings(max_examples=100, deadline=None)
@given(st.integers(10, 5000), st.integers(0, 2**31 - 1))
def test_split_disjoint_exhaustive(n, seed):
    parts = split_dataset(n, SplitSpec(seed=seed))
    allidx = np.concatenate(parts)
    assert len(allidx) == n and np.array_equal(np.sort(allidx), np.arange(n))


_SMILES = [r["smiles"] for r in generate_corpus(200, seed=2)]
_VOCAB = build_vocab({a.element for s in _SMILES for a in parse_and_expand(s).atoms})


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(_SMILES), st.integers(0, 10**6))
def test_encoding_invariants(smi, seed):
    mol = parse_and_expand(smi)
    g = encode_graph(mol, _VOCAB, 2.0, 1)
    w = len(_VOCAB)
    assert g.x.shape == (mol.num_atoms, w + 3)
    assert np.all(g.x[:, :w].sum(axis=1) == 1)
    assert np.all(g.edge_attr.sum(axis=1) == 1)
    assert g.x[:, w].sum() == g.num_edges
    src, dst = g.edge_index
    assert np.all(np.lexsort((dst, src)) == np.arange(g.num_edges))
    fwd = {(a, b): tuple(r) for a, b, r in zip(src, dst, g.edge_attr)}
    assert all(fwd[(b, a)] == r for (a, b), r in fwd.items())
    # bond-list order does not matter
    rng = np.random.default_rng(seed)
    shuffled = Molecule(mol.atoms, [mol.bonds[i] for i in rng.permutation(len(mol.bonds))])
    assert encode_graph(shuffled, _VOCAB, 2.0, 1).equals(g)
