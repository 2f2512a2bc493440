import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molddp.corpus import generate_corpus
from molddp.smiles import (AROMATIC, DOUBLE, EmptyInput, MalformedBracketAtom, MalformedCharge, SmilesError,
                           SmilesSyntaxError, UnbalancedBranch, UnclosedRing, UnknownElement, default_valence,
                           expand_hydrogens, parse_and_expand, parse_smiles)

from conftest import FIXTURES


def oracle_rows():
    with open(FIXTURES / "smiles_oracle.csv", newline="") as f:
        return list(csv.DictReader(f))


def test_methane():
    m = parse_smiles("C")
    assert [(a.element, a.implicit_h) for a in m.atoms] == [("C", 4)]
    assert m.bonds == []
    e = expand_hydrogens(m)
    assert (e.num_atoms, len(e.bonds)) == (5, 4)


def test_carbon_dioxide():
    m = parse_smiles("O=C=O")
    assert len(m.atoms) == 3
    assert [b.order for b in m.bonds] == [DOUBLE, DOUBLE]
    assert all(a.implicit_h == 0 for a in m.atoms)


def test_benzene():
    m = parse_smiles("c1ccccc1")
    assert all(a.aromatic and a.element == "C" and a.implicit_h == 1 for a in m.atoms)
    assert len(m.bonds) == 6 and all(b.order == AROMATIC for b in m.bonds)
    e = expand_hydrogens(m)
    assert (e.num_atoms, len(e.bonds)) == (12, 12)


@pytest.mark.parametrize("smi,heavy,h", [
    ("c1ccncc1", 6, 5),          # pyridine
    ("c1cc[nH]c1", 5, 5),        # pyrrole
    ("CC(=O)O", 4, 4),
    ("C#N", 2, 1),
    ("[NH4+]", 1, 4),
    ("[O-]C=O", 3, 1),
    ("CS(=O)(=O)C", 5, 6),       # sulfone uses S valence 6
    ("C[N+](C)(C)C", 5, 12),
    ("[Na+].[Cl-]", 2, 0),
    ("F/C=C/F", 4, 2),
    ("C[C@H](N)O", 4, 7),
    ("C1CC%10CC1%10", 5, 8),
])
def test_hydrogen_counts(smi, heavy, h):
    m = parse_smiles(smi)
    assert m.heavy_atom_count() == heavy
    assert m.num_hydrogens == h


def test_dot_gives_disconnected_components():
    m = parse_smiles("CC.O")
    assert len(m.atoms) == 3 and len(m.bonds) == 1


def test_charge_rule():
    assert default_valence("N", 1) == 4
    assert default_valence("O", -1) == 1
    assert default_valence("C", 0) == 4


ERROR_CASES = [
    ("", EmptyInput),
    ("   ", EmptyInput),
    ("C(", UnbalancedBranch),
    ("C)", UnbalancedBranch),
    ("(C)", UnbalancedBranch),
    ("C1CC", UnclosedRing),
    ("c1cc%12", UnclosedRing),
    ("Q", UnknownElement),
    ("[Xx]", UnknownElement),
    ("[Co]", UnknownElement),
    ("[13C]", MalformedBracketAtom),
    ("[C", MalformedBracketAtom),
    ("[N+-]", MalformedCharge),
    ("[C+20]", MalformedCharge),
    ("C==C", SmilesSyntaxError),
    ("=C", SmilesSyntaxError),
    ("C.", SmilesSyntaxError),
    ("C11", SmilesSyntaxError),
    ("C-", SmilesSyntaxError),
]


@pytest.mark.parametrize("smi,err", ERROR_CASES)
def test_error_kinds(smi, err):
    with pytest.raises(err):
        parse_smiles(smi)


def test_errors_share_base_class():
    for cls in (EmptyInput, UnbalancedBranch, UnclosedRing, UnknownElement, MalformedBracketAtom, MalformedCharge):
        assert issubclass(cls, SmilesError)


def test_oracle_fixture_all_rows():
    rows = oracle_rows()
    assert len(rows) >= 1000
    bad = []
    for r in rows:
        m = parse_smiles(r["smiles"])
        got = (m.heavy_atom_count(), len(m.bonds), m.num_hydrogens)
        want = (int(r["heavy_atoms"]), int(r["bonds"]), int(r["hydrogens"]))
        if got != want:
            bad.append((r["smiles"], got, want))
    assert not bad, bad[:5]


_CORPUS = [r["smiles"] for r in generate_corpus(300, seed=5)]


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(_CORPUS))
def test_expand_idempotent_and_prefix(smi):
    m = parse_smiles(smi)
    e = expand_hydrogens(m)
    assert all(a.implicit_h == 0 for a in e.atoms)
    assert [a.element for a in e.atoms[:len(m.atoms)]] == [a.element for a in m.atoms]
    again = expand_hydrogens(e)
    assert again.atoms == e.atoms and again.bonds == e.bonds


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(_CORPUS))
def test_deterministic_and_heavy_count_equals_atom_tokens(smi):
    a, b = parse_smiles(smi), parse_smiles(smi)
    assert a.atoms == b.atoms and a.bonds == b.bonds
    import re
    tokens = re.findall(r"\[[^\]]+\]|Br|Cl|[BCNOPSFI]|[bcnops]", smi)
    assert a.heavy_atom_count() == len(tokens)


def test_parse_and_expand_counts_match_hydrogens():
    m = parse_smiles("CCO")
    e = parse_and_expand("CCO")
    assert e.num_atoms == m.num_atoms + m.num_hydrogens
