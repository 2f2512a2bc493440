"""SMILES subset parser with hydrogen expansion.

Supported: organic-subset atoms (B C N O P S F Cl Br I), aromatic
lowercase atoms (b c n o s p), bracket atoms with explicit H count and
charge, bonds ``- = # :``, ring closures ``0-9`` and ``%nn``, branches and
dot-separated components. Stereo marks (``/ \\ @``) are read and dropped.
Isotope labels are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

SINGLE, DOUBLE, TRIPLE, AROMATIC = "single", "double", "triple", "aromatic"
BOND_ORDERS = (SINGLE, DOUBLE, TRIPLE, AROMATIC)
_BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}
_BOND_VALENCE = {SINGLE: 1, DOUBLE: 2, TRIPLE: 3, AROMATIC: 1}

# Atomic numbers; the bracket-atom element set (PCQM4Mv2's 31 elements + Se/As spellings).
ATOMIC_NUMBER = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9,
    "Ne": 10, "Na": 11, "Mg": 12, "Al": 13, "Si": 14, "P": 15, "S": 16,
    "Cl": 17, "Ar": 18, "Ca": 20, "Ti": 22, "V": 23, "Ni": 28, "Cu": 29,
    "Zn": 30, "Ga": 31, "Ge": 32, "As": 33, "Se": 34, "Br": 35, "Kr": 36,
    "I": 53,
}
SUPPORTED_ELEMENTS = frozenset(ATOMIC_NUMBER)

# Allowed valences for organic-subset atoms, lowest first.
VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,), "Si": (4,),
}
_N_FAMILY = {"N", "P", "As"}
_O_FAMILY = {"O", "S", "Se"}

_ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
_AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "s": "S", "p": "P"}
_AROMATIC_BRACKET = {**_AROMATIC_ORGANIC, "se": "Se", "as": "As", "si": "Si"}

_TOKEN = re.compile(
    r"(\[[^\]]*\])"           # 1 bracket atom
    r"|(Cl|Br|[BCNOPSFI])"    # 2 organic aliphatic
    r"|([bcnosp])"            # 3 organic aromatic
    r"|(%\d\d|\d)"            # 4 ring closure
    r"|([-=#:])"              # 5 bond
    r"|([/\\])"               # 6 directional bond (discarded)
    r"|(\()|(\))|(\.)"        # 7, 8, 9
)
_BRACKET = re.compile(
    r"^\[(?P<isotope>\d+)?"
    r"(?P<symbol>se|as|si|[bcnosp]|[A-Z][a-z]?)"
    r"(?P<chiral>@+|@TH[12]|@AL[12]|@SP[123]|@TB\d{1,2}|@OH\d{1,2})?"
    r"(?P<hcount>H\d?)?"
    r"(?P<charge>[+-]\d*|\++|-+)?"
    r"(?::\d+)?\]$"
)


class SmilesError(ValueError):
    """Base class for SMILES parse failures."""


class EmptyInput(SmilesError):
    pass


class UnbalancedBranch(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class MalformedBracketAtom(SmilesError):
    """Bracket atom with bad syntax, bad charge, or an isotope label."""


class MalformedCharge(MalformedBracketAtom):
    """Charge suffix that is not +, -, +n, -n, ++... or --..., or is out of range."""


class SmilesSyntaxError(SmilesError):
    pass


@dataclass(slots=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    implicit_h: int = 0


@dataclass(frozen=True, slots=True)
class Bond:
    a: int
    b: int
    order: str = SINGLE


@dataclass(slots=True)
class Molecule:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_hydrogens(self) -> int:
        return sum(a.element == "H" for a in self.atoms) + sum(a.implicit_h for a in self.atoms)

    def heavy_atom_count(self) -> int:
        return sum(a.element != "H" for a in self.atoms)


def default_valence(element: str, charge: int = 0) -> int:
    """Lowest valence of ``element`` after the additive charge correction."""
    base = VALENCES[element][0]
    if element in _N_FAMILY:
        return base + charge
    if element in _O_FAMILY:
        return base - abs(charge)
    return base


def _organic_hydrogens(element: str, aromatic: bool, n_aromatic: int, order_sum: int) -> int:
    if aromatic:
        used = n_aromatic + 1 + order_sum
        return max(0, default_valence(element) - used)
    for v in VALENCES[element]:
        if v >= order_sum:
            return v - order_sum
    return 0


def _parse_bracket(token: str) -> tuple[Atom, int]:
    m = _BRACKET.match(token)
    if m is None:
        sym = re.match(r"^\[\d*([A-Za-z][a-z]?)", token)
        if sym and sym.group(1).capitalize() not in SUPPORTED_ELEMENTS and sym.group(1) not in _AROMATIC_BRACKET:
            raise UnknownElement(f"unsupported element in {token!r}")
        if re.match(r"^\[\d*[A-Za-z][a-z]?@*(H\d?)?[+-]", token):
            raise MalformedCharge(f"bad charge in {token!r}")
        raise MalformedBracketAtom(f"cannot parse bracket atom {token!r}")
    if m.group("isotope"):
        raise MalformedBracketAtom(f"isotope labels are not supported: {token!r}")
    symbol = m.group("symbol")
    aromatic = symbol in _AROMATIC_BRACKET
    element = _AROMATIC_BRACKET[symbol] if aromatic else symbol
    if element not in SUPPORTED_ELEMENTS:
        raise UnknownElement(f"unsupported element {symbol!r} in {token!r}")
    h = m.group("hcount")
    hcount = 0 if not h else (int(h[1:]) if len(h) > 1 else 1)
    c = m.group("charge")
    if not c:
        charge = 0
    elif len(c) > 1 and c[1:].isdigit():
        charge = int(c[1:]) * (1 if c[0] == "+" else -1)
    elif set(c) <= {"+"} or set(c) <= {"-"}:
        charge = len(c) * (1 if c[0] == "+" else -1)
    else:
        raise MalformedCharge(f"bad charge in {token!r}")
    if abs(charge) > 15:
        raise MalformedCharge(f"charge out of range in {token!r}")
    return Atom(element, charge, aromatic, 0), hcount


def parse_smiles(text: str) -> Molecule:
    """Parse ``text`` into a :class:`Molecule` with implicit H counts filled in.

    Atoms keep first-appearance order. Bracket atoms carry exactly the H
    count written inside the brackets; organic-subset atoms get the
    smallest allowed valence not below their bond-order sum.
    """
    if not text or not text.strip():
        raise EmptyInput("empty SMILES string")
    if not text.isascii():
        raise SmilesSyntaxError("SMILES must be ASCII")

    atoms: list[Atom] = []
    bracket_h: dict[int, int] = {}
    bonds: dict[tuple[int, int], str] = {}
    stack: list[int] = []
    rings: dict[str, tuple[int, str | None]] = {}
    prev: int | None = None
    pending: str | None = None
    branch_open = False

    def add_bond(i: int, j: int, order: str | None, pos: int) -> None:
        if i == j:
            raise SmilesSyntaxError(f"atom bonded to itself at position {pos}")
        key = (i, j) if i < j else (j, i)
        if key in bonds:
            raise SmilesSyntaxError(f"duplicate bond between atoms {i} and {j}")
        if order is None:
            order = AROMATIC if atoms[i].aromatic and atoms[j].aromatic else SINGLE
        bonds[key] = order

    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            ch = text[pos]
            if ch == "@":
                pos += 1
                continue
            if ch.isalpha():
                raise UnknownElement(f"unknown atom symbol {ch!r} at position {pos}")
            if ch == "[":
                raise MalformedBracketAtom(f"unterminated bracket atom at position {pos}")
            raise SmilesSyntaxError(f"unexpected character {ch!r} at position {pos}")
        kind = m.lastindex
        tok = m.group(kind)
        if kind in (1, 2, 3):
            if kind == 1:
                atom, hcount = _parse_bracket(tok)
                bracket_h[len(atoms)] = hcount
            elif kind == 2:
                atom = Atom(tok)
            else:
                atom = Atom(_AROMATIC_ORGANIC[tok], 0, True)
            idx = len(atoms)
            atoms.append(atom)
            if prev is not None:
                add_bond(prev, idx, pending, pos)
            prev, pending, branch_open = idx, None, False
        elif kind == 4:
            if prev is None:
                raise SmilesSyntaxError(f"ring closure before any atom at position {pos}")
            label = tok
            if label in rings:
                other, other_order = rings.pop(label)
                if pending and other_order and pending != other_order:
                    raise SmilesSyntaxError(f"conflicting ring bond orders for ring {label}")
                add_bond(other, prev, pending or other_order, pos)
            else:
                rings[label] = (prev, pending)
            pending = None
        elif kind == 5:
            if pending is not None:
                raise SmilesSyntaxError(f"two consecutive bond symbols at position {pos}")
            if prev is None:
                raise SmilesSyntaxError(f"bond symbol without a preceding atom at position {pos}")
            pending = _BOND_SYMBOLS[tok]
        elif kind == 6:
            pass  # directional single bond
        elif kind == 7:
            if prev is None:
                raise UnbalancedBranch(f"branch opened before any atom at position {pos}")
            stack.append(prev)
            branch_open = True
        elif kind == 8:
            if not stack:
                raise UnbalancedBranch(f"unmatched ')' at position {pos}")
            if branch_open or pending is not None:
                raise SmilesSyntaxError(f"empty branch or dangling bond at position {pos}")
            prev = stack.pop()
        else:  # dot
            if stack:
                raise UnbalancedBranch(f"'.' inside an open branch at position {pos}")
            if pending is not None:
                raise SmilesSyntaxError(f"bond symbol before '.' at position {pos}")
            if prev is None:
                raise SmilesSyntaxError(f"empty component before '.' at position {pos}")
            prev = None
        pos = m.end()

    if stack:
        raise UnbalancedBranch(f"{len(stack)} unclosed branch(es)")
    if rings:
        raise UnclosedRing(f"unclosed ring bond(s): {', '.join(sorted(rings))}")
    if pending is not None:
        raise SmilesSyntaxError("SMILES ends with a bond symbol")
    if prev is None and atoms:
        raise SmilesSyntaxError("SMILES ends with '.'")
    if not atoms:
        raise EmptyInput("no atoms in SMILES string")

    bond_list = [Bond(a, b, o) for (a, b), o in bonds.items()]
    n_arom = [0] * len(atoms)
    order_sum = [0] * len(atoms)
    for bd in bond_list:
        for k in (bd.a, bd.b):
            if bd.order == AROMATIC:
                n_arom[k] += 1
            else:
                order_sum[k] += _BOND_VALENCE[bd.order]
    for i, atom in enumerate(atoms):
        if i in bracket_h:
            atom.implicit_h = bracket_h[i]
        else:
            atom.implicit_h = _organic_hydrogens(atom.element, atom.aromatic, n_arom[i], order_sum[i])
    return Molecule(atoms, bond_list)


def expand_hydrogens(mol: Molecule) -> Molecule:
    """Materialize implicit hydrogens as H atoms single-bonded to their parent.

    The original atoms stay as a prefix in the same order. A molecule with
    no implicit hydrogens comes back structurally unchanged.
    """
    atoms = [replace(a, implicit_h=0) for a in mol.atoms]
    bonds = list(mol.bonds)
    for i, a in enumerate(mol.atoms):
        for _ in range(a.implicit_h):
            atoms.append(Atom("H"))
            bonds.append(Bond(i, len(atoms) - 1, SINGLE))
    return Molecule(atoms, bonds)


def parse_and_expand(text: str) -> Molecule:
    return expand_hydrogens(parse_smiles(text))
