"""Synthetic molecule corpora for desk-scale experiments.

Molecules are grown as graphs with valence bookkeeping, then written out
as SMILES with a randomized depth-first traversal. Two targets are
attached: a Hückel-style HOMO-LUMO gap in eV (a cheap, nonlocal stand-in
for DFT labels) and the heavy-atom count scaled to [0, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .smiles import AROMATIC, DOUBLE, SINGLE, TRIPLE, Molecule

_ALIPHATIC = ("C", "N", "O", "S", "F", "Cl", "Br")
_ALIPHATIC_P = np.array([0.62, 0.13, 0.13, 0.04, 0.04, 0.03, 0.01])
_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1, "Br": 1}

# (elements, aromatic-nH position or -1); atoms listed around the ring.
_RINGS = (
    (("C",) * 6, -1),
    (("C", "C", "C", "N", "C", "C"), -1),
    (("C", "N", "C", "N", "C", "C"), -1),
    (("C", "C", "C", "C", "N"), 4),
    (("C", "C", "C", "C", "O"), -1),
    (("C", "C", "C", "C", "S"), -1),
    (("C", "C", "N", "C", "O"), -1),
)
_RING_P = np.array([0.45, 0.15, 0.08, 0.08, 0.08, 0.08, 0.08])

MIN_HEAVY, MAX_HEAVY = 4, 30


@dataclass
class _Graph:
    elements: list[str] = field(default_factory=list)
    aromatic: list[bool] = field(default_factory=list)
    explicit_h: list[int] = field(default_factory=list)  # -1: organic (implicit)
    free: list[int] = field(default_factory=list)
    adj: list[dict[int, str]] = field(default_factory=list)

    def add_atom(self, element: str, aromatic: bool, free: int, explicit_h: int = -1) -> int:
        self.elements.append(element)
        self.aromatic.append(aromatic)
        self.explicit_h.append(explicit_h)
        self.free.append(free)
        self.adj.append({})
        return len(self.elements) - 1

    def bond(self, i: int, j: int, order: str) -> None:
        self.adj[i][j] = order
        self.adj[j][i] = order


def _bond_cost(order: str) -> int:
    return {SINGLE: 1, DOUBLE: 2, TRIPLE: 3}[order]


def _add_ring(g: _Graph, rng: np.random.Generator) -> list[int]:
    elems, nh = _RINGS[rng.choice(len(_RINGS), p=_RING_P)]
    idx = []
    for k, el in enumerate(elems):
        if el == "C":
            free = 1
        elif k == nh:
            free = 1  # substituting the pyrrole N removes its H
        else:
            free = 0
        idx.append(g.add_atom(el, True, free, 1 if k == nh else -1))
    for k in range(len(idx)):
        g.bond(idx[k], idx[(k + 1) % len(idx)], AROMATIC)
    return idx


def _distance(g: _Graph, src: int, dst: int, limit: int) -> int:
    seen = {src}
    frontier = [src]
    for d in range(1, limit + 1):
        nxt = []
        for u in frontier:
            for v in g.adj[u]:
                if v == dst:
                    return d
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return limit + 1


def random_molecule_graph(rng: np.random.Generator, n_heavy: int) -> _Graph:
    g = _Graph()
    if rng.random() < 0.5:
        _add_ring(g, rng)
    else:
        el = _ALIPHATIC[rng.choice(4, p=_ALIPHATIC_P[:4] / _ALIPHATIC_P[:4].sum())]
        g.add_atom(el, False, _VALENCE[el])
    while len(g.elements) < n_heavy:
        open_atoms = [i for i, f in enumerate(g.free) if f > 0]
        if not open_atoms:
            break
        host = open_atoms[rng.integers(len(open_atoms))]
        room = n_heavy - len(g.elements)
        if room >= 5 and rng.random() < 0.18:
            ring = _add_ring(g, rng)
            anchors = [i for i in ring if g.free[i] > 0]
            a = anchors[rng.integers(len(anchors))]
            g.bond(host, a, SINGLE)
            g.free[host] -= 1
            g.free[a] -= 1
            for k in (host, a):
                if g.explicit_h[k] == 1:
                    g.explicit_h[k] = -1
            continue
        el = _ALIPHATIC[rng.choice(len(_ALIPHATIC), p=_ALIPHATIC_P)]
        j = g.add_atom(el, False, _VALENCE[el])
        order = SINGLE
        cap = min(g.free[host], g.free[j])
        if not g.aromatic[host] and cap >= 2 and rng.random() < 0.15:
            order = TRIPLE if cap >= 3 and rng.random() < 0.2 else DOUBLE
        g.bond(host, j, order)
        if g.explicit_h[host] == 1:
            g.explicit_h[host] = -1
        g.free[host] -= _bond_cost(order)
        g.free[j] -= _bond_cost(order)
    # occasional aliphatic ring closure between distant atoms
    if rng.random() < 0.3:
        cands = [i for i, f in enumerate(g.free) if f > 0 and not g.aromatic[i] and g.elements[i] in ("C", "N")]
        rng.shuffle(cands)
        for a_pos, a in enumerate(cands):
            done = False
            for b in cands[a_pos + 1:]:
                if g.free[a] > 0 and g.free[b] > 0 and b not in g.adj[a]:
                    d = _distance(g, a, b, 6)
                    if 4 <= d <= 6:
                        g.bond(a, b, SINGLE)
                        g.free[a] -= 1
                        g.free[b] -= 1
                        done = True
                        break
            if done:
                break
    return g


def _atom_token(g: _Graph, i: int) -> str:
    el = g.elements[i]
    if g.aromatic[i]:
        sym = el.lower()
        if g.explicit_h[i] > 0:
            return f"[{sym}H]"
        return sym
    return el


def write_smiles(g: _Graph, rng: np.random.Generator | None = None) -> str:
    """Write a connected graph as SMILES via depth-first traversal."""
    n = len(g.elements)
    order_of = {}
    parent = {}
    visit = []
    start = 0 if rng is None else int(rng.integers(n))
    stack = [(start, -1)]
    while stack:
        u, p = stack.pop()
        if u in order_of:
            continue
        order_of[u] = len(visit)
        parent[u] = p
        visit.append(u)
        nbrs = list(g.adj[u])
        if rng is not None:
            rng.shuffle(nbrs)
        for v in reversed(nbrs):
            if v not in order_of:
                stack.append((v, u))
    # tree children in visit order; remaining edges become ring closures
    children: dict[int, list[int]] = {u: [] for u in visit}
    for u in visit[1:]:
        children[parent[u]].append(u)
    closures: dict[int, list[tuple[int, str]]] = {u: [] for u in visit}
    for u in visit:
        for v, order in g.adj[u].items():
            if parent.get(v) == u or parent.get(u) == v:
                continue
            if order_of[u] < order_of[v]:
                closures[u].append((v, order))
    # assign ring labels in traversal order, reusing freed labels
    free_labels: list[int] = []
    next_label = 1
    open_at: dict[tuple[int, int], int] = {}
    tokens: dict[int, str] = {}

    def bond_sym(a: int, b: int, order: str) -> str:
        if order == DOUBLE:
            return "="
        if order == TRIPLE:
            return "#"
        if order == SINGLE and g.aromatic[a] and g.aromatic[b]:
            return "-"
        return ""

    def label_text(k: int) -> str:
        return str(k) if k < 10 else f"%{k:02d}"

    for u in visit:
        parts = [_atom_token(g, u)]
        for (a, b), k in sorted(open_at.items(), key=lambda kv: kv[1]):
            if b == u:
                parts.append(label_text(k))
                del open_at[(a, b)]
                free_labels.append(k)
        for v, order in closures[u]:
            if free_labels:
                free_labels.sort()
                k = free_labels.pop(0)
            else:
                k = next_label
                next_label += 1
            open_at[(u, v)] = k
            parts.append(bond_sym(u, v, order) + label_text(k))
        tokens[u] = "".join(parts)

    out: list[str] = []

    def emit(u: int) -> None:
        out.append(tokens[u])
        kids = children[u]
        for idx, v in enumerate(kids):
            sym = bond_sym(u, v, g.adj[u][v])
            if idx < len(kids) - 1:
                out.append("(" + sym)
                emit(v)
                out.append(")")
            else:
                out.append(sym)
                emit(v)

    # iterative emission would need an explicit frame stack; molecules here are small
    emit(start)
    return "".join(out)


_ONSITE = {"C": 0.0, "N": 0.5, "O": 1.0, "S": 0.3, "F": 3.0, "Cl": 2.0, "Br": 1.5}
_HOPPING = {SINGLE: 0.8, DOUBLE: 1.0, TRIPLE: 1.1, AROMATIC: 1.0}


def huckel_gap(mol: Molecule) -> float:
    """Hückel-style frontier-orbital gap in eV over the heavy-atom graph."""
    heavy = [i for i, a in enumerate(mol.atoms) if a.element != "H"]
    pos = {i: k for k, i in enumerate(heavy)}
    n = len(heavy)
    h = np.zeros((n, n))
    for k, i in enumerate(heavy):
        h[k, k] = _ONSITE.get(mol.atoms[i].element, 0.5)
    for b in mol.bonds:
        if b.a in pos and b.b in pos:
            t = _HOPPING[b.order]
            h[pos[b.a], pos[b.b]] = h[pos[b.b], pos[b.a]] = t
    # orbital energies are -eigenvalues of the hopping matrix (beta < 0)
    levels = np.sort(-np.linalg.eigvalsh(h))
    n_occ = (n + 1) // 2
    if n_occ >= n:
        return 2.0 + 2.5 * float(abs(levels[-1]))
    return 2.0 + 2.5 * float(levels[n_occ] - levels[n_occ - 1])


def scaled_heavy_count(n_heavy: int) -> float:
    return (n_heavy - MIN_HEAVY) / (MAX_HEAVY - MIN_HEAVY)


def generate_corpus(n: int, seed: int = 0, min_heavy: int = 6, max_heavy: int = 26) -> list[dict]:
    """Return ``n`` records with keys ``smiles``, ``gap``, ``heavy_scaled``."""
    from .smiles import parse_smiles

    rng = np.random.default_rng(seed)
    records = []
    while len(records) < n:
        target = int(rng.integers(min_heavy, max_heavy + 1))
        g = random_molecule_graph(rng, target)
        smi = write_smiles(g, rng)
        mol = parse_smiles(smi)
        heavy = mol.heavy_atom_count()
        records.append({
            "smiles": smi,
            "gap": round(huckel_gap(mol), 6),
            "heavy_scaled": round(scaled_heavy_count(heavy), 6),
        })
    return records


def write_corpus_csv(path: str | Path, records: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["smiles", "gap", "heavy_scaled"], lineterminator="\n")
        w.writeheader()
        w.writerows(records)
