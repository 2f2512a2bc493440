"""Molecule -> (x, edge_index, edge_attr, y) tensors, vocabularies and splits."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .smiles import ATOMIC_NUMBER, BOND_ORDERS, Molecule, UnknownElement

EDGE_FEATURES = len(BOND_ORDERS)
_BOND_COLUMN = {o: k for k, o in enumerate(BOND_ORDERS)}


class EmptyDataset(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVocab:
    elements: tuple[str, ...]

    def __post_init__(self):
        if not self.elements:
            raise EmptyDataset("vocabulary must contain at least one element")
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("duplicate elements in vocabulary")
        z = [ATOMIC_NUMBER[e] for e in self.elements]
        if z != sorted(z):
            raise ValueError("vocabulary must be sorted by atomic number")

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def node_features(self) -> int:
        return len(self.elements) + 3

    def column(self, element: str) -> int:
        try:
            return self.elements.index(element)
        except ValueError:
            raise UnknownElement(f"element {element!r} not in vocabulary {self.elements}") from None


@dataclass
class GraphSample:
    id: int
    x: np.ndarray           # (nodes, node_features)
    edge_index: np.ndarray  # (2, edges) int64
    edge_attr: np.ndarray   # (edges, edge_features)
    y: np.ndarray           # (1,)

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]

    def equals(self, other: GraphSample) -> bool:
        """Bitwise equality of id and all four tensors (dtype included)."""
        if self.id != other.id:
            return False
        for a, b in ((self.x, other.x), (self.edge_index, other.edge_index),
                     (self.edge_attr, other.edge_attr), (self.y, other.y)):
            if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.94
    val_share_of_rest: float = 1 / 3
    test_share_of_rest: float = 2 / 3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.val_share_of_rest <= 0 or self.test_share_of_rest <= 0:
            raise ValueError("split shares must be positive")
        if abs(self.val_share_of_rest + self.test_share_of_rest - 1) > 1e-9:
            raise ValueError("validation and test shares must sum to 1")


def build_vocab(elements_seen: Iterable[str]) -> FeatureVocab:
    present = set(elements_seen)
    if not present:
        raise EmptyDataset("no elements seen")
    for e in present:
        if e not in ATOMIC_NUMBER:
            raise UnknownElement(f"unsupported element {e!r}")
    return FeatureVocab(tuple(sorted(present, key=ATOMIC_NUMBER.__getitem__)))


def encode_graph(mol: Molecule, vocab: FeatureVocab, target: float, id: int,
                 dtype=np.float32) -> GraphSample:
    """Encode a hydrogen-expanded molecule.

    Node row: one-hot element, then degree, formal charge, aromatic flag.
    Every bond becomes two directed edges sorted by (source, destination),
    each carrying the one-hot bond order.
    """
    n = len(mol.atoms)
    nb = len(mol.bonds)
    x = np.zeros((n, vocab.node_features), dtype=dtype)
    width = len(vocab)
    src = np.empty(2 * nb, dtype=np.int64)
    dst = np.empty(2 * nb, dtype=np.int64)
    col = np.empty(2 * nb, dtype=np.int64)
    for k, b in enumerate(mol.bonds):
        c = _BOND_COLUMN[b.order]
        src[2 * k], dst[2 * k], col[2 * k] = b.a, b.b, c
        src[2 * k + 1], dst[2 * k + 1], col[2 * k + 1] = b.b, b.a, c
    degree = np.bincount(src, minlength=n)
    for i, atom in enumerate(mol.atoms):
        if atom.implicit_h:
            raise ValueError("molecule must be hydrogen-expanded before encoding")
        x[i, vocab.column(atom.element)] = 1
        x[i, width + 1] = atom.formal_charge
        x[i, width + 2] = 1 if atom.aromatic else 0
    x[:, width] = degree
    order = np.lexsort((dst, src))
    edge_index = np.stack([src[order], dst[order]])
    edge_attr = np.zeros((2 * nb, EDGE_FEATURES), dtype=dtype)
    edge_attr[np.arange(2 * nb), col[order]] = 1
    y = np.array([target], dtype=dtype)
    return GraphSample(int(id), x, edge_index, edge_attr, y)


def split_dataset(n: int, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into train / validation / test."""
    if n < 10:
        raise TooFewSamples(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(np.floor(spec.train_fraction * n))
    rest = n - n_train
    n_val = int(np.floor(spec.val_share_of_rest * rest + 1e-9))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
