"""Categorical molecular graph model: dense node/edge categories, fixed-size
batching with one-hot encodings, and reconstruction-accuracy metrics.

A molecule is a set of typed nodes plus a symmetric matrix of bond categories
where category 0 always means "no bond".  Batches encode every node slot up to
a fixed width and every unordered node pair as an edge slot, so the categorical
likelihood has a deterministic slot set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ShapeMismatch


class GraphTooLarge(ValueError):
    """A molecule has more atoms than the batch width allows."""

    def __init__(self, n_atoms: int, v_max: int):
        super().__init__(f"graph has {n_atoms} atoms, batch width is {v_max}")
        self.n_atoms = n_atoms
        self.v_max = v_max


@dataclass
class MolecularGraph:
    """A molecule as categorical node types and a dense bond-category matrix.

    ``node_types[i]`` indexes into the atom alphabet; ``bond_matrix[i, j]``
    indexes into the bond alphabet with 0 meaning "none".  The matrix is
    symmetric with a zero diagonal.
    """

    node_types: np.ndarray
    bond_matrix: np.ndarray

    def __post_init__(self):
        self.node_types = np.asarray(self.node_types, dtype=np.int64)
        self.bond_matrix = np.asarray(self.bond_matrix, dtype=np.int64)
        n = self.node_types.shape[0]
        if n < 1:
            raise ValueError("a molecular graph needs at least one atom")
        if self.node_types.ndim != 1:
            raise ValueError("node_types must be one-dimensional")
        if self.bond_matrix.shape != (n, n):
            raise ValueError(
                f"bond matrix shape {self.bond_matrix.shape} does not match {n} nodes"
            )
        if (self.bond_matrix < 0).any() or (self.node_types < 0).any():
            raise ValueError("category indices must be non-negative")
        if (np.diag(self.bond_matrix) != 0).any():
            raise ValueError("bond matrix diagonal must be all 'none'")
        if (self.bond_matrix != self.bond_matrix.T).any():
            raise ValueError("bond matrix must be symmetric")

    @property
    def n_atoms(self) -> int:
        return int(self.node_types.shape[0])

    def bonds(self) -> list[tuple[int, int, int]]:
        """All bonded pairs as (i, j, kind) with i < j and kind != 0."""
        iu, ju = np.triu_indices(self.n_atoms, k=1)
        kinds = self.bond_matrix[iu, ju]
        keep = kinds != 0
        return list(zip(iu[keep].tolist(), ju[keep].tolist(), kinds[keep].tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MolecularGraph):
            return NotImplemented
        return bool(
            np.array_equal(self.node_types, other.node_types)
            and np.array_equal(self.bond_matrix, other.bond_matrix)
        )


def edge_slot_indices(v_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangular pair slots (i, j), i < j, in lexicographic order."""
    return np.triu_indices(v_max, k=1)


def n_edge_slots(v_max: int) -> int:
    return v_max * (v_max - 1) // 2


@dataclass
class GraphBatch:
    """Fixed-width one-hot encoding of a list of molecules.

    Shapes: ``node_onehot`` B x V x K, ``edge_onehot`` B x E x L with
    E = V(V-1)/2 upper-triangular pair slots, plus boolean masks.  Unmasked
    one-hot rows contain a single exact 1; masked rows are all zero.
    """

    node_onehot: torch.Tensor
    edge_onehot: torch.Tensor
    node_mask: torch.Tensor
    edge_mask: torch.Tensor

    @property
    def batch_size(self) -> int:
        return int(self.node_onehot.shape[0])

    @property
    def width(self) -> int:
        return int(self.node_onehot.shape[1])

    @property
    def n_node_types(self) -> int:
        return int(self.node_onehot.shape[2])

    @property
    def n_bond_types(self) -> int:
        return int(self.edge_onehot.shape[2])

    def node_categories(self) -> torch.Tensor:
        """B x V category indices (0 on masked slots)."""
        return self.node_onehot.argmax(dim=2)

    def bond_category_matrix(self) -> torch.Tensor:
        """Dense symmetric B x V x V bond-category matrix (0 on masked slots)."""
        b, v = self.batch_size, self.width
        iu, ju = edge_slot_indices(v)
        cats = self.edge_onehot.argmax(dim=2)
        dense = torch.zeros((b, v, v), dtype=torch.long)
        dense[:, iu, ju] = cats
        dense[:, ju, iu] = cats
        return dense

    def graph(self, row: int) -> MolecularGraph:
        """Decode one row back to a MolecularGraph."""
        return from_categorical(
            self.node_categories()[row].numpy(),
            self.edge_onehot[row].argmax(dim=1).numpy(),
            self.node_mask[row].numpy(),
        )


def to_batch(
    graphs: Sequence[MolecularGraph],
    v_max: int,
    n_node_types: int,
    n_bond_types: int,
) -> GraphBatch:
    """One-hot encode and pad molecules to a fixed width.

    Edge slot (i, j), i < j, carries ``bond_matrix[i][j]``.  Masks reflect the
    actual sizes; an edge slot is unmasked iff both its node slots are.

    Raises:
        GraphTooLarge: if any molecule has more than ``v_max`` atoms.
    """
    b = len(graphs)
    e_max = n_edge_slots(v_max)
    node_onehot = torch.zeros((b, v_max, n_node_types), dtype=torch.float64)
    edge_onehot = torch.zeros((b, e_max, n_bond_types), dtype=torch.float64)
    node_mask = torch.zeros((b, v_max), dtype=torch.bool)
    edge_mask = torch.zeros((b, e_max), dtype=torch.bool)
    iu, ju = edge_slot_indices(v_max)
    for row, g in enumerate(graphs):
        n = g.n_atoms
        if n > v_max:
            raise GraphTooLarge(n, v_max)
        if int(g.node_types.max()) >= n_node_types:
            raise ValueError("node category out of range for the atom alphabet")
        if int(g.bond_matrix.max(initial=0)) >= n_bond_types:
            raise ValueError("bond category out of range for the bond alphabet")
        node_onehot[row, torch.arange(n), torch.from_numpy(g.node_types)] = 1.0
        node_mask[row, :n] = True
        live = (iu < n) & (ju < n)
        slots = torch.from_numpy(np.flatnonzero(live))
        cats = torch.from_numpy(g.bond_matrix[iu[live], ju[live]])
        edge_onehot[row, slots, cats] = 1.0
        edge_mask[row] = torch.from_numpy(live)
    return GraphBatch(node_onehot, edge_onehot, node_mask, edge_mask)


def from_categorical(
    node_argmax: np.ndarray,
    edge_argmax: np.ndarray,
    node_mask: np.ndarray,
) -> MolecularGraph:
    """Rebuild a molecule from per-slot category indices.

    Inverse of the encoding rule: masked entries are dropped, the symmetric
    bond matrix is filled from the upper-triangular edge slots.
    """
    node_argmax = np.asarray(node_argmax, dtype=np.int64)
    edge_argmax = np.asarray(edge_argmax, dtype=np.int64)
    node_mask = np.asarray(node_mask, dtype=bool)
    v_max = node_argmax.shape[0]
    if edge_argmax.shape[0] != n_edge_slots(v_max):
        raise ShapeMismatch(
            f"expected {n_edge_slots(v_max)} edge slots for width {v_max}, "
            f"got {edge_argmax.shape[0]}"
        )
    n = int(node_mask.sum())
    if n < 1:
        raise ValueError("cannot build a graph with zero unmasked nodes")
    keep = np.flatnonzero(node_mask)
    types = node_argmax[keep]
    matrix = np.zeros((n, n), dtype=np.int64)
    iu, ju = edge_slot_indices(v_max)
    pos = -np.ones(v_max, dtype=np.int64)
    pos[keep] = np.arange(n)
    live = node_mask[iu] & node_mask[ju]
    matrix[pos[iu[live]], pos[ju[live]]] = edge_argmax[live]
    matrix[pos[ju[live]], pos[iu[live]]] = edge_argmax[live]
    return MolecularGraph(types, matrix)


def reconstruction_accuracy(
    node_logits: torch.Tensor,
    edge_logits: torch.Tensor,
    truth: GraphBatch,
) -> tuple[float, float]:
    """Fraction of unmasked slots whose argmax matches the true category.

    Masked positions are excluded from numerator and denominator; an empty
    denominator counts as a vacuous 1.0.
    """
    if node_logits.shape != truth.node_onehot.shape:
        raise ShapeMismatch(
            f"node logits {tuple(node_logits.shape)} vs truth "
            f"{tuple(truth.node_onehot.shape)}"
        )
    if edge_logits.shape != truth.edge_onehot.shape:
        raise ShapeMismatch(
            f"edge logits {tuple(edge_logits.shape)} vs truth "
            f"{tuple(truth.edge_onehot.shape)}"
        )

    def masked_fraction(logits, onehot, mask) -> float:
        total = int(mask.sum())
        if total == 0:
            return 1.0
        hits = (logits.argmax(dim=2) == onehot.argmax(dim=2)) & mask
        return int(hits.sum()) / total

    node_acc = masked_fraction(node_logits, truth.node_onehot, truth.node_mask)
    edge_acc = masked_fraction(edge_logits, truth.edge_onehot, truth.edge_mask)
    return node_acc, edge_acc
