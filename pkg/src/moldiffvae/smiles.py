"""Practical-subset SMILES tokenizer, parser, and writer.

Supported subset: the organic-subset atoms B, C, N, O, P, S, F, Cl, Br, I,
their aromatic forms b, c, n, o, p, s, bond symbols ``- = # :``, branches,
ring closures ``1``-``9`` and ``%nn``, and the ``.`` component separator.
Bracket atoms, stereo markers, isotopes, and charges are rejected with a
position-carrying error.  Hydrogens are implicit and never become nodes.

Aromatic perception is purely syntactic: an unannotated bond between two
lowercase aromatic atoms is recorded as aromatic, everything else defaults
to single.  Valence problems warn, they do not fail the parse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graphs import MolecularGraph

ALIPHATIC_SYMBOLS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_SYMBOLS = ("b", "c", "n", "o", "p", "s")

BOND_NONE = 0
BOND_SINGLE = 1
BOND_DOUBLE = 2
BOND_TRIPLE = 3
BOND_AROMATIC = 4

_BOND_SYMBOL_TO_KIND = {"-": BOND_SINGLE, "=": BOND_DOUBLE, "#": BOND_TRIPLE, ":": BOND_AROMATIC}
_BOND_KIND_TO_SYMBOL = {BOND_SINGLE: "-", BOND_DOUBLE: "=", BOND_TRIPLE: "#", BOND_AROMATIC: ":"}

# Constructs we recognize as SMILES but deliberately do not support.
_UNSUPPORTED_CHARS = {
    "/": "stereo bond marker",
    "\\": "stereo bond marker",
    "@": "chirality marker",
    "*": "wildcard atom",
    "+": "charge outside a bracket atom",
    "$": "quadruple bond",
    "~": "any-bond query",
}

# Highest usual bond-order sum per element; used only to warn.
_VALENCE_LIMITS = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 5, "S": 6, "F": 1, "Cl": 1, "Br": 1, "I": 1}


class SmilesError(ValueError):
    """Base error for tokenizing/parsing/writing; carries a character offset."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class UnknownSymbol(SmilesError):
    pass


class UnterminatedBracketAtom(SmilesError):
    pass


class UnsupportedFeature(SmilesError):
    pass


class MalformedSmiles(SmilesError):
    """Grammar violations: dangling bonds, empty branches, bond/token misuse."""


class UnmatchedRingBond(SmilesError):
    def __init__(self, ring_index: int, position: int):
        super().__init__(f"ring-closure digit {ring_index} never paired", position)
        self.ring_index = ring_index


class BranchUnderflow(SmilesError):
    pass


class BranchOverflow(SmilesError):
    pass


class UnserializableGraph(ValueError):
    """The graph uses a bond category with no SMILES spelling."""


class SmilesValenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AtomAlphabet:
    """Ordered atom categories; index of a symbol is stable across a run."""

    symbols: tuple[str, ...] = ALIPHATIC_SYMBOLS + AROMATIC_SYMBOLS

    def __post_init__(self):
        if len(self.symbols) < 1:
            raise ValueError("atom alphabet must not be empty")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("atom alphabet has duplicate symbols")

    @property
    def K(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        return self.symbols.index(symbol)

    def symbol(self, index: int) -> str:
        return self.symbols[index]

    def is_aromatic(self, index: int) -> bool:
        return self.symbols[index].islower()


@dataclass(frozen=True)
class BondAlphabet:
    """Ordered bond categories; index 0 is always "none"."""

    kinds: tuple[str, ...] = ("none", "single", "double", "triple", "aromatic")

    def __post_init__(self):
        if len(self.kinds) < 2 or self.kinds[0] != "none":
            raise ValueError("bond alphabet needs 'none' first and one real bond")

    @property
    def L(self) -> int:
        return len(self.kinds)


DEFAULT_ATOMS = AtomAlphabet()
DEFAULT_BONDS = BondAlphabet()

TOKEN_KINDS = ("atom", "bond", "branch_open", "branch_close", "ring_bond_digit", "dot")


@dataclass(frozen=True)
class SmilesToken:
    kind: str
    payload: str | int
    position: int


def tokenize(text: str) -> list[SmilesToken]:
    """Split a SMILES string into tokens, or fail with a positioned error.

    Every input either tokenizes fully or raises; nothing is silently
    truncated.  Concatenating the consumed source spans reproduces the input.
    """
    if not text:
        raise SmilesError("empty SMILES string", 0)
    tokens: list[SmilesToken] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if not c.isascii():
            raise UnknownSymbol(f"non-ASCII character {c!r}", i)
        two = text[i : i + 2]
        if two in ("Cl", "Br"):
            tokens.append(SmilesToken("atom", two, i))
            i += 2
        elif c in ALIPHATIC_SYMBOLS or c in AROMATIC_SYMBOLS:
            tokens.append(SmilesToken("atom", c, i))
            i += 1
        elif c in _BOND_SYMBOL_TO_KIND:
            tokens.append(SmilesToken("bond", _BOND_SYMBOL_TO_KIND[c], i))
            i += 1
        elif c == "(":
            tokens.append(SmilesToken("branch_open", "(", i))
            i += 1
        elif c == ")":
            tokens.append(SmilesToken("branch_close", ")", i))
            i += 1
        elif c.isdigit():
            tokens.append(SmilesToken("ring_bond_digit", int(c), i))
            i += 1
        elif c == "%":
            digits = text[i + 1 : i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise MalformedSmiles("'%' must be followed by exactly two digits", i)
            tokens.append(SmilesToken("ring_bond_digit", int(digits), i))
            i += 3
        elif c == "[":
            end = text.find("]", i + 1)
            if end < 0:
                raise UnterminatedBracketAtom("bracket atom never closed", i)
            raise UnsupportedFeature(f"bracket atom {text[i:end + 1]!r}", i)
        elif c == ".":
            tokens.append(SmilesToken("dot", ".", i))
            i += 1
        elif c in _UNSUPPORTED_CHARS:
            raise UnsupportedFeature(_UNSUPPORTED_CHARS[c], i)
        else:
            raise UnknownSymbol(f"character {c!r}", i)
    return tokens


def _default_bond(aromatic_a: bool, aromatic_b: bool) -> int:
    return BOND_AROMATIC if (aromatic_a and aromatic_b) else BOND_SINGLE


def parse(text: str, alphabet: AtomAlphabet = DEFAULT_ATOMS) -> MolecularGraph:
    """Build a MolecularGraph from a SMILES string.

    One node per atom token; bonds follow adjacency, branches, and matched
    ring-closure digits.  Raises a SmilesError subclass on any violation;
    valence excesses only warn (SmilesValenceWarning).
    """
    tokens = tokenize(text)
    node_types: list[int] = []
    node_aromatic: list[bool] = []
    bonds: dict[tuple[int, int], int] = {}

    prev: int | None = None
    pending: int | None = None  # explicit bond waiting for its right-hand atom
    branch_stack: list[tuple[int, int]] = []  # (return atom, '(' position)
    ring_open: dict[int, tuple[int, int | None, int]] = {}  # digit -> (atom, bond, pos)

    def add_bond(a: int, b: int, kind: int, position: int) -> None:
        if a == b:
            raise MalformedSmiles("ring bond closing onto the same atom", position)
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise MalformedSmiles(f"duplicate bond between atoms {a} and {b}", position)
        bonds[key] = kind

    for tok in tokens:
        if tok.kind == "atom":
            symbol = str(tok.payload)
            idx = len(node_types)
            node_types.append(alphabet.index(symbol))
            node_aromatic.append(symbol.islower())
            if prev is not None:
                kind = pending if pending is not None else _default_bond(
                    node_aromatic[prev], node_aromatic[idx]
                )
                add_bond(prev, idx, kind, tok.position)
            pending = None
            prev = idx
        elif tok.kind == "bond":
            if prev is None:
                raise MalformedSmiles("bond symbol before any atom", tok.position)
            if pending is not None:
                raise MalformedSmiles("two bond symbols in a row", tok.position)
            pending = int(tok.payload)
        elif tok.kind == "branch_open":
            if prev is None:
                raise MalformedSmiles("branch opened before any atom", tok.position)
            if pending is not None:
                raise MalformedSmiles("bond symbol directly before '('", tok.position)
            branch_stack.append((prev, tok.position))
        elif tok.kind == "branch_close":
            if not branch_stack:
                raise BranchUnderflow("')' without a matching '('", tok.position)
            if pending is not None:
                raise MalformedSmiles("dangling bond before ')'", tok.position)
            prev, _ = branch_stack.pop()
        elif tok.kind == "ring_bond_digit":
            if prev is None:
                raise MalformedSmiles("ring-closure digit before any atom", tok.position)
            digit = int(tok.payload)
            if digit in ring_open:
                other, opened_bond, _ = ring_open.pop(digit)
                if pending is not None and opened_bond is not None and pending != opened_bond:
                    raise MalformedSmiles(
                        f"ring bond {digit} annotated with conflicting bond orders",
                        tok.position,
                    )
                kind = pending if pending is not None else opened_bond
                if kind is None:
                    kind = _default_bond(node_aromatic[prev], node_aromatic[other])
                add_bond(prev, other, kind, tok.position)
            else:
                ring_open[digit] = (prev, pending, tok.position)
            pending = None
        elif tok.kind == "dot":
            if pending is not None:
                raise MalformedSmiles("bond symbol directly before '.'", tok.position)
            prev = None
        else:  # pragma: no cover - tokenize only emits the kinds above
            raise MalformedSmiles(f"unhandled token kind {tok.kind}", tok.position)

    if pending is not None:
        raise MalformedSmiles("dangling bond at end of input", len(text) - 1)
    if branch_stack:
        _, position = branch_stack[0]
        raise BranchOverflow("'(' never closed", position)
    if ring_open:
        digit = min(ring_open)
        raise UnmatchedRingBond(digit, ring_open[digit][2])
    if not node_types:
        raise MalformedSmiles("no atoms in SMILES string", 0)

    n = len(node_types)
    matrix = np.zeros((n, n), dtype=np.int64)
    for (a, b), kind in bonds.items():
        matrix[a, b] = kind
        matrix[b, a] = kind
    graph = MolecularGraph(np.array(node_types, dtype=np.int64), matrix)
    _warn_on_valence(graph, alphabet, text)
    return graph


def _warn_on_valence(graph: MolecularGraph, alphabet: AtomAlphabet, text: str) -> None:
    # Aromatic bonds count 1 each: crude, but it keeps fused-ring atoms and
    # aromatic heteroatoms quiet while still catching gross order violations.
    order = {BOND_SINGLE: 1.0, BOND_DOUBLE: 2.0, BOND_TRIPLE: 3.0, BOND_AROMATIC: 1.0}
    offenders = []
    for i in range(graph.n_atoms):
        symbol = alphabet.symbol(int(graph.node_types[i]))
        limit = _VALENCE_LIMITS.get(symbol.capitalize() if len(symbol) == 1 else symbol)
        if limit is None:
            continue
        kinds = [int(k) for k in graph.bond_matrix[i] if k != BOND_NONE]
        total = sum(order.get(k, 0.0) for k in kinds)
        if total > limit:
            offenders.append(f"atom {i} ({symbol}): {total:g} > {limit}")
    if offenders:
        warnings.warn(
            f"valence exceeded in {text!r}: " + "; ".join(offenders),
            SmilesValenceWarning,
            stacklevel=3,
        )


def write_smiles(graph: MolecularGraph, alphabet: AtomAlphabet = DEFAULT_ATOMS) -> str:
    """Serialize a graph to SMILES.

    Canonical for a given labeling: depth-first from the lowest-index node of
    each component, neighbors in ascending index order, components joined by
    '.'.  Re-parsing yields a graph isomorphic to the input.

    Raises:
        UnserializableGraph: a bond category has no SMILES spelling.
    """
    n = graph.n_atoms
    for idx in graph.node_types:
        if int(idx) >= alphabet.K:
            raise UnserializableGraph(f"node category {int(idx)} outside the alphabet")
    for _, _, kind in graph.bonds():
        if kind not in _BOND_KIND_TO_SYMBOL:
            raise UnserializableGraph(f"bond category {kind} has no SMILES spelling")

    adjacency: list[list[int]] = [[] for _ in range(n)]
    for i, j, _ in graph.bonds():
        adjacency[i].append(j)
        adjacency[j].append(i)
    for nbrs in adjacency:
        nbrs.sort()

    # Pass 1: depth-first spanning forest (ascending neighbor order); every
    # non-tree edge becomes a ring bond attached to both endpoints.
    visited = [False] * n
    tree_children: list[list[int]] = [[] for _ in range(n)]
    ring_partners: list[list[int]] = [[] for _ in range(n)]
    roots: list[int] = []

    def classify(node: int, parent: int) -> None:
        visited[node] = True
        for nbr in adjacency[node]:
            if not visited[nbr]:
                tree_children[node].append(nbr)
                classify(nbr, node)
            elif nbr != parent and nbr not in ring_partners[node]:
                ring_partners[node].append(nbr)
                ring_partners[nbr].append(node)

    for root in range(n):
        if not visited[root]:
            roots.append(root)
            classify(root, -1)

    # Pass 2: emission.  The first-emitted endpoint of a ring bond opens a
    # digit (and carries the bond annotation); the second closes and frees it.
    ring_digit: dict[tuple[int, int], int] = {}
    digits_in_use: set[int] = set()

    def bond_text(a: int, b: int) -> str:
        kind = int(graph.bond_matrix[a, b])
        arom_a = alphabet.is_aromatic(int(graph.node_types[a]))
        arom_b = alphabet.is_aromatic(int(graph.node_types[b]))
        if kind == _default_bond(arom_a, arom_b):
            return ""
        return _BOND_KIND_TO_SYMBOL[kind]

    def digit_text(digit: int) -> str:
        return str(digit) if digit <= 9 else f"%{digit:02d}"

    def allocate_digit() -> int:
        digit = 1
        while digit in digits_in_use:
            digit += 1
        if digit > 99:
            raise UnserializableGraph("more than 99 simultaneously open ring bonds")
        digits_in_use.add(digit)
        return digit

    def emit(node: int, out: list[str]) -> None:
        out.append(alphabet.symbol(int(graph.node_types[node])))
        for nbr in sorted(ring_partners[node]):
            key = (min(node, nbr), max(node, nbr))
            if key in ring_digit:
                digit = ring_digit.pop(key)
                out.append(digit_text(digit))
                digits_in_use.discard(digit)
            else:
                digit = allocate_digit()
                ring_digit[key] = digit
                out.append(bond_text(node, nbr) + digit_text(digit))
        children = tree_children[node]
        for k, child in enumerate(children):
            last = k == len(children) - 1
            if not last:
                out.append("(")
            out.append(bond_text(node, child))
            emit(child, out)
            if not last:
                out.append(")")

    pieces = []
    for root in roots:
        out: list[str] = []
        emit(root, out)
        pieces.append("".join(out))
    return ".".join(pieces)
