"""Dataset ingestion, holdout splitting, and deterministic batching.

Input files are comma-separated with a header of `smiles` or
`smiles,target`.  Lines that fail to parse become reject entries with
their 1-based line numbers; they never enter the dataset silently.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .graphs import GraphBatch, MolecularGraph, to_batch
from .smiles import DEFAULT_ATOMS, DEFAULT_BONDS, AtomAlphabet, SmilesError, parse


class MissingColumn(ValueError):
    """Header lacks a required column."""


class EmptyFile(ValueError):
    """No header or no data rows."""


class TooFewRecords(ValueError):
    """Not enough records to split."""


@dataclass(frozen=True)
class MoleculeRecord:
    smiles: str
    graph: MolecularGraph
    target: Optional[float] = None


@dataclass(frozen=True)
class RejectedLine:
    line: int
    smiles: str
    error: str


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError(
                f"train_fraction must lie strictly in (0, 1), got {self.train_fraction}"
            )


@dataclass(frozen=True)
class BatchSettings:
    """Everything to_batch needs besides the graphs themselves."""

    v_max: int
    n_node_types: int = DEFAULT_ATOMS.K
    n_bond_types: int = DEFAULT_BONDS.L


def load(
    path: str,
    has_target: bool,
    alphabet: AtomAlphabet = DEFAULT_ATOMS,
) -> tuple[list[MoleculeRecord], list[RejectedLine]]:
    """Read a SMILES(,target) CSV into records plus a reject list.

    Records keep file order.  A bad SMILES or an unparseable target
    yields a RejectedLine carrying the offending 1-based line number.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path} has no header row") from None
        header = [cell.strip().lower() for cell in header]
        if "smiles" not in header:
            raise MissingColumn(f"{path} header {header} lacks a 'smiles' column")
        smiles_col = header.index("smiles")
        target_col = None
        if has_target:
            if "target" not in header:
                raise MissingColumn(f"{path} header {header} lacks a 'target' column")
            target_col = header.index("target")

        records: list[MoleculeRecord] = []
        rejects: list[RejectedLine] = []
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            n_rows += 1
            smiles = row[smiles_col].strip() if smiles_col < len(row) else ""
            target = None
            if target_col is not None:
                raw = row[target_col].strip() if target_col < len(row) else ""
                try:
                    target = float(raw)
                except ValueError:
                    rejects.append(
                        RejectedLine(line_no, smiles, f"bad target value {raw!r}")
                    )
                    continue
            try:
                graph = parse(smiles, alphabet)
            except SmilesError as exc:
                rejects.append(RejectedLine(line_no, smiles, str(exc)))
                continue
            records.append(MoleculeRecord(smiles=smiles, graph=graph, target=target))

    if n_rows == 0:
        raise EmptyFile(f"{path} contains a header but no data rows")
    return records, rejects


def write_rejects(path: str, rejects: list[RejectedLine]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["line", "smiles", "error"])
        for reject in rejects:
            writer.writerow([reject.line, reject.smiles, reject.error])


def holdout_split(
    records: list[MoleculeRecord], spec: SplitSpec
) -> tuple[list[MoleculeRecord], list[MoleculeRecord]]:
    """Seed-keyed shuffle, then the first ceil(n * fraction) go to train.

    The two halves are disjoint and jointly exhaust the input.
    """
    n = len(records)
    if n < 2:
        raise TooFewRecords(f"need at least 2 records to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = math.ceil(n * spec.train_fraction)
    train = [records[i] for i in order[:n_train]]
    test = [records[i] for i in order[n_train:]]
    return train, test


def _targets_tensor(chunk: list[MoleculeRecord]) -> Optional[torch.Tensor]:
    if any(r.target is None for r in chunk):
        return None
    return torch.tensor([r.target for r in chunk], dtype=torch.float64)


def batches(
    records: list[MoleculeRecord],
    settings: BatchSettings,
    batch_size: int,
    seed: int,
    epoch: int,
) -> list[tuple[GraphBatch, Optional[torch.Tensor]]]:
    """Shuffled batches for one epoch, keyed by (seed, epoch).

    The final partial batch is kept.  Target vectors ride along when
    every record in the chunk has one.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(records))
    shuffled = [records[i] for i in order]
    return _chunk(shuffled, settings, batch_size)


def sequential_batches(
    records: list[MoleculeRecord],
    settings: BatchSettings,
    batch_size: int,
) -> list[tuple[GraphBatch, Optional[torch.Tensor]]]:
    """File-order batches, for evaluation and export."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return _chunk(list(records), settings, batch_size)


def _chunk(
    ordered: list[MoleculeRecord], settings: BatchSettings, batch_size: int
) -> list[tuple[GraphBatch, Optional[torch.Tensor]]]:
    out = []
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start : start + batch_size]
        batch = to_batch(
            [r.graph for r in chunk],
            settings.v_max,
            settings.n_node_types,
            settings.n_bond_types,
        )
        out.append((batch, _targets_tensor(chunk)))
    return out
