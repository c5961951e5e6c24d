"""Reproduction bench for the published query log, and the GA-vs-oracle sweep."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable

from .gasearch import GaConfig, OutcomeKind, oracle_search, run_search
from .microdb import Catalog, SpeciesLabel, Table
from .server import handle_query
from .smsql import VERBOSE_HEADER
from .transport import Direction, SmsFrame

BENCH_SENDER = "0000000001"

# (row, SMS body, reported "Query Report" column)
TABLE1 = (
    (1, "dbiris tbiris atsepl va2", "Species Found Iris-Setosa"),
    (2, "dbiris tbiris atsepl va2", "Species Found Iris-Setosa"),
    (3, "dbiris tbiris atsepl va8", "Species Found Iris-Virginica"),
    (4, "dburis tbiris atsepl va6", "Species Found IVS"),
)


@dataclass(frozen=True)
class BenchRow:
    row: int
    body: str
    expected: str
    actual: str

    @property
    def ok(self) -> bool:
        return self.expected == self.actual


def report_text(lines: list[str]) -> str:
    """Collapse rendered reply lines into the log's one-line report form."""
    if not lines or lines[0].startswith("ERR"):
        return lines[0] if lines else ""
    if lines[0] == VERBOSE_HEADER and len(lines) > 1:
        return f"Species Found {lines[1]}"
    return f"Species Found {lines[0]}"


def run_table1(catalog: Catalog, cfg: GaConfig) -> list[BenchRow]:
    rows = []
    for no, body, expected in TABLE1:
        frame = SmsFrame(Direction.INBOUND, BENCH_SENDER, body, 0)
        handled = handle_query(frame, catalog, cfg, query_id=f"t{no}")
        rows.append(BenchRow(no, body, expected, report_text(handled.lines)))
    return rows


def table1_seed_sweep(catalog: Catalog, cfg: GaConfig, seeds: Iterable[int]) -> tuple[int, int]:
    """Return (runs with all four rows matching, total runs)."""
    passed = total = 0
    for seed in seeds:
        rows = run_table1(catalog, dataclasses.replace(cfg, rng_seed=seed))
        passed += all(r.ok for r in rows)
        total += 1
    return passed, total


@dataclass
class SweepCell:
    target: int
    oracle_distance: int
    oracle_species: SpeciesLabel | None  # None when min-distance rows disagree
    runs: int = 0
    violations: int = 0
    agreements: int = 0
    exact: int = 0
    accepted: int = 0
    not_found: int = 0
    generations: int = 0
    gap: int = 0

    @property
    def agreement_rate(self) -> float | None:
        if self.oracle_species is None or not self.runs:
            return None
        return self.agreements / self.runs

    @property
    def mean_generations(self) -> float:
        return self.generations / self.runs if self.runs else math.nan

    @property
    def mean_gap(self) -> float:
        found = self.runs - self.not_found
        return self.gap / found if found else math.nan


def _species_at(table: Table, row: int) -> SpeciesLabel | None:
    return table.records[row].label


def _unique_oracle_species(table: Table, attribute: str, target: int, distance: int):
    column = table.column(attribute)
    labels = {
        _species_at(table, r) for r, v in enumerate(column) if abs(v - target) == distance
    }
    return labels.pop() if len(labels) == 1 else None


def oracle_sweep(
    table: Table,
    attribute: str,
    targets: Iterable[int],
    seeds: Iterable[int],
    cfg: GaConfig,
) -> list[SweepCell]:
    seeds = list(seeds)
    cells = []
    for target in targets:
        oracle = oracle_search(table, attribute, target)
        assert oracle.distance is not None
        cell = SweepCell(
            target,
            oracle.distance,
            _unique_oracle_species(table, attribute, target, oracle.distance),
        )
        for seed in seeds:
            res = run_search(dataclasses.replace(cfg, rng_seed=seed), table, attribute, target)
            cell.runs += 1
            cell.generations += res.generations_used
            if res.kind is OutcomeKind.NOT_FOUND:
                cell.not_found += 1
                continue
            assert res.distance is not None and res.row is not None
            if res.distance < oracle.distance or (
                res.kind is OutcomeKind.EXACT and oracle.distance != 0
            ):
                cell.violations += 1
            cell.gap += res.distance - oracle.distance
            cell.exact += res.distance == 0
            cell.accepted += res.distance <= cfg.fitness_threshold
            if cell.oracle_species is not None:
                cell.agreements += _species_at(table, res.row) is cell.oracle_species
        cells.append(cell)
    return cells
