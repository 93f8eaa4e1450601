"""Schema definitions and household dataset I/O.

Category codes are 1-based in every file format (data CSV, schema config,
rule text) and 0-based everywhere in memory.  Conversion happens only at the
I/O boundary.  The household-size variable is special: its 1-based code equals
the number of members, so a household with size code h has exactly h rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

HOUSEHOLD = "household"
INDIVIDUAL = "individual"

_ID_COLUMN = "household_id"
_PERSON_COLUMN = "person_index"


class SchemaError(ValueError):
    """Raised for malformed schema documents or schema violations in data."""


@dataclass(frozen=True)
class VariableSpec:
    """One categorical variable: name, level, and number of categories."""

    name: str
    cardinality: int
    level: str
    is_size: bool = False
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.cardinality < 2:
            raise SchemaError(f"variable {self.name!r}: cardinality must be >= 2")
        if self.level not in (HOUSEHOLD, INDIVIDUAL):
            raise SchemaError(f"variable {self.name!r}: unknown level {self.level!r}")
        if self.is_size and self.level != HOUSEHOLD:
            raise SchemaError(f"variable {self.name!r}: the size variable must be household level")
        if self.labels is not None and len(self.labels) != self.cardinality:
            raise SchemaError(
                f"variable {self.name!r}: {len(self.labels)} labels for "
                f"{self.cardinality} categories"
            )

    def code_of(self, token: str) -> int:
        """Resolve a 1-based code or category label to a 0-based code."""
        if self.labels is not None and token in self.labels:
            return self.labels.index(token)
        try:
            code = int(token)
        except ValueError:
            raise SchemaError(f"variable {self.name!r}: unknown category {token!r}") from None
        if not 1 <= code <= self.cardinality:
            raise SchemaError(
                f"variable {self.name!r}: code {code} outside 1..{self.cardinality}"
            )
        return code - 1


@dataclass(frozen=True)
class Schema:
    """Ordered household-level and individual-level variable lists."""

    household_vars: tuple[VariableSpec, ...]
    individual_vars: tuple[VariableSpec, ...]

    def __post_init__(self):
        if not self.household_vars or not self.individual_vars:
            raise SchemaError("schema needs at least one variable at each level")
        names = [v.name for v in self.household_vars + self.individual_vars]
        if len(set(names)) != len(names):
            raise SchemaError("variable names must be unique across both levels")
        sizes = [v for v in self.household_vars if v.is_size]
        if len(sizes) != 1:
            raise SchemaError("exactly one household variable must be marked as the size")

    @property
    def size_index(self) -> int:
        return next(i for i, v in enumerate(self.household_vars) if v.is_size)

    @property
    def size_var(self) -> VariableSpec:
        return self.household_vars[self.size_index]

    @property
    def max_size(self) -> int:
        return self.size_var.cardinality

    def variable(self, name: str) -> VariableSpec:
        for v in self.household_vars + self.individual_vars:
            if v.name == name:
                return v
        raise SchemaError(f"unknown variable {name!r}")

    def index_of(self, name: str) -> tuple[str, int]:
        """Return (level, position within that level's variable list)."""
        for i, v in enumerate(self.household_vars):
            if v.name == name:
                return HOUSEHOLD, i
        for i, v in enumerate(self.individual_vars):
            if v.name == name:
                return INDIVIDUAL, i
        raise SchemaError(f"unknown variable {name!r}")


def parse_schema(text: str) -> Schema:
    """Parse a YAML schema document.

    Expected layout::

        household:
          - {name: ownership, cardinality: 2}
          - {name: hh_size, cardinality: 4, size: true}
        individual:
          - {name: role, cardinality: 2, labels: [head, other]}
          - {name: age_group, cardinality: 5}
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"schema document is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a mapping")
    unknown = set(doc) - {HOUSEHOLD, INDIVIDUAL}
    if unknown:
        raise SchemaError(f"unknown top-level schema keys: {sorted(unknown)}")

    def build(level: str) -> tuple[VariableSpec, ...]:
        entries = doc.get(level)
        if not isinstance(entries, list) or not entries:
            raise SchemaError(f"schema section {level!r} must be a non-empty list")
        specs = []
        for entry in entries:
            if not isinstance(entry, dict) or "name" not in entry or "cardinality" not in entry:
                raise SchemaError(f"each {level} variable needs 'name' and 'cardinality'")
            extra = set(entry) - {"name", "cardinality", "size", "labels"}
            if extra:
                raise SchemaError(f"variable {entry.get('name')!r}: unknown keys {sorted(extra)}")
            labels = entry.get("labels")
            specs.append(
                VariableSpec(
                    name=str(entry["name"]),
                    cardinality=int(entry["cardinality"]),
                    level=level,
                    is_size=bool(entry.get("size", False)),
                    labels=tuple(str(x) for x in labels) if labels is not None else None,
                )
            )
        return tuple(specs)

    return Schema(household_vars=build(HOUSEHOLD), individual_vars=build(INDIVIDUAL))


def load_schema(path: str | Path) -> Schema:
    return parse_schema(Path(path).read_text(encoding="utf8"))


@dataclass(frozen=True)
class HouseholdRecord:
    """One household: id, household-level codes, and per-member codes.

    All codes are 0-based.  members[j] lists the j-th member's individual
    variable codes in schema order; the member count always equals the size
    variable's code plus one.
    """

    household_id: str
    hh_values: tuple[int, ...]
    members: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class Dataset:
    """A schema plus an ordered list of household records."""

    schema: Schema
    records: list[HouseholdRecord] = field(default_factory=list)

    @property
    def n_households(self) -> int:
        return len(self.records)

    @property
    def n_individuals(self) -> int:
        return sum(r.size for r in self.records)

    def validate(self) -> None:
        """Check every record against the schema; raises SchemaError."""
        q = len(self.schema.household_vars)
        p = len(self.schema.individual_vars)
        size_idx = self.schema.size_index
        seen_ids = set()
        for rec in self.records:
            if rec.household_id in seen_ids:
                raise SchemaError(f"duplicate household id {rec.household_id!r}")
            seen_ids.add(rec.household_id)
            if len(rec.hh_values) != q:
                raise SchemaError(f"household {rec.household_id!r}: expected {q} household codes")
            if not rec.members:
                raise SchemaError(f"household {rec.household_id!r}: no members")
            if rec.hh_values[size_idx] + 1 != rec.size:
                raise SchemaError(
                    f"household {rec.household_id!r}: size code "
                    f"{rec.hh_values[size_idx] + 1} but {rec.size} members"
                )
            for k, v in enumerate(self.schema.household_vars):
                if not 0 <= rec.hh_values[k] < v.cardinality:
                    raise SchemaError(
                        f"household {rec.household_id!r}: {v.name} code out of range"
                    )
            for member in rec.members:
                if len(member) != p:
                    raise SchemaError(
                        f"household {rec.household_id!r}: expected {p} member codes"
                    )
                for k, v in enumerate(self.schema.individual_vars):
                    if not 0 <= member[k] < v.cardinality:
                        raise SchemaError(
                            f"household {rec.household_id!r}: {v.name} code out of range"
                        )

    def to_view(self) -> DatasetView:
        return DatasetView.from_dataset(self)


@dataclass(frozen=True)
class DatasetView:
    """Flat array form of a Dataset used by the numerical code.

    Member rows are stored contiguously in household order, so per-household
    reductions can use hh_start offsets directly.
    """

    hh_codes: np.ndarray  # (n, q) int64
    mem_codes: np.ndarray  # (N, p) int64
    mem_hh: np.ndarray  # (N,) household row of each member
    hh_start: np.ndarray  # (n,) offset of each household's first member row
    sizes: np.ndarray  # (n,)

    @property
    def n_households(self) -> int:
        return self.hh_codes.shape[0]

    @property
    def n_individuals(self) -> int:
        return self.mem_codes.shape[0]

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> DatasetView:
        n = dataset.n_households
        q = len(dataset.schema.household_vars)
        p = len(dataset.schema.individual_vars)
        hh_codes = np.zeros((n, q), dtype=np.int64)
        sizes = np.zeros(n, dtype=np.int64)
        mem_rows = []
        mem_hh = []
        for i, rec in enumerate(dataset.records):
            hh_codes[i] = rec.hh_values
            sizes[i] = rec.size
            mem_rows.extend(rec.members)
            mem_hh.extend([i] * rec.size)
        mem_codes = np.asarray(mem_rows, dtype=np.int64).reshape(len(mem_rows), p)
        hh_start = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        return cls(
            hh_codes=hh_codes,
            mem_codes=mem_codes,
            mem_hh=np.asarray(mem_hh, dtype=np.int64),
            hh_start=hh_start,
            sizes=sizes,
        )

    @classmethod
    def from_arrays(
        cls, hh_codes: np.ndarray, mem_codes: np.ndarray, sizes: np.ndarray
    ) -> DatasetView:
        """Build a view from raw arrays (member rows already household-ordered)."""
        sizes = np.asarray(sizes, dtype=np.int64)
        mem_hh = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
        hh_start = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        return cls(
            hh_codes=np.asarray(hh_codes, dtype=np.int64),
            mem_codes=np.asarray(mem_codes, dtype=np.int64),
            mem_hh=mem_hh,
            hh_start=hh_start,
            sizes=sizes,
        )


def view_to_dataset(
    schema: Schema,
    hh_codes: np.ndarray,
    mem_codes: np.ndarray,
    sizes: np.ndarray,
    ids: list[str] | None = None,
) -> Dataset:
    """Assemble a Dataset from flat arrays (inverse of DatasetView)."""
    records = []
    offset = 0
    for i, h in enumerate(np.asarray(sizes, dtype=int)):
        members = tuple(tuple(int(c) for c in row) for row in mem_codes[offset : offset + h])
        records.append(
            HouseholdRecord(
                household_id=ids[i] if ids is not None else f"h{i + 1:06d}",
                hh_values=tuple(int(c) for c in hh_codes[i]),
                members=members,
            )
        )
        offset += h
    return Dataset(schema=schema, records=tuple(records))


def load_dataset(path: str | Path, schema: Schema) -> Dataset:
    """Read a person-level CSV into household records.

    Expected columns: household_id, person_index, then one column per
    household variable and one per individual variable, in schema order.
    Codes are 1-based integers; any missing or malformed cell is an error.
    """
    path = Path(path)
    hh_names = [v.name for v in schema.household_vars]
    ind_names = [v.name for v in schema.individual_vars]
    expected = [_ID_COLUMN, _PERSON_COLUMN] + hh_names + ind_names
    with path.open(newline="", encoding="utf8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if sorted(header) != sorted(expected):
            raise SchemaError(
                f"{path}: header {header} does not match expected columns {expected}"
            )
        col = {name: header.index(name) for name in expected}
        rows_by_hh: dict[str, dict] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} cells")
            if any(cell.strip() == "" for cell in row):
                raise SchemaError(f"{path}:{lineno}: missing value")
            hid = row[col[_ID_COLUMN]]
            try:
                person = int(row[col[_PERSON_COLUMN]])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: person_index must be an integer") from None

            def code(vspec: VariableSpec) -> int:
                cell = row[col[vspec.name]]
                try:
                    value = int(cell)
                except ValueError:
                    raise SchemaError(
                        f"{path}:{lineno}: {vspec.name} code {cell!r} is not an integer"
                    ) from None
                if not 1 <= value <= vspec.cardinality:
                    raise SchemaError(
                        f"{path}:{lineno}: {vspec.name} code {value} outside "
                        f"1..{vspec.cardinality}"
                    )
                return value - 1

            hh_values = tuple(code(v) for v in schema.household_vars)
            member = tuple(code(v) for v in schema.individual_vars)
            if hid not in rows_by_hh:
                rows_by_hh[hid] = {"hh": hh_values, "members": {}}
                order.append(hid)
            entry = rows_by_hh[hid]
            if entry["hh"] != hh_values:
                raise SchemaError(
                    f"{path}:{lineno}: household {hid!r} has inconsistent household codes"
                )
            if person in entry["members"]:
                raise SchemaError(f"{path}:{lineno}: duplicate person_index {person} in {hid!r}")
            entry["members"][person] = member

    records = []
    for hid in order:
        entry = rows_by_hh[hid]
        people = entry["members"]
        if sorted(people) != list(range(1, len(people) + 1)):
            raise SchemaError(f"{path}: household {hid!r}: person_index must run 1..n")
        records.append(
            HouseholdRecord(
                household_id=hid,
                hh_values=entry["hh"],
                members=tuple(people[j] for j in sorted(people)),
            )
        )
    dataset = Dataset(schema=schema, records=tuple(records))
    dataset.validate()
    return dataset


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the person-level CSV form (1-based codes, one row per member)."""
    path = Path(path)
    hh_names = [v.name for v in dataset.schema.household_vars]
    ind_names = [v.name for v in dataset.schema.individual_vars]
    with path.open("w", newline="", encoding="utf8") as fh:
        writer = csv.writer(fh)
        writer.writerow([_ID_COLUMN, _PERSON_COLUMN] + hh_names + ind_names)
        for rec in dataset.records:
            hh_part = [c + 1 for c in rec.hh_values]
            for j, member in enumerate(rec.members, start=1):
                writer.writerow([rec.household_id, j] + hh_part + [c + 1 for c in member])


def size_histogram(dataset: Dataset) -> dict[int, int]:
    """Households per size, as {size: count} over observed sizes only."""
    counts: dict[int, int] = {}
    for rec in dataset.records:
        counts[rec.size] = counts.get(rec.size, 0) + 1
    return dict(sorted(counts.items()))
