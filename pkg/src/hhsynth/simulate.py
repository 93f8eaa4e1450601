"""Toy household population generator for smoke tests and worked examples.

The generator plants a controllable amount of within-household structure:
each household flips one coin with probability ``copy_prob``; on success every
member copies the head's value of the designated variable, otherwise all
members draw independently from the marginal.  Everything else is independent
draws, so closed-form check values exist for within-household statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, HouseholdRecord, Schema, SchemaError


@dataclass
class ToyConfig:
    """Generator settings.  Codes are 0-based, like everything in memory.

    size_probs maps household size to probability.  marginals optionally fixes
    per-variable category marginals (defaults to uniform).  If role_variable
    is set, member 1 receives head_code and everyone else other_code, which
    makes the output satisfy an exactly-one-head rule by construction.
    """

    n_households: int
    size_probs: dict[int, float]
    copy_variable: str
    copy_prob: float
    marginals: dict[str, np.ndarray] = field(default_factory=dict)
    role_variable: str | None = None
    head_code: int = 0
    other_code: int = 1

    def __post_init__(self):
        if self.n_households < 1:
            raise ValueError("n_households must be >= 1")
        if not 0.0 <= self.copy_prob <= 1.0:
            raise ValueError("copy_prob must lie in [0, 1]")
        probs = list(self.size_probs.values())
        if not probs or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("size_probs must be nonnegative and sum to 1")


def _marginal(config: ToyConfig, schema: Schema, name: str) -> np.ndarray:
    var = schema.variable(name)
    probs = config.marginals.get(name)
    if probs is None:
        return np.full(var.cardinality, 1.0 / var.cardinality)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (var.cardinality,) or np.any(probs < 0):
        raise SchemaError(f"marginal for {name!r} must be {var.cardinality} nonnegative weights")
    return probs / probs.sum()


def simulate_toy_population(
    schema: Schema, config: ToyConfig, rng: np.random.Generator
) -> Dataset:
    """Draw a full population of households under the toy process."""
    if not 0.0 <= config.copy_prob <= 1.0:
        raise ValueError("copy_prob must lie in [0, 1]")
    copy_var = schema.variable(config.copy_variable)
    if copy_var.level != "individual":
        raise SchemaError("the copied variable must be individual level")
    sizes_avail = sorted(config.size_probs)
    if not sizes_avail or sizes_avail[0] < 1 or sizes_avail[-1] > schema.max_size:
        raise SchemaError(
            f"size distribution must cover sizes within 1..{schema.max_size}"
        )
    weights = np.array([config.size_probs[h] for h in sizes_avail], dtype=float)
    weights = weights / weights.sum()

    n = config.n_households
    sizes = rng.choice(np.asarray(sizes_avail), size=n, p=weights)
    total = int(sizes.sum())
    mem_hh = np.repeat(np.arange(n), sizes)
    hh_start = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    position = np.arange(total) - hh_start[mem_hh]  # 0 marks the head

    hh_codes = np.zeros((n, len(schema.household_vars)), dtype=np.int64)
    for k, var in enumerate(schema.household_vars):
        if var.is_size:
            hh_codes[:, k] = sizes - 1
        else:
            hh_codes[:, k] = rng.choice(var.cardinality, size=n, p=_marginal(config, schema, var.name))

    mem_codes = np.zeros((total, len(schema.individual_vars)), dtype=np.int64)
    copies = rng.random(n) < config.copy_prob
    for k, var in enumerate(schema.individual_vars):
        if config.role_variable is not None and var.name == config.role_variable:
            mem_codes[:, k] = np.where(position == 0, config.head_code, config.other_code)
            continue
        marg = _marginal(config, schema, var.name)
        draws = rng.choice(var.cardinality, size=total, p=marg)
        if var.name == config.copy_variable:
            head_values = draws[hh_start]
            copy_members = copies[mem_hh] & (position > 0)
            draws = np.where(copy_members, head_values[mem_hh], draws)
        mem_codes[:, k] = draws

    records = []
    offset = 0
    for i in range(n):
        h = int(sizes[i])
        members = tuple(tuple(int(c) for c in row) for row in mem_codes[offset : offset + h])
        records.append(
            HouseholdRecord(
                household_id=f"h{i + 1:07d}",
                hh_values=tuple(int(c) for c in hh_codes[i]),
                members=members,
            )
        )
        offset += h
    return Dataset(schema=schema, records=records)


def sample_households(
    dataset: Dataset, n: int, rng: np.random.Generator
) -> Dataset:
    """Simple random sample of n households, original order preserved."""
    if n > dataset.n_households:
        raise ValueError(f"cannot sample {n} of {dataset.n_households} households")
    picks = np.sort(rng.choice(dataset.n_households, size=n, replace=False))
    return Dataset(schema=dataset.schema, records=[dataset.records[i] for i in picks])


def all_equal_probability(marginal: np.ndarray, copy_prob: float, size: int) -> float:
    """Closed-form Pr(all members share the copied value | household size).

    With one copy coin per household: copy_prob + (1 - copy_prob) * sum_c m_c^size,
    since in the no-copy branch all members draw the value independently.
    """
    marginal = np.asarray(marginal, dtype=float)
    marginal = marginal / marginal.sum()
    return float(copy_prob + (1.0 - copy_prob) * np.sum(marginal**size))
