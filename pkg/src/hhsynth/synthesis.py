"""Posterior-predictive synthetic replicates.

Untruncated mode holds each household's size and latent class assignments
fixed at a checkpoint's values and redraws every other attribute from that
checkpoint's kernels, so replicate i lines up with original household i and
the size histogram is preserved exactly.  Truncated mode releases the
feasible by-product households generated during the selected sweeps; their
per-size counts match the original by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoints import CheckpointRecord
from .data import Dataset, Schema, load_dataset, view_to_dataset, write_dataset
from .rng import substream


@dataclass
class SyntheticReplicates:
    replicates: list[Dataset]
    source_iterations: list[int]
    mode: str
    seed: int | None = None


def select_records(records: list[CheckpointRecord], n: int) -> list[CheckpointRecord]:
    """Evenly spaced selection across the retained draws, endpoints included."""
    if n < 1:
        raise ValueError("need at least one replicate")
    if len(records) < n:
        raise ValueError(f"only {len(records)} checkpoints for {n} replicates")
    if n == 1:
        return [records[-1]]
    picks = np.round(np.linspace(0, len(records) - 1, n)).astype(int)
    return [records[i] for i in picks]


def synthesize_untruncated(
    dataset: Dataset,
    records: list[CheckpointRecord],
    n_replicates: int,
    seed: int,
) -> SyntheticReplicates:
    """Partially synthetic replicates: sizes and class assignments kept."""
    from .model import rows_categorical

    schema = dataset.schema
    view = dataset.to_view()
    chosen = select_records(records, n_replicates)
    ids = [rec.household_id for rec in dataset.records]
    replicates = []
    for l, record in enumerate(chosen):
        rng = substream(seed, "synthesize", l)
        params = record.params
        g = record.hh_class
        g_mem = g[view.mem_hh]
        hh_codes = np.zeros_like(view.hh_codes)
        for k in range(len(schema.household_vars)):
            if k == schema.size_index:
                hh_codes[:, k] = view.hh_codes[:, k]  # size is copied, never redrawn
            else:
                hh_codes[:, k] = rows_categorical(params.hh_kernels[k][g], rng)
        mem_codes = np.zeros_like(view.mem_codes)
        for k in range(len(schema.individual_vars)):
            mem_codes[:, k] = rows_categorical(
                params.mem_kernels[k][g_mem, record.mem_class], rng
            )
        replicates.append(view_to_dataset(schema, hh_codes, mem_codes, view.sizes, ids=ids))
    return SyntheticReplicates(
        replicates=replicates,
        source_iterations=[r.iteration for r in chosen],
        mode="untruncated",
        seed=seed,
    )


def synthesize_truncated(
    schema: Schema,
    records: list[CheckpointRecord],
    n_replicates: int,
) -> SyntheticReplicates:
    """Fully synthetic replicates from the feasible by-product households."""
    chosen = select_records(records, n_replicates)
    replicates = []
    for record in chosen:
        if record.feasible is None:
            raise ValueError(
                "checkpoint carries no feasible by-product; synthesize from a "
                "fit that used rules"
            )
        f = record.feasible
        replicates.append(view_to_dataset(schema, f.hh_codes, f.mem_codes, f.sizes))
    return SyntheticReplicates(
        replicates=replicates,
        source_iterations=[r.iteration for r in chosen],
        mode="truncated",
        seed=None,
    )


def write_replicates(reps: SyntheticReplicates, out_dir: str | Path) -> dict:
    """Write one CSV per replicate plus a manifest; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for l, replicate in enumerate(reps.replicates, start=1):
        name = f"synthetic_{l}.csv"
        write_dataset(replicate, out_dir / name)
        files.append(name)
    manifest = {
        "mode": reps.mode,
        "n_replicates": len(reps.replicates),
        "seed": reps.seed,
        "source_iterations": reps.source_iterations,
        "files": files,
    }
    with (out_dir / "manifest.json").open("w", encoding="utf8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def read_replicates(out_dir: str | Path, schema: Schema) -> SyntheticReplicates:
    """Load replicates written by write_replicates."""
    out_dir = Path(out_dir)
    with (out_dir / "manifest.json").open(encoding="utf8") as fh:
        manifest = json.load(fh)
    replicates = [load_dataset(out_dir / name, schema) for name in manifest["files"]]
    return SyntheticReplicates(
        replicates=replicates,
        source_iterations=list(manifest["source_iterations"]),
        mode=manifest["mode"],
        seed=manifest["seed"],
    )
