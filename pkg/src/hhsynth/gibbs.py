"""Gibbs sampler for the nested latent-class model.

Sweep order is fixed: household classes, member classes, household sticks,
member sticks, household kernels, member kernels, then the two concentration
parameters.  The class draws are collapsed over member classes (households
first, member classes refreshed given the household class), which is an exact
blocked update.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import logsumexp

from .checkpoints import CheckpointRecord, CheckpointWriter, hyper_meta
from .data import Dataset, DatasetView, Schema, size_histogram
from .model import (
    Hyperparams,
    Params,
    _log,
    dirichlet_rows,
    household_kernel_logliks,
    member_logliks,
    prior_draw,
    stick_break,
)
from .rng import substream

if TYPE_CHECKING:
    from .truncated import AugmentedBatch


@dataclass
class ChainConfig:
    n_iterations: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    candidate_cap: int | None = None  # truncated mode; defaults to 1000 * n

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must lie in [0, n_iterations)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class ChainState:
    params: Params
    hh_class: np.ndarray  # (n,)
    mem_class: np.ndarray  # (N,)
    iteration: int = 0
    augmented: "AugmentedBatch | None" = None
    cap_exceeded: int = 0


@dataclass
class Diagnostics:
    """Per-iteration chain summaries plus saturation flags."""

    strata: list[int] | None = None  # household sizes, truncated mode
    occupied_hh: list[int] = field(default_factory=list)
    occupied_mem: list[int] = field(default_factory=list)
    hh_conc: list[float] = field(default_factory=list)
    mem_conc: list[float] = field(default_factory=list)
    hh_weights: list[np.ndarray] = field(default_factory=list)
    n_infeasible: list[np.ndarray] = field(default_factory=list)
    cap_exceeded: int = 0
    saturated_hh: bool = False
    saturated_mem: bool = False

    def record(self, state: ChainState) -> None:
        self.occupied_hh.append(int(np.unique(state.hh_class).size))
        self.occupied_mem.append(int(np.unique(state.mem_class).size))
        self.hh_conc.append(float(state.params.hh_conc))
        self.mem_conc.append(float(np.mean(state.params.mem_conc)))
        self.hh_weights.append(state.params.hh_weights.copy())
        if self.strata is not None:
            if state.augmented is not None:
                self.n_infeasible.append(
                    np.array([state.augmented.strata[h].n_infeasible for h in self.strata])
                )
            else:
                self.n_infeasible.append(np.zeros(len(self.strata), dtype=np.int64))

    def to_csv(self, path: str | Path) -> None:
        import csv

        F = self.hh_weights[0].shape[0] if self.hh_weights else 0
        header = [
            "iteration",
            "occupied_household_classes",
            "occupied_individual_classes",
            "hh_concentration",
            "mem_concentration",
        ] + [f"pi_{g + 1}" for g in range(F)]
        if self.strata is not None:
            header += [f"n_infeasible_size{h}" for h in self.strata] + ["n_infeasible_total"]
        with Path(path).open("w", newline="", encoding="utf8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self.occupied_hh)):
                row = [
                    i + 1,
                    self.occupied_hh[i],
                    self.occupied_mem[i],
                    repr(self.hh_conc[i]),
                    repr(self.mem_conc[i]),
                ] + [repr(x) for x in self.hh_weights[i]]
                if self.strata is not None:
                    counts = self.n_infeasible[i]
                    row += [int(c) for c in counts] + [int(counts.sum())]
                writer.writerow(row)


@dataclass
class ChainResult:
    diagnostics: Diagnostics
    checkpoints: list[CheckpointRecord] | None
    checkpoint_path: Path | None
    final_state: ChainState
    n_checkpoints: int


def _gumbel_argmax(logits: np.ndarray, rng: np.random.Generator, axis: int) -> np.ndarray:
    """Exact categorical sampling from unnormalized log weights."""
    return np.argmax(logits + rng.gumbel(size=logits.shape), axis=axis).astype(np.int64)


def sample_household_classes(
    params: Params, view: DatasetView, rng: np.random.Generator
) -> np.ndarray:
    """Draw each household's class with member classes summed out."""
    ml = member_logliks(params, view.mem_codes)
    mixed = logsumexp(ml + _log(params.mem_weights)[:, :, None], axis=1)
    logw = household_kernel_logliks(params, view.hh_codes)
    logw += np.add.reduceat(mixed, view.hh_start, axis=1)
    logw += _log(params.hh_weights)[:, None]
    return _gumbel_argmax(logw, rng, axis=0)


def sample_member_classes(
    params: Params, view: DatasetView, hh_class: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw each member's class given its household's class."""
    ml = member_logliks(params, view.mem_codes)
    g = hh_class[view.mem_hh]
    logits = ml[g, :, np.arange(view.n_individuals)] + _log(params.mem_weights)[g]
    return _gumbel_argmax(logits, rng, axis=1)


def gamma_log_draws(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Log of Gamma(shape, 1) draws, finite even where the draw underflows.

    Gamma(a) equals Gamma(a + 1) times U^(1/a) in distribution; taking the
    log first keeps draws representable for the tiny shapes a small
    concentration produces, where a linear draw flushes to zero.
    """
    shape = np.asarray(shape, dtype=float)
    boost = rng.gamma(shape + 1.0)
    u = 1.0 - rng.random(size=shape.shape)  # in (0, 1], so the log is finite
    return np.log(boost) + np.log(u) / shape


def sample_household_sticks(
    counts: np.ndarray, hh_conc: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Beta draws for the household sticks given per-class counts.

    Returns (sticks, weights, log1m) with log1m holding log(1 - stick) for
    the free sticks.  Each Beta draw comes from a gamma pair so log1m stays
    exact when a stick rounds up to 1.0 in float; feeding such rounded sticks
    into the concentration update would pin the concentration near zero and
    freeze a collapsed state in place.
    """
    F = counts.shape[0]
    sticks = np.ones(F)
    log1m = np.zeros(0)
    if F > 1:
        greater = counts[::-1].cumsum()[::-1] - counts
        log_kept = np.log(rng.gamma(1.0 + counts[:-1]))  # shape >= 1 never underflows
        log_rest = gamma_log_draws(hh_conc + greater[:-1], rng)
        log_total = np.logaddexp(log_kept, log_rest)
        sticks[:-1] = np.exp(log_kept - log_total)
        log1m = log_rest - log_total
    return sticks, stick_break(sticks), log1m


def sample_member_sticks(
    counts: np.ndarray, mem_conc: float | np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Beta draws for every class's member sticks given (F, S) counts.

    Same gamma-pair construction as the household sticks; log1m has shape
    (F, S - 1).
    """
    F, S = counts.shape
    sticks = np.ones((F, S))
    log1m = np.zeros((F, S - 1))
    if S > 1:
        greater = counts[:, ::-1].cumsum(axis=1)[:, ::-1] - counts
        conc = np.broadcast_to(np.asarray(mem_conc, dtype=float), (F,))[:, None]
        log_kept = np.log(rng.gamma(1.0 + counts[:, :-1]))
        log_rest = gamma_log_draws(conc + greater[:, :-1], rng)
        log_total = np.logaddexp(log_kept, log_rest)
        sticks[:, :-1] = np.exp(log_kept - log_total)
        log1m = log_rest - log_total
    return sticks, stick_break(sticks), log1m


def household_kernel_counts(
    hh_codes: np.ndarray, hh_class: np.ndarray, F: int, dims: list[int]
) -> list[np.ndarray]:
    return [
        np.bincount(hh_class * d + hh_codes[:, k], minlength=F * d).reshape(F, d)
        for k, d in enumerate(dims)
    ]


def member_kernel_counts(
    mem_codes: np.ndarray,
    mem_hh_class: np.ndarray,
    mem_class: np.ndarray,
    F: int,
    S: int,
    dims: list[int],
) -> list[np.ndarray]:
    pair = mem_hh_class * S + mem_class
    return [
        np.bincount(pair * d + mem_codes[:, k], minlength=F * S * d).reshape(F, S, d)
        for k, d in enumerate(dims)
    ]


def sample_kernels(
    counts: list[np.ndarray], prior: list[np.ndarray], rng: np.random.Generator
) -> list[np.ndarray]:
    """Dirichlet draws with prior weights plus observed counts."""
    return [dirichlet_rows(w + c, rng) for w, c in zip(prior, counts)]


def sample_hh_concentration(
    log1m_sticks: np.ndarray, shape: float, rate: float, rng: np.random.Generator
) -> float:
    """Gamma draw given the free sticks through their log(1 - stick) values."""
    post_rate = rate - float(log1m_sticks.sum())
    return float(rng.gamma(shape + log1m_sticks.size, 1.0 / post_rate))


def sample_mem_concentration(
    log1m_sticks: np.ndarray,
    shape: float,
    rate: float,
    per_class: bool,
    rng: np.random.Generator,
) -> float | np.ndarray:
    """Gamma draw(s) from the (F, S - 1) free-stick logs, shared or per class."""
    F, free = log1m_sticks.shape
    if per_class:
        return rng.gamma(shape + free, 1.0 / (rate - log1m_sticks.sum(axis=1)))
    return float(rng.gamma(shape + F * free, 1.0 / (rate - log1m_sticks.sum())))


def resample_parameters(
    params: Params,
    hyper: Hyperparams,
    rng: np.random.Generator,
    hh_class: np.ndarray,
    hh_codes: np.ndarray,
    mem_hh_class: np.ndarray,
    mem_class: np.ndarray,
    mem_codes: np.ndarray,
) -> Params:
    """Draw sticks, kernels, and concentrations from their full conditionals.

    The count arrays may cover just the observed data or the union with
    augmented records; the conditionals are identical either way.
    """
    F, S = hyper.n_hh_classes, hyper.n_mem_classes
    hh_counts = np.bincount(hh_class, minlength=F)
    pair_counts = np.bincount(mem_hh_class * S + mem_class, minlength=F * S).reshape(F, S)
    hh_sticks, hh_weights, hh_log1m = sample_household_sticks(hh_counts, params.hh_conc, rng)
    mem_sticks, mem_weights, mem_log1m = sample_member_sticks(pair_counts, params.mem_conc, rng)
    hh_dims = [w.shape[0] for w in hyper.hh_kernel_prior]
    mem_dims = [w.shape[0] for w in hyper.mem_kernel_prior]
    hh_kernels = sample_kernels(
        household_kernel_counts(hh_codes, hh_class, F, hh_dims), hyper.hh_kernel_prior, rng
    )
    mem_kernels = sample_kernels(
        member_kernel_counts(mem_codes, mem_hh_class, mem_class, F, S, mem_dims),
        hyper.mem_kernel_prior,
        rng,
    )
    hh_conc = sample_hh_concentration(hh_log1m, hyper.hh_conc_shape, hyper.hh_conc_rate, rng)
    mem_conc = sample_mem_concentration(
        mem_log1m, hyper.mem_conc_shape, hyper.mem_conc_rate, hyper.per_class_mem_conc, rng
    )
    return Params(
        hh_sticks=hh_sticks,
        hh_weights=hh_weights,
        mem_sticks=mem_sticks,
        mem_weights=mem_weights,
        hh_kernels=hh_kernels,
        mem_kernels=mem_kernels,
        hh_conc=hh_conc,
        mem_conc=mem_conc,
    )


def gibbs_sweep(
    state: ChainState, view: DatasetView, hyper: Hyperparams, rng: np.random.Generator
) -> None:
    """One full update of the chain state in place."""
    state.hh_class = sample_household_classes(state.params, view, rng)
    state.mem_class = sample_member_classes(state.params, view, state.hh_class, rng)
    state.params = resample_parameters(
        state.params,
        hyper,
        rng,
        hh_class=state.hh_class,
        hh_codes=view.hh_codes,
        mem_hh_class=state.hh_class[view.mem_hh],
        mem_class=state.mem_class,
        mem_codes=view.mem_codes,
    )
    state.iteration += 1


def init_state(
    view: DatasetView, hyper: Hyperparams, rng: np.random.Generator
) -> ChainState:
    """Uniformly random latent classes, parameters refreshed given them.

    Starting the sweep from a prior parameter draw is hazardous: a small
    concentration draw concentrates the weights on one class, the first class
    update then piles every record there, and the chain opens inside a
    near-absorbing single-class state.  Conditioning the parameters on a
    balanced random partition first avoids that.
    """
    params = prior_draw(hyper, rng)
    hh_class = rng.integers(hyper.n_hh_classes, size=view.n_households)
    mem_class = rng.integers(hyper.n_mem_classes, size=view.n_individuals)
    params = resample_parameters(
        params,
        hyper,
        rng,
        hh_class,
        view.hh_codes,
        hh_class[view.mem_hh],
        mem_class,
        view.mem_codes,
    )
    return ChainState(params=params, hh_class=hh_class, mem_class=mem_class)


def mcse_batch_means(x: np.ndarray, n_batches: int = 50) -> float:
    """Batch-means Monte Carlo standard error of a chain's mean."""
    x = np.asarray(x, dtype=float)
    usable = (len(x) // n_batches) * n_batches
    if usable < n_batches:
        raise ValueError("chain too short for the requested batch count")
    means = x[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def run_chain(
    dataset: Dataset,
    hyper: Hyperparams,
    config: ChainConfig,
    rules=None,
    checkpoint_path: str | Path | None = None,
) -> ChainResult:
    """Run the sampler, recording diagnostics and post-burn-in checkpoints.

    With a non-empty rule set the truncated sweep is used and each checkpoint
    carries the iteration's feasible by-product households.  Checkpoints
    stream to checkpoint_path when given, otherwise they are kept in memory.
    """
    schema = dataset.schema
    view = dataset.to_view()
    rng = substream(config.seed, "chain")
    truncated = rules is not None and bool(rules)
    histogram = size_histogram(dataset) if truncated else None
    cap = config.candidate_cap if config.candidate_cap else 1000 * max(view.n_households, 1)

    state = init_state(view, hyper, rng)
    diag = Diagnostics(strata=sorted(histogram) if truncated else None)
    writer = None
    kept: list[CheckpointRecord] | None = None
    if checkpoint_path is not None:
        meta = {
            "mode": "truncated" if truncated else "untruncated",
            "seed": config.seed,
            "n_iterations": config.n_iterations,
            "burn_in": config.burn_in,
            "thin": config.thin,
            "hyper": hyper_meta(hyper),
        }
        writer = CheckpointWriter(checkpoint_path, meta)
    else:
        kept = []

    if truncated:
        from .truncated import truncated_sweep
    n_emitted = 0
    for it in range(1, config.n_iterations + 1):
        if truncated:
            truncated_sweep(state, view, schema, hyper, rules, histogram, rng, cap)
        else:
            gibbs_sweep(state, view, hyper, rng)
        diag.record(state)
        if it > config.burn_in and (it - config.burn_in - 1) % config.thin == 0:
            feasible = None
            if truncated:
                feasible = state.augmented.feasible_draws()
            record = CheckpointRecord(
                iteration=it,
                params=state.params.copy(),
                hh_class=state.hh_class.copy(),
                mem_class=state.mem_class.copy(),
                feasible=feasible,
            )
            if writer is not None:
                writer.write(record)
            else:
                kept.append(record)
            n_emitted += 1
    if writer is not None:
        writer.close()

    diag.cap_exceeded = state.cap_exceeded
    # the balanced random start occupies every class by construction, so only
    # post-burn-in occupancy says anything about the truncation binding
    diag.saturated_hh = any(c >= hyper.n_hh_classes for c in diag.occupied_hh[config.burn_in:])
    diag.saturated_mem = any(c >= hyper.n_mem_classes for c in diag.occupied_mem[config.burn_in:])
    if diag.saturated_hh:
        warnings.warn(
            "household classes reached the truncation level; consider raising it",
            stacklevel=2,
        )
    if diag.saturated_mem:
        warnings.warn(
            "individual classes reached the truncation level; consider raising it",
            stacklevel=2,
        )
    return ChainResult(
        diagnostics=diag,
        checkpoints=kept,
        checkpoint_path=Path(checkpoint_path) if checkpoint_path is not None else None,
        final_state=state,
        n_checkpoints=n_emitted,
    )
