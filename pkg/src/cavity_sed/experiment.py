"""Ensemble description and deterministic chunked execution.

Realizations are processed in fixed-size chunks whose boundaries depend only
on ``chunk_size``, never on the worker count.  Chunk results come back in index
order, so any reduction over them is identical for one worker or many.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterator

from .model import LatticeConfig, SystemParams
from .sampling import RealizationBatch, Sampler, draw_ensemble

__all__ = ["Experiment", "chunk_bounds", "map_chunks"]


@dataclass(frozen=True)
class Experiment:
    """Physical system plus ensemble settings.

    Parameters
    ----------
    params : SystemParams
    lattice : LatticeConfig
    sampler : Sampler
    n_realizations : int
    seed : int
    stream : int
        Separates independent uses of the same seed.
    workers : int
        Process count for chunk-level parallelism.
    chunk_size : int
        Realizations per chunk.  Part of the reproducibility contract.
    """

    params: SystemParams
    lattice: LatticeConfig
    sampler: Sampler = Sampler.MI
    n_realizations: int = 10_000
    seed: int = 0
    stream: int = 0
    workers: int = 1
    chunk_size: int = 2048
    extras: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sampler", self.sampler if isinstance(self.sampler, Sampler) else Sampler.parse(self.sampler))
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be >= 1")

    def with_(self, **changes) -> "Experiment":
        return replace(self, **changes)

    def batch(self, start: int, count: int) -> RealizationBatch:
        return draw_ensemble(self.lattice, self.sampler, self.seed, count, start, self.stream)


def chunk_bounds(n: int, chunk_size: int) -> Iterator[tuple[int, int]]:
    """``(start, count)`` pairs covering ``range(n)``."""
    for start in range(0, n, chunk_size):
        yield start, min(chunk_size, n - start)


def map_chunks(func: Callable[[Experiment, int, int], Any], exp: Experiment) -> list[Any]:
    """Apply ``func(exp, start, count)`` to every chunk, results in chunk order."""
    bounds = list(chunk_bounds(exp.n_realizations, exp.chunk_size))
    if exp.workers == 1 or len(bounds) == 1:
        return [func(exp, s, c) for s, c in bounds]
    with ProcessPoolExecutor(max_workers=exp.workers) as pool:
        futures = [pool.submit(func, exp, s, c) for s, c in bounds]
        return [f.result() for f in futures]
