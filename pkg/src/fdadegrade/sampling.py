"""Observation plans for incomplete training signals.

A plan starts from a master grid of candidate times on ``[0, M]``, usually
with exponentially shrinking gaps so that late times stay covered after
early failures thin the sample out. Each component then receives either a
random subset of the grid (sparse) or a few short intervals (fragments).
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .signals import DegradationSignal


def exponential_time_grid(horizon: float, m: int, ratio: float = 0.9) -> np.ndarray:
    """``m`` times from 0 to ``horizon`` whose gaps shrink by ``ratio``.

    Gaps are ``g_j = g_1 * ratio**(j - 1)`` with ``g_1`` chosen so they sum
    to ``horizon``; ``ratio = 1`` gives a uniform grid.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    if ratio == 1:
        g1 = horizon / (m - 1)
    else:
        g1 = horizon * (1 - ratio) / (1 - ratio ** (m - 1))
    gaps = g1 * ratio ** np.arange(m - 1)
    t = np.concatenate([[0.0], np.cumsum(gaps)])
    t[-1] = horizon
    return t


def tail_fraction(times, horizon: float) -> float:
    """Fraction of ``times`` in the last quarter ``[0.75 M, M]``."""
    times = np.asarray(times, dtype=float)
    return float(np.mean(times >= 0.75 * horizon))


def ratio_for_tail_fraction(m: int, fraction: float, horizon: float = 1.0) -> float:
    """Largest gap ratio whose grid puts at least ``fraction`` of its ``m``
    points in the last quarter of the domain.

    The uniform grid is the least tail-heavy option, so fractions it
    already meets return ``1.0``.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    if tail_fraction(exponential_time_grid(horizon, m, 1.0), horizon) >= fraction:
        return 1.0
    lo, hi = 1e-6, 1.0
    if tail_fraction(exponential_time_grid(horizon, m, lo), horizon) < fraction:
        raise ValueError(f"no ratio puts {fraction:.0%} of {m} points in the last quarter")
    for _ in range(80):
        mid = (lo + hi) / 2
        if tail_fraction(exponential_time_grid(horizon, m, mid), horizon) >= fraction:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True, eq=False)
class SamplingSchedule:
    """Planned observation times for each component.

    ``intervals`` holds the fragment intervals ``[(B, E), ...]`` of each
    component for fragment plans and is ``None`` for sparse plans.
    """

    master_grid: np.ndarray
    times: Tuple[np.ndarray, ...]
    intervals: Optional[Tuple[Tuple[Tuple[float, float], ...], ...]] = None

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i) -> np.ndarray:
        return self.times[i]

    def rows(self, ids: Optional[Sequence[str]] = None):
        """``(signal_id, time)`` pairs in component order."""
        ids = ids if ids is not None else [str(i) for i in range(len(self))]
        for sid, ts in zip(ids, self.times):
            for t in ts:
                yield sid, float(t)

    def write(self, dest: Union[str, os.PathLike, TextIO], ids=None, delimiter: str = ",") -> None:
        """Write the plan as ``signal_id,time`` rows."""
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "w", newline="") as fh:
                self.write(fh, ids, delimiter)
            return
        w = csv.writer(dest, delimiter=delimiter, lineterminator="\n")
        w.writerow(("signal_id", "time"))
        for sid, t in self.rows(ids):
            w.writerow((sid, repr(t)))


def sparse_schedule(n: int, m_i: Union[int, Sequence[int]], grid,
                    rng: np.random.Generator) -> SamplingSchedule:
    """Uniformly random subsets of the master grid, one per component."""
    grid = np.asarray(grid, dtype=float)
    counts = np.broadcast_to(np.asarray(m_i, dtype=int), (n,))
    if np.any(counts > grid.size) or np.any(counts < 1):
        raise ValueError(f"per-component counts must lie in [1, {grid.size}]")
    out = []
    for c in counts:
        idx = np.sort(rng.choice(grid.size, size=int(c), replace=False))
        out.append(grid[idx])
    return SamplingSchedule(grid, tuple(out))


def fragment_schedule(n: int, grid, rng: np.random.Generator, fragments: int = 2,
                      duration: Optional[float] = None,
                      max_tries: int = 100) -> SamplingSchedule:
    """Random non-overlapping intervals ``[B, min(B + duration, M)]``.

    Starts are drawn without replacement from the grid points that leave
    room for a full interval (``B <= M - duration``; ``B = 0`` if there are
    none). A draw is rejected when two intervals touch or overlap.
    ``duration`` defaults to ``M / 10``.

    Raises
    ------
    ValueError
        If ``fragments`` intervals cannot be placed in ``max_tries`` draws.
    """
    grid = np.asarray(grid, dtype=float)
    M = float(grid[-1])
    if fragments < 1:
        raise ValueError("fragments must be at least 1")
    dur = M / 10 if duration is None else float(duration)
    if dur <= 0:
        raise ValueError("duration must be positive")
    starts = grid[(grid <= M - dur + 1e-12 * M) & (grid < M)]
    if starts.size == 0:
        starts = grid[:1]
    if starts.size < fragments:
        raise ValueError(f"only {starts.size} admissible start points for {fragments} fragments")
    times, intervals = [], []
    for i in range(n):
        for _ in range(max_tries):
            B = np.sort(rng.choice(starts, size=fragments, replace=False))
            E = np.minimum(B + dur, M)
            if np.all(B[1:] > E[:-1]):
                break
        else:
            raise ValueError(
                f"could not place {fragments} disjoint fragments of length {dur:g} "
                f"for component {i} in {max_tries} draws"
            )
        keep = np.zeros(grid.size, bool)
        for b, e in zip(B, E):
            keep |= (grid >= b) & (grid <= e)
        times.append(grid[keep])
        intervals.append(tuple((float(b), float(e)) for b, e in zip(B, E)))
    return SamplingSchedule(grid, tuple(times), tuple(intervals))


def apply_schedule(signal: DegradationSignal, planned, stop_time: float = np.inf
                   ) -> Optional[DegradationSignal]:
    """Observe ``signal`` at the planned times up to ``stop_time``.

    ``signal`` must contain every planned time. Returns ``None`` (with a
    warning) when nothing is observed.
    """
    planned = np.asarray(planned, dtype=float)
    idx = np.searchsorted(signal.times, planned)
    idx = np.minimum(idx, max(len(signal) - 1, 0))
    if len(signal) == 0 or np.any(signal.times[idx] != planned):
        raise ValueError(f"signal {signal.id!r} is not defined at every planned time")
    keep = planned <= stop_time
    if not keep.any():
        warnings.warn(f"signal {signal.id!r} stops before its first planned time; dropped",
                      stacklevel=2)
        return None
    return DegradationSignal(signal.id, planned[keep], signal.values[idx[keep]])


def apply_schedule_all(signals: Sequence[DegradationSignal], schedule: SamplingSchedule,
                       stop_times) -> List[DegradationSignal]:
    """:func:`apply_schedule` for each component, dropping empty results."""
    stop = np.broadcast_to(np.asarray(stop_times, dtype=float), (len(signals),))
    out = []
    for s, planned, st in zip(signals, schedule.times, stop):
        obs = apply_schedule(s, planned, st)
        if obs is not None:
            out.append(obs)
    return out


def gap_cv(times) -> float:
    """Coefficient of variation of the gaps between distinct sorted times."""
    u = np.unique(np.asarray(times, dtype=float))
    g = np.diff(u)
    if g.size < 2:
        return 0.0
    return float(np.std(g) / np.mean(g))
