"""Degradation signals, ensembles and their tabular representation."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional, TextIO, Union

import numpy as np

from .exceptions import SignalError

HEADER = ("signal_id", "time", "value")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DegradationSignal:
    """Observations ``(t_j, S(t_j))`` of a single component.

    Parameters
    ----------
    id : str
        Opaque identifier.
    times : array_like
        Strictly increasing observation times.
    values : array_like
        Finite signal amplitudes, same length as ``times``.
    """

    id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times).reshape(-1)
        v = _frozen(self.values).reshape(-1)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.shape != v.shape:
            raise SignalError(f"signal {self.id!r}: {t.size} times but {v.size} values")
        if not np.all(np.isfinite(t)):
            raise SignalError(f"signal {self.id!r}: non-finite time")
        if not np.all(np.isfinite(v)):
            raise SignalError(f"signal {self.id!r}: non-finite value")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise SignalError(f"signal {self.id!r}: times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, DegradationSignal):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    @property
    def t_star(self) -> float:
        """Latest observation time (``nan`` when empty)."""
        return float(self.times[-1]) if self.times.size else math.nan

    def truncate(self, t_max: float) -> "DegradationSignal":
        """Observations with time ``<= t_max``."""
        keep = self.times <= t_max
        return DegradationSignal(self.id, self.times[keep], self.values[keep])


@dataclass(frozen=True)
class SignalEnsemble:
    """A collection of signals sharing the time domain ``[0, horizon]``."""

    signals: tuple
    horizon: float
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        sigs = tuple(self.signals)
        object.__setattr__(self, "signals", sigs)
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise SignalError(f"horizon must be positive and finite, got {self.horizon}")
        if not sigs:
            raise SignalError("ensemble contains no signals")
        ids = [s.id for s in sigs]
        if len(set(ids)) != len(ids):
            raise SignalError("ensemble contains duplicate signal ids")
        for s in sigs:
            if not len(s):
                raise SignalError(f"signal {s.id!r} has no observations")
            if s.times[0] < 0 or s.times[-1] > self.horizon:
                raise SignalError(
                    f"signal {s.id!r}: times outside [0, {self.horizon}]"
                )

    def __len__(self) -> int:
        return len(self.signals)

    def __iter__(self) -> Iterator[DegradationSignal]:
        return iter(self.signals)

    def __getitem__(self, i) -> DegradationSignal:
        return self.signals[i]

    def pooled(self):
        """Concatenated ``(times, values, signal_index)`` arrays."""
        sigs = [s for s in self.signals]
        times = np.concatenate([s.times for s in sigs])
        values = np.concatenate([s.values for s in sigs])
        index = np.concatenate(
            [np.full(len(s), i, dtype=np.intp) for i, s in enumerate(sigs)]
        )
        return times, values, index

    def censored(
        self, spec: "FailureSpec", include_post_failure: bool = False
    ) -> "SignalEnsemble":
        """Training ensemble with each signal cut at its first observed crossing."""
        if include_post_failure:
            return self
        out = [censor_at_failure(s, spec).prefix for s in self.signals]
        return SignalEnsemble(tuple(out), self.horizon, dict(self.metadata))


@dataclass(frozen=True)
class FailureSpec:
    """Soft-failure threshold ``D`` and horizon ``M``."""

    threshold: float
    horizon: float

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise SignalError("threshold must be finite")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise SignalError("horizon must be positive and finite")


class CensoredSignal(NamedTuple):
    prefix: DegradationSignal
    failure_time: Optional[float]
    tail: DegradationSignal


def censor_at_failure(signal: DegradationSignal, spec: FailureSpec) -> CensoredSignal:
    """Split a signal at its first observed threshold crossing.

    The prefix keeps every observation up to and including the first one with
    ``value >= threshold``; later observations go to ``tail``.
    """
    hit = np.flatnonzero(signal.values >= spec.threshold)
    if hit.size == 0:
        empty = DegradationSignal(signal.id, [], [])
        return CensoredSignal(signal, None, empty)
    j = int(hit[0])
    prefix = DegradationSignal(signal.id, signal.times[: j + 1], signal.values[: j + 1])
    tail = DegradationSignal(signal.id, signal.times[j + 1 :], signal.values[j + 1 :])
    return CensoredSignal(prefix, float(signal.times[j]), tail)


Source = Union[str, os.PathLike, TextIO, Iterable]


def _iter_rows(source: Source, delimiter: str):
    """Yield ``(row_number, id, time_str, value_str)`` from any supported source."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            yield from _iter_rows(fh, delimiter)
        return
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        reader = csv.reader(source, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise SignalError("input is empty")
        header = [h.strip() for h in header]
        try:
            cols = [header.index(h) for h in HEADER]
        except ValueError:
            raise SignalError(
                f"header must contain {','.join(HEADER)}; got {','.join(header)}"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise SignalError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            yield (lineno,) + tuple(row[c].strip() for c in cols)
        return
    for lineno, rec in enumerate(source, start=1):
        if isinstance(rec, dict):
            rec = tuple(rec[h] for h in HEADER)
        sid, t, v = rec
        yield lineno, str(sid), t, v


def _number(text, what: str, lineno: int) -> float:
    try:
        x = float(text)
    except (TypeError, ValueError):
        raise SignalError(f"row {lineno}: non-numeric {what} {text!r}") from None
    if not math.isfinite(x):
        raise SignalError(f"row {lineno}: non-finite {what} {text!r}")
    return x


def load_ensemble(
    source: Source, horizon: float, delimiter: str = ",", metadata: Optional[dict] = None
) -> SignalEnsemble:
    """Group ``signal_id, time, value`` records into a :class:`SignalEnsemble`.

    ``source`` may be a path, an open text file with a header row, or an
    iterable of ``(signal_id, time, value)`` tuples or dicts. Signals keep
    first-appearance order; observations are sorted by time.

    Raises
    ------
    SignalError
        On duplicate ``(id, time)`` pairs, times outside ``[0, horizon]``,
        non-numeric fields or an empty input.
    """
    groups: dict = {}
    for lineno, sid, t_text, v_text in _iter_rows(source, delimiter):
        t = _number(t_text, "time", lineno)
        v = _number(v_text, "value", lineno)
        if t < 0 or t > horizon:
            raise SignalError(f"row {lineno}: time {t} of signal {sid!r} outside [0, {horizon}]")
        g = groups.setdefault(sid, {})
        if t in g:
            raise SignalError(
                f"row {lineno}: duplicate time {t:g} for signal {sid!r} "
                f"(first seen in row {g[t][1]})"
            )
        g[t] = (v, lineno)
    if not groups:
        raise SignalError("input contains no records")
    signals = []
    for sid, g in groups.items():
        ts = sorted(g)
        signals.append(DegradationSignal(sid, ts, [g[t][0] for t in ts]))
    return SignalEnsemble(tuple(signals), float(horizon), dict(metadata or {}))


def write_ensemble(
    ensemble: Union[SignalEnsemble, Iterable[DegradationSignal]],
    dest: Union[str, os.PathLike, TextIO],
    delimiter: str = ",",
) -> None:
    """Write signals as ``signal_id,time,value`` rows (round-trip exact)."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="") as fh:
            write_ensemble(ensemble, fh, delimiter)
        return
    writer = csv.writer(dest, delimiter=delimiter, lineterminator="\n")
    writer.writerow(HEADER)
    for s in ensemble:
        for t, v in zip(s.times, s.values):
            writer.writerow((s.id, repr(float(t)), repr(float(v))))
