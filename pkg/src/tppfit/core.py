"""Shared domain types: observation windows, event sequences, datasets,
parameter vectors and fit results, plus JSONL persistence and the flat
packed representation used by the numerical code."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# Errors


class PointProcessError(Exception):
    """Base class for all errors raised by this package."""


class NonMonotoneError(PointProcessError):
    """Event times are not strictly increasing."""


class OutOfWindowError(PointProcessError):
    """An event time lies outside (0, t_end]."""


class MarkMismatchError(PointProcessError):
    """Marks are missing, mis-sized, or outside {1..K}."""


class IndexOutOfRangeError(PointProcessError, IndexError):
    """An event index outside 1..N was requested."""


class DomainError(PointProcessError):
    """An operation was evaluated outside its domain."""


class UnsupportedContextError(PointProcessError):
    """A weight function was asked for context the data does not provide."""


class NameMismatchError(PointProcessError):
    """Parameter names of two vectors do not line up."""


class NonFiniteLossError(PointProcessError):
    """An objective produced a non-finite value or gradient."""

    def __init__(self, message: str, sequence_index: int | None = None,
                 iteration: int | None = None):
        super().__init__(message)
        self.sequence_index = sequence_index
        self.iteration = iteration


class DivergedError(PointProcessError):
    """The optimizer's loss exceeded the divergence threshold."""


class ExplosionGuardError(PointProcessError):
    """A simulated sequence exceeded the event-count cap."""


class ConfigError(PointProcessError):
    """An experiment or CLI configuration is invalid."""


# ---------------------------------------------------------------------------
# Domain types


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr = np.atleast_1d(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ObservationWindow:
    """Time window [0, t_end] on which a sequence is observed."""

    t_end: float

    def __post_init__(self):
        if not (np.isfinite(self.t_end) and self.t_end > 0):
            raise DomainError(f"t_end must be positive, got {self.t_end}")


@dataclass(frozen=True)
class EventSequence:
    """Ordered event times on an observation window, optionally marked.

    Times are strictly increasing and lie in (0, t_end]. Marks, when
    present, are 1-based type labels of the same length as ``times``.
    """

    times: np.ndarray
    window: ObservationWindow
    marks: np.ndarray | None = None

    def __post_init__(self):
        times = _frozen_array(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if self.marks is not None:
            marks = _frozen_array(self.marks, dtype=np.int64)
            object.__setattr__(self, "marks", marks)
        validate_sequence(self)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def t_end(self) -> float:
        return self.window.t_end

    def history_before(self, n: int) -> np.ndarray:
        """Times strictly before the n-th event (1-based); empty for n=1."""
        if not 1 <= n <= len(self):
            raise IndexOutOfRangeError(
                f"event index {n} outside 1..{len(self)}")
        return self.times[: n - 1]


def validate_sequence(seq: EventSequence) -> None:
    """Re-check all EventSequence invariants, raising on the first violation."""
    times = np.asarray(seq.times, dtype=float)
    if times.ndim != 1:
        raise NonMonotoneError("times must be a one-dimensional array")
    if times.size:
        if not np.all(np.isfinite(times)):
            raise OutOfWindowError("times must be finite")
        if np.any(np.diff(times) <= 0):
            raise NonMonotoneError("times must be strictly increasing")
        if times[0] <= 0 or times[-1] > seq.window.t_end:
            raise OutOfWindowError(
                f"times must lie in (0, {seq.window.t_end}]")
    if seq.marks is not None:
        marks = np.asarray(seq.marks)
        if marks.shape != times.shape:
            raise MarkMismatchError("marks must have the same length as times")
        if marks.size and (marks.min() < 1):
            raise MarkMismatchError("marks are 1-based and must be >= 1")


@dataclass(frozen=True)
class Dataset:
    """A collection of event sequences sharing a common number of types."""

    sequences: tuple[EventSequence, ...]
    num_types: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.num_types < 1:
            raise MarkMismatchError("num_types must be >= 1")
        for i, seq in enumerate(self.sequences):
            if self.num_types > 1:
                if seq.marks is None and len(seq) > 0:
                    raise MarkMismatchError(
                        f"sequence {i}: marks required for num_types > 1")
            if seq.marks is not None and len(seq) > 0:
                if seq.marks.max(initial=1) > self.num_types:
                    raise MarkMismatchError(
                        f"sequence {i}: mark exceeds num_types={self.num_types}")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[EventSequence]:
        return iter(self.sequences)

    @property
    def num_events(self) -> int:
        return sum(len(s) for s in self.sequences)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.sequences[i] for i in indices), self.num_types)


@dataclass(frozen=True)
class ParamVector:
    """Named parameter vector with per-entry positivity flags."""

    names: tuple[str, ...]
    values: np.ndarray
    positive: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "positive", tuple(self.positive))
        values = _frozen_array(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if not (len(self.names) == values.size == len(self.positive)):
            raise NameMismatchError("names, values and flags must align")
        if not np.all(np.isfinite(values)):
            raise DomainError("parameter values must be finite")
        for name, value, pos in zip(self.names, values, self.positive):
            if pos and value <= 0:
                raise DomainError(f"parameter {name} must be > 0, got {value}")

    def __len__(self) -> int:
        return int(self.values.size)

    def __getitem__(self, name: str) -> float:
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise NameMismatchError(f"no parameter named {name!r}") from None

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def replace_values(self, values) -> "ParamVector":
        return ParamVector(self.names, np.asarray(values, dtype=float),
                           self.positive)


@dataclass
class FitResult:
    """Outcome of a gradient-based fit."""

    estimate: ParamVector
    loss_trace: list[float]
    grad_norm_trace: list[float]
    wall_time: float
    iterations: int
    objective_name: str

    def __post_init__(self):
        if len(self.loss_trace) != self.iterations:
            raise DomainError("loss_trace length must equal iterations")


# ---------------------------------------------------------------------------
# Flat packed representation

@dataclass(frozen=True)
class PackedData:
    """All events of a dataset concatenated into flat arrays.

    ``marks`` are 0-based here (unlike the 1-based domain representation)
    so they can index kernel matrices directly. ``next_times`` is NaN for
    the final event of each sequence.
    """

    times: np.ndarray       # (n,) float
    marks: np.ndarray       # (n,) int64, 0-based
    seq_index: np.ndarray   # (n,) int64
    local_index: np.ndarray  # (n,) int64, position within its sequence
    prev_times: np.ndarray  # (n,) float, 0.0 for the first event
    next_times: np.ndarray  # (n,) float, NaN for the last event
    seq_starts: np.ndarray  # (M+1,) int64 offsets into the event arrays
    t_ends: np.ndarray      # (M,) float
    num_types: int
    num_sequences: int

    @property
    def num_events(self) -> int:
        return int(self.times.size)


def pack_dataset(dataset: Dataset) -> PackedData:
    lengths = np.array([len(s) for s in dataset.sequences], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lengths)])
    n = int(starts[-1])
    times = np.empty(n, dtype=float)
    marks = np.zeros(n, dtype=np.int64)
    for s, seq in zip(starts[:-1], dataset.sequences):
        times[s:s + len(seq)] = seq.times
        if seq.marks is not None:
            marks[s:s + len(seq)] = seq.marks - 1
    seq_index = np.repeat(np.arange(len(dataset), dtype=np.int64), lengths)
    local_index = np.arange(n, dtype=np.int64) - starts[seq_index]
    prev_times = np.empty(n, dtype=float)
    next_times = np.full(n, np.nan)
    if n:
        prev_times[:] = np.concatenate([[0.0], times[:-1]])
        prev_times[local_index == 0] = 0.0
        next_times[:-1] = times[1:]
        next_times[starts[1:] - 1] = np.nan
    t_ends = np.array([s.t_end for s in dataset.sequences], dtype=float)
    return PackedData(
        times=times, marks=marks, seq_index=seq_index,
        local_index=local_index, prev_times=prev_times,
        next_times=next_times, seq_starts=starts, t_ends=t_ends,
        num_types=dataset.num_types, num_sequences=len(dataset))


# ---------------------------------------------------------------------------
# JSONL persistence

def sequence_to_record(seq: EventSequence) -> dict:
    rec: dict = {"times": [float(t) for t in seq.times],
                 "t_end": float(seq.t_end)}
    if seq.marks is not None:
        rec["marks"] = [int(m) for m in seq.marks]
    return rec


def sequence_from_record(rec: dict) -> EventSequence:
    if "times" not in rec or "t_end" not in rec:
        raise ConfigError("sequence record needs 'times' and 't_end'")
    marks = rec.get("marks")
    return EventSequence(times=np.asarray(rec["times"], dtype=float),
                         window=ObservationWindow(float(rec["t_end"])),
                         marks=None if marks is None else np.asarray(marks))


def save_jsonl(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for seq in dataset.sequences:
            fh.write(json.dumps(sequence_to_record(seq)) + "\n")


def _iter_jsonl_files(path: Path) -> Iterable[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise ConfigError(f"no .jsonl files under {path}")
        return files
    return [path]


def load_jsonl(path: str | Path, num_types: int | None = None) -> Dataset:
    """Load a dataset from a JSONL file or a directory of JSONL files."""
    sequences: list[EventSequence] = []
    for file in _iter_jsonl_files(Path(path)):
        with file.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    sequences.append(sequence_from_record(json.loads(line)))
    if num_types is None:
        num_types = 1
        for seq in sequences:
            if seq.marks is not None and len(seq):
                num_types = max(num_types, int(seq.marks.max()))
    return Dataset(tuple(sequences), num_types)
