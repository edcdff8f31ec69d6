"""Data model for marked event sequences and the line-delimited file format.

A sequence is a set of strictly increasing event times on an observation
window ``(0, T)``, each event carrying an integer mark.  Files store one JSON
object per line with fields ``T`` and ``events`` (``[time, mark]`` pairs,
marks 1-based).  Internally marks are 0-based; the parser owns the boundary.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

# Smallest admissible inter-event gap.  The log-normal density is undefined
# at tau = 0, so ties (and near-ties) are rejected at load time.
TAU_MIN = 1e-8


class FormatError(ValueError):
    """Malformed record in a sequence file."""


class ValidationError(ValueError):
    """Record parsed but violates a sequence invariant."""


class Event(NamedTuple):
    time: float
    mark: int  # 0-based


@dataclass(frozen=True)
class EventSequence:
    """Ordered marked events on an observation window ``(0, window_end)``."""

    times: np.ndarray
    marks: np.ndarray
    window_end: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        marks = np.asarray(self.marks, dtype=np.int64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        times.setflags(write=False)
        marks.setflags(write=False)
        validate_sequence(times, marks, self.window_end)

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self):
        return (Event(float(t), int(k)) for t, k in zip(self.times, self.marks))

    @property
    def last_time(self) -> float:
        return float(self.times[-1]) if len(self) else 0.0

    @property
    def last_mark(self) -> int | None:
        return int(self.marks[-1]) if len(self) else None


def validate_sequence(times: np.ndarray, marks: np.ndarray, window_end: float) -> None:
    if times.ndim != 1 or marks.ndim != 1 or times.size != marks.size:
        raise ValidationError("times and marks must be 1-d arrays of equal length")
    if not np.isfinite(window_end) or window_end <= 0:
        raise ValidationError(f"window_end must be a positive real, got {window_end}")
    if times.size == 0:
        return
    if not np.all(np.isfinite(times)):
        raise ValidationError("non-finite event time")
    if times[0] < 0:
        raise ValidationError(f"event time {times[0]} is negative")
    gaps = np.diff(np.concatenate([[0.0], times]))
    if np.any(gaps < TAU_MIN):
        i = int(np.argmax(gaps < TAU_MIN))
        raise ValidationError(
            f"inter-event gap {gaps[i]:.3g} at position {i} is below {TAU_MIN:g} "
            "(times must be strictly increasing)"
        )
    if times[-1] >= window_end:
        raise ValidationError(
            f"last event time {times[-1]} is not before window end {window_end}"
        )
    if np.any(marks < 0):
        raise ValidationError("negative mark after 0-basing")


@dataclass(frozen=True)
class Dataset:
    """Mark-alphabet size plus named splits of event sequences."""

    K: int
    splits: dict[str, tuple[EventSequence, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        object.__setattr__(
            self, "splits", {n: tuple(s) for n, s in self.splits.items()}
        )
        for name, seqs in self.splits.items():
            for j, seq in enumerate(seqs):
                if len(seq) and int(seq.marks.max()) >= self.K:
                    raise ValidationError(
                        f"split {name!r} sequence {j}: mark {seq.marks.max() + 1} "
                        f"exceeds K={self.K}"
                    )

    def split(self, name: str) -> tuple[EventSequence, ...]:
        return self.splits[name]

    def n_tokens(self, name: str) -> int:
        return sum(len(s) for s in self.splits[name])


def history_arrays(history) -> tuple[np.ndarray, np.ndarray]:
    """Times/marks arrays from an EventSequence or a (times, marks) pair."""
    if isinstance(history, EventSequence):
        return history.times, history.marks
    times, marks = history
    return (
        np.asarray(times, dtype=np.float64),
        np.asarray(marks, dtype=np.intp),
    )


def inter_event_times(seq: EventSequence) -> list[tuple[float, int | None]]:
    """Per event: (gap since the previous event, previous mark or None).

    The first event has no predecessor: its gap is measured from 0 and its
    previous mark is None.
    """
    out: list[tuple[float, int | None]] = []
    prev_t, prev_k = 0.0, None
    for t, k in zip(seq.times, seq.marks):
        out.append((float(t - prev_t), prev_k))
        prev_t, prev_k = float(t), int(k)
    return out


def censored_tail(seq: EventSequence) -> float:
    """Duration from the last event (or 0) to the window end."""
    return float(seq.window_end - seq.last_time)


def _jitter_times(times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Nudge ties/near-ties forward so every gap is at least TAU_MIN.

    Noise in [0, TAU_MIN) alone cannot separate exact ties by TAU_MIN, so the
    nudge is TAU_MIN plus uniform noise in [0, TAU_MIN).
    """
    times = np.array(times, dtype=np.float64)
    prev = 0.0
    for i, t in enumerate(times):
        if t - prev < TAU_MIN:
            t = prev + TAU_MIN * (1.0 + rng.uniform())
            times[i] = t
        prev = t
    return times


def _parse_record(line: str, lineno: int, K: int, jitter_rng) -> EventSequence:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"line {lineno}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict) or "events" not in obj:
        raise FormatError(f"line {lineno}: record must be an object with 'events'")
    raw = obj["events"]
    try:
        times = np.array([float(e[0]) for e in raw], dtype=np.float64)
        marks1 = np.array([int(e[1]) for e in raw], dtype=np.int64)
    except (TypeError, ValueError, IndexError):
        raise FormatError(
            f"line {lineno}: 'events' must be [time, mark] pairs"
        ) from None
    if np.any(marks1 < 1) or np.any(marks1 > K):
        bad = marks1[(marks1 < 1) | (marks1 > K)][0]
        raise ValidationError(f"line {lineno}: mark {bad} outside [1, {K}]")
    if jitter_rng is not None and times.size:
        times = _jitter_times(times, jitter_rng)

    if "T" in obj:
        window_end = float(obj["T"])
    else:
        if times.size == 0:
            raise FormatError(f"line {lineno}: empty record without 'T'")
        window_end = float(times[-1] + times[-1] / times.size)
        logger.warning(
            "line %d: missing 'T'; defaulted to t_N + mean gap = %.6g",
            lineno,
            window_end,
        )
    if jitter_rng is not None and times.size and times[-1] >= window_end:
        window_end = times[-1] + TAU_MIN
    try:
        return EventSequence(times, marks1 - 1, window_end)
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: {exc}") from None


def load_split(path, K: int, jitter_seed: int | None = None) -> tuple[EventSequence, ...]:
    """Read one line-delimited file into a tuple of sequences, in file order."""
    rng = None if jitter_seed is None else np.random.default_rng(jitter_seed)
    seqs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            seqs.append(_parse_record(line, lineno, K, rng))
    return tuple(seqs)


def load_dataset(
    paths: dict[str, "str"] | str,
    K: int,
    jitter_seed: int | None = None,
) -> Dataset:
    """Load named split files (or a single 'train' file) into a Dataset."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = {"train": paths}
    if len(set(paths)) != len(paths):
        raise ValidationError("split names must be unique")
    splits = {name: load_split(p, K, jitter_seed) for name, p in paths.items()}
    return Dataset(K=K, splits=splits)


def sequence_to_record(seq: EventSequence) -> str:
    events = [[float(t), int(k) + 1] for t, k in zip(seq.times, seq.marks)]
    return json.dumps({"T": float(seq.window_end), "events": events})


def write_split(path, seqs: Iterable[EventSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(sequence_to_record(seq) + "\n")


def write_dataset(dataset: Dataset, paths: dict[str, "str"]) -> None:
    for name, p in paths.items():
        write_split(p, dataset.splits[name])
