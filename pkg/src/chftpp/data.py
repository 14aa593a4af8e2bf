"""Event sequences: file format, validation, splitting and padded batches.

On disk a corpus is line-delimited JSON; each line holds one sequence as a
list of ``[type_id, timestamp]`` pairs with strictly increasing timestamps.
The process is taken to start at time 0, so the first inter-event time is
the first timestamp itself.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


class DataFormatError(ValueError):
    """A line of a sequence file could not be parsed."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class SequenceValidationError(ValueError):
    """Parsed data violates a sequence or dataset invariant."""


class Event(NamedTuple):
    type_id: int
    time: float


class EventSequence:
    """Immutable ordered events of one realisation."""

    __slots__ = ("types", "times")

    def __init__(self, types, times):
        types = np.array(types, dtype=np.int64)
        times = np.array(times, dtype=np.float64)
        if types.ndim != 1 or types.shape != times.shape:
            raise SequenceValidationError("types and times must be 1-D of equal length")
        if types.size == 0:
            raise SequenceValidationError("a sequence needs at least one event")
        if np.any(types < 0):
            raise SequenceValidationError("negative type id")
        if not np.all(np.isfinite(times)) or times[0] < 0:
            raise SequenceValidationError("timestamps must be finite and nonnegative")
        if np.any(np.diff(times) <= 0):
            raise SequenceValidationError("timestamps must be strictly increasing")
        types.flags.writeable = False
        times.flags.writeable = False
        self.types = types
        self.times = times

    @classmethod
    def from_taus(cls, types, taus) -> EventSequence:
        return cls(types, np.cumsum(np.asarray(taus, dtype=np.float64)))

    @property
    def taus(self) -> np.ndarray:
        return np.diff(self.times, prepend=0.0)

    @property
    def events(self) -> list[Event]:
        return [Event(int(m), float(t)) for m, t in zip(self.types, self.times)]

    def __len__(self) -> int:
        return int(self.types.size)

    def __eq__(self, other) -> bool:
        return (isinstance(other, EventSequence)
                and np.array_equal(self.types, other.types)
                and np.array_equal(self.times, other.times))

    def __hash__(self):
        return hash((self.types.tobytes(), self.times.tobytes()))

    def __repr__(self) -> str:
        return f"EventSequence(n={len(self)}, T={self.times[-1]:.4g})"

    def to_json(self) -> str:
        return json.dumps([[int(m), float(t)] for m, t in zip(self.types, self.times)])


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[EventSequence, ...]
    num_types: int

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.num_types < 1:
            raise SequenceValidationError("num_types must be >= 1")
        for i, s in enumerate(self.sequences):
            if s.types.max() >= self.num_types:
                raise SequenceValidationError(
                    f"sequence {i}: type id {int(s.types.max())} >= num_types {self.num_types}")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i) -> EventSequence:
        return self.sequences[i]

    @property
    def num_events(self) -> int:
        return int(np.sum([len(s) for s in self.sequences]))

    def all_taus(self) -> np.ndarray:
        if not self.sequences:
            return np.zeros(0)
        return np.concatenate([s.taus for s in self.sequences])

    def stats(self) -> dict:
        """Corpus statistics in the usual dataset-table layout."""
        taus = self.all_taus()
        return {
            "num_types": self.num_types,
            "num_sequences": len(self),
            "mean_length": self.num_events / max(len(self), 1),
            "interval_mean": float(taus.mean()) if taus.size else 0.0,
            "interval_std": float(taus.std()) if taus.size else 0.0,
        }


def parse_line(line: str, lineno: int | None = None) -> EventSequence:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(raw, list) or not raw:
        raise DataFormatError("expected a non-empty JSON array of [type, time] pairs", lineno)
    types, times = [], []
    for item in raw:
        if (not isinstance(item, list) or len(item) != 2
                or isinstance(item[0], bool) or not isinstance(item[0], int)
                or isinstance(item[1], bool) or not isinstance(item[1], (int, float))):
            raise DataFormatError(f"bad event {item!r}; expected [int, number]", lineno)
        types.append(item[0])
        times.append(float(item[1]))
    try:
        return EventSequence(types, times)
    except SequenceValidationError as exc:
        prefix = f"line {lineno}: " if lineno is not None else ""
        raise SequenceValidationError(prefix + str(exc)) from None


def load_dataset(path, num_types: int | None = None) -> Dataset:
    """Read a line-JSON sequence file.

    ``num_types`` may be omitted when a ``<stem>.meta.json`` or
    ``metadata.json`` sidecar with a ``num_types`` key sits next to the file.
    """
    path = Path(path)
    if num_types is None:
        num_types = read_num_types(path)
    seqs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            seq = parse_line(line, lineno)
            if seq.types.max() >= num_types:
                raise SequenceValidationError(
                    f"line {lineno}: type id {int(seq.types.max())} >= num_types {num_types}")
            seqs.append(seq)
    return Dataset(tuple(seqs), num_types)


def read_num_types(path) -> int:
    path = Path(path)
    for side in (path.with_suffix(".meta.json"), path.parent / "metadata.json"):
        if side.exists():
            meta = json.loads(side.read_text(encoding="utf-8"))
            if "num_types" in meta:
                return int(meta["num_types"])
    raise SequenceValidationError(f"num_types not given and no metadata sidecar for {path}")


def save_dataset(ds: Dataset, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in ds.sequences:
            fh.write(s.to_json() + "\n")


def split(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle whole sequences and cut into train/val/test parts."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fr[0] * n))
    n_val = min(int(round(fr[1] * n)), n - n_train)
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple(Dataset(tuple(ds.sequences[i] for i in p), ds.num_types) for p in parts)


@dataclass(frozen=True)
class Batch:
    """Right-padded batch; ``mask`` is 1.0 exactly on real events."""

    types: np.ndarray      # (B, L) int64
    taus: np.ndarray       # (B, L) float64
    mask: np.ndarray       # (B, L) float64
    lengths: np.ndarray    # (B,) int64

    @property
    def size(self) -> int:
        return int(self.types.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.types.shape[1])

    @property
    def num_events(self) -> int:
        return int(self.lengths.sum())


def pad_batch(seqs) -> Batch:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    B, L = len(seqs), int(lengths.max())
    types = np.zeros((B, L), dtype=np.int64)
    taus = np.zeros((B, L))
    mask = np.zeros((B, L))
    for b, s in enumerate(seqs):
        n = len(s)
        types[b, :n] = s.types
        taus[b, :n] = s.taus
        mask[b, :n] = 1.0
    return Batch(types, taus, mask, lengths)


def make_batches(ds: Dataset, batch_size: int = 64, shuffle: bool = False,
                 seed: int | np.random.Generator = 0) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(ds) == 0:
        raise ValueError("cannot batch an empty dataset")
    order = np.arange(len(ds))
    if shuffle:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        order = rng.permutation(len(ds))
    return [pad_batch([ds.sequences[i] for i in order[k:k + batch_size]])
            for k in range(0, len(ds), batch_size)]
