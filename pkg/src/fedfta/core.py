"""Flat parameter vectors and the seeded randomness contract.

Every model weight set, local update and aggregation delta travels between
modules as a :class:`ParamVector`. Reductions always run in ascending input
order so repeated runs are bit-stable on one platform.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError

_U64 = 2**64


class ParamVector:
    """Immutable, finite, one-dimensional float64 weight vector."""

    __slots__ = ("_values",)

    def __init__(self, values: Iterable[float] | np.ndarray):
        arr = np.array(values, dtype=np.float64)  # always a private copy
        if arr.ndim != 1:
            raise DimensionError(f"ParamVector needs a 1-D sequence, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("ParamVector entries must be finite")
        arr.flags.writeable = False
        self._values = arr

    @classmethod
    def zeros(cls, length: int) -> "ParamVector":
        return cls(np.zeros(length))

    @property
    def values(self) -> np.ndarray:
        """Read-only view of the entries."""
        return self._values

    def __len__(self) -> int:
        return self._values.shape[0]

    def __iter__(self):
        return iter(self._values.tolist())

    def __getitem__(self, i):
        return self._values[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return len(self) == len(other) and bool(np.array_equal(self._values, other._values))

    def __hash__(self) -> int:
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        if len(self) <= 6:
            return f"ParamVector({self._values.tolist()})"
        head = ", ".join(f"{v:.4g}" for v in self._values[:3])
        return f"ParamVector([{head}, ...], length={len(self)})"

    def tolist(self) -> list[float]:
        return self._values.tolist()

    def max_abs(self) -> float:
        return float(np.max(np.abs(self._values))) if len(self) else 0.0


def _check_same_length(x: ParamVector, y: ParamVector) -> None:
    if len(x) != len(y):
        raise DimensionError(f"length mismatch: {len(x)} != {len(y)}")


def pv_axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``a * x + y``."""
    _check_same_length(x, y)
    if not np.isfinite(a):
        raise NumericError(f"scale must be finite, got {a}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x.values + y.values
    if not np.all(np.isfinite(out)):
        raise NumericError("axpy produced a non-finite entry")
    return ParamVector(out)


def pv_sub(x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``x - y``."""
    _check_same_length(x, y)
    return ParamVector(x.values - y.values)


def pv_weighted_mean(vectors: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    """Weighted mean with weights normalised internally.

    Callers pass raw weights (typically per-client sample counts). The sum
    is accumulated in input order.
    """
    if len(vectors) == 0:
        raise ArgumentError("weighted mean of an empty list")
    if len(vectors) != len(weights):
        raise ArgumentError(f"{len(vectors)} vectors but {len(weights)} weights")
    n = len(vectors[0])
    for v in vectors:
        if len(v) != n:
            raise ArgumentError(f"length mismatch: {len(v)} != {n}")
    w = [float(x) for x in weights]
    if any(not np.isfinite(x) or x < 0 for x in w):
        raise ArgumentError("weights must be finite and nonnegative")
    total = 0.0
    for x in w:
        total += x
    if total <= 0:
        raise ArgumentError("weights sum to zero")
    acc = np.zeros(n)
    for wi, v in zip(w, vectors):
        acc = acc + (wi / total) * v.values
    return ParamVector(acc)


def pv_allclose(x: ParamVector, y: ParamVector, tol: float) -> bool:
    """True iff the largest absolute entrywise gap is at most ``tol``."""
    _check_same_length(x, y)
    if not tol > 0:
        raise ArgumentError(f"tol must be positive, got {tol}")
    if len(x) == 0:
        return True
    return bool(np.max(np.abs(x.values - y.values)) <= tol)


class Stream(IntEnum):
    """Named stream ids fanned out from one master seed."""

    DATA = 0
    SPLIT = 1
    PARTITION = 2
    SELECTION = 3
    BASE_INIT = 4
    HEAD_INIT = 5
    CLIENT = 6


class SeededRng:
    """A reproducible random stream identified by ``(seed, stream)``.

    ``stream`` is a tuple of nonnegative ints; distinct tuples under the
    same seed give statistically independent streams (numpy ``SeedSequence``
    spawn keys driving PCG64, which is platform-stable).
    """

    def __init__(self, seed: int, stream: int | Sequence[int] = ()):
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
            raise ArgumentError(f"seed must be an integer, got {seed!r}")
        seed = int(seed)
        if not 0 <= seed < _U64:
            raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        if isinstance(stream, (int, np.integer)):
            stream = (int(stream),)
        key = tuple(int(s) for s in stream)
        if any(s < 0 for s in key):
            raise ArgumentError(f"stream ids must be nonnegative, got {key}")
        self.seed = seed
        self.stream = key
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))

    def spawn(self, *key: int) -> "SeededRng":
        """Fresh stream keyed by this stream's key extended with ``key``."""
        return SeededRng(self.seed, self.stream + tuple(int(k) for k in key))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


def as_generator(rng: SeededRng | np.random.Generator | int) -> np.random.Generator:
    """Accept a SeededRng, a numpy Generator or an int seed."""
    if isinstance(rng, SeededRng):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return SeededRng(int(rng)).generator
    raise ArgumentError(f"cannot use {type(rng).__name__} as a random source")
