"""Dense float64 vector math and deterministic, labelled random streams.

Every other module builds on these two pieces: parameter vectors are plain
1-d numpy arrays validated through the helpers here, and all randomness is
drawn from counter-based generators keyed by (seed, label) so that any
client/round/step stream can be re-derived independently of execution order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class DimensionMismatchError(ValueError):
    """Raised when two vectors of different lengths meet in an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces or receives NaN/Inf entries."""


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-d float64 array, copying the input."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name}: expected a 1-d vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name}: contains non-finite entries")
    return arr


def ensure_finite(arr: np.ndarray, op: str) -> np.ndarray:
    """Return `arr` unchanged, or raise naming the operation that produced it."""
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite result produced by {op}")
    return arr


def _same_dim(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{op}: dimension mismatch {a.shape} vs {b.shape}")


def _finite_scalar(s: float, op: str) -> float:
    s = float(s)
    if not np.isfinite(s):
        raise NonFiniteError(f"{op}: non-finite scalar")
    return s


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_dim(a, b, "add")
    return ensure_finite(a + b, "add")


def subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_dim(a, b, "subtract")
    return ensure_finite(a - b, "subtract")


def scale(a: np.ndarray, s: float) -> np.ndarray:
    s = _finite_scalar(s, "scale")
    return ensure_finite(a * s, "scale")


def axpy(a: np.ndarray, s: float, b: np.ndarray) -> np.ndarray:
    """a + s*b."""
    _same_dim(a, b, "axpy")
    s = _finite_scalar(s, "axpy")
    return ensure_finite(a + s * b, "axpy")


def dot(a: np.ndarray, b: np.ndarray) -> float:
    _same_dim(a, b, "dot")
    out = float(np.dot(a, b))
    if not np.isfinite(out):
        raise NonFiniteError("non-finite result produced by dot")
    return out


def sq_norm(a: np.ndarray) -> float:
    return dot(a, a)


def inf_norm(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    out = float(np.max(np.abs(a)))
    if not np.isfinite(out):
        raise NonFiniteError("non-finite result produced by inf_norm")
    return out


def _label_words(label: str) -> tuple[int, ...]:
    # Stable 128-bit hash of the label, split into four uint32 words for the
    # SeedSequence spawn key. hashlib is platform independent, unlike hash().
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


@dataclass
class RngStream:
    """A named, replayable random stream.

    The underlying generator is Philox (counter based) keyed by the 64-bit
    seed plus a hash of the label, so streams with distinct labels are
    statistically independent and any stream can be re-derived from scratch.
    """

    seed: int
    label: str
    gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("rng stream label must be nonempty")
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & ((1 << 64) - 1), spawn_key=_label_words(self.label)
        )
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, sublabel: str) -> "RngStream":
        """Derive an independent stream labelled `<label>/<sublabel>`."""
        return RngStream(self.seed, f"{self.label}/{sublabel}")


def derive_stream(seed: int, label: str) -> RngStream:
    return RngStream(seed, label)
