"""Dense linear algebra and reproducible randomness.

Vectors and matrices are plain float64 numpy arrays.  The random number
generator is counter-based: every draw is a pure function of
``(seed, stream_id, counter)``, so streams can be split for concurrent
actors and replayed (or generated in vectorized blocks) bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionError,
    EigenSolverError,
    NonFiniteError,
    ParameterError,
    SingularMatrixError,
)

MAX_EIG_DIM = 4096
CONDITION_LIMIT = 1e12

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_INV_2_53 = 2.0 ** -53


def as_vector(x, dim: int | None = None, what: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-d float64 array, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{what} must be 1-d, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionError(f"{what} must have length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return v


def as_matrix(m, what: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-d float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{what} must be 2-d, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return a


def as_square(m, what: str = "matrix") -> np.ndarray:
    a = as_matrix(m, what)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {a.shape}")
    return a


def spectrum(m) -> np.ndarray:
    """All eigenvalues (with multiplicity) of a square matrix, as complex128."""
    a = as_square(m)
    if a.shape[0] > MAX_EIG_DIM:
        raise DimensionError(f"matrix dimension {a.shape[0]} exceeds {MAX_EIG_DIM}")
    try:
        eigs = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"eigenvalue iteration failed: {exc}") from exc
    if not np.all(np.isfinite(eigs)):
        raise EigenSolverError("eigenvalue iteration produced non-finite values")
    return eigs


def solve_linear(m, b) -> np.ndarray:
    """Solve m @ x = b for a well-conditioned square matrix.

    Raises :class:`SingularMatrixError` (carrying the 2-norm condition
    estimate) when the condition number exceeds ``CONDITION_LIMIT``.
    """
    a = as_square(m)
    rhs = as_vector(b, dim=a.shape[0], what="right-hand side")
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularMatrixError(
            f"matrix is singular or ill-conditioned (cond ~ {cond:.3e})",
            condition=cond,
        )
    x = np.linalg.solve(a, rhs)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("linear solve produced non-finite entries")
    return x


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the standard simplex {x >= 0, sum x = 1}.

    Sort-and-threshold method: O(d log d), exact up to rounding.
    """
    x = as_vector(v, what="point")
    if x.size == 0:
        raise DimensionError("cannot project an empty vector")
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, x.size + 1)
    cond = u - css / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    tau = css[rho] / (rho + 1)
    return np.maximum(x - tau, 0.0)


def _mix64(z: int) -> int:
    z &= _MASK64
    z ^= z >> 30
    z = (z * _MIX1) & _MASK64
    z ^= z >> 27
    z = (z * _MIX2) & _MASK64
    z ^= z >> 31
    return z


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _stream_key(seed: int, stream_id: int) -> int:
    return _mix64(_mix64(seed + _GOLDEN) ^ _mix64(stream_id ^ 0x1F83D9ABFB41BD6B))


class RngStream:
    """Counter-based pseudo-random stream.

    Each draw is a pure function of ``(seed, stream_id, counter)`` and
    advances the counter by a fixed amount: 1 for ``bernoulli``,
    ``uniform_index`` and each entry of ``uniforms``; 2 per coordinate for
    ``gaussian_vector`` (Box-Muller pair).  Identical (seed, stream_id)
    therefore replay identical sequences, and block draws are bit-equal to
    the corresponding sequence of scalar draws.
    """

    __slots__ = ("seed", "stream_id", "counter", "_key", "_key_u64")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = int(counter)
        self._key = _stream_key(self.seed, self.stream_id)
        self._key_u64 = np.uint64(self._key)

    def __repr__(self):
        return (
            f"RngStream(seed={self.seed}, stream_id={self.stream_id}, "
            f"counter={self.counter})"
        )

    def split(self, label) -> "RngStream":
        """Derive an independent child stream; same (parent, label) -> same child."""
        tag = _fnv1a(str(label).encode("utf-8"))
        child_id = _mix64(((self.stream_id * _GOLDEN) & _MASK64) ^ tag)
        return RngStream(self.seed, child_id)

    def clone(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.counter)

    def _word(self) -> int:
        w = _mix64(self._key + self.counter * _GOLDEN)
        self.counter += 1
        return w

    def _words(self, count: int) -> np.ndarray:
        ctrs = (np.arange(self.counter, self.counter + count, dtype=np.uint64)
                * np.uint64(_GOLDEN)) + self._key_u64
        self.counter += count
        return _mix64_array(ctrs)

    def uniform01(self) -> float:
        """One float uniform in [0, 1); consumes 1 counter tick."""
        return (self._word() >> 11) * _INV_2_53

    def uniforms(self, count: int) -> np.ndarray:
        """``count`` uniforms in [0, 1); consumes ``count`` ticks."""
        if count < 0:
            raise ParameterError("count must be nonnegative")
        return (self._words(count) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def bernoulli(self, p: float) -> int:
        """One {0,1} draw with success probability p; consumes 1 tick."""
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"bernoulli probability must be in [0, 1], got {p}")
        return 1 if self.uniform01() < p else 0

    def bernoulli_block(self, p: float, count: int) -> np.ndarray:
        """``count`` coin flips, bit-equal to ``count`` sequential draws."""
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"bernoulli probability must be in [0, 1], got {p}")
        return (self.uniforms(count) < p).astype(np.int64)

    def uniform_index(self, m: int) -> int:
        """One index uniform on {0, ..., m-1}; consumes 1 tick."""
        if m < 1:
            raise ParameterError(f"index range must be >= 1, got {m}")
        return min(int(self.uniform01() * m), m - 1)

    def uniform_index_block(self, m: int, count: int) -> np.ndarray:
        if m < 1:
            raise ParameterError(f"index range must be >= 1, got {m}")
        idx = (self.uniforms(count) * m).astype(np.int64)
        return np.minimum(idx, m - 1)

    def gaussian_vector(self, d: int, scale: float = 1.0) -> np.ndarray:
        """d independent N(0, scale^2) draws; consumes 2d ticks (Box-Muller)."""
        if scale < 0:
            raise ParameterError(f"gaussian scale must be >= 0, got {scale}")
        if d < 0:
            raise ParameterError("dimension must be nonnegative")
        u = self.uniforms(2 * d)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        return scale * r * np.cos(2.0 * np.pi * u2)
