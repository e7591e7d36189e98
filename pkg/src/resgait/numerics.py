"""Small dense symmetric linear algebra and reproducible random streams.

Everything here is pure: the only stateful object is :class:`RngStream`,
which owns an explicit counter-based generator so that identical
(seed, stream_id) pairs replay identical sequences on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

MAX_SYM_DIM = 256


class NonFiniteInputError(ValueError):
    """Raised when a matrix or vector contains NaN or infinite entries."""


class NotPositiveSemidefiniteError(ValueError):
    """Raised when an eigenvalue falls below the PSD tolerance (-1e-6)."""


@dataclass(frozen=True)
class SymMatrix:
    """A dense symmetric matrix with exactly mirrored storage."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if a.shape[0] > MAX_SYM_DIM:
            raise ValueError(f"dim {a.shape[0]} exceeds supported maximum {MAX_SYM_DIM}")
        if not np.isfinite(a).all():
            raise NonFiniteInputError("matrix contains non-finite entries")
        # (a + a.T) / 2 is exactly symmetric in IEEE arithmetic.
        object.__setattr__(self, "entries", (a + a.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "SymMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "SymMatrix":
        return cls(np.diag(np.asarray(values, dtype=np.float64)))


def sym_eig(m: SymMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvector matrix (columns), so V @ diag(w) @ V.T reconstructs m.
    """
    w, v = np.linalg.eigh(m.entries)
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def sqrtm_psd(m: SymMatrix) -> SymMatrix:
    """Principal square root of a positive semidefinite matrix.

    Eigenvalues slightly below zero (down to -1e-6) are treated as
    round-off from finite-sample covariance estimation and clamped to 0;
    anything more negative is a genuine PSD violation.
    """
    w, v = sym_eig(m)
    if w.min(initial=0.0) < -1e-6:
        raise NotPositiveSemidefiniteError(
            f"eigenvalue {w.min():.3e} below PSD tolerance -1e-6"
        )
    w = np.where(w < 1e-10, 0.0, w)
    root = (v * np.sqrt(w)) @ v.T
    return SymMatrix(root)


@dataclass
class RngStream:
    """Counter-based random stream split by (seed, stream_id).

    Distinct stream ids under one seed yield statistically independent
    sequences; the same pair replays bit-identically. ``calls`` counts
    draws made so far, which together with (seed, stream_id) pins the
    stream's full state.
    """

    seed: int
    stream_id: int = 0
    calls: int = field(default=0, init=False)

    def __post_init__(self):
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = Generator(Philox(key=key))

    def child(self, stream_id: int) -> "RngStream":
        """A fresh independent stream under the same seed."""
        return RngStream(self.seed, stream_id)

    def gaussian(self, n: int) -> np.ndarray:
        """n i.i.d. standard normal draws."""
        if n < 1:
            raise ValueError("n must be >= 1")
        self.calls += 1
        return self._gen.standard_normal(n)

    def uniform(self, low: float, high: float, n: int | None = None):
        self.calls += 1
        return self._gen.uniform(low, high, size=n)

    def integers(self, low: int, high: int, n: int | None = None):
        """Uniform integers in [low, high)."""
        self.calls += 1
        return self._gen.integers(low, high, size=n)

    def choice_index(self, probabilities: np.ndarray) -> int:
        """Draw one index from an explicit probability vector."""
        p = np.asarray(probabilities, dtype=np.float64)
        self.calls += 1
        return int(self._gen.choice(len(p), p=p / p.sum()))


def gaussian_sample(stream: RngStream, n: int) -> np.ndarray:
    """Standard normal vector drawn from the given stream."""
    return stream.gaussian(n)
