"""Complex linear algebra primitives, seeded randomness, and the
finite-difference oracle.

Everything downstream (channel models, metasurface cascades, analytical
backward passes) is built on the handful of identities in this module,
most importantly the column-major vectorization identity

    vec(A X B) = (B^T kron A) vec(X)

and the diagonal selection matrix D with vec(diag(x)) = D x.  All
arithmetic is double precision; algebraic checks are expected to hold to
1e-12 and finite-difference gradient checks to 1e-5 relative error.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def kron(a: Array, b: Array) -> Array:
    """Kronecker product with block (i, j) equal to a[i, j] * b."""
    return np.kron(np.asarray(a), np.asarray(b))


def vec(x: Array) -> Array:
    """Column-major (column-stacking) vectorization of a matrix."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: Array, rows: int, cols: int) -> Array:
    """Inverse of :func:`vec` for the given shape."""
    return np.asarray(v).reshape((rows, cols), order="F")


def selection_matrix(n: int) -> Array:
    """The n^2 x n selection matrix D with vec(diag(x)) = D @ x.

    Column k holds a single unit entry at row k*(n+1), which is where
    the k-th diagonal element lands under column-major stacking.
    """
    if n < 1:
        raise ValueError(f"selection_matrix needs n >= 1, got {n}")
    d = np.zeros((n * n, n))
    for k in range(n):
        d[k * (n + 1), k] = 1.0
    return d


def _label_key(label: int | str) -> int:
    if isinstance(label, int):
        return label
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


class Rng:
    """Deterministic counter-based random stream with explicit state.

    Wraps numpy's Philox generator keyed by (seed, label path).  The same
    seed always reproduces the same stream bit-exactly, and child streams
    obtained through :meth:`child` are statistically independent of the
    parent and of each other.  There is no global state anywhere in the
    package; every sampling site receives an Rng explicitly.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(_path)
        bitgen = np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=self._path))
        self.generator = np.random.Generator(bitgen)

    def child(self, label: int | str) -> "Rng":
        """Derive an independent stream named by ``label``."""
        return Rng(self.seed, self._path + (_label_key(label),))

    def clone(self) -> "Rng":
        """Same stream restarted from the beginning."""
        return Rng(self.seed, self._path)

    def normal(self, size=None) -> Array:
        return self.generator.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> Array:
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> Array:
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> Array:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self._path})"


def sample_complex_gaussian(rng: Rng, shape: int | Sequence[int], variance: float = 1.0) -> Array:
    """Circularly-symmetric complex Gaussian entries, CN(0, variance).

    Real and imaginary parts are independent N(0, variance/2) so that
    E[|z|^2] = variance.
    """
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if isinstance(shape, int):
        shape = (shape,)
    re, im = rng.normal((2,) + tuple(shape))
    return np.sqrt(variance / 2.0) * (re + 1j * im)


def finite_diff_gradient(f: Callable[[Array], float], x: Array, h: float = 1e-4) -> Array:
    """Central-difference gradient of a real scalar function.

    Perturbs ``x`` in place one coordinate at a time (restoring it), so
    ``f`` must read the array it is handed rather than a stale copy.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        raise TypeError("finite_diff_gradient expects a real float array")
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        saved = flat_x[i]
        flat_x[i] = saved + h
        f_plus = float(f(x))
        flat_x[i] = saved - h
        f_minus = float(f(x))
        flat_x[i] = saved
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite probe value at coordinate {i}")
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def gradient_mismatch(analytic: Array, numeric: Array) -> float:
    """Max absolute deviation normalized by the oracle's max magnitude.

    The floor of 1e-8 in the denominator keeps the metric meaningful for
    genuinely tiny gradients.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(float(np.max(np.abs(numeric))) if numeric.size else 0.0, 1e-8)
    diff = float(np.max(np.abs(analytic - numeric))) if numeric.size else 0.0
    return diff / scale
