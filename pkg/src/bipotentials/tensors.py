"""Symmetric tensors, hydrostatic/deviatoric splits and duality products.

Two storage conventions coexist:

* :class:`SymTensor` keeps the upper triangle in the fixed order
  ``(11, 22, 33, 12, 13, 23)`` (``(11, 22, 12)`` for ``n = 2``). The
  duality product weights off-diagonal products by 2.
* The vectorized kernels used by the rest of the package work on Mandel
  6-vectors ``(11, 22, 33, sqrt2*12, sqrt2*13, sqrt2*23)`` stacked along
  leading axes. In Mandel form ``tr(a b)`` is the plain dot product, so every
  linear map on ``Sym(3)`` is an ordinary symmetric 6x6 matrix.

Strains and stresses are decomposed with two different conventions: the
strain mean is ``tr(eps)/n`` while the stress mean is ``tr(sig)`` (no
division). With these, ``<eps, sig> = <T1 eps, T2 sig>'`` holds exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)

_UPPER = {
    3: ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)),
    2: ((0, 0), (1, 1), (0, 1)),
}
_NDIAG = {3: 3, 2: 2}

#: Mandel representation of the identity of Sym(3).
IDENTITY6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
#: Deviatoric projector acting on Mandel 6-vectors.
DEV_PROJECTOR = np.eye(6) - np.outer(IDENTITY6, IDENTITY6) / 3.0


class DimensionMismatchError(ValueError):
    """Raised when two tensors of different dimension are combined."""


@dataclass(frozen=True, eq=False)
class SymTensor:
    """A point of Sym(n), stored by its upper triangle.

    Parameters
    ----------
    entries : array_like
        Components in the order ``(11, 22, 33, 12, 13, 23)`` for ``n = 3``
        or ``(11, 22, 12)`` for ``n = 2``. Off-diagonal entries are tensor
        components (not engineering shears).
    n : {2, 3}
        Dimension.
    """

    entries: np.ndarray
    n: int = 3

    def __post_init__(self):
        if self.n not in _UPPER:
            raise ValueError(f"unsupported dimension n={self.n}")
        arr = np.array(self.entries, dtype=float).reshape(-1)
        if arr.size != len(_UPPER[self.n]):
            raise ValueError(
                f"expected {len(_UPPER[self.n])} components for n={self.n}, "
                f"got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("SymTensor entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    # -- constructors --------------------------------------------------------
    @classmethod
    def zeros(cls, n: int = 3) -> "SymTensor":
        return cls(np.zeros(len(_UPPER[n])), n)

    @classmethod
    def identity(cls, n: int = 3) -> "SymTensor":
        return cls.diag(*([1.0] * n))

    @classmethod
    def diag(cls, *values: float) -> "SymTensor":
        n = len(values)
        entries = np.zeros(len(_UPPER[n]))
        entries[:n] = values
        return cls(entries, n)

    @classmethod
    def from_matrix(cls, a) -> "SymTensor":
        """Build from a full matrix, symmetrizing it."""
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("expected a square matrix")
        sym = 0.5 * (a + a.T)
        return cls(np.array([sym[i, j] for i, j in _UPPER[n]]), n)

    @classmethod
    def from_mandel(cls, v, n: int = 3) -> "SymTensor":
        v = np.asarray(v, dtype=float)
        k = _NDIAG[n]
        entries = v.copy()
        entries[k:] = v[k:] / SQRT2
        return cls(entries, n)

    # -- conversions ---------------------------------------------------------
    def matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for value, (i, j) in zip(self.entries, _UPPER[self.n]):
            a[i, j] = a[j, i] = value
        return a

    def mandel(self) -> np.ndarray:
        v = np.array(self.entries, dtype=float)
        v[_NDIAG[self.n]:] *= SQRT2
        return v

    # -- algebra -------------------------------------------------------------
    @property
    def trace(self) -> float:
        return float(np.sum(self.entries[:_NDIAG[self.n]]))

    def deviator(self) -> "SymTensor":
        return _recentred(self - (self.trace / self.n) * SymTensor.identity(self.n))

    def norm(self) -> float:
        return math.sqrt(duality(self, self))

    def _check(self, other: "SymTensor"):
        if not isinstance(other, SymTensor):
            return NotImplemented
        if other.n != self.n:
            raise DimensionMismatchError(f"n={self.n} vs n={other.n}")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SymTensor(self.entries + other.entries, self.n)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SymTensor(self.entries - other.entries, self.n)

    def __mul__(self, scalar):
        return SymTensor(float(scalar) * self.entries, self.n)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SymTensor(self.entries / float(scalar), self.n)

    def __neg__(self):
        return SymTensor(-self.entries, self.n)

    def allclose(self, other: "SymTensor", rtol=1e-12, atol=1e-14) -> bool:
        return self.n == other.n and np.allclose(
            self.entries, other.entries, rtol=rtol, atol=atol)

    def __repr__(self):
        comps = ", ".join(f"{x:.6g}" for x in self.entries)
        return f"SymTensor(n={self.n}, [{comps}])"


def _recentred(dev: SymTensor) -> SymTensor:
    # a second pass removes the trace left over by cancellation
    k = _NDIAG[dev.n]
    entries = np.array(dev.entries)
    entries[:k] -= np.sum(entries[:k]) / dev.n
    return SymTensor(entries, dev.n)


@dataclass(frozen=True, eq=False)
class HydroDevPair:
    """A point of R x Sym_0(n): a scalar mean part and a traceless deviator."""

    mean: float
    dev: SymTensor

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        if not math.isfinite(self.mean):
            raise ValueError("mean must be finite")
        tr = abs(self.dev.trace)
        if tr > 1e-12 * self.dev.norm() + 1e-300:
            raise ValueError(f"deviatoric part has trace {tr:.3e}")

    @property
    def n(self) -> int:
        return self.dev.n

    def dev_norm(self) -> float:
        return self.dev.norm()

    def __repr__(self):
        return f"HydroDevPair(mean={self.mean:.6g}, dev={self.dev!r})"


def t1_strain(eps: SymTensor) -> HydroDevPair:
    """Strain split: mean ``tr(eps)/n`` and deviator."""
    return HydroDevPair(eps.trace / eps.n, eps.deviator())


def t2_stress(sig: SymTensor) -> HydroDevPair:
    """Stress split: mean ``tr(sig)`` (not divided by n) and deviator."""
    return HydroDevPair(sig.trace, sig.deviator())


def strain_rate_pair(eps: SymTensor) -> HydroDevPair:
    """Strain split with the trace itself as mean coordinate.

    This is the coordinate used for plastic strain rates in the cone
    ``k_d tan(theta) |e| <= e_m``, where ``eps = e_m/3 I + e``.
    """
    return HydroDevPair(eps.trace, eps.deviator())


def from_t1(pair: HydroDevPair) -> SymTensor:
    return pair.mean * SymTensor.identity(pair.n) + pair.dev


def from_t2(pair: HydroDevPair) -> SymTensor:
    return (pair.mean / pair.n) * SymTensor.identity(pair.n) + pair.dev


def duality(eps: SymTensor, sig: SymTensor) -> float:
    """``tr(eps sig)`` from stored upper triangles (off-diagonals weighted 2)."""
    if eps.n != sig.n:
        raise DimensionMismatchError(f"n={eps.n} vs n={sig.n}")
    k = _NDIAG[eps.n]
    a, b = eps.entries, sig.entries
    return float(np.dot(a[:k], b[:k]) + 2.0 * np.dot(a[k:], b[k:]))


def duality_prime(a: HydroDevPair, b: HydroDevPair) -> float:
    """``a_m b_m + <a_dev, b_dev>`` on R x Sym_0(n)."""
    if a.n != b.n:
        raise DimensionMismatchError(f"n={a.n} vs n={b.n}")
    return a.mean * b.mean + duality(a.dev, b.dev)


# ---------------------------------------------------------------------------
# Vectorized Mandel kernels, shape (..., 6)
# ---------------------------------------------------------------------------

def as_mandel(x) -> np.ndarray:
    """Mandel array from a SymTensor (n = 3) or pass an array through."""
    if isinstance(x, SymTensor):
        if x.n != 3:
            raise ValueError("Mandel kernels require n = 3")
        return x.mandel()
    return np.asarray(x, dtype=float)


def mtrace(v: np.ndarray) -> np.ndarray:
    return v[..., 0] + v[..., 1] + v[..., 2]


def mdev(v: np.ndarray) -> np.ndarray:
    d = v - (mtrace(v) / 3.0)[..., None] * IDENTITY6
    return d - (mtrace(d) / 3.0)[..., None] * IDENTITY6


def mdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def mnorm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(mdot(v, v))


def mandel_from_pair(mean, dev, mean_is_trace: bool = True) -> np.ndarray:
    """Rebuild Mandel tensors from (mean, deviator) arrays.

    ``mean_is_trace`` selects ``tr = mean`` (stress and strain-rate
    convention) versus ``tr = 3 mean`` (the T1 strain convention).
    """
    mean = np.asarray(mean, dtype=float)
    tr = mean if mean_is_trace else 3.0 * mean
    return np.asarray(dev, dtype=float) + (tr / 3.0)[..., None] * IDENTITY6


def random_symmetric(rng: np.random.Generator, size: int, scale: float = 1.0
                     ) -> np.ndarray:
    """Gaussian Mandel tensors, shape ``(size, 6)``."""
    return scale * rng.standard_normal((size, 6))


def random_deviatoric_direction(rng: np.random.Generator, size: int
                                ) -> np.ndarray:
    """Unit-norm traceless Mandel tensors, uniform on the sphere of Sym_0(3)."""
    d = mdev(rng.standard_normal((size, 6)))
    return d / mnorm(d)[:, None]
