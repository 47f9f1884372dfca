"""Finite tracial matrix algebra.

A square complex matrix together with the normalized trace tr/dim is the
basic object everything else consumes.  This module provides the three
norms induced by the trace (operator, L2, L1), maximal abelian subalgebra
(MASA) frames given by a unitary change of basis, the trace-preserving
conditional expectation onto a frame, and the discrete-Fourier frame that
is perpendicular to the diagonal one.
"""

from dataclasses import dataclass

import numpy as np

UNITARY_TOL = 1e-10

# Dimension above which the operator norm switches from full SVD to power
# iteration on x*x (200 iterations or relative change < 1e-10).
SVD_DIM_LIMIT = 1024
_POWER_ITERATIONS = 200
_POWER_TOL = 1e-10
_POWER_SEED = 0xA11CE


def _as_entries(x) -> np.ndarray:
    """Accept a TracedMatrix or a raw square array."""
    if isinstance(x, TracedMatrix):
        return x.entries
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class TracedMatrix:
    """Square complex matrix carrying the normalized trace functional.

    Entries are stored as a read-only complex128 array.  Instances are
    immutable and safe to share across threads.
    """

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.complex128, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"entries must be square, got shape {a.shape}")
        if a.shape[0] < 1:
            raise ValueError("dim must be >= 1")
        if not np.all(np.isfinite(a.view(np.float64))):
            raise ValueError("entries must be finite (no NaN/Inf)")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "TracedMatrix":
        return cls(np.eye(dim))

    @classmethod
    def zeros(cls, dim: int) -> "TracedMatrix":
        return cls(np.zeros((dim, dim)))

    def adjoint(self) -> "TracedMatrix":
        return TracedMatrix(self.entries.conj().T)


@dataclass(frozen=True)
class MasaFrame:
    """Unitary change of basis defining a MASA A = U . Diag . U*.

    The diagonal MASA is the identity frame; every frame is stored as an
    explicit unitary so there is a single code path.
    """

    basis: np.ndarray

    def __post_init__(self):
        u = np.array(self.basis, dtype=np.complex128, copy=True)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError("frame basis must be square")
        dev = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
        if dev > UNITARY_TOL:
            raise ValueError(f"frame basis is not unitary (deviation {dev:.3e})")
        u.setflags(write=False)
        object.__setattr__(self, "basis", u)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.basis, np.eye(self.dim)))

    @classmethod
    def identity(cls, dim: int) -> "MasaFrame":
        return cls(np.eye(dim))

    def to_frame(self, x) -> np.ndarray:
        """Coordinates of x in the frame eigenbasis: U* x U."""
        a = _as_entries(x)
        if self.is_identity:
            return a
        return self.basis.conj().T @ a @ self.basis

    def from_frame(self, a: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`to_frame`."""
        if self.is_identity:
            return np.asarray(a, dtype=np.complex128)
        return self.basis @ a @ self.basis.conj().T

    def diagonal_element(self, values) -> TracedMatrix:
        """The MASA element with the given eigenvalues in this frame."""
        v = np.asarray(values, dtype=np.complex128)
        return TracedMatrix(self.from_frame(np.diag(v)))


@dataclass(frozen=True)
class NormTriple:
    """The three trace norms of one element, ordered l1 <= l2 <= op."""

    op: float
    l2: float
    l1: float

    def __post_init__(self):
        slack = 1e-9 * max(1.0, self.op)
        if not (-slack <= self.l1 <= self.l2 + slack and self.l2 <= self.op + slack):
            raise ValueError(f"norm ordering violated: {self}")


def normalized_trace(x) -> complex:
    """tau(x) = (1/dim) tr(x);  tau(1) = 1 and tau(xy) = tau(yx)."""
    a = _as_entries(x)
    return complex(np.trace(a) / a.shape[0])


def op_norm(x) -> float:
    """Largest singular value.

    Full SVD up to dim 1024; above that, power iteration on x*x with a
    deterministic start vector (stops after 200 iterations or when the
    estimate moves by less than 1e-10 relatively).
    """
    a = _as_entries(x)
    dim = a.shape[0]
    if dim <= SVD_DIM_LIMIT:
        return float(np.linalg.norm(a, 2))
    rng = np.random.default_rng(_POWER_SEED)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    ah = a.conj().T
    est = 0.0
    for _ in range(_POWER_ITERATIONS):
        w = ah @ (a @ v)
        s = np.linalg.norm(w)
        if s == 0.0:
            return 0.0
        v = w / s
        new = float(np.sqrt(s))
        if abs(new - est) <= _POWER_TOL * max(new, 1e-30):
            return new
        est = new
    return est


def l2_norm(x) -> float:
    """tau(x*x)^(1/2), i.e. the Frobenius norm scaled by dim^(-1/2)."""
    a = _as_entries(x)
    return float(np.linalg.norm(a) / np.sqrt(a.shape[0]))


def l1_norm(x) -> float:
    """tau(|x|) = (1/dim) * sum of singular values."""
    a = _as_entries(x)
    return float(np.linalg.svd(a, compute_uv=False).sum() / a.shape[0])


def norm_triple(x) -> NormTriple:
    a = _as_entries(x)
    sv = np.linalg.svd(a, compute_uv=False) if a.shape[0] <= SVD_DIM_LIMIT else None
    if sv is not None:
        return NormTriple(op=float(sv[0]), l2=l2_norm(a), l1=float(sv.sum() / a.shape[0]))
    return NormTriple(op=op_norm(a), l2=l2_norm(a), l1=l1_norm(a))


def absolute_value(x) -> TracedMatrix:
    """|x| = (x*x)^(1/2) via Hermitian eigendecomposition of x*x."""
    a = _as_entries(x)
    w, v = np.linalg.eigh(a.conj().T @ a)
    w = np.sqrt(np.clip(w, 0.0, None))
    return TracedMatrix((v * w) @ v.conj().T)


def conditional_expectation(x, frame: MasaFrame) -> TracedMatrix:
    """E_A(x): keep the diagonal of x in the frame eigenbasis.

    Trace preserving, idempotent, and A-bimodular; orthogonal projection
    onto the MASA in the L2 inner product.
    """
    a = _as_entries(x)
    if a.shape[0] != frame.dim:
        raise ValueError(f"dimension mismatch: matrix {a.shape[0]}, frame {frame.dim}")
    y = frame.to_frame(a)
    return TracedMatrix(frame.from_frame(np.diag(np.diagonal(y))))


def perpendicular_frame(dim: int) -> MasaFrame:
    """Discrete-Fourier frame F[j,k] = dim^(-1/2) exp(2 pi i jk / dim).

    The MASA F.Diag.F* is perpendicular to the diagonal MASA: traceless
    diagonal and traceless Fourier-diagonal elements are orthogonal under
    the trace, so tau(ab) = tau(a) tau(b) across the two frames.
    """
    if dim < 2:
        raise ValueError("perpendicular frame needs dim >= 2")
    j = np.arange(dim)
    f = np.exp(2j * np.pi * np.outer(j, j) / dim) / np.sqrt(dim)
    return MasaFrame(f)
