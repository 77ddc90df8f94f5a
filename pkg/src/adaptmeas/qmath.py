"""
Exact single-qubit linear algebra.

Basis ordering is (|down>, |up>). The Pauli convention assigns eigenvalue +1
to |down>::

    sigma_z |down> = +|down>,   sigma_z |up> = -|up>

so |down> sits at the north pole of the Bloch sphere, |x> = (|down> + |up>)/sqrt(2)
at (1, 0, 0) and |y> = (|down> + i|up>)/sqrt(2) at (0, 1, 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidOperatorError, InvalidStateError

ATOL = 1e-12
BLOCH_ATOL = 1e-9

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z)


@dataclass(frozen=True)
class PureState:
    amp_down: complex
    amp_up: complex

    @classmethod
    def normalized(cls, amp_down: complex, amp_up: complex) -> "PureState":
        norm = np.sqrt(abs(amp_down) ** 2 + abs(amp_up) ** 2)
        if norm == 0:
            raise InvalidStateError("zero vector has no normalized form")
        return cls(complex(amp_down / norm), complex(amp_up / norm))

    @classmethod
    def from_vector(cls, vec) -> "PureState":
        vec = np.asarray(vec, dtype=complex).reshape(2)
        return cls.normalized(vec[0], vec[1])

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.amp_down, self.amp_up], dtype=complex)

    @property
    def norm(self) -> float:
        return float(np.sqrt(abs(self.amp_down) ** 2 + abs(self.amp_up) ** 2))

    def density(self) -> "DensityMatrix":
        v = self.vector
        return DensityMatrix(np.outer(v, v.conj()))

    def overlap(self, other: "PureState") -> complex:
        """<self|other>."""
        return complex(np.vdot(self.vector, other.vector))


DOWN = PureState(1.0 + 0j, 0j)
UP = PureState(0j, 1.0 + 0j)
PLUS_X = PureState.normalized(1, 1)
MINUS_X = PureState.normalized(1, -1)
PLUS_Y = PureState.normalized(1, 1j)


@dataclass(frozen=True)
class DensityMatrix:
    """2x2 density matrix.

    ``normalized=False`` marks the sub-normalized output of a
    non-trace-preserving map (trace in [0, 1]).
    """

    entries: np.ndarray = field(repr=False)
    normalized: bool = True

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex).reshape(2, 2)
        if not np.all(np.isfinite(m)):
            raise InvalidStateError("non-finite density matrix entries")
        if np.max(np.abs(m - m.conj().T)) > ATOL:
            raise InvalidStateError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if self.normalized:
            if abs(tr - 1.0) > ATOL:
                raise InvalidStateError(f"trace {tr!r} != 1 for a normalized state")
        elif not (-ATOL <= tr <= 1.0 + ATOL):
            raise InvalidStateError(f"trace {tr!r} outside [0, 1]")
        if np.linalg.eigvalsh(m).min() < -ATOL:
            raise InvalidStateError("density matrix has a negative eigenvalue")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    @property
    def purity(self) -> float:
        m = self.entries
        return float(np.trace(m @ m).real)

    def renormalized(self) -> "DensityMatrix":
        tr = self.trace
        if tr <= 0:
            raise InvalidStateError("cannot normalize a zero-trace matrix")
        return DensityMatrix(self.entries / tr)

    def bloch(self) -> "BlochVector":
        return bloch_from_density(self)

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return self.normalized == other.normalized and np.array_equal(
            self.entries, other.entries
        )

    __hash__ = None


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if self.norm > 1.0 + BLOCH_ATOL:
            raise InvalidStateError(f"Bloch vector norm {self.norm!r} exceeds 1")

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.x**2 + self.y**2 + self.z**2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def bloch_from_density(rho: DensityMatrix) -> BlochVector:
    if not rho.normalized:
        raise InvalidStateError("Bloch vector requires a normalized state")
    m = rho.entries
    return BlochVector(
        x=float(2 * m[0, 1].real),
        y=float(-2 * m[0, 1].imag),
        z=float((m[0, 0] - m[1, 1]).real),
    )


def density_from_bloch(b: BlochVector) -> DensityMatrix:
    if b.norm > 1.0 + BLOCH_ATOL:
        raise InvalidStateError(f"Bloch vector norm {b.norm!r} exceeds 1")
    m = 0.5 * (IDENTITY + b.x * SIGMA_X + b.y * SIGMA_Y + b.z * SIGMA_Z)
    return DensityMatrix(m)


def fidelity(rho: DensityMatrix, target: PureState, raw: bool = False) -> float:
    """Overlap <target|rho|target>.

    Sub-normalized ``rho`` is rejected unless ``raw=True``, in which case
    the unnormalized overlap is returned.
    """
    if not rho.normalized and not raw:
        raise InvalidStateError("fidelity of a sub-normalized state needs raw=True")
    v = target.vector
    value = np.vdot(v, rho.entries @ v)
    return float(np.clip(value.real, 0.0, 1.0))


def apply_operator(rho: DensityMatrix, op) -> tuple[DensityMatrix, float]:
    """Apply a single Kraus operator: returns (K rho K^dagger, its trace)."""
    k = np.asarray(op, dtype=complex).reshape(2, 2)
    if np.linalg.eigvalsh(k.conj().T @ k).max() > 1.0 + 1e-10:
        raise InvalidOperatorError("K^dagger K exceeds the identity")
    out = k @ rho.entries @ k.conj().T
    prob = float(np.clip(np.trace(out).real, 0.0, 1.0))
    return DensityMatrix(out, normalized=False), prob


def dephase(rho: DensityMatrix, factor: float) -> DensityMatrix:
    """Scale the off-diagonal coherence by ``factor`` in [0, 1]."""
    if not 0.0 <= factor <= 1.0:
        raise ValueError("coherence factor must lie in [0, 1]")
    m = np.array(rho.entries)
    m[0, 1] *= factor
    m[1, 0] *= factor
    return DensityMatrix(m, normalized=rho.normalized)


def is_complete(operators, atol: float = ATOL) -> bool:
    total = sum(np.asarray(k).conj().T @ np.asarray(k) for k in operators)
    return bool(np.allclose(total, IDENTITY, rtol=0, atol=atol))
