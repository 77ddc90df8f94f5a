"""
State and process tomography of the system qubit.

State tomography is linear inversion from the +1-outcome frequencies in the
x, y and z bases, after undoing the readout confusion matrix. Process
tomography probes a channel with |down>, |up>, |x>, |y> and reconstructs the
chi matrix in the Pauli basis {I, X, Y, Z}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import InvalidStateError, ProcessReconstructionError
from .qmath import (
    DOWN,
    PAULIS,
    PLUS_X,
    PLUS_Y,
    UP,
    BlochVector,
    DensityMatrix,
    bloch_from_density,
    density_from_bloch,
)

BASES = ("x", "y", "z")

# sampler(basis, shots) -> raw frequency of the +1 outcome ("0")
Sampler = Callable[[str, Optional[int]], float]


@dataclass(frozen=True)
class ReadoutCorrection:
    """Confusion matrix [[1 - eps0, eps1], [eps0, 1 - eps1]].

    eps0 = P(read 1 | true 0), eps1 = P(read 0 | true 1).
    """

    eps0: float = 0.0
    eps1: float = 0.0

    def __post_init__(self):
        if self.eps0 + self.eps1 >= 1.0:
            raise InvalidStateError("confusion matrix is singular (eps0 + eps1 >= 1)")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[1 - self.eps0, self.eps1], [self.eps0, 1 - self.eps1]])


class Corrected(NamedTuple):
    p0: float
    clamped: bool


def readout_correction(raw_p0: float, eps0: float, eps1: float) -> Corrected:
    if eps0 + eps1 >= 1.0:
        raise InvalidStateError("confusion matrix is singular (eps0 + eps1 >= 1)")
    p = (raw_p0 - eps1) / (1.0 - eps0 - eps1)
    clipped = min(max(p, 0.0), 1.0)
    return Corrected(clipped, clipped != p)


def basis_probability(rho: DensityMatrix, basis: str) -> float:
    """Exact probability of the +1 outcome of sigma_basis."""
    b = bloch_from_density(rho)
    return 0.5 * (1.0 + getattr(b, basis))


def projective_sampler(
    rho: DensityMatrix,
    rng: np.random.Generator | None = None,
    eps0: float = 0.0,
    eps1: float = 0.0,
) -> Sampler:
    """Simulated projective measurement with an imperfect readout.

    With ``shots=None`` the sampler returns the exact (infinite-shot) raw
    frequency; otherwise it draws binomial counts from ``rng``.
    """

    def sample(basis: str, shots: int | None) -> float:
        p = basis_probability(rho, basis)
        raw = p * (1 - eps0) + (1 - p) * eps1
        if shots is None:
            return raw
        if rng is None:
            raise ValueError("finite-shot sampling needs a random generator")
        return rng.binomial(shots, raw) / shots

    return sample


@dataclass(frozen=True)
class TomographyResult:
    rho: DensityMatrix
    raw_bloch: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    clipped: bool = False
    clamped_bases: tuple[str, ...] = ()

    @property
    def bloch(self) -> BlochVector:
        return bloch_from_density(self.rho)


def state_tomography(
    sampler: Sampler,
    shots_per_basis: int | None,
    correction: ReadoutCorrection = ReadoutCorrection(),
) -> TomographyResult:
    """Linear-inversion tomography; estimates outside the Bloch ball are
    scaled back onto its surface and flagged."""
    if shots_per_basis is not None and shots_per_basis < 1:
        raise ValueError("need at least one shot per basis")
    scale = 1.0 - correction.eps0 - correction.eps1
    comps, errs, clamped = [], [], []
    for basis in BASES:
        raw = sampler(basis, shots_per_basis)
        p, was_clamped = readout_correction(raw, correction.eps0, correction.eps1)
        if was_clamped:
            clamped.append(basis)
        comps.append(2.0 * p - 1.0)
        if shots_per_basis is None:
            errs.append(0.0)
        else:
            errs.append(2.0 * np.sqrt(raw * (1 - raw) / shots_per_basis) / scale)
    r = np.array(comps)
    norm = np.linalg.norm(r)
    clipped = norm > 1.0
    if clipped:
        r_fit = r / norm
    else:
        r_fit = r
    rho = density_from_bloch(BlochVector(*r_fit))
    return TomographyResult(rho, r, np.array(errs), bool(clipped), tuple(clamped))


# -- process tomography ------------------------------------------------------


@dataclass(frozen=True)
class ProcessMatrix:
    chi: np.ndarray = field(repr=False)

    def __post_init__(self):
        chi = np.array(self.chi, dtype=complex).reshape(4, 4)
        herm = np.max(np.abs(chi - chi.conj().T))
        if herm > 1e-10:
            raise ProcessReconstructionError("chi is not Hermitian", herm)
        chi = 0.5 * (chi + chi.conj().T)
        lam = np.linalg.eigvalsh(chi).min()
        if lam < -1e-9:
            raise ProcessReconstructionError("chi is not positive semidefinite", -lam)
        tr = np.trace(chi).real
        if tr > 1 + 1e-9:
            raise ProcessReconstructionError("chi trace exceeds 1", tr - 1)
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)

    @property
    def trace(self) -> float:
        return float(np.trace(self.chi).real)

    def normalized(self) -> np.ndarray:
        return self.chi / self.trace


# Column m holds the vectorized Pauli P_m: v[2i + j] = P[j, i].
_PAULI_VECS = np.stack([p.T.reshape(4) for p in PAULIS], axis=1)


def chi_from_choi(choi: np.ndarray) -> np.ndarray:
    """chi_mn with E(rho) = sum_mn chi_mn P_m rho P_n."""
    return _PAULI_VECS.conj().T @ choi @ _PAULI_VECS / 4.0


def chi_from_kraus(operators) -> np.ndarray:
    """Analytic chi of the map rho -> sum_k K_k rho K_k^dagger."""
    chi = np.zeros((4, 4), dtype=complex)
    for k in operators:
        k = np.asarray(k, dtype=complex)
        coeffs = np.array([np.trace(p.conj().T @ k) / 2.0 for p in PAULIS])
        chi += np.outer(coeffs, coeffs.conj())
    return chi


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.conj().T


def process_fidelity(chi_ideal: np.ndarray, chi: np.ndarray) -> float:
    """Uhlmann fidelity of two trace-normalized chi matrices.

    Equals tr(chi_ideal chi) whenever chi_ideal has rank one.
    """
    a = chi_ideal / np.trace(chi_ideal).real
    b = chi / np.trace(chi).real
    sv = np.linalg.svd(_psd_sqrt(a) @ _psd_sqrt(b), compute_uv=False)
    return float(np.sum(sv) ** 2)


class ProcessTomographyResult(NamedTuple):
    process: ProcessMatrix
    fidelity: Optional[float]


def process_tomography(
    channel: Callable[[DensityMatrix], DensityMatrix],
    ideal_chi: np.ndarray | None = None,
    conditional: bool = False,
) -> ProcessTomographyResult:
    """Reconstruct chi from the channel outputs on |down>, |up>, |x>, |y>.

    ``conditional`` marks a trace-decreasing map; chi is then trace-normalized
    before the fidelity is taken (which is done regardless, so the flag is
    informational for trace-preserving maps).
    """
    out = {
        name: channel(state.density()).entries
        for name, state in (("d", DOWN), ("u", UP), ("x", PLUS_X), ("y", PLUS_Y))
    }
    diag_sum = out["d"] + out["u"]
    # E(|i><j|) by linearity from the four probe outputs
    e = {
        (0, 0): out["d"],
        (1, 1): out["u"],
        (0, 1): out["x"] + 1j * out["y"] - 0.5 * (1 + 1j) * diag_sum,
        (1, 0): out["x"] - 1j * out["y"] - 0.5 * (1 - 1j) * diag_sum,
    }
    choi = np.zeros((4, 4), dtype=complex)
    for (i, j), block in e.items():
        unit = np.zeros((2, 2))
        unit[i, j] = 1.0
        choi += np.kron(unit, block)
    if not conditional and abs(np.trace(choi).real - 2.0) > 1e-9:
        raise ProcessReconstructionError(
            "channel flagged trace-preserving lost trace", abs(np.trace(choi).real - 2.0)
        )
    pm = ProcessMatrix(chi_from_choi(choi))
    fid = None if ideal_chi is None else process_fidelity(ideal_chi, pm.chi)
    return ProcessTomographyResult(pm, fid)
