"""
Variable-strength measurement of the nuclear spin through an electron ancilla.

The hyperfine coupling ``A * Sz * Iz`` makes the ancilla precess by +/-theta
depending on the system state, with ``theta = A * tau / 2``. Reading out the
ancilla afterwards applies one of two diagonal Kraus operators to the system::

    M0 = diag(cos(pi/4 - theta/2), cos(pi/4 + theta/2))
    M1 = diag(cos(pi/4 + theta/2), cos(pi/4 - theta/2))

Ancilla outcome 0 applies M0 and kicks the system towards |down> (the +1
eigenstate of sigma_z in this package's convention). Figures drawn with the
opposite labeling call the same kick "towards |up>"; only the label differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Union

import numpy as np

from .errors import DegenerateBranchError, MeasurementError, SingularWeakValueError
from .qmath import (
    SIGMA_Z,
    DensityMatrix,
    PureState,
    apply_operator,
)

HYPERFINE_A = 2 * np.pi * 2.184e6  # rad/s
# Timing calibration tolerance: tau = 229 ns gives 90.02 deg, still "projective".
STRENGTH_SLACK = np.deg2rad(0.1)

OutcomeSource = Union[int, np.random.Generator]


@dataclass(frozen=True)
class HyperfineParams:
    tau: float
    A: float = HYPERFINE_A

    def __post_init__(self):
        if self.A <= 0:
            raise ValueError("hyperfine coupling A must be positive")
        if self.tau < 0:
            raise ValueError("interaction time tau must be non-negative")


def strength_from_tau(
    p: HyperfineParams, min_theta: float = 0.0, on_overflow: str = "reject"
) -> float:
    """Measurement strength ``theta = A * tau / 2``.

    Parameters
    ----------
    p : HyperfineParams
    min_theta : float
        Smallest strength the gate can realize; shorter interaction times are
        clamped up to it (free ancilla evolution during finite pulses).
    on_overflow : {"reject", "clip", "fold"}
        What to do when theta exceeds pi/2 by more than ``STRENGTH_SLACK``.
        "fold" reflects into [0, pi/2] (sin theta is symmetric about pi/2).
    """
    theta = max(p.A * p.tau / 2.0, min_theta)
    if theta <= np.pi / 2 + STRENGTH_SLACK:
        return theta
    if on_overflow == "clip":
        return np.pi / 2
    if on_overflow == "fold":
        folded = np.mod(theta, np.pi)
        return float(np.pi - folded if folded > np.pi / 2 else folded)
    raise MeasurementError(
        f"theta = {np.rad2deg(theta):.3f} deg is beyond a projective measurement"
    )


def tau_for_strength(theta: float, A: float = HYPERFINE_A) -> float:
    return 2.0 * theta / A


def _check_theta(theta: float) -> float:
    if not (-1e-12 <= theta <= np.pi / 2 + STRENGTH_SLACK):
        raise MeasurementError(f"strength {theta!r} rad outside [0, pi/2]")
    return float(np.clip(theta, 0.0, np.pi / 2))


@dataclass(frozen=True)
class PartialMeasurement:
    theta: float
    M0: np.ndarray = field(repr=False)
    M1: np.ndarray = field(repr=False)

    @property
    def operators(self) -> tuple[np.ndarray, np.ndarray]:
        return self.M0, self.M1

    def likelihood(self, outcome: int) -> tuple[float, float]:
        """P(outcome | |down>), P(outcome | |up>)."""
        m = self.operators[outcome]
        return float(m[0, 0] ** 2), float(m[1, 1] ** 2)


def kraus_pair(theta: float) -> PartialMeasurement:
    theta = _check_theta(theta)
    a = np.cos(np.pi / 4 - theta / 2)
    b = np.sin(np.pi / 4 - theta / 2)  # = cos(pi/4 + theta/2), exactly 0 at pi/2
    m0 = np.diag([a, b])
    m1 = np.diag([b, a])
    m0.setflags(write=False)
    m1.setflags(write=False)
    return PartialMeasurement(theta, m0, m1)


class MeasurementResult(NamedTuple):
    outcome: int
    post: DensityMatrix
    prob: float


def measure_partial(
    state: DensityMatrix, theta: float, source: OutcomeSource
) -> MeasurementResult:
    """Partial measurement with either a forced outcome or a sampled one.

    ``source`` is an outcome label (0 or 1) or a ``numpy.random.Generator``.
    """
    if not state.normalized:
        raise MeasurementError("partial measurement needs a normalized state")
    pm = kraus_pair(theta)
    branches = [apply_operator(state, m) for m in pm.operators]
    if isinstance(source, np.random.Generator):
        outcome = int(source.random() >= branches[0][1])
    elif source in (0, 1):
        outcome = int(source)
    else:
        raise ValueError(f"invalid outcome source {source!r}")
    unnorm, prob = branches[outcome]
    if prob <= 0.0:
        raise DegenerateBranchError(f"outcome {outcome} has zero probability")
    return MeasurementResult(outcome, unnorm.renormalized(), prob)


def backaction_unconditional(state: DensityMatrix, theta: float) -> DensityMatrix:
    """Outcome-averaged backaction: dephasing by a factor cos(theta)."""
    if not state.normalized:
        raise MeasurementError("backaction needs a normalized state")
    pm = kraus_pair(theta)
    total = sum(apply_operator(state, m)[0].entries for m in pm.operators)
    return DensityMatrix(total)


def conditional_channel(theta: float, outcome: int) -> Callable[[DensityMatrix], DensityMatrix]:
    """Trace-decreasing map rho -> M_k rho M_k^dagger (no renormalization)."""
    m = kraus_pair(theta).operators[outcome]

    def channel(rho: DensityMatrix) -> DensityMatrix:
        return apply_operator(rho, m)[0]

    return channel


def unconditional_channel(theta: float) -> Callable[[DensityMatrix], DensityMatrix]:
    def channel(rho: DensityMatrix) -> DensityMatrix:
        return backaction_unconditional(rho, theta)

    return channel


# -- weak values -------------------------------------------------------------


@dataclass(frozen=True)
class WeakValueSetup:
    psi_i: PureState
    theta: float
    phi: float
    postselect: int = 0

    def __post_init__(self):
        if not 0.0 <= self.phi <= np.pi:
            raise ValueError("basis rotation phi must lie in [0, pi]")
        if self.postselect not in (0, 1):
            raise ValueError("postselect is an outcome label, 0 or 1")


def postselection_state(phi: float, postselect: int = 0) -> PureState:
    """State selected by the strong measurement after a basis rotation by phi.

    Outcome 0 is ``cos(phi/2)|down> - sin(phi/2)|up>``; outcome 1 is its
    orthogonal complement. The sign makes the amplification near
    ``phi = pi/2 - theta`` positive for ``psi_i = |x>``.
    """
    c, s = np.cos(phi / 2), np.sin(phi / 2)
    if postselect == 0:
        return PureState(complex(c), complex(-s))
    return PureState(complex(s), complex(c))


def weak_value(psi_i: PureState, psi_f: PureState) -> complex:
    """<f| sigma_z |i> / <f|i>."""
    denom = psi_f.overlap(psi_i)
    if abs(denom) < 1e-15:
        raise SingularWeakValueError("pre- and post-selected states are orthogonal")
    num = np.vdot(psi_f.vector, SIGMA_Z @ psi_i.vector)
    return complex(num / denom)


def joint_probabilities(setup: WeakValueSetup) -> tuple[float, float]:
    """P(k, f) = |<f|M_k|psi_i>|^2 for ancilla outcomes k = 0, 1."""
    pm = kraus_pair(setup.theta)
    f = postselection_state(setup.phi, setup.postselect).vector
    i = setup.psi_i.vector
    return tuple(float(abs(np.vdot(f, m @ i)) ** 2) for m in pm.operators)


def modified_weak_value(setup: WeakValueSetup) -> float:
    """Weak value read by a two-outcome meter.

    Ancilla outcomes are mapped to +1/-1; their post-selected mean is divided
    by the meter sensitivity sin(theta). Tends to Re W as theta -> 0.
    """
    s = np.sin(kraus_pair(setup.theta).theta)
    if s < 1e-15:
        raise MeasurementError("modified weak value undefined at zero strength")
    p0, p1 = joint_probabilities(setup)
    if p0 + p1 < 1e-15:
        raise SingularWeakValueError("post-selection probability is zero")
    return float((p0 - p1) / (s * (p0 + p1)))


def optimal_postselection_angle(theta: float) -> float:
    return np.pi / 2 - theta
