"""
Two-step adaptive steering of the nuclear spin by partial measurements only.

Starting from |x>, a measurement of strength theta1 yields either the target
``cos(pi/4 - theta1/2)|down> + cos(pi/4 + theta1/2)|up>`` (ancilla outcome 0)
or its mirror image (outcome 1). After the mirror outcome a second
measurement with ``sin(theta2) = 2 sin(theta1) / (1 + sin(theta1)**2)``,
equivalently ``tan(theta2 / 2) = sin(theta1)``, maps the mirror state back onto
the target when it yields outcome 0. A run heralds success whenever the last
ancilla outcome is 0; every run returns a result.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .partial_measurement import kraus_pair, measure_partial
from .qmath import (
    PLUS_X,
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix,
    PureState,
    dephase,
    density_from_bloch,
    fidelity,
    BlochVector,
)
from .readout_sim import (
    Mode,
    ReadoutModel,
    branch_stats,
    calibrated_model,
    simulate_batch,
    simulate_readout,
)
from .seeding import SeedLike, chunked, derive

DEFAULT_THETA1 = np.deg2rad(30.0)


def target_state(theta1: float) -> PureState:
    return PureState.normalized(np.cos(np.pi / 4 - theta1 / 2), np.cos(np.pi / 4 + theta1 / 2))


def wrong_state(theta1: float) -> PureState:
    return PureState.normalized(np.cos(np.pi / 4 + theta1 / 2), np.cos(np.pi / 4 - theta1 / 2))


def theta2_of_theta1(theta1: float) -> float:
    s = np.sin(theta1)
    return float(np.arcsin(np.clip(2 * s / (1 + s * s), -1.0, 1.0)))


def printed_success_formula(theta1: float) -> float:
    """The printed closed form (1 + cos theta1) / 2, kept for comparison."""
    return 0.5 * (1 + np.cos(theta1))


@dataclass(frozen=True)
class NoiseModel:
    readout: ReadoutModel
    init_electron: float = 0.983
    init_nuclear: float = 0.95
    mode: Mode = Mode.DYNAMICAL_STOP

    @classmethod
    def calibrated(cls) -> "NoiseModel":
        return cls(calibrated_model())


@dataclass(frozen=True)
class ProtocolConfig:
    theta1: float = DEFAULT_THETA1
    readout_time_budget: Optional[float] = None  # None: the model's full window
    noise: Optional[NoiseModel] = None
    trials: int = 100_000
    seed: int = 0
    reset_rounds: int = 0  # >0 enables repeat-until-success with an x-projective reset
    theta2_offset: float = 0.0  # mutation hook for verification runs

    def __post_init__(self):
        if not 0.0 < self.theta1 <= np.pi / 2 + 1e-12:
            raise ValueError("theta1 must lie in (0, pi/2]")
        if self.trials < 1:
            raise ValueError("need at least one trial")

    @property
    def theta2(self) -> float:
        return float(np.clip(theta2_of_theta1(self.theta1) + self.theta2_offset, 0.0, np.pi / 2))

    def readout_bins(self) -> Optional[int]:
        if self.noise is None:
            return None
        budget = self.readout_time_budget
        return self.noise.readout.max_bins if budget is None else self.noise.readout.bins_for(budget)


@dataclass(frozen=True)
class ProtocolResult:
    outcome1: int
    outcome2: Optional[int]
    heralded_success: bool
    final_state: DensityMatrix = field(repr=False)
    fidelity_to_target: float
    elapsed_readout_time: float
    rounds: int = 1


def prepared_state(noise: Optional[NoiseModel]) -> DensityMatrix:
    """|x> prepared from an imperfectly initialized |down>."""
    if noise is None:
        return PLUS_X.density()
    return density_from_bloch(BlochVector(2 * noise.init_nuclear - 1, 0.0, 0.0))


def _measure_and_read(rho, theta, cfg: ProtocolConfig, rng):
    """One partial measurement plus ancilla readout.

    Returns (classified outcome, post-readout system state, elapsed time).
    """
    noise = cfg.noise
    res = measure_partial(rho, theta, rng)
    if noise is None:
        return res.outcome, res.post, 0.0
    # A misinitialized ancilla ends in the other state for the same Kraus branch.
    swapped = rng.random() >= noise.init_electron
    electron = res.outcome ^ int(swapped)
    rec = simulate_readout(electron, noise.readout, noise.mode, rng, n_bins=cfg.readout_bins())
    post = dephase(res.post, rec.nuclear_coherence_factor)
    return rec.outcome, post, rec.stop_bin * noise.readout.bin_duration


def _projective(rho: DensityMatrix, pauli: np.ndarray, rng) -> DensityMatrix:
    lam, vec = np.linalg.eigh(pauli)
    plus = vec[:, 1]
    p = float(np.real(np.vdot(plus, rho.entries @ plus)))
    v = plus if rng.random() < p else vec[:, 0]
    return DensityMatrix(np.outer(v, v.conj()))


def _reset_to_x(rho: DensityMatrix, rng, max_tries: int = 64) -> DensityMatrix:
    """Measurement-only reset: alternate x and z projections until +x."""
    for _ in range(max_tries):
        rho = _projective(rho, SIGMA_X, rng)
        if fidelity(rho, PLUS_X) > 0.5:
            return rho
        rho = _projective(rho, SIGMA_Z, rng)
    return rho


def run_protocol(config: ProtocolConfig, rng: np.random.Generator) -> ProtocolResult:
    """Single run of the adaptive protocol (optionally repeated after resets)."""
    target = target_state(config.theta1)
    rho = prepared_state(config.noise)
    elapsed = 0.0
    rounds = 0
    while True:
        rounds += 1
        o1, rho, dt = _measure_and_read(rho, config.theta1, config, rng)
        elapsed += dt
        o2 = None
        if o1 == 1:
            o2, rho, dt = _measure_and_read(rho, config.theta2, config, rng)
            elapsed += dt
        heralded = o1 == 0 or o2 == 0
        if heralded or rounds > config.reset_rounds:
            break
        rho = _reset_to_x(rho, rng)
    return ProtocolResult(o1, o2, heralded, rho, fidelity(rho, target), elapsed, rounds)


# -- exact oracles -----------------------------------------------------------


class Branch(NamedTuple):
    outcomes: tuple
    probability: float
    heralded: bool
    fidelity: float


class ExactProtocol(NamedTuple):
    p_herald: float
    fidelity_given_herald: float
    branches: tuple
    printed_formula: float


def success_probability_exact(theta1: float, theta2: float | None = None) -> ExactProtocol:
    """Enumerate the outcome branches of the ideal protocol.

    Branches: (0,) first outcome on target; (1, 0) corrected; (1, 1) failed.
    """
    theta2 = theta2_of_theta1(theta1) if theta2 is None else theta2
    target = target_state(theta1).vector
    psi = PLUS_X.vector
    m1 = kraus_pair(theta1).operators
    m2 = kraus_pair(theta2).operators
    branches = []

    def add(outcomes, vec, heralded):
        p = float(np.vdot(vec, vec).real)
        f = float(abs(np.vdot(target, vec)) ** 2 / p) if p > 0 else 0.0
        branches.append(Branch(outcomes, p, heralded, f))

    add((0,), m1[0] @ psi, True)
    add((1, 0), m2[0] @ m1[1] @ psi, True)
    add((1, 1), m2[1] @ m1[1] @ psi, False)
    p_h = sum(b.probability for b in branches if b.heralded)
    f_h = sum(b.probability * b.fidelity for b in branches if b.heralded) / p_h if p_h else 0.0
    return ExactProtocol(p_h, f_h, tuple(branches), printed_success_formula(theta1))


def postselection_bound(
    theta1: float,
    p_adapt: float,
    f_target: float = 1.0,
    f_wrong: float | None = None,
    p_single: float = 0.5,
) -> float:
    """Best fidelity a single measurement reaches at success rate ``p_adapt``
    by also accepting a share of its negative outcomes."""
    if p_adapt < p_single - 1e-12:
        raise ValueError("p_adapt below the single-measurement success probability")
    if f_wrong is None:
        f_wrong = np.cos(theta1) ** 2
    return float((p_single * f_target + (p_adapt - p_single) * f_wrong) / p_adapt)


class NoisyExact(NamedTuple):
    p_herald: float
    fidelity_with_feedback: float
    p_single: float
    f_target: float
    f_wrong: float
    bound: float


def exact_noisy_protocol(config: ProtocolConfig) -> NoisyExact:
    """Exact expectation values of the noisy protocol.

    Readout dephasing is linear in the state, so each classified outcome maps
    the pre-readout matrix to populations * P(outcome) plus coherences *
    E[coherence; outcome], summed over ancilla-initialization branches.
    """
    noise = config.noise
    n = config.readout_bins()
    target = target_state(config.theta1).vector

    def step(rho, theta):
        out = [np.zeros((2, 2), complex), np.zeros((2, 2), complex)]
        ops = kraus_pair(theta).operators
        swaps = ((0, 1.0),) if noise is None else ((0, noise.init_electron), (1, 1 - noise.init_electron))
        for swap, w in swaps:
            for k, m in enumerate(ops):
                r = m @ rho @ m
                diag = np.diag(np.diag(r))
                if noise is None:
                    out[k] += w * r
                    continue
                bs = branch_stats(noise.readout, noise.mode, k ^ swap, n)
                out[0] += w * (diag * bs.p0 + (r - diag) * bs.coh0)
                out[1] += w * (diag * bs.p1 + (r - diag) * bs.coh1)
        return out

    def fid(r):
        return float(np.real(np.vdot(target, r @ target)))

    rho0 = prepared_state(noise).entries
    a = step(rho0, config.theta1)
    b = step(a[1], config.theta2)
    herald = a[0] + b[0]
    p_h = np.trace(herald).real
    p1 = np.trace(a[0]).real
    f_t = fid(a[0]) / p1
    f_w = fid(a[1]) / np.trace(a[1]).real
    bound = postselection_bound(config.theta1, p_h, f_t, f_w, p1)
    return NoisyExact(float(p_h), fid(herald) / p_h, float(p1), f_t, f_w, bound)


# -- vectorized Monte Carlo --------------------------------------------------


class TrialStats(NamedTuple):
    trials: int
    heralded: int
    fid_sum: float
    fid_sq: float
    single_heralded: int
    single_fid_sum: float
    single_fid_sq: float
    wrong_fid_sum: float
    wrong_fid_sq: float
    elapsed_sum: float

    def __add__(self, other):
        return TrialStats(*(a + b for a, b in zip(self, other)))


def _batch_step(rho, theta, noise, n_bins, rng):
    """Measure and read out a stack of states; returns (states, outcomes, bins)."""
    m = np.diag(kraus_pair(theta).M0), np.diag(kraus_pair(theta).M1)
    pops = rho[:, [0, 1], [0, 1]].real
    p0 = pops @ (m[0] ** 2)
    k = (rng.random(len(rho)) >= p0).astype(np.int64)
    d = np.where(k[:, None] == 0, m[0], m[1])
    pk = np.where(k == 0, p0, 1 - p0)
    out = rho * d[:, :, None] * d[:, None, :] / pk[:, None, None]
    if noise is None:
        return out, k, np.zeros(len(rho), dtype=np.int64)
    swapped = rng.random(len(rho)) >= noise.init_electron
    electron = k ^ swapped.astype(np.int64)
    rb = simulate_batch(electron, noise.readout, noise.mode, rng, n_bins=n_bins)
    out[:, 0, 1] *= rb.coherence
    out[:, 1, 0] *= rb.coherence
    return out, rb.outcome, rb.stop_bin


def _fidelities(rho, target):
    return np.real(np.einsum("i,nij,j->n", target.conj(), rho, target))


def simulate_chunk(config: ProtocolConfig, rng: np.random.Generator, size: int) -> TrialStats:
    if config.reset_rounds:
        raise NotImplementedError("the reset extension runs through run_protocol only")
    noise = config.noise
    n = config.readout_bins()
    target = target_state(config.theta1).vector
    rho = np.broadcast_to(prepared_state(noise).entries, (size, 2, 2)).copy()
    rho, o1, bins1 = _batch_step(rho, config.theta1, noise, n, rng)
    f1 = _fidelities(rho, target)
    wrong = o1 == 1
    final = rho.copy()
    o2 = np.full(size, -1)
    bins2 = np.zeros(size, dtype=np.int64)
    if np.any(wrong):
        r2, out2, b2 = _batch_step(rho[wrong], config.theta2, noise, n, rng)
        final[wrong] = r2
        o2[wrong] = out2
        bins2[wrong] = b2
    herald = (o1 == 0) | (o2 == 0)
    ff = _fidelities(final, target)[herald]
    dt = 0.0 if noise is None else noise.readout.bin_duration
    return TrialStats(
        trials=size,
        heralded=int(herald.sum()),
        fid_sum=float(ff.sum()),
        fid_sq=float((ff * ff).sum()),
        single_heralded=int((~wrong).sum()),
        single_fid_sum=float(f1[~wrong].sum()),
        single_fid_sq=float((f1[~wrong] ** 2).sum()),
        wrong_fid_sum=float(f1[wrong].sum()),
        wrong_fid_sq=float((f1[wrong] ** 2).sum()),
        elapsed_sum=float((bins1 + bins2).sum() * dt),
    )


def simulate_trials(config: ProtocolConfig, seed: SeedLike = None) -> TrialStats:
    seed = config.seed if seed is None else seed
    total = None
    for rng, size in chunked(seed, config.trials):
        s = simulate_chunk(config, rng, size)
        total = s if total is None else total + s
    return total


def _mean_se(total, sq, n):
    if n == 0:
        return float("nan"), float("nan")
    mean = total / n
    var = max(sq / n - mean * mean, 0.0)
    return mean, float(np.sqrt(var / n))


@dataclass(frozen=True)
class SweepPoint:
    readout_time: float
    herald_probability: float
    herald_se: float
    fidelity_with_feedback: float
    fidelity_se: float
    single_probability: float
    single_fidelity: float
    wrong_fidelity: float
    postselection_bound: float
    bound_se: float
    mean_readout_time: float

    @property
    def margin(self) -> float:
        return self.fidelity_with_feedback - self.postselection_bound

    @property
    def margin_se(self) -> float:
        return float(np.hypot(self.fidelity_se, self.bound_se))


def summarize(readout_time: float, stats: TrialStats) -> SweepPoint:
    n = stats.trials
    p_h = stats.heralded / n
    p1 = stats.single_heralded / n
    f_h, se_h = _mean_se(stats.fid_sum, stats.fid_sq, stats.heralded)
    f_t, se_t = _mean_se(stats.single_fid_sum, stats.single_fid_sq, stats.single_heralded)
    f_w, se_w = _mean_se(stats.wrong_fid_sum, stats.wrong_fid_sq, n - stats.single_heralded)
    if p_h >= p1:
        bound = (p1 * f_t + (p_h - p1) * f_w) / p_h
        bound_se = float(np.hypot(p1 / p_h * se_t, (p_h - p1) / p_h * se_w))
    else:
        bound, bound_se = f_t, se_t
    return SweepPoint(
        readout_time=readout_time,
        herald_probability=p_h,
        herald_se=float(np.sqrt(p_h * (1 - p_h) / n)),
        fidelity_with_feedback=f_h,
        fidelity_se=se_h,
        single_probability=p1,
        single_fidelity=f_t,
        wrong_fidelity=f_w,
        postselection_bound=float(bound),
        bound_se=bound_se,
        mean_readout_time=stats.elapsed_sum / n,
    )


@dataclass(frozen=True)
class SweepCurve:
    points: tuple

    @property
    def readout_times(self):
        return [p.readout_time for p in self.points]

    @property
    def fidelity_with_feedback(self):
        return [p.fidelity_with_feedback for p in self.points]

    @property
    def herald_probability(self):
        return [p.herald_probability for p in self.points]

    @property
    def postselection_bound(self):
        return [p.postselection_bound for p in self.points]


def sweep_point(config: ProtocolConfig, budget: float, index: int) -> SweepPoint:
    cfg = replace(config, readout_time_budget=budget)
    return summarize(budget, simulate_trials(cfg, derive(config.seed, index)))


def sweep_vs_readout_time(
    config: ProtocolConfig, budgets: Sequence[float], executor=None
) -> SweepCurve:
    """Monte Carlo herald probability, heralded fidelity and post-selection
    bound for each readout budget. Point ``i`` always uses stream ``i``."""
    if config.noise is None:
        raise ValueError("a readout-time sweep needs a noise model")
    args = [(config, b, i) for i, b in enumerate(budgets)]
    if executor is None:
        points = [sweep_point(*a) for a in args]
    else:
        points = list(executor.map(sweep_point, *zip(*args)))
    return SweepCurve(tuple(points))
