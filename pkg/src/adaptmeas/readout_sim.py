"""
Phenomenological model of binned optical readout of the electron ancilla.

Time is cut into bins (1 us by default). In every bin of the bright state
(electron |0>) a photon is detected with probability ``p_det``; afterwards the
electron may flip into the dark state with probability ``p_flip``. The dark
state (|1>) never flips back and only produces dark counts (``p_dark``).
Because emission is resolved before the flip, a detected photon from the
bright state always leaves the electron in |0>.

Conventional readout excites for all ``max_bins`` bins. Dynamical-stop readout
halts after the first detection.

Nuclear coherence during readout: every bright bin multiplies the off-diagonal
element of the nuclear spin by ``kappa`` (excited-state g-factor dephasing),
bounded below by ``c_floor``. An electron flip during excitation leaves the
nucleus precessing with a random hyperfine phase and is treated as complete
dephasing. Per trajectory::

    coherence = 0                                  if the electron flipped
              = max(c_floor, kappa ** bright_bins) otherwise
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import CalibrationError
from .seeding import SeedLike, chunked


class Mode(str, Enum):
    CONVENTIONAL = "conventional"
    DYNAMICAL_STOP = "dynamical_stop"


@dataclass(frozen=True)
class ReadoutModel:
    p_det: float
    p_flip: float
    p_dark: float
    kappa: float = 1.0
    c_floor: float = 0.0
    bin_duration: float = 1e-6
    max_bins: int = 100

    def __post_init__(self):
        for name in ("p_det", "p_flip", "p_dark", "c_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v!r} outside [0, 1]")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa = {self.kappa!r} outside (0, 1]")
        if self.bin_duration <= 0 or self.max_bins < 1:
            raise ValueError("need a positive bin duration and at least one bin")

    @property
    def duration(self) -> float:
        """Conventional readout time."""
        return self.max_bins * self.bin_duration

    def bins_for(self, duration: float) -> int:
        """Number of whole bins that fit in ``duration`` (capped at max_bins)."""
        n = int(np.floor(duration / self.bin_duration + 1e-9))
        return min(max(n, 0), self.max_bins)

    def coherence(self, bright_bins, flipped):
        c = np.maximum(self.c_floor, self.kappa ** np.asarray(bright_bins, dtype=float))
        return np.where(flipped, 0.0, c)


@dataclass(frozen=True)
class ReadoutRecord:
    mode: Mode
    outcome: int  # 0 bright (photon seen), 1 dark
    stop_bin: int
    photon_bin: Optional[int]
    flipped: bool
    post_electron: int
    nuclear_coherence_factor: float
    bright_bins: int = 0
    bright_photon: bool = False  # detection came from the bright state


def simulate_readout(
    electron_in: int,
    model: ReadoutModel,
    mode: Mode | str,
    rng: np.random.Generator,
    n_bins: int | None = None,
) -> ReadoutRecord:
    """Single trajectory, simulated bin by bin."""
    mode = Mode(mode)
    n = model.max_bins if n_bins is None else min(n_bins, model.max_bins)
    state = int(electron_in)
    photon_bin = None
    bright_photon = False
    flipped = False
    bright_bins = 0
    stop = n
    for b in range(1, n + 1):
        if state == 0:
            bright_bins += 1
            if rng.random() < model.p_det and photon_bin is None:
                photon_bin, bright_photon = b, True
            if photon_bin == b and mode is Mode.DYNAMICAL_STOP:
                stop = b
                break
            if rng.random() < model.p_flip:
                state, flipped = 1, True
        else:
            if rng.random() < model.p_dark and photon_bin is None:
                photon_bin = b
            if photon_bin == b and mode is Mode.DYNAMICAL_STOP:
                stop = b
                break
    return ReadoutRecord(
        mode=mode,
        outcome=0 if photon_bin is not None else 1,
        stop_bin=stop,
        photon_bin=photon_bin,
        flipped=flipped,
        post_electron=state,
        nuclear_coherence_factor=float(model.coherence(bright_bins, flipped)),
        bright_bins=bright_bins,
        bright_photon=bright_photon,
    )


class ReadoutBatch(NamedTuple):
    outcome: np.ndarray
    post_electron: np.ndarray
    stop_bin: np.ndarray
    flipped: np.ndarray
    bright_photon: np.ndarray
    coherence: np.ndarray


def _first_event(rng: np.random.Generator, p: float, size, never: int) -> np.ndarray:
    if p <= 0.0:
        return np.full(size, never, dtype=np.int64)
    return rng.geometric(p, size=size).astype(np.int64)


def simulate_batch(
    electron_in,
    model: ReadoutModel,
    mode: Mode | str,
    rng: np.random.Generator,
    size: int | None = None,
    n_bins: int | None = None,
) -> ReadoutBatch:
    """Vectorized trajectories drawn from first-event times.

    Same distribution as :func:`simulate_readout`: the first bright photon,
    the flip and the first dark count are geometric in the bin index.
    ``electron_in`` is a scalar (with ``size``) or an array of 0/1 labels.
    """
    mode = Mode(mode)
    n = model.max_bins if n_bins is None else min(n_bins, model.max_bins)
    e_in = np.asarray(electron_in, dtype=np.int64)
    if e_in.ndim == 0:
        e_in = np.full(size, int(e_in), dtype=np.int64)
    m = e_in.size
    never = n + 1
    t_photon = _first_event(rng, model.p_det, m, never)
    t_flip = _first_event(rng, model.p_flip, m, never)
    t_dark = _first_event(rng, model.p_dark, m, never)

    bright = e_in == 0
    # Bright start: the photon counts if it comes no later than the flip bin.
    bright_photon = bright & (t_photon <= np.minimum(t_flip, n))
    if mode is Mode.DYNAMICAL_STOP:
        flipped = bright & ~bright_photon & (t_flip <= n)
    else:
        flipped = bright & (t_flip <= n)
    # Dark counts start after the flip (bright start) or at once (dark start);
    # they matter only if no bright photon came first.
    t_dark_abs = np.where(bright, t_flip + t_dark, t_dark)
    dark_detect = (t_dark_abs <= n) & ~bright_photon
    detected = bright_photon | dark_detect

    if mode is Mode.DYNAMICAL_STOP:
        stop = np.where(bright_photon, t_photon, np.where(dark_detect, t_dark_abs, n))
        bright_bins = np.where(bright, np.where(bright_photon, t_photon, np.minimum(t_flip, n)), 0)
    else:
        stop = np.full(m, n, dtype=np.int64)
        bright_bins = np.where(bright, np.minimum(t_flip, n), 0)
    post = np.where(bright & ~flipped, 0, 1)
    return ReadoutBatch(
        outcome=np.where(detected, 0, 1),
        post_electron=post,
        stop_bin=stop,
        flipped=flipped,
        bright_photon=bright_photon,
        coherence=model.coherence(bright_bins, flipped),
    )


# -- closed-form observables -------------------------------------------------


class ExactStats(NamedTuple):
    """Exact readout statistics for an electron prepared in |0>, plus the
    dark-state classification fidelity."""

    p_bright_given_0: float
    p_post0_given_0: float
    p_post0_given_detection: float
    mean_coherence_0: float
    p_dark_given_1: float
    mean_stop_bins_0: float


def exact_stats(model: ReadoutModel, mode: Mode | str, n_bins: int | None = None) -> ExactStats:
    mode = Mode(mode)
    n = model.max_bins if n_bins is None else min(n_bins, model.max_bins)
    pd, pf, r = model.p_det, model.p_flip, 1.0 - model.p_dark
    q = (1 - pd) * (1 - pf)
    k = np.arange(1, n + 1)
    qk1 = q ** (k - 1)
    flip_at = qk1 * (1 - pd) * pf  # flip in bin k, no photon up to k
    cmax = np.maximum(model.c_floor, model.kappa ** k.astype(float))
    c_end = max(model.c_floor, model.kappa**n)

    p_no_det = q**n + np.sum(flip_at * r ** (n - k))
    p_bright = 1.0 - p_no_det
    if mode is Mode.CONVENTIONAL:
        p_post0 = (1 - pf) ** n
        # photon detected and no flip in any of the n bins
        p_post0_det = ((1 - pf) ** n - q**n) / p_bright if p_bright > 0 else 1.0
        mean_c = (1 - pf) ** n * c_end
        mean_stop = float(n)
    else:
        photon_at = qk1 * pd
        p_post0 = float(np.sum(photon_at)) + q**n
        p_post0_det = float(np.sum(photon_at)) / p_bright if p_bright > 0 else 1.0
        mean_c = float(np.sum(photon_at * cmax)) + q**n * c_end
        # stop at k on a bright photon, at k + j on a dark count after a flip at k
        j = k[None, :]
        inside = j <= (n - k)[:, None]
        pj = np.where(inside, r ** (j - 1) * (1 - r) * (k[:, None] + j), 0.0)
        after_flip = pj.sum(axis=1) + r ** (n - k) * n
        stop = np.sum(photon_at * k) + np.sum(flip_at * after_flip) + q**n * n
        mean_stop = float(stop)
    return ExactStats(
        p_bright_given_0=float(p_bright),
        p_post0_given_0=float(p_post0),
        p_post0_given_detection=float(p_post0_det),
        mean_coherence_0=float(mean_c),
        p_dark_given_1=float(r**n),
        mean_stop_bins_0=mean_stop,
    )


class BranchStats(NamedTuple):
    """Joint statistics of classified outcome and nuclear coherence.

    ``coh0`` is E[coherence * 1{outcome 0}], ``coh1`` likewise; with these the
    outcome-conditioned nuclear state is an exact linear function of the
    pre-readout state.
    """

    p0: float
    coh0: float
    p1: float
    coh1: float


def branch_stats(model: ReadoutModel, mode: Mode | str, electron_in: int,
                 n_bins: int | None = None) -> BranchStats:
    mode = Mode(mode)
    n = model.max_bins if n_bins is None else min(n_bins, model.max_bins)
    r = 1.0 - model.p_dark
    if electron_in == 1:
        return BranchStats(1 - r**n, 1 - r**n, r**n, r**n)
    pd, pf = model.p_det, model.p_flip
    q = (1 - pd) * (1 - pf)
    k = np.arange(1, n + 1)
    cmax = np.maximum(model.c_floor, model.kappa ** k.astype(float))
    c_end = max(model.c_floor, model.kappa**n)
    p_bright = exact_stats(model, mode, n).p_bright_given_0
    if mode is Mode.DYNAMICAL_STOP:
        coh0 = float(np.sum(q ** (k - 1) * pd * cmax))
    else:
        coh0 = ((1 - pf) ** n - q**n) * c_end
    return BranchStats(p_bright, coh0, 1 - p_bright, q**n * c_end)


# -- Monte Carlo reports -----------------------------------------------------


def _binom_se(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1 - p), 0.0) / n)) if n > 0 else float("nan")


@dataclass(frozen=True)
class QndReport:
    fidelity_0: float
    fidelity_1: float
    fidelity_0_given_photon: float
    fidelity_0_given_bright_photon: float
    average_fidelity: float
    se_0: float
    se_1: float
    se_0_given_photon: float
    se_average: float
    trials: int


def qnd_fidelity(model: ReadoutModel, mode: Mode | str, trials: int, seed: SeedLike) -> QndReport:
    """Post-measurement fidelity of the electron for |0> and |1> inputs.

    ``fidelity_0_given_photon`` conditions on any detection (including dark
    counts after a flip); ``fidelity_0_given_bright_photon`` conditions on
    detections from the bright state and is exactly 1 by construction.
    """
    post0 = det = det_post0 = bdet = bdet_post0 = post1 = 0
    for label, rng_pairs in ((0, chunked(seed, trials)),):
        for rng, size in rng_pairs:
            b = simulate_batch(label, model, mode, rng, size=size)
            post0 += int(np.sum(b.post_electron == 0))
            d = b.outcome == 0
            det += int(np.sum(d))
            det_post0 += int(np.sum(d & (b.post_electron == 0)))
            bdet += int(np.sum(b.bright_photon))
            bdet_post0 += int(np.sum(b.bright_photon & (b.post_electron == 0)))
    seed1 = seed if isinstance(seed, np.random.Generator) else _offset(seed)
    for rng, size in chunked(seed1, trials):
        b = simulate_batch(1, model, mode, rng, size=size)
        post1 += int(np.sum(b.post_electron == 1))
    f0, f1 = post0 / trials, post1 / trials
    f0p = det_post0 / det if det else 1.0
    f0b = bdet_post0 / bdet if bdet else 1.0
    se0, se1 = _binom_se(f0, trials), _binom_se(f1, trials)
    return QndReport(
        fidelity_0=f0,
        fidelity_1=f1,
        fidelity_0_given_photon=f0p,
        fidelity_0_given_bright_photon=f0b,
        average_fidelity=0.5 * (f0 + f1),
        se_0=se0,
        se_1=se1,
        se_0_given_photon=_binom_se(f0p, det),
        se_average=0.5 * float(np.hypot(se0, se1)),
        trials=trials,
    )


def _offset(seed: SeedLike):
    from .seeding import derive

    return derive(seed, 1 << 20)


class OutcomeFidelity(NamedTuple):
    bright_given_0: float
    dark_given_1: float
    se_bright: float
    se_dark: float


def readout_outcome_fidelity(model: ReadoutModel, trials: int, seed: SeedLike) -> OutcomeFidelity:
    """Classification fidelity of conventional readout."""
    bright = dark = 0
    for rng, size in chunked(seed, trials):
        bright += int(np.sum(simulate_batch(0, model, Mode.CONVENTIONAL, rng, size=size).outcome == 0))
    seed1 = seed if isinstance(seed, np.random.Generator) else _offset(seed)
    for rng, size in chunked(seed1, trials):
        dark += int(np.sum(simulate_batch(1, model, Mode.CONVENTIONAL, rng, size=size).outcome == 1))
    fb, fd = bright / trials, dark / trials
    return OutcomeFidelity(fb, fd, _binom_se(fb, trials), _binom_se(fd, trials))


class CoherencePoint(NamedTuple):
    time: float
    fidelity_x: float
    stderr: float
    fidelity_z: float


def nuclear_coherence_curve(
    model: ReadoutModel,
    mode: Mode | str,
    duration_grid,
    trials: int,
    seed: SeedLike,
    electron_in: int = 0,
) -> list[CoherencePoint]:
    """Fidelity of the nucleus with |x> after a readout truncated at each time.

    The nucleus starts in |x>; fidelity is (1 + mean coherence) / 2. The
    z-fidelity with |down> (starting from |down>) is untouched by readout.
    """
    from .seeding import derive

    points = []
    for i, t in enumerate(duration_grid):
        if t < 0 or t > model.duration * (1 + 1e-9):
            raise ValueError(f"duration {t!r} outside the readout window")
        n = model.bins_for(t)
        total = sq = 0.0
        s = seed if isinstance(seed, np.random.Generator) else derive(seed, i)
        for rng, size in chunked(s, trials):
            c = simulate_batch(electron_in, model, mode, rng, size=size, n_bins=n).coherence
            total += float(np.sum(c))
            sq += float(np.sum(c * c))
        mean = total / trials
        var = max(sq / trials - mean**2, 0.0)
        points.append(CoherencePoint(float(t), 0.5 * (1 + mean), 0.5 * np.sqrt(var / trials), 1.0))
    return points


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class ReadoutTargets:
    """Observables the model is fitted to, with the tolerances that weight them."""

    bright_given_0: float = 0.853
    dark_given_1: float = 0.986
    qnd0_conventional: float = 0.18
    qnd0_dynamical_stop: float = 0.86
    saturation_dynamical_stop: float = 0.615
    half_coherence_time: Optional[float] = 25e-6
    tol_bright: float = 0.01
    tol_qnd0_ds: float = 0.02
    tol_saturation: float = 0.01
    tol_half: float = 0.03

    def values(self) -> dict:
        return {
            "bright_given_0": self.bright_given_0,
            "dark_given_1": self.dark_given_1,
            "qnd0_conventional": self.qnd0_conventional,
            "qnd0_dynamical_stop": self.qnd0_dynamical_stop,
            "saturation_dynamical_stop": self.saturation_dynamical_stop,
        }


PERFECT_TARGETS = ReadoutTargets(1.0, 1.0, 1.0, 1.0, 1.0, half_coherence_time=None)


@dataclass(frozen=True)
class CalibrationResult:
    model: ReadoutModel
    achieved: dict
    targets: dict
    tolerances: dict

    @property
    def residuals(self) -> dict:
        return {k: self.achieved[k] - self.targets[k] for k in self.targets}

    def failed(self) -> list[str]:
        return [k for k, r in self.residuals.items() if abs(r) > self.tolerances[k]]


def achieved_observables(model: ReadoutModel, targets: ReadoutTargets) -> dict:
    conv = exact_stats(model, Mode.CONVENTIONAL)
    ds = exact_stats(model, Mode.DYNAMICAL_STOP)
    out = {
        "bright_given_0": conv.p_bright_given_0,
        "dark_given_1": conv.p_dark_given_1,
        "qnd0_conventional": conv.p_post0_given_0,
        "qnd0_dynamical_stop": ds.p_post0_given_0,
        "saturation_dynamical_stop": 0.5 * (1 + ds.mean_coherence_0),
    }
    if targets.half_coherence_time is not None:
        n = model.bins_for(targets.half_coherence_time)
        out["half_coherence"] = 0.5 * (1 + exact_stats(model, Mode.CONVENTIONAL, n).mean_coherence_0)
    return out


def _grid_refine(objective, points=25, rounds=8):
    """Minimize objective(kappa, c_floor) on successively finer grids.

    Ties resolve to the largest kappa and smallest floor (least dephasing).
    """
    lo, hi = np.array([1e-6, 0.0]), np.array([1.0, 1.0])
    best = None
    for _ in range(rounds):
        ks = np.linspace(hi[0], lo[0], points)
        cs = np.linspace(lo[1], hi[1], points)
        vals = np.array([[objective(k, c) for c in cs] for k in ks])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        best = (ks[i], cs[j], vals[i, j])
        span = (hi - lo) / (points - 1) * 2
        lo = np.maximum([1e-6, 0.0], [ks[i], cs[j]] - span)
        hi = np.minimum([1.0, 1.0], [ks[i], cs[j]] + span)
    return best


def calibrate_readout(
    targets: ReadoutTargets = ReadoutTargets(),
    bin_duration: float = 1e-6,
    max_bins: int = 100,
    strict: bool = True,
) -> CalibrationResult:
    """Fit (p_det, p_flip, p_dark, kappa, c_floor) to the readout observables.

    p_flip and p_dark follow in closed form from the conventional |0> post-state
    fidelity and the dark-state classification fidelity. p_det is a bounded
    1-D minimization of the tolerance-weighted misfit of the bright
    classification and dynamical-stop |0> fidelities (two nearly redundant
    observables). kappa and c_floor are found by grid refinement on the
    dynamical-stop saturation and the conventional half-coherence time.
    """
    vals = targets.values()
    for k, v in vals.items():
        if not 0.0 < v <= 1.0:
            raise CalibrationError(f"target {v!r} outside (0, 1]", k)
    n = max_bins
    p_flip = 1.0 - targets.qnd0_conventional ** (1.0 / n)
    p_dark = 1.0 - targets.dark_given_1 ** (1.0 / n)
    base = ReadoutModel(0.5, p_flip, p_dark, 1.0, 0.0, bin_duration, max_bins)

    def det_misfit(pd):
        m = replace(base, p_det=pd)
        conv = exact_stats(m, Mode.CONVENTIONAL)
        ds = exact_stats(m, Mode.DYNAMICAL_STOP)
        return ((conv.p_bright_given_0 - targets.bright_given_0) / targets.tol_bright) ** 2 + (
            (ds.p_post0_given_0 - targets.qnd0_dynamical_stop) / targets.tol_qnd0_ds
        ) ** 2

    p_det = float(minimize_scalar(det_misfit, bounds=(0.0, 1.0), method="bounded",
                                  options={"xatol": 1e-10}).x)
    base = replace(base, p_det=p_det)

    half_n = None if targets.half_coherence_time is None else base.bins_for(targets.half_coherence_time)

    def coh_misfit(kappa, c_floor):
        m = replace(base, kappa=kappa, c_floor=c_floor)
        sat = 0.5 * (1 + exact_stats(m, Mode.DYNAMICAL_STOP).mean_coherence_0)
        cost = ((sat - targets.saturation_dynamical_stop) / targets.tol_saturation) ** 2
        if half_n is not None:
            half = 0.5 * (1 + exact_stats(m, Mode.CONVENTIONAL, half_n).mean_coherence_0)
            cost += ((half - 0.5) / targets.tol_half) ** 2
        return cost

    kappa, c_floor, _ = _grid_refine(coh_misfit)
    model = replace(base, kappa=float(kappa), c_floor=float(c_floor))
    achieved = achieved_observables(model, targets)
    target_map = dict(vals)
    tol = {
        "bright_given_0": targets.tol_bright,
        "dark_given_1": 1e-9,
        "qnd0_conventional": 1e-9,
        "qnd0_dynamical_stop": targets.tol_qnd0_ds,
        "saturation_dynamical_stop": targets.tol_saturation,
    }
    if half_n is not None:
        target_map["half_coherence"] = 0.5
        tol["half_coherence"] = targets.tol_half
    result = CalibrationResult(model, achieved, target_map, tol)
    if strict and result.failed():
        name = result.failed()[0]
        raise CalibrationError(
            f"achieved {achieved[name]:.4f} vs target {target_map[name]:.4f}", name
        )
    return result


_CALIBRATED: ReadoutModel | None = None


def calibrated_model() -> ReadoutModel:
    """Model calibrated to the default target set (computed once)."""
    global _CALIBRATED
    if _CALIBRATED is None:
        _CALIBRATED = calibrate_readout().model
    return _CALIBRATED
