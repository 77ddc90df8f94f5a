"""
Ramsey-fringe model of the controlled-phase gate and its least-squares fit.

The ancilla |0> probability after an interaction time tau is modeled as::

    p0(tau) = y0 + a * exp(-(tau / T2star)**2) * cos(A * tau + phi)

with default offset and contrast 1/2 so the ideal fringe spans [0, 1].
Fits are weighted by binomial shot noise and solved with a damped
Gauss-Newton (Levenberg-Marquardt) iteration started from the dominant
discrete-spectrum peak.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .partial_measurement import HYPERFINE_A

PARAM_NAMES = ("y0", "a", "A", "phi", "T2star")
T2STAR_ELECTRON = 1.35e-6
T2STAR_NUCLEAR = 7.8e-3
_US = 1e-6  # internal time unit keeps the normal equations well scaled


@dataclass(frozen=True)
class FringeModel:
    y0: float = 0.5
    a: float = 0.5
    A: float = HYPERFINE_A
    phi: float = 0.0
    T2star: float = T2STAR_ELECTRON

    def __post_init__(self):
        if self.T2star <= 0:
            raise ValueError("T2star must be positive")

    def _scaled(self) -> np.ndarray:
        return np.array([self.y0, self.a, self.A * _US, self.phi, self.T2star / _US])

    @classmethod
    def _from_scaled(cls, p) -> "FringeModel":
        return cls(float(p[0]), float(p[1]), float(p[2] / _US), float(p[3]), float(abs(p[4]) * _US))


def fringe_value(m: FringeModel, tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("interaction time must be non-negative")
    return m.y0 + m.a * np.exp(-((tau / m.T2star) ** 2)) * np.cos(m.A * tau + m.phi)


@dataclass(frozen=True)
class FringeDataset:
    tau: np.ndarray
    p0: np.ndarray
    n_shots: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        p0 = np.asarray(self.p0, dtype=float)
        n = np.asarray(self.n_shots, dtype=np.int64)
        if not (tau.shape == p0.shape == n.shape):
            raise ValueError("columns must have equal length")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("taus must be strictly increasing")
        if np.any((p0 < 0) | (p0 > 1)):
            raise ValueError("p0 outside [0, 1]")
        if np.any(n < 1):
            raise ValueError("every point needs at least one shot")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "n_shots", n)

    def __len__(self):
        return len(self.tau)

    def sigma(self) -> np.ndarray:
        # shrunk estimate keeps 0/1 frequencies from getting infinite weight
        p = (self.p0 * self.n_shots + 0.5) / (self.n_shots + 1.0)
        return np.sqrt(p * (1 - p) / self.n_shots)


def generate_fringe_data(m: FringeModel, taus, shots: int, rng: np.random.Generator) -> FringeDataset:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = fringe_value(m, taus)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("model leaves [0, 1] on the requested grid")
    counts = rng.binomial(shots, p)
    return FringeDataset(np.asarray(taus, float), counts / shots, np.full(len(p), shots))


def write_csv(data: FringeDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_s", "p0", "n_shots"])
        for t, p, n in zip(data.tau, data.p0, data.n_shots):
            w.writerow([repr(float(t)), repr(float(p)), int(n)])


def read_csv(path) -> FringeDataset:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"tau_s", "p0", "n_shots"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"missing columns: {sorted(missing)}")
        rows = [(float(r["tau_s"]), float(r["p0"]), int(r["n_shots"])) for r in reader]
    tau, p0, n = map(np.array, zip(*rows))
    return FringeDataset(tau, p0, n)


# -- fitting -----------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    params: FringeModel
    std_errors: dict
    residual_norm: float
    initial_residual_norm: float
    converged: bool
    iterations: int
    covariance: np.ndarray = field(repr=False, default=None)


def _model_and_jac(p, t):
    y0, a, w, phi, T = p
    env = np.exp(-((t / T) ** 2))
    c, s = np.cos(w * t + phi), np.sin(w * t + phi)
    f = y0 + a * env * c
    jac = np.column_stack(
        [
            np.ones_like(t),
            env * c,
            -a * env * s * t,
            -a * env * s,
            a * env * c * 2 * t**2 / T**3,
        ]
    )
    return f, jac


def initial_guess(data: FringeDataset) -> FringeModel:
    """Offset from the mean, frequency and phase from the largest peak of the
    discrete spectrum, contrast from the peak height."""
    t = data.tau / _US
    y = data.p0
    y0 = float(np.mean(y))
    dev = y - y0
    dt = float(np.median(np.diff(t)))
    omegas = np.linspace(0.5 * np.pi / (t[-1] - t[0]), np.pi / dt, 4096)
    spec = np.exp(-1j * np.outer(omegas, t)) @ dev
    k = int(np.argmax(np.abs(spec)))
    w = float(omegas[k])
    phi = float(np.angle(spec[k]))
    T = 0.5 * (t[-1] - t[0])
    env = np.exp(-((t / T) ** 2))
    a = float(2 * np.abs(spec[k]) / max(np.sum(env), 1.0))
    a = min(max(a, 0.05), 0.5)
    return FringeModel._from_scaled([y0, a, w, phi, T])


def fit_fringe(
    data: FringeDataset,
    init: FringeModel | None = None,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> FitResult:
    """Weighted Levenberg-Marquardt fit of the fringe model.

    Damping halves after an accepted step and doubles after a rejected one.
    Standard errors are square roots of the diagonal of (J^T W J)^-1 at the
    optimum.
    """
    if len(data) < 5:
        raise ValueError("need at least 5 points")
    t = data.tau / _US
    y = data.p0
    wgt = 1.0 / data.sigma()
    p = (init or initial_guess(data))._scaled()

    def residual(q):
        f, jac = _model_and_jac(q, t)
        return (f - y) * wgt, jac * wgt[:, None]

    r, J = residual(p)
    cost = float(r @ r)
    cost0 = cost
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        H = J.T @ J
        g = J.T @ r
        accepted = False
        while lam < 1e16:
            A = H + lam * np.diag(np.diag(H))
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 2
                continue
            r_new, J_new = residual(p + step)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 2
        if not accepted:
            break
        rel = (cost - cost_new) / max(cost, 1e-300)
        small = np.all(np.abs(step) <= 1e-10 * (np.abs(p) + 1e-10))
        p, r, J, cost = p + step, r_new, J_new, cost_new
        lam = max(lam / 2, 1e-12)
        if rel < tol or small:
            converged = True
            break

    p[4] = abs(p[4])
    p[3] = float(np.angle(np.exp(1j * p[3])))
    if p[1] < 0:  # equivalent parameterization with positive contrast
        p[1] = -p[1]
        p[3] = float(np.angle(np.exp(1j * (p[3] + np.pi))))
    _, J = residual(p)
    try:
        cov_s = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov_s = np.full((5, 5), np.nan)
    scale = np.array([1.0, 1.0, 1.0 / _US, 1.0, _US])
    cov = cov_s * np.outer(scale, scale)
    errs = dict(zip(PARAM_NAMES, np.sqrt(np.clip(np.diag(cov), 0, None))))
    model = FringeModel._from_scaled(p)
    pred = fringe_value(model, data.tau)
    if np.any((pred < -1e-9) | (pred > 1 + 1e-9)):
        warnings.warn("fitted fringe leaves [0, 1] inside the data window", RuntimeWarning)
    return FitResult(
        params=model,
        std_errors=errs,
        residual_norm=float(np.sqrt(cost)),
        initial_residual_norm=float(np.sqrt(cost0)),
        converged=converged,
        iterations=it,
        covariance=cov,
    )
