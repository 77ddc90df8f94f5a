import numpy as np
import pytest

from adaptmeas.errors import CalibrationError
from adaptmeas.readout_sim import (
    PERFECT_TARGETS,
    Mode,
    ReadoutModel,
    ReadoutTargets,
    branch_stats,
    calibrate_readout,
    calibrated_model,
    exact_stats,
    nuclear_coherence_curve,
    qnd_fidelity,
    readout_outcome_fidelity,
    simulate_batch,
    simulate_readout,
)

TOY = ReadoutModel(p_det=0.2, p_flip=0.05, p_dark=0.01, kappa=0.9, c_floor=0.1, max_bins=30)


@pytest.fixture(scope="module")
def cal():
    return calibrated_model()


# -- model and single trajectories -------------------------------------------------


def test_model_validation():
    with pytest.raises(ValueError):
        ReadoutModel(1.2, 0, 0)
    with pytest.raises(ValueError):
        ReadoutModel(0.5, 0, 0, kappa=0)
    with pytest.raises(ValueError):
        ReadoutModel(0.5, 0, 0, max_bins=0)
    m = ReadoutModel(0.5, 0, 0)
    assert m.duration == pytest.approx(100e-6)
    assert m.bins_for(25e-6) == 25
    assert m.bins_for(1e-3) == 100


def test_dark_state_without_dark_counts():
    m = ReadoutModel(0.3, 0.02, 0.0)
    rng = np.random.default_rng(0)
    for mode in Mode:
        rec = simulate_readout(1, m, mode, rng)
        assert rec.outcome == 1 and rec.post_electron == 1
        assert rec.nuclear_coherence_factor == 1.0
        assert rec.stop_bin == m.max_bins


def test_record_invariants():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        e = int(rng.integers(2))
        rec = simulate_readout(e, TOY, Mode.DYNAMICAL_STOP, rng)
        assert (rec.outcome == 0) == (rec.photon_bin is not None)
        if rec.photon_bin is not None:
            assert rec.stop_bin == rec.photon_bin
        else:
            assert rec.stop_bin == TOY.max_bins
        if rec.bright_photon:
            assert rec.post_electron == 0 and not rec.flipped
        assert 0.0 <= rec.nuclear_coherence_factor <= 1.0


def test_perfect_device_fidelities():
    m = ReadoutModel(0.3, 0.0, 0.0)
    for mode in Mode:
        q = qnd_fidelity(m, mode, 10_000, 0)
        assert q.fidelity_0 == q.fidelity_1 == q.fidelity_0_given_photon == q.average_fidelity == 1.0


def test_outcome_fidelity_limits():
    assert readout_outcome_fidelity(ReadoutModel(1.0, 0.0, 0.0), 10_000, 0)[:2] == (1.0, 1.0)
    assert readout_outcome_fidelity(ReadoutModel(0.0, 0.1, 0.0), 10_000, 0)[:2] == (0.0, 1.0)


# -- three implementations agree --------------------------------------------------


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("electron", [0, 1])
def test_scalar_batch_exact_agree(mode, electron):
    n = 20_000
    rng_s = np.random.default_rng(10)
    recs = [simulate_readout(electron, TOY, mode, rng_s) for _ in range(n)]
    s_out = np.array([r.outcome for r in recs])
    s_post = np.array([r.post_electron for r in recs])
    s_coh = np.array([r.nuclear_coherence_factor for r in recs])
    s_stop = np.array([r.stop_bin for r in recs])
    b = simulate_batch(electron, TOY, mode, np.random.default_rng(11), size=n)
    bs = branch_stats(TOY, mode, electron)

    def agree(x, y, mean=None):
        se = np.sqrt((np.var(x) + np.var(y)) / n) + 1e-12
        assert abs(x.mean() - y.mean()) < 5 * se
        if mean is not None:
            assert abs(x.mean() - mean) < 5 * np.sqrt(np.var(x) / n) + 1e-12

    agree(s_out == 0, b.outcome == 0, bs.p0)
    agree(s_post, b.post_electron)
    agree(s_coh, b.coherence)
    agree(s_stop.astype(float), b.stop_bin.astype(float))
    agree(s_coh * (s_out == 0), b.coherence * (b.outcome == 0), bs.coh0)
    agree(s_coh * (s_out == 1), b.coherence * (b.outcome == 1), bs.coh1)
    if electron == 0:
        ex = exact_stats(TOY, mode)
        agree(s_post == 0, b.post_electron == 0, ex.p_post0_given_0)
        agree(s_coh, b.coherence, ex.mean_coherence_0)
        agree(s_stop.astype(float), b.stop_bin.astype(float), ex.mean_stop_bins_0)
        assert ex.p_bright_given_0 == pytest.approx(bs.p0, abs=1e-12)


def test_exact_stats_against_brute_force_enumeration():
    """Enumerate every per-bin event sequence of a 4-bin model exactly."""
    m = ReadoutModel(0.3, 0.2, 0.1, kappa=0.7, c_floor=0.2, max_bins=4)
    pd, pf, pk = m.p_det, m.p_flip, m.p_dark

    def walk(mode, state=0, b=0, seen=False, bright=0, flipped=False, w=1.0):
        if b == m.max_bins:
            c = 0.0 if flipped else max(m.c_floor, m.kappa**bright)
            yield w, seen, state, c, b
            return
        if state == 0:
            for det, wd in ((True, pd), (False, 1 - pd)):
                s2 = seen or det
                if det and mode is Mode.DYNAMICAL_STOP:
                    yield w * wd, True, 0, max(m.c_floor, m.kappa ** (bright + 1)), b + 1
                    continue
                for fl, wf in ((True, pf), (False, 1 - pf)):
                    yield from walk(mode, 1 if fl else 0, b + 1, s2, bright + 1, flipped or fl, w * wd * wf)
        else:
            for det, wd in ((True, pk), (False, 1 - pk)):
                if det and mode is Mode.DYNAMICAL_STOP:
                    yield w * wd, True, 1, 0.0 if flipped else 1.0, b + 1
                    continue
                yield from walk(mode, 1, b + 1, seen or det, bright, flipped, w * wd)

    for mode in Mode:
        paths = list(walk(mode))
        assert sum(p[0] for p in paths) == pytest.approx(1, abs=1e-12)
        ex = exact_stats(m, mode)
        assert ex.p_bright_given_0 == pytest.approx(sum(w for w, s, *_ in paths if s), abs=1e-12)
        assert ex.p_post0_given_0 == pytest.approx(sum(w for w, s, e, *_ in paths if e == 0), abs=1e-12)
        assert ex.mean_coherence_0 == pytest.approx(sum(w * c for w, s, e, c, _ in paths), abs=1e-12)
        assert ex.mean_stop_bins_0 == pytest.approx(sum(w * b for w, *_, b in paths), abs=1e-12)
        bs = branch_stats(m, mode, 0)
        assert bs.coh0 == pytest.approx(sum(w * c for w, s, e, c, _ in paths if s), abs=1e-12)
        assert bs.coh1 == pytest.approx(sum(w * c for w, s, e, c, _ in paths if not s), abs=1e-12)


# -- structural invariants ------------------------------------------------------


@pytest.mark.parametrize("p_det", [0.0, 0.01, 0.2, 1.0])
def test_dynamical_stop_is_never_longer(p_det):
    m = ReadoutModel(p_det, 0.03, 0.001)
    conv = exact_stats(m, Mode.CONVENTIONAL).mean_stop_bins_0
    ds = exact_stats(m, Mode.DYNAMICAL_STOP).mean_stop_bins_0
    assert ds <= conv + 1e-12
    if p_det > 0:
        assert ds < conv


def test_bright_photon_implies_unflipped(cal):
    b = simulate_batch(0, cal, Mode.DYNAMICAL_STOP, np.random.default_rng(4), size=100_000)
    assert np.all(b.post_electron[b.bright_photon] == 0)
    q = qnd_fidelity(cal, Mode.DYNAMICAL_STOP, 100_000, 4)
    assert q.fidelity_0_given_bright_photon == 1.0


def test_outcome_is_detection():
    b = simulate_batch(np.array([0, 1] * 5000), TOY, Mode.CONVENTIONAL, np.random.default_rng(2))
    assert np.all((b.outcome == 0) >= b.bright_photon)


def test_monotonicity_grid():
    """F0 under dynamical stop: non-increasing in p_flip, non-decreasing in p_det."""
    p_dets = [0.02, 0.05, 0.09, 0.15, 0.3]
    p_flips = [0.0, 0.005, 0.017, 0.04, 0.1]
    n = 100_000
    f = np.zeros((5, 5))
    se = np.zeros((5, 5))
    for i, pd in enumerate(p_dets):
        for j, pf in enumerate(p_flips):
            q = qnd_fidelity(ReadoutModel(pd, pf, 1.4e-4), Mode.DYNAMICAL_STOP, n, (i, j))
            f[i, j], se[i, j] = q.fidelity_0, q.se_0
    tol = 5 * np.sqrt(se[:, 1:] ** 2 + se[:, :-1] ** 2) + 1e-12
    assert np.all(f[:, 1:] - f[:, :-1] <= tol)
    tol = 5 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2) + 1e-12
    assert np.all(f[1:] - f[:-1] >= -tol)


@pytest.mark.parametrize("mode", list(Mode))
def test_coherence_curve_non_increasing(cal, mode):
    grid = np.arange(0, 101, 5) * 1e-6
    pts = nuclear_coherence_curve(cal, mode, grid, 100_000, 9)
    assert pts[0].fidelity_x == 1.0
    for a, b in zip(pts, pts[1:]):
        assert b.fidelity_x - a.fidelity_x <= 3 * np.hypot(a.stderr, b.stderr) + 1e-12
    assert all(p.fidelity_z == 1.0 for p in pts)


def test_coherence_curve_rejects_bad_time(cal):
    with pytest.raises(ValueError):
        nuclear_coherence_curve(cal, Mode.CONVENTIONAL, [200e-6], 10, 0)


# -- calibrated observables -------------------------------------------------------


def test_calibrated_parameters(cal):
    assert cal.p_flip == pytest.approx(1 - 0.18**0.01, rel=1e-12)
    assert cal.p_flip == pytest.approx(0.0170, abs=2e-4)
    assert cal.p_dark == pytest.approx(1.41e-4, abs=0.01e-4)


def test_calibrated_monte_carlo(cal):
    n = 100_000
    conv = qnd_fidelity(cal, Mode.CONVENTIONAL, n, 21)
    ds = qnd_fidelity(cal, Mode.DYNAMICAL_STOP, n, 22)
    assert conv.fidelity_0 == pytest.approx(0.18, abs=0.02)
    assert ds.fidelity_0 == pytest.approx(0.86, abs=0.02)
    assert ds.fidelity_1 == pytest.approx(0.996, abs=0.006)
    assert ds.average_fidelity == pytest.approx(0.93, abs=0.01)
    assert ds.fidelity_0_given_photon > 0.99
    out = readout_outcome_fidelity(cal, n, 23)
    assert out.bright_given_0 == pytest.approx(0.853, abs=0.01)
    assert out.dark_given_1 == pytest.approx(0.986, abs=0.005)
    c25 = nuclear_coherence_curve(cal, Mode.CONVENTIONAL, [25e-6], n, 24)[0]
    assert c25.fidelity_x == pytest.approx(0.5, abs=0.03)
    sat = nuclear_coherence_curve(cal, Mode.DYNAMICAL_STOP, [100e-6], n, 25)[0]
    assert sat.fidelity_x == pytest.approx(0.615, abs=0.01)


def test_calibration_residuals_reported():
    res = calibrate_readout()
    assert not res.failed()
    assert set(res.residuals) == set(res.targets)


def test_perfect_device_calibration():
    m = calibrate_readout(PERFECT_TARGETS).model
    assert m.p_flip == 0.0 and m.p_dark == 0.0
    assert m.kappa == 1.0 and m.c_floor == 0.0


def test_infeasible_targets_name_the_constraint():
    with pytest.raises(CalibrationError) as exc:
        calibrate_readout(ReadoutTargets(qnd0_conventional=1.2))
    assert exc.value.constraint == "qnd0_conventional"
    # conventional F0 of 0.9 forces slow flips, incompatible with 0.853 bright detection
    # together with a 0.86 dynamical-stop fidelity and the saturation value
    with pytest.raises(CalibrationError) as exc:
        calibrate_readout(ReadoutTargets(qnd0_conventional=0.9, saturation_dynamical_stop=0.99))
    assert exc.value.constraint in {"qnd0_dynamical_stop", "bright_given_0", "saturation_dynamical_stop",
                                    "half_coherence"}


def test_non_strict_calibration_returns_failures():
    res = calibrate_readout(ReadoutTargets(qnd0_conventional=0.9, saturation_dynamical_stop=0.99), strict=False)
    assert res.failed()


def test_seed_reproducibility(cal):
    a = qnd_fidelity(cal, Mode.DYNAMICAL_STOP, 50_000, 123)
    b = qnd_fidelity(cal, Mode.DYNAMICAL_STOP, 50_000, 123)
    assert a == b
