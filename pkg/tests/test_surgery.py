import math

import numpy as np
import pytest

from rieszlab.errors import DomainError, PreconditionError
from rieszlab.fields import solve_first_eigen
from rieszlab.functionals import PenaltyParams
from rieszlab.geometry import (BallSpec, DumbbellSpec, GridDomain, GridSpec,
                               dilate, domain_from_levelset, make_ball, make_box)
from rieszlab.io import fixture_path, load_domain
from rieszlab.surgery import (NO_TAIL, SliceStats, apply_tail_cut,
                              build_cut_extension, classify_trichotomy,
                              rayleigh_bound_check, rayleigh_quotient,
                              slice_statistics, surgery_sweep, sweep_directions)


@pytest.fixture(scope="module")
def dumbbell():
    d = load_domain(fixture_path("dumbbell_tail.dom"))
    return d, solve_first_eigen(d, 1e-10, "direct")


@pytest.fixture(scope="module")
def square():
    spec = GridSpec.centered(2, 128, 3.2)
    d = make_box(spec, (-0.5, -0.5), (0.5, 0.5))
    return d, solve_first_eigen(d, 1e-10, "direct")


def test_sweep_directions():
    assert sweep_directions(2) == [(0, -1), (0, 1), (1, -1), (1, 1)]
    assert len(sweep_directions(3)) == 6


def test_square_slices(square):
    d, eig = square
    st = slice_statistics(d, eig, (0, -1))
    inside = st.eps_t > 0
    assert np.allclose(st.eps_t[inside], 1.0)
    # |grad u|^2 integrates to 2 pi^2 on every slice of the square mode
    mid = np.flatnonzero(inside)[5:-5]
    assert np.allclose(st.delta_t[mid] / (2 * math.pi ** 2), 1.0, rtol=0.01)
    assert h_sum(st.eps_t, st.h) == pytest.approx(d.measure)
    assert h_sum(st.delta_t, st.h) == pytest.approx(eig.lambda1, rel=1e-8)
    assert np.allclose(np.diff(st.m_t), st.h * st.eps_t[:-1])
    assert np.allclose(np.diff(st.phi_t), st.h * st.delta_t[:-1])
    assert all(classify_trichotomy(st, st.t[i]) == "cond1" for i in mid)
    assert np.nanmax(st.mu_ratio()) < 0.2


def h_sum(x, h):
    return float(np.sum(x) * h)


def test_signed_coordinates(square):
    d, eig = square
    lo = slice_statistics(d, eig, (0, -1))
    hi = slice_statistics(d, eig, (0, 1))
    # the first occupied slice starts at the near face in both orientations
    assert lo.t[np.flatnonzero(lo.eps_t)[0]] == pytest.approx(-0.5)
    assert hi.t[np.flatnonzero(hi.eps_t)[0]] == pytest.approx(-0.5)
    assert np.allclose(lo.eps_t, hi.eps_t[::-1])


def test_empty_tail_cut_is_identity(square):
    d, eig = square
    ext = build_cut_extension(d, eig, -1.4, (0, -1))
    assert ext.cells == 0 and np.array_equal(ext.domain.mask, d.mask)
    assert rayleigh_quotient(d, eig.u.values) == pytest.approx(eig.lambda1, rel=1e-9)
    assert rayleigh_bound_check(d, eig, -1.4, (0, -1)).ok


def test_cut_through_square(square):
    d, eig = square
    ext = build_cut_extension(d, eig, -0.3, (0, -1))
    cut = ext.domain.mask & ~ext.cylinder
    x = d.spec.centers()[0]
    assert not np.any(cut & (x < -0.3))
    assert np.any(ext.cylinder) and not np.any(ext.cylinder & (x > -0.3))
    rc = rayleigh_bound_check(d, eig, -0.3, (0, -1))
    assert rc.ok and rc.lambda_tilde <= rc.rq_tilde * (1 + 1e-6)


def test_trichotomy_synthetic():
    st = SliceStats((0, -1), np.arange(4.0), np.array([2.0, 0.1, 0.1, 0.01]),
                    np.array([0.1, 0.1, 0.01, 0.01]), np.zeros(4),
                    np.array([0.0, 0.05, 5.0, 0.5]), np.zeros(4), 1.0, 2)
    assert classify_trichotomy(st, 0.0) == "cond1"
    assert classify_trichotomy(st, 1.0) == "cond2"     # 0.05 <= 10 * 0.2 * 0.1
    assert classify_trichotomy(st, 2.0) == "cond3"     # 5 > 10 * 0.11 * 0.1
    assert classify_trichotomy(st, 3.0, C4=10) == "cond3"
    assert classify_trichotomy(st, 3.0, C4=1e4) == "cond2"
    with pytest.raises(DomainError):
        classify_trichotomy(st, 0.0, C4=0)


def test_c4_monotone(dumbbell):
    d, eig = dumbbell
    st = slice_statistics(d, eig, (0, -1))
    sets = []
    for c in (5, 10, 20):
        sets.append({i for i in range(len(st.t)) if st.eps_t[i] > 0
                     and classify_trichotomy(st, st.t[i], c) == "cond3"})
    assert sets[2] <= sets[1] <= sets[0]


def test_dumbbell_tail_cut(dumbbell):
    d, eig = dumbbell
    r = apply_tail_cut(d, eig, (0, -1))
    assert r.label == "cond3" and r.accepted
    assert r.lambda_after <= r.lambda_before
    assert r.F_tilde_after < r.F_tilde_before
    assert r.lambda_tilde <= r.rq_tilde * (1 + 1e-6)
    assert r.rescaled.volume == pytest.approx(1.0, abs=0.02)
    # the cut sits in the tail, left of the large lobe
    assert r.t_star < -0.45


def test_dumbbell_rayleigh_every_level(dumbbell):
    d, eig = dumbbell
    st = slice_statistics(d, eig, (0, -1))
    occ = np.flatnonzero(st.eps_t > 0)
    for i in occ[4:60:8]:
        assert rayleigh_bound_check(d, eig, st.t[i], (0, -1), stats=st).ok


def test_ball_no_tail():
    spec = GridSpec.centered(2, 96, 1.6)
    b = make_ball(spec, BallSpec.from_measure((0.0, 0.0), 1.0))
    eig = solve_first_eigen(b, 1e-10, "direct")
    for dvec in sweep_directions(2):
        r = apply_tail_cut(b, eig, dvec)
        assert r.label == NO_TAIL and not r.accepted
        assert r.rescaled is b


def test_preconditions(dumbbell):
    d, eig = dumbbell
    with pytest.raises(DomainError):
        apply_tail_cut(d, eig, (2, 1))
    big = dilate(d, 1.1, d.centroid())
    with pytest.raises(PreconditionError):
        apply_tail_cut(big, eig, (0, -1))
    spec = GridSpec.centered(2, 96, 3.0)
    x, y = spec.centers()
    r = math.sqrt(0.5 / math.pi)
    two = domain_from_levelset(spec, np.minimum(np.hypot(x + 0.6, y) - r,
                                                np.hypot(x - 0.6, y) - r))
    with pytest.raises(PreconditionError):
        apply_tail_cut(two, eig, (0, -1))


def test_sweep_reduces_diameter(dumbbell):
    d, _ = dumbbell
    r = surgery_sweep(d)
    assert r.diameter_final <= 0.75 * r.diameter_initial
    assert r.F_tilde_final <= r.F_tilde_initial
    assert set(r.c4_sensitivity) == {5.0, 10.0, 20.0}
    accepted = [x for x in r.log if x.accepted]
    assert accepted and all(x.lambda_tilde <= x.rq_tilde * (1 + 1e-6) for x in accepted)


def test_cross_fixture():
    # plus-shaped set: thin arms in every direction around a disk
    spec = GridSpec.centered(2, 192, 3.6)
    x, y = spec.centers()
    arm = lambda u, v: np.maximum(np.abs(v) - 0.03, np.abs(u) - 1.5)
    # disk area plus the four arms outside it is close to one
    phi = np.minimum.reduce([np.hypot(x, y) - 0.4912, arm(x, y), arm(y, x)])
    d = domain_from_levelset(spec, phi)
    assert d.volume == pytest.approx(1.0, abs=0.02)
    r = surgery_sweep(d, sensitivity=(10.0,))
    assert sum(x.accepted for x in r.log) >= 2
    assert r.diameter_final < r.diameter_initial
    assert r.lambda_final <= r.lambda_initial
