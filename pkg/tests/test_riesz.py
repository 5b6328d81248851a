import math

import numpy as np
import pytest
from scipy import integrate

from rieszlab.errors import DomainError, RegularityError
from rieszlab.functionals import ball_riesz_energy
from rieszlab.geometry import (BallSpec, GridDomain, GridSpec, dilate, make_ball,
                               make_box, make_ellipse, translate_cells, union)
from rieszlab.riesz import (c0_constant, cell_pair_mean, kernel_table,
                            km_difference_bound_check, riesz_energy,
                            riesz_energy_bruteforce, riesz_potential,
                            riesz_potential_at, riesz_potential_gradient)


def tent_mean_2d(o, beta):
    """int over [-1,1]^2 of (1-|z1|)(1-|z2|) |z + o|^beta, quadrants split at 0."""
    def f(y, x):
        return (1 - abs(x)) * (1 - abs(y)) * (math.hypot(x + o[0], y + o[1]) + 1e-300) ** beta
    tot = 0.0
    for xa, xb in ((-1, 0), (0, 1)):
        for ya, yb in ((-1, 0), (0, 1)):
            tot += integrate.dblquad(f, xa, xb, ya, yb, epsabs=1e-12, epsrel=1e-11)[0]
    return tot


@pytest.mark.parametrize("o", [(0, 0), (1, 0), (1, 1)])
@pytest.mark.parametrize("beta", [-0.5, -1.0])
def test_cell_pair_mean_vs_dblquad(o, beta):
    assert cell_pair_mean(o, beta) == pytest.approx(tent_mean_2d(o, beta), rel=1e-6)


@pytest.mark.parametrize("o", [(0, 0), (1, 0), (1, -1), (0, 1, 1), (0, 0, 0)])
def test_cell_pair_mean_exact_moments(o):
    # E|x - y|^2 = sum_i (o_i^2 + 1/6) for uniform points in unit cells
    assert cell_pair_mean(o, 2.0) == pytest.approx(sum(x * x + 1 / 6 for x in o), rel=1e-12)
    assert cell_pair_mean(o, 0.0) == pytest.approx(1.0, rel=1e-12)


def test_kernel_table_invariants():
    spec = GridSpec.centered(2, 16, 1.0)
    tab = kernel_table(spec, 1.5)
    assert all(v > 0 for v in tab.near.values())
    far = np.array([[3, 0], [2, 2], [5, -4]])
    assert np.allclose(tab.kernel(far), np.linalg.norm(far * spec.h, axis=1) ** -0.5,
                       rtol=1e-14)
    assert tab.self_cell == pytest.approx(spec.h ** -0.5 * cell_pair_mean((0, 0), -0.5))
    with pytest.raises(DomainError):
        kernel_table(spec, 2.0)


@pytest.mark.parametrize("N,n", [(2, 8), (2, 16), (3, 8), (3, 16)])
def test_fft_matches_bruteforce(N, n, rng):
    spec = GridSpec.centered(N, n, 1.0)
    for alpha in (0.5, 1.5):
        mask = rng.random(spec.shape) < 0.4
        dom = GridDomain(spec, mask)
        a = riesz_energy(dom, alpha)
        b = riesz_energy_bruteforce(dom, alpha)
        assert abs(a - b) <= 1e-12 * abs(b)


def test_empty_domain():
    spec = GridSpec.centered(2, 16, 1.0)
    res = riesz_potential(GridDomain(spec, np.zeros(spec.shape, bool)), 1.0)
    assert res.energy == 0 and np.all(res.v == 0)


def test_disk_energy_closed_form():
    # int int_{|x|,|y|<1} |x-y|^(-1) = 16 pi / 3 since int_0^1 r E(r) dr = 2/3
    d = make_ball(GridSpec.centered(2, 256, 2.2), BallSpec((0, 0), 1.0))
    V = riesz_energy(d, 1.0) * (math.pi / d.measure) ** 1.5
    assert V == pytest.approx(16 * math.pi / 3, rel=3e-3)
    assert ball_riesz_energy(2, 1.0, math.pi) == pytest.approx(16 * math.pi / 3, rel=1e-10)


def test_ball_reference_3d_exact():
    R = 0.7
    m = 4 / 3 * math.pi * R ** 3
    assert ball_riesz_energy(3, 2.0, m) == pytest.approx(32 * math.pi ** 2 / 15 * R ** 5,
                                                         rel=1e-10)


def test_energy_scaling_and_center_potential():
    spec = GridSpec.centered(2, 256, 4.4)
    b = make_ball(spec, BallSpec((0, 0), 1.0))
    b2 = dilate(b, 2.0, (0, 0))
    a = 1.5
    r = riesz_energy(b2, a) / riesz_energy(b, a)
    assert r == pytest.approx(2 ** (2 + a), rel=0.03)
    v1 = riesz_potential_at(b, a, (0.0, 0.0))
    v2 = riesz_potential_at(b2, a, (0.0, 0.0))
    assert v2 / v1 == pytest.approx(2 ** a, rel=0.02)


def test_ball_beats_ellipse():
    spec = GridSpec.centered(2, 128, 3.0)
    b = make_ball(spec, BallSpec.from_measure((0, 0), 1.0))
    e = make_ellipse(spec, (math.sqrt(2 / math.pi), math.sqrt(1 / (2 * math.pi))))
    nb = riesz_energy(b, 1.5) * b.measure ** -1.75
    ne = riesz_energy(e, 1.5) * e.measure ** -1.75
    assert nb > ne


def test_far_pair_expansion():
    spec = GridSpec.centered(2, 256, 12.0)
    r = 0.25
    a = make_ball(spec, BallSpec((-5.0, 0), r))
    b = make_ball(spec, BallSpec((5.0, 0), r))
    alpha = 1.0
    V1, V2 = riesz_energy(a, alpha), riesz_energy(b, alpha)
    m1, m2 = a.measure, b.measure
    approx = V1 + V2 + 2 * m1 * m2 / 10.0 ** (2 - alpha)
    assert riesz_energy(union(a, b), alpha) == pytest.approx(approx, rel=0.05)


def test_monotone_under_cell_addition(rng):
    spec = GridSpec.centered(2, 16, 1.0)
    mask = rng.random(spec.shape) < 0.3
    V0 = riesz_energy(GridDomain(spec, mask), 1.2)
    mask2 = mask.copy()
    mask2[np.argwhere(~mask)[0][0], np.argwhere(~mask)[0][1]] = True
    assert riesz_energy(GridDomain(spec, mask2), 1.2) > V0


def test_gradient_ball_center():
    spec = GridSpec.centered(2, 64, 2.4)
    b = make_ball(spec, BallSpec((0, 0), 1.0))
    g = riesz_potential_gradient(b, 1.5, (0.0, 0.0))
    assert np.linalg.norm(g) < 1e-6


@pytest.mark.parametrize("N", [2, 3])
def test_gradient_vs_finite_difference(N, rng):
    n = 48 if N == 2 else 14
    spec = GridSpec.centered(N, n, 2.4)
    dom = make_ellipse(spec, (0.8, 0.5) + ((0.6,) if N == 3 else ()))
    alpha = 1.5
    d = 1e-5
    for _ in range(5 if N == 2 else 3):
        x = rng.uniform(-1.0, 1.0, N)
        g = riesz_potential_gradient(dom, alpha, x)
        fd = np.array([(riesz_potential_at(dom, alpha, x + d * e)
                        - riesz_potential_at(dom, alpha, x - d * e)) / (2 * d)
                       for e in np.eye(N)])
        assert np.linalg.norm(g - fd) <= 0.01 * max(np.linalg.norm(fd), 1e-3)


def test_gradient_translation_equivariance():
    spec = GridSpec.centered(2, 48, 2.4)
    dom = make_ellipse(spec, (0.7, 0.4))
    sh = translate_cells(dom, (3, -2))
    x = np.array([0.31, -0.17])
    c = np.array([3, -2]) * spec.h
    assert np.allclose(riesz_potential_gradient(dom, 1.5, x),
                       riesz_potential_gradient(sh, 1.5, x + c), rtol=1e-10, atol=1e-12)


def test_gradient_regularity_guard():
    spec = GridSpec.centered(2, 32, 2.4)
    b = make_ball(spec, BallSpec((0, 0), 1.0))
    with pytest.raises(RegularityError):
        riesz_potential_gradient(b, 1.0, (0.0, 0.0))


def test_c0_constant():
    assert c0_constant(2, 1.0) == pytest.approx(2 * math.sqrt(math.pi), rel=1e-12)
    w3 = 4 / 3 * math.pi
    r = (3 / (4 * math.pi)) ** (1 / 3)
    assert c0_constant(3, 2.0) == pytest.approx(3 * w3 * r * r / 2, rel=1e-12)
    assert c0_constant(2, 1e-320) == math.inf


def test_km_bound(rng):
    spec = GridSpec.centered(2, 64, 2.4)
    b = make_ball(spec, BallSpec.from_measure((0, 0), 1.0))
    lhs, rhs, ok = km_difference_bound_check(b, b, 1.5)
    assert lhs == 0 and rhs == 0 and ok
    half = GridDomain(spec, b.mask & (spec.centers()[0] < 0))
    assert km_difference_bound_check(half, b, 1.5)[2]
    for _ in range(50):
        flip = rng.random(spec.shape) < 0.02
        other = GridDomain(spec, b.mask ^ (flip & b.boundary_mask()))
        assert km_difference_bound_check(b, other, float(rng.uniform(0.3, 1.9)))[2]


def test_kernel_cache(tmp_path, monkeypatch):
    from rieszlab import riesz as rz
    monkeypatch.setenv(rz.CACHE_ENV, str(tmp_path))
    rz._TABLES.clear() if hasattr(rz, "_TABLES") else None
    spec = GridSpec.centered(2, 8, 1.0)
    t1 = kernel_table(spec, 0.77)
    assert list(tmp_path.iterdir())
    if hasattr(rz, "_TABLES"):
        rz._TABLES.clear()
    t2 = kernel_table(spec, 0.77)
    assert t1.near == t2.near
