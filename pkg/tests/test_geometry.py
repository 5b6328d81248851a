import math

import numpy as np
import pytest
from scipy import integrate

from rieszlab.errors import (BoundsError, ConstructionError, DomainError,
                             PreconditionError, ResolutionError,
                             SpecMismatchError)
from rieszlab.geometry import (BallSpec, DumbbellSpec, GridDomain, GridSpec,
                               NecklaceSpec, StarBoundary, check_internal_ball_condition,
                               connected_components, diameter, dilate,
                               fraenkel_asymmetry, hausdorff_boundary_distance,
                               make_ball, make_box, make_dumbbell_tail,
                               make_ellipse, make_l_shape, make_necklace,
                               measure, rasterize_star, rescale_to_measure,
                               symmetric_difference_measure, translate_cells,
                               union)


def test_gridspec_invariants():
    with pytest.raises(DomainError):
        GridSpec(2, 4, 0.1)
    with pytest.raises(DomainError):
        GridSpec(2, 16, -0.1)
    s = GridSpec.centered(2, 16, 2.0)
    assert s.side == pytest.approx(2.0)
    assert np.allclose(s.center, 0)


def test_rasterized_circle_measure():
    spec = GridSpec.centered(2, 128, 3.0)
    dom = rasterize_star(StarBoundary(1.0), spec)
    assert abs(measure(dom) - math.pi) <= 2 * spec.h * 2 * math.pi
    assert abs(measure(dom) - math.pi) <= 0.15


def test_star_measure_against_quadrature():
    b = StarBoundary(1.0, (0, 0), [0, 0.2])
    dom = rasterize_star(b, GridSpec.centered(2, 128, 3.0))
    th = np.linspace(0, 2 * np.pi, 10001)
    ref = 0.5 * integrate.trapezoid(b.radius(th) ** 2, th)
    assert abs(measure(dom) - ref) / ref < 0.03
    assert b.area() == pytest.approx(ref, rel=1e-8)


def test_star_negative_radius_rejected():
    with pytest.raises(PreconditionError):
        StarBoundary(1.0, (0, 0), [0, -1.5])


def test_star_outside_box():
    with pytest.raises(BoundsError):
        rasterize_star(StarBoundary(2.0), GridSpec.centered(2, 64, 3.0))


def test_measure_trivial():
    spec = GridSpec(3, 10, 0.1, (0, 0, 0))
    assert measure(GridDomain(spec, np.zeros(spec.shape, bool))) == 0
    assert measure(GridDomain(spec, np.ones(spec.shape, bool))) == pytest.approx(1.0)


def test_rescale_to_measure():
    spec = GridSpec.centered(2, 128, 4.0)
    d = make_ball(spec, BallSpec.from_measure((0, 0), 1.0))
    d4 = rescale_to_measure(d, 4.0, (0, 0))
    assert abs(measure(d4) - 4) / 4 < 0.02
    assert diameter(d4) == pytest.approx(2 * diameter(d), abs=3 * spec.h)
    same = rescale_to_measure(d, measure(d), (0, 0))
    assert np.count_nonzero(same.mask ^ d.mask) <= np.count_nonzero(d.boundary_mask())
    with pytest.raises(DomainError):
        rescale_to_measure(d, 0.0)


def test_rescale_dumbbell():
    spec = GridSpec.centered(2, 192, 4.0)
    d = make_dumbbell_tail(spec, DumbbellSpec((0.35, 0.3), 1.0, 0.1))
    d = rescale_to_measure(d, 0.8)
    assert abs(measure(d) - 0.8) / 0.8 < 0.02
    d1 = rescale_to_measure(d, 1.0)
    assert 0.98 <= measure(d1) <= 1.02


def test_symmetric_difference():
    spec = GridSpec.centered(2, 128, 3.0)
    a = make_ball(spec, BallSpec((0, 0), 1.0))
    assert symmetric_difference_measure(a, a) == 0
    b = translate_cells(a, (1, 0))
    h = spec.h
    # two unit disks at distance h: |A delta B| = 2(pi - lens)
    d = h
    lens = 2 * math.acos(d / 2) - d / 2 * math.sqrt(4 - d * d)
    ref = 2 * (math.pi - lens)
    assert symmetric_difference_measure(a, b) == pytest.approx(ref, rel=0.1)
    c = translate_cells(make_ball(spec, BallSpec((-0.9, 0), 0.3)), (0, 0))
    e = make_ball(spec, BallSpec((0.9, 0), 0.3))
    assert symmetric_difference_measure(c, e) == pytest.approx(measure(c) + measure(e))
    other = make_ball(GridSpec.centered(2, 64, 3.0), BallSpec((0, 0), 1.0))
    with pytest.raises(SpecMismatchError):
        symmetric_difference_measure(a, other)


def test_symdiff_identity(rng):
    spec = GridSpec(2, 16, 0.1, (0, 0))
    for _ in range(10):
        a = GridDomain(spec, rng.random(spec.shape) < 0.5)
        b = GridDomain(spec, rng.random(spec.shape) < 0.5)
        inter = np.count_nonzero(a.mask & b.mask) * spec.cell_volume
        assert symmetric_difference_measure(a, b) == pytest.approx(
            measure(a) + measure(b) - 2 * inter)


def test_asymmetry_ball():
    spec = GridSpec.centered(2, 128, 1.6)
    d = make_ball(spec, BallSpec.from_measure((0.05, -0.03), 1.0))
    A, ball = fraenkel_asymmetry(d)
    per = 2 * math.sqrt(math.pi)
    assert 0 <= A <= 4 * spec.h * per / measure(d)


def test_asymmetry_two_lobes():
    spec = GridSpec.centered(2, 128, 5.0)
    r = math.sqrt(0.5 / math.pi)
    a = make_ball(spec, BallSpec((-1.6, 0), r))
    b = make_ball(spec, BallSpec((1.6, 0), r))
    A, _ = fraenkel_asymmetry(union(a, b))
    assert A == pytest.approx(1.0, abs=0.05)


def test_asymmetry_ellipse_matches_exhaustive():
    spec = GridSpec.centered(2, 64, 2.4)
    d = make_ellipse(spec, (math.sqrt(2 / math.pi), math.sqrt(1 / (2 * math.pi))))
    A, _ = fraenkel_asymmetry(d)
    Ax, _ = fraenkel_asymmetry(d, exhaustive=True)
    assert A > 0.1
    assert abs(A - Ax) < 0.02
    assert 0 <= A < 2


def test_hausdorff():
    spec = GridSpec.centered(2, 128, 3.0)
    a = make_ball(spec, BallSpec((0, 0), 1.0))
    b = make_ball(spec, BallSpec((0, 0), 1.2))
    assert hausdorff_boundary_distance(a, a) == 0
    assert hausdorff_boundary_distance(a, b) == pytest.approx(0.2, abs=2 * spec.h)
    spike = make_box(spec, (0.9, -0.03), (1.3, 0.03))
    assert hausdorff_boundary_distance(a, union(a, spike)) == pytest.approx(0.3, abs=2 * spec.h)
    with pytest.raises(DomainError):
        hausdorff_boundary_distance(a, GridDomain(spec, np.zeros(spec.shape, bool)))


def test_necklace_constructions():
    spec = GridSpec.centered(2, 256, 3.0)
    one = make_necklace(spec, NecklaceSpec.from_measure(1, 1.0, 2))
    ball = make_ball(spec, BallSpec.from_measure((0, 0), 1.0))
    assert np.array_equal(one.mask, ball.mask)
    neck = NecklaceSpec.from_measure(4, 1.0, 2, q=None)
    assert neck.r == pytest.approx(math.sqrt(1 / (4 * math.pi)), rel=1e-12)
    assert neck.length() == pytest.approx(2.2568, abs=1e-4)
    d = make_necklace(spec, neck)
    assert connected_components(d) == 1
    assert diameter(d) == pytest.approx(8 * neck.r, abs=2 * spec.h)
    two = NecklaceSpec.from_measure(2, 1.0, 2, q=10 * math.sqrt(1 / (2 * math.pi)))
    d2 = make_necklace(GridSpec.centered(2, 256, 8.0), two)
    assert abs(measure(d2) - 1) < 0.02
    assert connected_components(d2) == 2
    with pytest.raises(ConstructionError):
        NecklaceSpec(3, 0.2, 0.3)


def test_necklace_separated_components():
    spec = GridSpec.centered(2, 256, 4.0)
    neck = NecklaceSpec.from_measure(3, 1.0, 2)
    neck = NecklaceSpec.from_measure(3, 1.0, 2, q=2 * neck.r + 3 * spec.h)
    assert connected_components(make_necklace(spec, neck)) == 3


def test_internal_ball_condition():
    spec = GridSpec.centered(2, 128, 2.6)
    ball = make_ball(spec, BallSpec((0, 0), 1.0))
    assert check_internal_ball_condition(ball, 0.5)
    assert check_internal_ball_condition(ball, 1.0)
    sq = make_box(spec, (-1, -1), (1, 1))
    assert check_internal_ball_condition(sq, 0.5)
    slab = make_box(spec, (-1, -0.1), (1, 0.1))
    assert not check_internal_ball_condition(slab, 0.15)
    L = make_l_shape(spec, 2.0, 0.5, corner=(-1, -1))
    assert check_internal_ball_condition(L, 0.2)
    assert not check_internal_ball_condition(L, 0.3)
    with pytest.raises(ResolutionError):
        check_internal_ball_condition(ball, spec.h)


def test_diameter():
    spec = GridSpec.centered(2, 128, 3.0)
    assert diameter(make_ball(spec, BallSpec((0, 0), 1.0))) == pytest.approx(2, abs=2 * spec.h)
    m = np.zeros(spec.shape, bool)
    m[64, 64] = True
    assert diameter(GridDomain(spec, m)) <= spec.h * math.sqrt(2)


def test_dilation_scales_diameter():
    spec = GridSpec.centered(2, 128, 4.0)
    d = make_ellipse(spec, (0.6, 0.3))
    d2 = dilate(d, 1.5, (0, 0))
    assert diameter(d2) == pytest.approx(1.5 * diameter(d), abs=2 * spec.h)


def test_dumbbell_tail_geometry():
    spec = GridSpec.centered(2, 256, 4.0)
    d = make_dumbbell_tail(spec, DumbbellSpec((0.45, 0.25), 1.2, 0.1, 1.2, 0.06,
                                              center=(0.55, 0.0)))
    assert connected_components(d) == 1
    xs = d.points()[:, 0]
    assert xs.min() == pytest.approx(0.55 - 0.6 - 0.45 - 1.2, abs=2 * spec.h)


def test_3d_cube_and_ball():
    spec = GridSpec.centered(3, 32, 2.6)
    b = make_ball(spec, BallSpec((0, 0, 0), 1.0))
    assert measure(b) == pytest.approx(4 / 3 * math.pi, rel=0.03)
    assert b.volume == pytest.approx(4 / 3 * math.pi, rel=0.005)
