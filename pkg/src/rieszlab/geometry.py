"""Discrete domains on uniform Cartesian grids.

A domain is a boolean occupancy mask (cell occupied iff its center lies in
the set).  Domains built from an analytic description additionally carry a
level-set array ``phi`` (negative inside) sampled at cell centers; the
solvers use it to locate the boundary between a cell center and its
exterior neighbour.  Mask-only domains place the boundary on the cell face.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist

from .errors import (BoundsError, ConstructionError, DomainError,
                     PreconditionError, ResolutionError, SpecMismatchError)


def unit_ball_volume(N):
    """Volume omega_N of the unit ball in R^N."""
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


def unit_measure_radius(N, measure=1.0):
    return (measure / unit_ball_volume(N)) ** (1.0 / N)


# --------------------------------------------------------------------------
# grid and domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Cubic box of ``n`` cells per axis with spacing ``h``.

    ``origin`` is the lower corner of the box; cell ``i`` along an axis has
    center ``origin + (i + 1/2) h``.
    """

    dim: int
    n: int
    h: float
    origin: tuple = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise DomainError("dimension must be 2 or 3")
        if int(self.n) != self.n or self.n < 8:
            raise DomainError("cells_per_axis must be an integer >= 8")
        if not self.h > 0:
            raise DomainError("spacing must be positive")
        origin = self.origin
        if origin is None:
            origin = (-0.5 * self.n * self.h,) * self.dim
        origin = tuple(float(o) for o in np.broadcast_to(origin, (self.dim,)))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "origin", origin)

    @classmethod
    def centered(cls, dim, n, side, center=None):
        """Box of the given side length centered at ``center`` (default 0)."""
        h = side / n
        c = np.zeros(dim) if center is None else np.asarray(center, float)
        return cls(dim, n, h, tuple(c - side / 2))

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def side(self):
        return self.n * self.h

    @property
    def cell_volume(self):
        return self.h ** self.dim

    @property
    def center(self):
        return np.asarray(self.origin) + self.side / 2

    def axis_centers(self):
        return [o + (np.arange(self.n) + 0.5) * self.h for o in self.origin]

    def centers(self):
        """Cell-center coordinate arrays, one per axis (``ij`` indexing)."""
        return np.meshgrid(*self.axis_centers(), indexing="ij")

    def index_to_point(self, idx):
        idx = np.asarray(idx, float)
        return np.asarray(self.origin) + (idx + 0.5) * self.h

    def contains_box(self, lo, hi, margin=None):
        """True if the box [lo, hi] lies inside with a margin (default h)."""
        m = self.h if margin is None else margin
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        o = np.asarray(self.origin)
        return bool(np.all(lo >= o + m) and np.all(hi <= o + self.side - m))


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Occupancy mask on a :class:`GridSpec`, optionally with a level set."""

    spec: GridSpec
    mask: np.ndarray
    phi: np.ndarray = None
    _key: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != self.spec.shape:
            raise SpecMismatchError(
                f"mask shape {mask.shape} does not match grid {self.spec.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if self.phi is not None:
            phi = np.array(self.phi, dtype=float)
            if phi.shape != mask.shape:
                raise SpecMismatchError("level set shape does not match grid")
            if not np.array_equal(phi < 0, mask):
                raise ConstructionError("level set sign disagrees with mask")
            phi.setflags(write=False)
            object.__setattr__(self, "phi", phi)

    @property
    def dim(self):
        return self.spec.dim

    @property
    def h(self):
        return self.spec.h

    @property
    def cell_count(self):
        return int(np.count_nonzero(self.mask))

    @property
    def measure(self):
        return self.cell_count * self.spec.cell_volume

    @property
    def volume(self):
        """Sub-cell volume estimate consistent with the solvers' boundary.

        Equals ``measure`` for mask-only domains; with a level set, each
        cell near the boundary contributes the fraction of the cell cut by
        the tangent plane of the level set.
        """
        if self.phi is None:
            return self.measure
        if len(self._key) < 2:
            self.key()
            self._key.append(float(cell_fractions(self.phi, self.h).sum())
                             * self.spec.cell_volume)
        return self._key[1]

    def is_empty(self):
        return self.cell_count == 0

    def key(self):
        """Content hash used as a cache key."""
        if not self._key:
            d = hashlib.sha1()
            d.update(repr((self.spec.dim, self.spec.n, self.spec.h,
                           self.spec.origin)).encode())
            d.update(np.packbits(self.mask).tobytes())
            if self.phi is not None:
                d.update(self.phi.tobytes())
            self._key.append(d.hexdigest())
        return self._key[0]

    def without_levelset(self):
        return GridDomain(self.spec, self.mask)

    def points(self):
        """Centers of occupied cells, shape (M, N)."""
        idx = np.argwhere(self.mask)
        return self.spec.index_to_point(idx)

    def centroid(self):
        if self.is_empty():
            raise DomainError("empty domain has no centroid")
        return self.points().mean(axis=0)

    def boundary_mask(self):
        return boundary_mask(self.mask)

    def boundary_points(self):
        return self.spec.index_to_point(np.argwhere(self.boundary_mask()))


def _uniform_sum_cdf(x, a):
    """P(sum_i a_i U_i <= x) for independent U_i ~ U(-1/2, 1/2), a_i > 0."""
    N = a.shape[-1]
    x = x + 0.5 * a.sum(axis=-1)
    acc = np.zeros_like(x)
    for eps in np.ndindex(*(2,) * N):
        e = np.asarray(eps)
        t = np.maximum(x - (a * e).sum(axis=-1), 0.0)
        acc += (-1) ** e.sum() * t ** N
    return acc / (math.factorial(N) * np.prod(a, axis=-1))


def cell_fractions(phi, h):
    """Occupied fraction of each cell from the plane through the cell
    center with normal grad(phi) and signed offset phi/|grad phi|."""
    N = phi.ndim
    g = np.stack(np.gradient(phi, h), axis=-1)
    gn = np.linalg.norm(g, axis=-1)
    frac = (phi < 0).astype(float)
    d = phi / np.where(gn > 0, gn, 1.0)
    band = (np.abs(d) < 0.5 * math.sqrt(N) * h) & (gn > 0)
    if band.any():
        a = np.abs(g[band]) / gn[band, None]
        a = np.maximum(a, 0.02)
        a = a / np.linalg.norm(a, axis=-1, keepdims=True)
        frac[band] = np.clip(_uniform_sum_cdf(-d[band] / h, a), 0.0, 1.0)
    return frac


def boundary_mask(mask):
    """Occupied cells with at least one unoccupied face neighbour.

    Cells outside the box count as unoccupied.
    """
    p = np.pad(mask, 1, constant_values=False)
    core = tuple(slice(1, -1) for _ in range(mask.ndim))
    interior = np.ones_like(mask)
    for ax in range(mask.ndim):
        for s in (-1, 1):
            interior &= np.roll(p, s, axis=ax)[core]
    return mask & ~interior


# --------------------------------------------------------------------------
# analytic shape descriptions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BallSpec:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")
        object.__setattr__(self, "center",
                           tuple(float(c) for c in np.ravel(self.center)))

    @property
    def dim(self):
        return len(self.center)

    @property
    def measure(self):
        return unit_ball_volume(self.dim) * self.radius ** self.dim

    @classmethod
    def from_measure(cls, center, measure):
        center = tuple(np.ravel(center))
        return cls(center, unit_measure_radius(len(center), measure))


@dataclass(frozen=True)
class StarBoundary:
    """Planar star-shaped boundary r(theta) = R (1 + phi(theta)).

    ``a[k-1]``, ``b[k-1]`` are the cosine and sine coefficients of mode k.
    """

    R: float
    center: tuple = (0.0, 0.0)
    a: tuple = ()
    b: tuple = ()

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError("base radius must be positive")
        a = np.atleast_1d(np.asarray(self.a, float))
        b = np.atleast_1d(np.asarray(self.b, float))
        K = max(len(a), len(b), 1)
        a = np.pad(a, (0, K - len(a)))
        b = np.pad(b, (0, K - len(b)))
        object.__setattr__(self, "a", tuple(a.tolist()))
        object.__setattr__(self, "b", tuple(b.tolist()))
        c = tuple(float(x) for x in np.ravel(self.center))
        if len(c) != 2:
            raise DomainError("star boundaries are planar")
        object.__setattr__(self, "center", c)
        th = np.linspace(0, 2 * np.pi, max(16 * K, 64), endpoint=False)
        if np.any(self.radius(th) <= 0):
            raise PreconditionError("radius function is not positive")

    @property
    def max_mode(self):
        return len(self.a)

    @property
    def dim(self):
        return 2

    def phi(self, theta):
        theta = np.asarray(theta, float)
        out = np.zeros_like(theta)
        for k in range(1, self.max_mode + 1):
            ak, bk = self.a[k - 1], self.b[k - 1]
            if ak:
                out += ak * np.cos(k * theta)
            if bk:
                out += bk * np.sin(k * theta)
        return out

    def radius(self, theta):
        return self.R * (1.0 + self.phi(theta))

    def area(self):
        """Exact enclosed area from the Fourier coefficients."""
        a = np.asarray(self.a)
        b = np.asarray(self.b)
        return math.pi * self.R ** 2 * (1.0 + 0.5 * float(a @ a + b @ b))

    def max_radius(self, samples=None):
        th = np.linspace(0, 2 * np.pi, samples or max(64 * self.max_mode, 256),
                         endpoint=False)
        return float(self.radius(th).max())

    def with_coefficients(self, a=None, b=None, R=None, center=None):
        return StarBoundary(self.R if R is None else R,
                            self.center if center is None else center,
                            self.a if a is None else a,
                            self.b if b is None else b)

    def scaled_to_area(self, target=1.0):
        return self.with_coefficients(
            R=self.R * math.sqrt(target / self.area()))


@dataclass(frozen=True)
class NecklaceSpec:
    """k equal balls with centers on the e1 axis at spacing ``q``."""

    k: int
    r: float
    q: float
    total: float = None
    dim: int = 2
    center: tuple = None

    def __post_init__(self):
        if self.k < 1:
            raise ConstructionError("necklace needs at least one ball")
        if not self.r > 0:
            raise ConstructionError("ball radius must be positive")
        if self.k > 1 and self.q < 2 * self.r * (1 - 1e-12):
            raise ConstructionError("gap q < 2r: balls overlap")
        tot = self.k * unit_ball_volume(self.dim) * self.r ** self.dim
        if self.total is None:
            object.__setattr__(self, "total", tot)
        elif not math.isclose(self.total, tot, rel_tol=1e-9):
            raise ConstructionError("total measure inconsistent with k and r")
        c = np.zeros(self.dim) if self.center is None else np.ravel(self.center)
        object.__setattr__(self, "center", tuple(float(x) for x in c))

    @classmethod
    def from_measure(cls, k, total=1.0, dim=2, q=None, center=None):
        r = unit_measure_radius(dim, total / k)
        return cls(k, r, 2 * r if q is None else q, None, dim, center)

    def ball_centers(self):
        offs = (np.arange(self.k) - (self.k - 1) / 2) * self.q
        c = np.tile(np.asarray(self.center), (self.k, 1))
        c[:, 0] += offs
        return c

    def length(self):
        """Extent along e1 (diameter of the tangent chain when q = 2r)."""
        return (self.k - 1) * self.q + 2 * self.r


@dataclass(frozen=True)
class DumbbellSpec:
    """Two lobes joined by a neck, plus an optional tail toward -e1.

    Lobe centers sit at ``center -/+ separation/2 e1``; the tail leaves the
    left lobe.  Necks and tails have square cross-section in 3D.
    """

    lobe_radii: tuple = (0.4, 0.4)
    separation: float = 1.2
    neck_width: float = 0.1
    tail_length: float = 0.0
    tail_width: float = 0.06
    center: tuple = None


# --------------------------------------------------------------------------
# level sets and constructors
# --------------------------------------------------------------------------

def _ball_phi(X, center, r):
    d2 = sum((x - c) ** 2 for x, c in zip(X, center))
    return np.sqrt(d2) - r


def _box_phi(X, lo, hi):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    mid = (lo + hi) / 2
    half = (hi - lo) / 2
    q = [np.abs(x - m) - s for x, m, s in zip(X, mid, half)]
    outside = np.sqrt(sum(np.maximum(qi, 0) ** 2 for qi in q))
    inside = np.minimum(np.maximum.reduce(q), 0)
    return outside + inside


def _finish(spec, phi, check_box=True):
    mask = phi < 0
    if check_box and mask.any():
        if boundary_mask(np.ones(spec.shape, bool))[mask].any():
            raise BoundsError("shape touches the grid box boundary")
    return GridDomain(spec, mask, phi)


def domain_from_levelset(spec, phi):
    """Domain {phi < 0} carrying ``phi`` for boundary location."""
    return _finish(spec, np.asarray(phi, float))


def make_ball(spec, ball):
    c = np.asarray(ball.center, float)
    if len(c) != spec.dim:
        raise SpecMismatchError("ball dimension does not match grid")
    if not spec.contains_box(c - ball.radius, c + ball.radius):
        raise BoundsError("ball does not fit in the grid box")
    return _finish(spec, _ball_phi(spec.centers(), c, ball.radius))


def make_box(spec, lo, hi):
    lo = np.broadcast_to(np.asarray(lo, float), (spec.dim,))
    hi = np.broadcast_to(np.asarray(hi, float), (spec.dim,))
    if not spec.contains_box(lo, hi, margin=0.5 * spec.h):
        raise BoundsError("box does not fit in the grid box")
    return _finish(spec, _box_phi(spec.centers(), lo, hi))


def make_ellipse(spec, semi_axes, center=None):
    """Ellipse/ellipsoid with axis-aligned semi-axes."""
    ax = np.asarray(semi_axes, float)
    c = np.zeros(spec.dim) if center is None else np.asarray(center, float)
    if not spec.contains_box(c - ax, c + ax):
        raise BoundsError("ellipse does not fit in the grid box")
    X = spec.centers()
    rho = np.sqrt(sum(((x - ci) / a) ** 2 for x, ci, a in zip(X, c, ax)))
    # scaled by the smallest semi-axis so that |grad phi| ~ 1 near the boundary
    return _finish(spec, (rho - 1.0) * ax.min())


def make_l_shape(spec, size, width, corner=None):
    """Planar L: union of two ``size x width`` arms sharing a corner square."""
    c = np.zeros(2) if corner is None else np.asarray(corner, float)
    X = spec.centers()
    p1 = _box_phi(X, c, c + [size, width])
    p2 = _box_phi(X, c, c + [width, size])
    if not spec.contains_box(c, c + size, margin=0.5 * spec.h):
        raise BoundsError("L-shape does not fit in the grid box")
    return _finish(spec, np.minimum(p1, p2))


def rasterize_star(boundary, spec):
    """Cell occupied iff |x - center| < r(theta(x))."""
    if spec.dim != 2:
        raise SpecMismatchError("star boundaries require a planar grid")
    c = np.asarray(boundary.center)
    rmax = boundary.max_radius()
    if not spec.contains_box(c - rmax, c + rmax):
        raise BoundsError("star boundary exceeds the grid box")
    X, Y = spec.centers()
    dx, dy = X - c[0], Y - c[1]
    phi = np.hypot(dx, dy) - boundary.radius(np.arctan2(dy, dx))
    return _finish(spec, phi)


def make_necklace(spec, neck):
    if neck.dim != spec.dim:
        raise SpecMismatchError("necklace dimension does not match grid")
    cs = neck.ball_centers()
    if not spec.contains_box(cs.min(axis=0) - neck.r, cs.max(axis=0) + neck.r):
        raise BoundsError("necklace does not fit in the grid box")
    X = spec.centers()
    phi = np.min([_ball_phi(X, c, neck.r) for c in cs], axis=0)
    if neck.k == 1 or neck.q > 2 * neck.r + 1e-12:
        return _finish(spec, phi)
    # tangent balls: the contact point has measure zero, so bridge it with
    # the cells of the row through the contact point; the bridged set no
    # longer matches a level set, hence mask-only
    mask = phi < 0
    for c in cs[:-1]:
        p = c.copy()
        p[0] += neck.r
        idx = np.floor((p - np.asarray(spec.origin)) / spec.h).astype(int)
        row = tuple(idx[1:])
        i0 = np.floor((p[0] - spec.origin[0]) / spec.h - 0.5).astype(int)
        mask[(slice(max(i0, 0), i0 + 2),) + row] = True
    return GridDomain(spec, mask)


def make_dumbbell_tail(spec, params=None):
    p = params or DumbbellSpec()
    N = spec.dim
    c = spec.center if p.center is None else np.asarray(p.center, float)
    r1, r2 = p.lobe_radii
    c1 = c.copy()
    c1[0] -= p.separation / 2
    c2 = c.copy()
    c2[0] += p.separation / 2
    X = spec.centers()
    parts = [_ball_phi(X, c1, r1), _ball_phi(X, c2, r2)]
    half = np.full(N, p.neck_width / 2)
    half[0] = 0
    parts.append(_box_phi(X, c1 - half, c2 + half))
    lo = np.minimum(c1 - r1, c2 - r2)
    hi = np.maximum(c1 + r1, c2 + r2)
    if p.tail_length > 0:
        th = np.full(N, p.tail_width / 2)
        t_lo = c1 - th
        t_lo[0] = c1[0] - r1 - p.tail_length
        t_hi = c1 + th
        parts.append(_box_phi(X, t_lo, t_hi))
        lo[0] = t_lo[0]
    if not spec.contains_box(lo, hi):
        raise BoundsError("dumbbell does not fit in the grid box")
    return _finish(spec, np.min(parts, axis=0))


# --------------------------------------------------------------------------
# set functions
# --------------------------------------------------------------------------

def measure(dom):
    return dom.measure


def _check_same(a, b):
    if a.spec != b.spec:
        raise SpecMismatchError("domains live on different grids")


def symmetric_difference_measure(a, b):
    _check_same(a, b)
    return np.count_nonzero(a.mask ^ b.mask) * a.spec.cell_volume


def union(a, b):
    _check_same(a, b)
    if a.phi is not None and b.phi is not None:
        return GridDomain(a.spec, a.mask | b.mask, np.minimum(a.phi, b.phi))
    return GridDomain(a.spec, a.mask | b.mask)


def translate_cells(dom, shift):
    """Shift by whole cells (cells leaving the box are an error)."""
    shift = tuple(int(s) for s in shift)
    mask = np.zeros_like(dom.mask)
    src = np.argwhere(dom.mask)
    dst = src + shift
    if (dst < 0).any() or (dst >= dom.spec.n).any():
        raise BoundsError("translated domain leaves the box")
    mask[tuple(dst.T)] = True
    phi = None
    if dom.phi is not None:
        phi = np.full(dom.mask.shape, np.inf)
        sl_src, sl_dst = [], []
        for s in shift:
            sl_src.append(slice(max(-s, 0), dom.spec.n - max(s, 0)))
            sl_dst.append(slice(max(s, 0), dom.spec.n - max(-s, 0)))
        phi[tuple(sl_dst)] = dom.phi[tuple(sl_src)]
        phi = np.where(np.isinf(phi), np.abs(dom.phi).max() + dom.h, phi)
    return GridDomain(dom.spec, mask, phi)


def rescale_to_measure(dom, target, center=None):
    """Rasterize the dilation t*Omega about ``center`` (default centroid)."""
    if not target > 0:
        raise DomainError("target measure must be positive")
    m = dom.measure
    if m <= 0:
        raise PreconditionError("cannot rescale an empty domain")
    t = (target / m) ** (1.0 / dom.dim)
    return dilate(dom, t, center)


def dilate(dom, t, center=None):
    """Rasterization of c + t (Omega - c)."""
    spec = dom.spec
    c = dom.centroid() if center is None else np.asarray(center, float)
    X = spec.centers()
    # fractional source index of each new cell center
    src = [((c_i + (x - c_i) / t) - o) / spec.h - 0.5
           for x, c_i, o in zip(X, c, spec.origin)]
    pts = dom.points()
    lo = c + t * (pts.min(axis=0) - c) - spec.h
    hi = c + t * (pts.max(axis=0) - c) + spec.h
    if not spec.contains_box(lo, hi, margin=0.0):
        raise BoundsError("rescaled domain leaves the grid box")
    if dom.phi is not None:
        big = float(np.abs(dom.phi).max()) + spec.h
        phi = ndimage.map_coordinates(dom.phi, src, order=1, mode="constant",
                                      cval=big) * t
        # map_coordinates may return exact zeros; keep them outside
        return _finish(spec, phi, check_box=True)
    mask = ndimage.map_coordinates(dom.mask.astype(np.uint8),
                                   [np.floor(s + 0.5) for s in src],
                                   order=0, mode="constant", cval=0) > 0
    return GridDomain(spec, mask)


def connected_components(dom):
    """Number of face-connected components."""
    _, count = ndimage.label(dom.mask)
    return int(count)


def is_connected(dom):
    return connected_components(dom) == 1


def component_masks(dom):
    lab, count = ndimage.label(dom.mask)
    return [lab == i for i in range(1, count + 1)]


# --------------------------------------------------------------------------
# asymmetry and distances
# --------------------------------------------------------------------------

def _ball_symdiff_count(dom, x, r):
    """xor count between the mask and the rasterized ball B_r(x)."""
    spec = dom.spec
    o = np.asarray(spec.origin)
    lo = np.floor((x - r - o) / spec.h - 0.5).astype(int)
    hi = np.ceil((x + r - o) / spec.h - 0.5).astype(int) + 1
    axes = [o_i + (np.arange(l, u) + 0.5) * spec.h
            for o_i, l, u in zip(o, lo, hi)]
    d2 = np.zeros([len(a) for a in axes])
    for ax, (a, x_i) in enumerate(zip(axes, x)):
        shape = [1] * len(axes)
        shape[ax] = -1
        d2 = d2 + ((a - x_i) ** 2).reshape(shape)
    ball = d2 < r * r
    cl_lo = np.maximum(lo, 0)
    cl_hi = np.minimum(hi, spec.n)
    inter = 0
    if np.all(cl_hi > cl_lo):
        sub_m = dom.mask[tuple(slice(l, u) for l, u in zip(cl_lo, cl_hi))]
        sub_b = ball[tuple(slice(l - b, u - b)
                           for l, u, b in zip(cl_lo, cl_hi, lo))]
        inter = np.count_nonzero(sub_m & sub_b)
    return dom.cell_count + np.count_nonzero(ball) - 2 * inter


def fraenkel_asymmetry(dom, exhaustive=False, resolution=None, coarse=None):
    """Fraenkel asymmetry and the best ball.

    Default: coarse scan over a centroid-centered window covering the
    domain, then a pattern search whose step is halved down to h/4.
    ``exhaustive=True`` scans every center on a lattice of spacing
    ``resolution`` (default h/2); it is the slow reference.
    """
    if dom.is_empty():
        raise PreconditionError("asymmetry of an empty domain")
    N, h = dom.dim, dom.h
    m = dom.measure
    r = unit_measure_radius(N, m)
    cent = dom.centroid()
    pts = dom.points()
    half = np.max(np.abs(pts - cent), axis=0) + h

    def value(x):
        return _ball_symdiff_count(dom, np.asarray(x, float), r) * h ** N / m

    if exhaustive:
        res = resolution or h / 2
        lin = [np.arange(c - w, c + w + res / 2, res) for c, w in zip(cent, half)]
        best_x, best = cent, value(cent)
        for x in np.stack(np.meshgrid(*lin, indexing="ij"), -1).reshape(-1, N):
            v = value(x)
            if v < best:
                best, best_x = v, x
        return float(best), BallSpec(tuple(best_x), r)

    npts = coarse or (13 if N == 2 else 7)
    lin = [np.linspace(c - w, c + w, npts) for c, w in zip(cent, half)]
    cand = np.stack(np.meshgrid(*lin, indexing="ij"), -1).reshape(-1, N)
    cand = np.vstack([cent[None], cand])
    vals = np.array([value(x) for x in cand])
    order = np.argsort(vals, kind="stable")[:3]
    step0 = max(float(np.max(2 * half / (npts - 1))), 2 * h)
    best_x, best = cand[order[0]], vals[order[0]]
    for start in order:
        x, v = cand[start].copy(), vals[start]
        step = step0
        while step >= h / 4:
            moved = False
            for ax in range(N):
                for s in (1, -1):
                    y = x.copy()
                    y[ax] += s * step
                    vy = value(y)
                    if vy < v:
                        x, v, moved = y, vy, True
            if not moved:
                step /= 2
        if v < best:
            best, best_x = v, x
    return float(best), BallSpec(tuple(best_x), r)


def hausdorff_boundary_distance(a, b):
    if a.is_empty() or b.is_empty():
        raise DomainError("Hausdorff distance needs non-empty domains")
    pa, pb = a.boundary_points(), b.boundary_points()
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float(max(da.max(), db.max()))


def diameter(dom):
    if dom.is_empty():
        raise DomainError("diameter of an empty domain")
    pts = dom.boundary_points()
    if len(pts) > dom.dim + 1:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate (collinear) point sets
            pass
    if len(pts) < 2:
        return 0.0
    return float(pdist(pts).max())


def _disk_structure(N, radius_cells):
    R = int(np.floor(radius_cells))
    g = np.mgrid[tuple(slice(-R, R + 1) for _ in range(N))]
    return sum(x * x for x in g) <= radius_cells ** 2 + 1e-9


def check_internal_ball_condition(dom, delta, corner_slack=math.sqrt(2) - 1):
    """Discrete internal delta-ball test by morphological opening.

    The structuring element has radius delta - h (one cell is lost to
    cell-center rasterization).  Every occupied cell must lie within
    ``corner_slack * delta + h`` of the opened set; the default slack
    admits grid-aligned right-angle corners, which the opening rounds off.
    Pass ``corner_slack=0`` for the strict version.
    """
    h = dom.h
    if delta < 2 * h:
        raise ResolutionError("delta must be at least 2h")
    if dom.is_empty():
        return False
    st = _disk_structure(dom.dim, delta / h - 1.0)
    opened = ndimage.binary_opening(dom.mask, structure=st)
    if not opened.any():
        return False
    dist = ndimage.distance_transform_edt(~opened) * h
    return bool(dist[dom.mask].max() <= corner_slack * delta + h * (1 + 1e-9))
