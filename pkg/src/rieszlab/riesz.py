"""Riesz potentials and energies of voxel sets.

With beta = alpha - N the kernel is |z|^beta.  The cell-averaged potential
v_i = sum_j h^N k(i - j) uses the exact cell-cell mean of the kernel for
offsets in {-1, 0, 1}^N and the point value |o h|^beta beyond.  Near-field
cell and face integrals are computed with Duffy pyramids (singularity at a
corner) and closed-form hypergeometric inner integrals, so no subdivision
quadrature is needed.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import special

from .errors import DomainError, RegularityError, SpecMismatchError
from .geometry import unit_ball_volume

log = logging.getLogger(__name__)

CACHE_ENV = "RIESZLAB_KERNEL_CACHE"
CACHE_VERSION = 1
CORRECTION_ORDER = "duffy-exact-v1"


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------

def _gl(m, a=0.0, b=1.0):
    x, w = np.polynomial.legendre.leggauss(m)
    return a + (b - a) * (x + 1) / 2, w * (b - a) / 2


def _graded_gl(m=6, levels=24):
    """Composite Gauss-Legendre rule on [0,1] with dyadic grading at 0."""
    edges = np.concatenate([[0.0], 2.0 ** -np.arange(levels, -1, -1)])
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _gl(m, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _gauss_jacobi01(m, power):
    """Nodes/weights on [0,1] for the weight s^power."""
    x, w = special.roots_jacobi(m, 0.0, power)
    return (x + 1) / 2, w / 2 ** (power + 1)


def _hyp(beta, z):
    """F(z) = 2F1(-beta/2, 1/2; 3/2; z), so that
    int_0^1 (1 + c w^2)^(beta/2) dw = F(-c)."""
    return special.hyp2f1(-beta / 2, 0.5, 1.5, z)


def _seg_power(a, d, beta):
    """int_0^a (d^2 + s^2)^(beta/2) ds for a >= 0 (vectorized)."""
    a = np.asarray(a, float)
    d = np.abs(np.asarray(d, float))
    out = np.zeros(np.broadcast(a, d).shape)
    a, d = np.broadcast_arrays(a, d)
    zero_d = d == 0
    pos = (a > 0) & zero_d
    out[pos] = a[pos] ** (beta + 1) / (beta + 1)
    gen = (a > 0) & ~zero_d
    if gen.any():
        aa, dd = a[gen], d[gen]
        out[gen] = aa * dd ** beta * _hyp(beta, -(aa / dd) ** 2)
    return out


# --------------------------------------------------------------------------
# corner integrals
# --------------------------------------------------------------------------

_GRADED = _graded_gl()


def corner_box_integral(a, beta):
    """G(a) = int_{[0,a_1]x...x[0,a_N]} |z|^beta dz, rows of ``a`` are boxes.

    Duffy splitting into N pyramids with apex at the singular corner: the
    radial factor integrates to 1/(beta+N); the remaining integral over the
    pyramid base is closed form in 2D and one graded quadrature in 3D.
    """
    a = np.atleast_2d(np.asarray(a, float))
    M, N = a.shape
    out = np.zeros(M)
    live = np.all(a > 0, axis=1)
    if not live.any():
        return out
    A = a[live]
    vol = np.prod(A, axis=1) / (beta + N)
    acc = np.zeros(len(A))
    if N == 2:
        for p in range(2):
            ap, aq = A[:, p], A[:, 1 - p]
            acc += ap ** beta * _hyp(beta, -(aq / ap) ** 2)
    elif N == 3:
        v, w = _GRADED
        for p in range(3):
            j, k = [i for i in range(3) if i != p]
            ap = A[:, p][:, None]
            # outer variable along the shorter of the two remaining sides
            swap = A[:, j] < A[:, k]
            aj = np.where(swap, A[:, k], A[:, j])[:, None]
            ak = np.where(swap, A[:, j], A[:, k])[:, None]
            base = ap ** 2 + (ak * v) ** 2
            acc += (base ** (beta / 2) * _hyp(beta, -aj ** 2 / base)) @ w
    else:
        raise DomainError("dimension must be 2 or 3")
    out[live] = vol * acc
    return out


def corner_face_integral(a, d, beta):
    """H(a; d) = int_{[0,a_1]x...x[0,a_{N-1}]} (d^2 + |s|^2)^(beta/2) ds."""
    a = np.atleast_2d(np.asarray(a, float))
    d = np.broadcast_to(np.abs(np.asarray(d, float)), (len(a),))
    M, K = a.shape
    if K == 1:
        return _seg_power(a[:, 0], d, beta)
    out = np.zeros(M)
    live = np.all(a > 0, axis=1)
    if not live.any():
        return out
    A, D = a[live], d[live]
    x, w = _gl(24)
    p = beta / 2 + 1
    acc = np.zeros(len(A))
    # split the rectangle along its diagonal into two right triangles and
    # integrate the radial variable in closed form
    for s0, s1 in ((0, 1), (1, 0)):
        a0, a1 = A[:, s0], A[:, s1]
        top = np.arctan2(a1, a0)
        th = top[:, None] * x[None, :]
        rad = (D[:, None] ** 2 + (a0[:, None] / np.cos(th)) ** 2) ** p
        acc += top * ((rad - D[:, None] ** (2 * p)) @ w)
    out[live] = acc / (2 * p)
    return out


def _box_integral(lo, hi, beta, corner_fn):
    """int over the boxes [lo, hi] (relative to the singular point) by
    inclusion-exclusion of corner integrals."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    M, N = lo.shape
    total = np.zeros(M)
    for choice in itertools.product((0, 1), repeat=N):
        c = np.where(np.array(choice, bool), hi, lo)
        sign = np.prod(np.where(np.array(choice, bool), 1.0, -1.0) * np.sign(c),
                       axis=1)
        nz = sign != 0
        if nz.any():
            total[nz] += sign[nz] * corner_fn(np.abs(c[nz]))
    return total


def cell_pair_mean(offset, beta):
    """Mean of |x - y|^beta over x in [0,1]^N, y in offset + [0,1]^N.

    Equals int Lambda(w + o) |w|^beta dw with the tent density Lambda of
    the difference of two uniform points; each unit lattice cube in its
    support either has the singularity at a corner (Duffy + Gauss-Jacobi
    in the radial variable, exact for the polynomial tent factor) or is
    smooth (tensor Gauss-Legendre).
    """
    o = np.asarray(offset, float)
    N = len(o)
    xs, wsm = _gl(10)
    sj, wj = _gauss_jacobi01(6, beta + N - 1)
    vg, vw = _gl(20)

    def tent(w):
        return np.prod(np.clip(1 - np.abs(w + o), 0, None), axis=-1)

    total = 0.0
    for low in itertools.product(*[(-1 - oi, -oi) for oi in o]):
        low = np.asarray(low)
        if np.all((low == 0) | (low == -1)):
            sig = np.where(low == 0, 1.0, -1.0)
            for p in range(N):
                rest = [i for i in range(N) if i != p]
                V = np.stack(np.meshgrid(*([vg] * (N - 1)), indexing="ij"),
                             -1).reshape(-1, N - 1)
                VW = np.prod(np.stack(np.meshgrid(*([vw] * (N - 1)),
                                                  indexing="ij"), -1)
                             .reshape(-1, N - 1), axis=1)
                e = np.ones((len(V), N))
                e[:, rest] = V
                en = np.linalg.norm(e, axis=1) ** beta
                for s, ws in zip(sj, wj):
                    total += ws * np.sum(VW * en * tent(sig * s * e))
        else:
            P = np.stack(np.meshgrid(*([xs] * N), indexing="ij"), -1).reshape(-1, N)
            W = np.prod(np.stack(np.meshgrid(*([wsm] * N), indexing="ij"), -1)
                        .reshape(-1, N), axis=1)
            pts = low + P
            total += np.sum(W * np.linalg.norm(pts, axis=1) ** beta * tent(pts))
    return float(total)


# --------------------------------------------------------------------------
# kernel table
# --------------------------------------------------------------------------

def _check_alpha(N, alpha):
    if not (0 < alpha < N):
        raise DomainError(f"alpha must lie in (0, {N}), got {alpha}")


@dataclass(frozen=True, eq=False)
class RieszKernelTable:
    """Kernel k(o) = h^beta t(o) on the offset lattice |o_i| <= n - 1."""

    alpha: float
    spec: object
    near: dict            # offset tuple -> t(o) for o in {-1,0,1}^N
    fft_size: int
    _hat: np.ndarray

    @property
    def beta(self):
        return self.alpha - self.spec.dim

    @property
    def self_cell(self):
        return self.spec.h ** self.beta * self.near[(0,) * self.spec.dim]

    @property
    def near_corrections(self):
        h = self.spec.h
        return {o: h ** self.beta * t for o, t in self.near.items()}

    def kernel(self, offsets):
        """k(o) for integer offsets (rows)."""
        o = np.atleast_2d(np.asarray(offsets))
        r = np.linalg.norm(o, axis=1)
        with np.errstate(divide="ignore"):
            t = np.where(r > 0, r, 1.0) ** self.beta
        near = np.all(np.abs(o) <= 1, axis=1)
        if near.any():
            t[near] = [self.near[tuple(int(x) for x in row)] for row in o[near]]
        return self.spec.h ** self.beta * t

    def samples(self):
        """Kernel on the full offset lattice, shape (2n-1)^N."""
        n, N = self.spec.n, self.spec.dim
        g = np.meshgrid(*[np.arange(-(n - 1), n)] * N, indexing="ij")
        return self.kernel(np.stack(g, -1).reshape(-1, N)).reshape(g[0].shape)


_TABLES = {}


def _near_table(N, alpha):
    beta = alpha - N
    cache_dir = os.environ.get(CACHE_ENV)
    path = None
    if cache_dir:
        tag = f"{CACHE_VERSION}|{CORRECTION_ORDER}|{N}|{alpha!r}"
        path = os.path.join(cache_dir, "near_" +
                            hashlib.sha1(tag.encode()).hexdigest()[:16] + ".npz")
        if os.path.exists(path):
            try:
                z = np.load(path)
                if int(z["version"]) == CACHE_VERSION:
                    return {tuple(int(x) for x in o): float(v)
                            for o, v in zip(z["offsets"], z["values"])}
            except Exception:  # corrupt cache entries are recomputed
                log.warning("ignoring unreadable kernel cache %s", path)
    offs = list(itertools.product((-1, 0, 1), repeat=N))
    vals = {}
    for o in offs:
        key = tuple(sorted(abs(x) for x in o))
        if key not in vals:
            vals[key] = cell_pair_mean(key, beta)
    table = {o: vals[tuple(sorted(abs(x) for x in o))] for o in offs}
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = path + f".{os.getpid()}.tmp.npz"
        np.savez(tmp, version=CACHE_VERSION, offsets=np.array(offs),
                 values=np.array([table[o] for o in offs]))
        os.replace(tmp, path)
    return table


def kernel_table(spec, alpha):
    """Build (or fetch from cache) the kernel table for ``spec``."""
    N = spec.dim
    _check_alpha(N, alpha)
    key = (N, float(alpha), spec.h, spec.n)
    hit = _TABLES.get(key)
    if hit is not None:
        return hit
    near_key = (N, float(alpha))
    near = _TABLES.get(near_key)
    if near is None:
        near = _near_table(N, float(alpha))
        _TABLES[near_key] = near
    n = spec.n
    P = 1 << int(math.ceil(math.log2(2 * n)))
    tab = RieszKernelTable(float(alpha), spec, near, P, None)
    k = tab.samples()
    full = np.zeros((P,) * N)
    idx = np.ix_(*[np.r_[np.arange(0, n), np.arange(P - n + 1, P)]] * N)
    # samples run from -(n-1) .. n-1; rearrange to wrap-around order
    k = np.roll(k, -(n - 1), axis=tuple(range(N)))
    full[idx] = k
    hat = sfft.rfftn(full)
    tab = RieszKernelTable(float(alpha), spec, near, P, hat)
    _TABLES[key] = tab
    return tab


# --------------------------------------------------------------------------
# potential and energy
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RieszPotentialField:
    spec: object
    v: np.ndarray
    energy: float
    alpha: float


def riesz_potential(dom, alpha):
    """Cell-averaged potential on the whole box via zero-padded FFT."""
    spec = dom.spec
    _check_alpha(spec.dim, alpha)
    if dom.is_empty():
        return RieszPotentialField(spec, np.zeros(spec.shape), 0.0, alpha)
    tab = kernel_table(spec, alpha)
    P = tab.fft_size
    pad = np.zeros((P,) * spec.dim)
    pad[tuple(slice(0, spec.n) for _ in range(spec.dim))] = dom.mask
    conv = sfft.irfftn(sfft.rfftn(pad) * tab._hat, s=pad.shape)
    v = conv[tuple(slice(0, spec.n) for _ in range(spec.dim))] * spec.cell_volume
    E = spec.cell_volume * float(v[dom.mask].sum())
    return RieszPotentialField(spec, v, E, float(alpha))


def riesz_energy(dom, alpha):
    return riesz_potential(dom, alpha).energy


def riesz_energy_bruteforce(dom, alpha, chunk=2048):
    """O(M^2) pairwise double sum with the same kernel table."""
    spec = dom.spec
    _check_alpha(spec.dim, alpha)
    tab = kernel_table(spec, alpha)
    cells = np.argwhere(dom.mask)
    total = 0.0
    for i0 in range(0, len(cells), chunk):
        blk = cells[i0:i0 + chunk]
        off = (blk[:, None, :] - cells[None, :, :]).reshape(-1, spec.dim)
        total += float(tab.kernel(off).sum())
    return total * spec.cell_volume ** 2


# --------------------------------------------------------------------------
# point evaluations
# --------------------------------------------------------------------------

def _near_far_split(dom, x, reach):
    spec = dom.spec
    cells = np.argwhere(dom.mask)
    centers = spec.index_to_point(cells)
    near = np.max(np.abs(centers - x), axis=1) <= reach * spec.h
    return cells, centers, near


def riesz_potential_at(dom, alpha, x):
    """Pointwise v(x) = int_Omega |x - y|^beta dy."""
    spec = dom.spec
    N = spec.dim
    _check_alpha(N, alpha)
    beta = alpha - N
    x = np.asarray(x, float)
    if dom.is_empty():
        return 0.0
    h = spec.h
    _, centers, near = _near_far_split(dom, x, 2.5)
    total = 0.0
    if near.any():
        c = centers[near] - x
        total += _box_integral(c - h / 2, c + h / 2, beta,
                               lambda a: corner_box_integral(a, beta)).sum()
    far = centers[~near] - x
    if len(far):
        g, w = _gl(3, -h / 2, h / 2)
        G = np.stack(np.meshgrid(*[g] * N, indexing="ij"), -1).reshape(-1, N)
        W = np.prod(np.stack(np.meshgrid(*[w] * N, indexing="ij"), -1)
                    .reshape(-1, N), axis=1)
        for blk in np.array_split(far, max(1, len(far) // 4096)):
            r = np.linalg.norm(blk[:, None, :] + G[None], axis=2)
            total += float(np.sum((r ** beta) * W))
    return float(total)


def _boundary_faces(dom, axis):
    """Faces normal to e_axis separating an occupied cell from an
    unoccupied one: (face-center points, outward sign)."""
    m = np.pad(dom.mask, 1, constant_values=False)
    core = tuple(slice(1, -1) for _ in range(dom.dim))
    out = []
    for s in (-1, 1):
        nb = np.roll(m, -s, axis=axis)[core]
        cells = np.argwhere(dom.mask & ~nb)
        pts = dom.spec.index_to_point(cells).astype(float)
        pts[:, axis] += 0.5 * s * dom.h
        out.append((pts, s))
    return out


def riesz_potential_gradient(dom, alpha, x):
    """grad v(x) = -int_{boundary} |x - y|^beta n(y) dS(y).

    On a voxel set the boundary consists of grid faces; each face integral
    is evaluated exactly near x and by tensor Gauss-Legendre elsewhere.
    Requires 1 < alpha < N so that the face integrals converge for x on
    the boundary.
    """
    spec = dom.spec
    N = spec.dim
    _check_alpha(N, alpha)
    if alpha <= 1:
        raise RegularityError("the potential gradient needs alpha > 1")
    beta = alpha - N
    x = np.asarray(x, float)
    h = spec.h
    grad = np.zeros(N)
    g, w = _gl(3, -h / 2, h / 2)
    K = N - 1
    G = np.stack(np.meshgrid(*[g] * K, indexing="ij"), -1).reshape(-1, K)
    W = np.prod(np.stack(np.meshgrid(*[w] * K, indexing="ij"), -1)
                .reshape(-1, K), axis=1)
    for ax in range(N):
        tang = [i for i in range(N) if i != ax]
        for pts, s in _boundary_faces(dom, ax):
            if not len(pts):
                continue
            rel = pts - x
            near = np.max(np.abs(rel), axis=1) <= 2.5 * h
            val = 0.0
            if near.any():
                r = rel[near]
                val += _face_sum(r[:, tang], r[:, ax], h, beta)
            far = rel[~near]
            if len(far):
                d2 = far[:, ax] ** 2
                t = far[:, tang]
                r2 = d2[:, None] + np.sum((t[:, None, :] + G[None]) ** 2, axis=2)
                val += float(np.sum(r2 ** (beta / 2) * W))
            grad[ax] -= s * val
    return grad


def _face_sum(t, d, h, beta):
    """Sum of exact face integrals for tangential offsets t and normal
    offsets d (one face per row)."""
    lo = t - h / 2
    hi = t + h / 2
    total = 0.0
    K = t.shape[1]
    for choice in itertools.product((0, 1), repeat=K):
        c = np.where(np.array(choice, bool), hi, lo)
        sign = np.prod(np.where(np.array(choice, bool), 1.0, -1.0) * np.sign(c),
                       axis=1)
        nz = sign != 0
        if nz.any():
            total += float(np.sum(sign[nz] *
                                  corner_face_integral(np.abs(c[nz]), d[nz], beta)))
    return total


# --------------------------------------------------------------------------
# constants and the difference bound
# --------------------------------------------------------------------------

def c0_constant(N, alpha):
    """int over the unit-measure ball of |z|^(alpha - N): N w_N r^alpha/alpha."""
    _check_alpha(N, alpha)
    om = unit_ball_volume(N)
    r = om ** (-1.0 / N)
    with np.errstate(over="ignore", divide="ignore"):
        val = N * om * r ** alpha / alpha
    return float(val) if math.isfinite(val) else math.inf


def km_difference_bound_check(a, b, alpha, slack=1e-6):
    """lhs = V(b) - V(a) against C0 |a Δ b| (|a|^(alpha/N) + |b|^(alpha/N))."""
    if a.spec != b.spec:
        raise SpecMismatchError("domains live on different grids")
    N = a.dim
    c0 = c0_constant(N, alpha)
    if c0 < 1:
        log.info("C0 = %.6g < 1 clamped to 1 (N=%d, alpha=%g)", c0, N, alpha)
        c0 = 1.0
    lhs = riesz_energy(b, alpha) - riesz_energy(a, alpha)
    sd = np.count_nonzero(a.mask ^ b.mask) * a.spec.cell_volume
    rhs = c0 * sd * (a.measure ** (alpha / N) + b.measure ** (alpha / N))
    return float(lhs), float(rhs), bool(lhs <= rhs + slack)
