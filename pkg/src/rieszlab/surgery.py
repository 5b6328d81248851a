"""Tail cutting: slice statistics, cylinder extension, trichotomy, sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, DomainError, PreconditionError
from .fields import (EigenSolution, ScalarField, dirichlet_energy_density,
                     dirichlet_operator, solve_first_eigen)
from .functionals import PenaltyParams, slack
from .geometry import (GridDomain, diameter, dilate, fraenkel_asymmetry,
                       is_connected, unit_measure_radius)
from .riesz import riesz_energy

log = logging.getLogger(__name__)

LABELS = ("cond1", "cond2", "cond3")
NO_TAIL = "no_cond3"
DEFAULT_C4 = 10.0


def _direction(direction, N):
    ax, sign = direction
    if not 0 <= ax < N or sign not in (-1, 1):
        raise DomainError(f"invalid direction {direction}")
    return int(ax), int(sign)


def _to_tail_first(arr, direction):
    """View with the tail axis first and the tail at low indices."""
    ax, sign = direction
    a = np.moveaxis(arr, ax, 0)
    return a[::-1] if sign > 0 else a


def _from_tail_first(arr, direction):
    ax, sign = direction
    a = arr[::-1] if sign > 0 else arr
    return np.moveaxis(a, 0, ax)


def sweep_directions(N):
    """-e1, +e1, -e2, +e2, ..."""
    return [(ax, s) for ax in range(N) for s in (-1, 1)]


@dataclass
class SliceStats:
    """Per-slice quantities in the tail-first orientation.

    ``t[i]`` is the signed coordinate (sign * x_axis) of the lower face of
    slice i; eps/delta/mu are slice integrals over slice i, m and phi the
    volume and Dirichlet energy strictly before it, so that
    m[i+1] - m[i] = h eps[i] and phi[i+1] - phi[i] = h delta[i].
    """

    direction: tuple
    t: np.ndarray
    eps_t: np.ndarray
    delta_t: np.ndarray
    mu_t: np.ndarray
    m_t: np.ndarray
    phi_t: np.ndarray
    h: float
    dim: int

    def index(self, t):
        i = int(np.searchsorted(self.t, t + 1e-9 * self.h, side="right")) - 1
        return min(max(i, 0), len(self.t) - 1)

    def mu_ratio(self):
        """mu / (eps^(2/(N-1)) delta) on non-empty slices."""
        e = self.eps_t
        ok = (e > 0) & (self.delta_t > 0)
        out = np.full(len(e), np.nan)
        out[ok] = self.mu_t[ok] / (e[ok] ** (2.0 / (self.dim - 1)) * self.delta_t[ok])
        return out


def slice_statistics(dom, eig, direction):
    N, h = dom.dim, dom.h
    direction = _direction(direction, N)
    ax, sign = direction
    u = eig.u.values if isinstance(eig.u, ScalarField) else np.asarray(eig.u)
    dens = dirichlet_energy_density(dom, u)
    mask = _to_tail_first(dom.mask, direction)
    uu = _to_tail_first(u, direction)
    ee = _to_tail_first(dens, direction)
    rest = tuple(range(1, N))
    hs = h ** (N - 1)
    eps = hs * mask.sum(axis=rest)
    delta = hs * np.where(mask, ee, 0.0).sum(axis=rest)
    mu = hs * np.where(mask, uu * uu, 0.0).sum(axis=rest)
    m = h * np.concatenate([[0.0], np.cumsum(eps)[:-1]])
    phi = h * np.concatenate([[0.0], np.cumsum(delta)[:-1]])
    n = mask.shape[0]
    o = dom.spec.origin[ax]
    if sign < 0:
        t = o + h * np.arange(n)
    else:
        t = -(o + h * (n - np.arange(n)))
    return SliceStats(direction, t, eps, delta, mu, m, phi, h, N)


def classify_trichotomy(stats, t, C4=DEFAULT_C4):
    """cond1: max(eps, delta) > 1; cond2: m <= C4 (eps + delta) eps^(1/(N-1));
    cond3 otherwise."""
    if not C4 > 0:
        raise DomainError("C4 must be positive")
    i = stats.index(t)
    e, d, m = stats.eps_t[i], stats.delta_t[i], stats.m_t[i]
    if max(e, d) > 1:
        return "cond1"
    if m <= C4 * (e + d) * e ** (1.0 / (stats.dim - 1)):
        return "cond2"
    return "cond3"


def _cylinder_cells(stats, i):
    """Whole number of cells approximating sigma = eps^(1/(N-1))."""
    sigma = stats.eps_t[i] ** (1.0 / (stats.dim - 1))
    return max(1, int(round(sigma / stats.h)))


@dataclass
class CutExtension:
    domain: GridDomain
    u_tilde: ScalarField
    index: int
    cells: int
    sigma: float
    cylinder: np.ndarray      # mask of the cylinder cells
    cylinder_energy: float


def _cut(dom, eig, stats, i):
    N, h = dom.dim, dom.h
    direction = stats.direction
    u = eig.u.values if isinstance(eig.u, ScalarField) else np.asarray(eig.u)
    if stats.m_t[i] == 0:
        return CutExtension(dom, ScalarField(dom.spec, u.copy()), i, 0, 0.0,
                            np.zeros_like(dom.mask), 0.0)
    if stats.eps_t[i] == 0:
        raise PreconditionError("cut slice is empty")
    s = _cylinder_cells(stats, i)
    if i - s < 1:
        raise BoundsError("cylinder leaves the grid box")
    mask = _to_tail_first(dom.mask, direction)
    uu = _to_tail_first(u, direction)
    if dom.phi is not None:
        phi = _to_tail_first(dom.phi, direction)
    else:
        phi = np.where(mask, -0.5 * h, 0.5 * h)
    new_phi = np.array(phi, copy=True)
    new_u = np.where(mask, uu, 0.0).copy()
    row = phi[i]
    # lower faces of tail slices measured from the cut plane
    dist = (i - np.arange(i) - 0.5) * h          # centre distance below the plane
    along = dist - s * h                          # > 0 beyond the cylinder end
    new_phi[:i] = np.maximum(row[None], along.reshape((-1,) + (1,) * (N - 1)))
    new_mask = new_phi < 0
    cyl = np.zeros_like(new_mask)
    cyl[i - s:i] = new_mask[i - s:i]
    # linear profile anchored at the first kept cell centre, zero at the
    # cylinder end face
    w = (s - (i - np.arange(i - s, i)) + 0.5) / (s + 0.5)
    new_u[:i] = 0.0
    new_u[i - s:i] = w.reshape((-1,) + (1,) * (N - 1)) * np.where(mask[i], uu[i], 0.0)[None]
    new_mask_o = _from_tail_first(new_mask, direction)
    phi_o = _from_tail_first(new_phi, direction)
    u_o = np.ascontiguousarray(_from_tail_first(new_u, direction))
    new_dom = GridDomain(dom.spec, np.ascontiguousarray(new_mask_o),
                         np.ascontiguousarray(phi_o) if dom.phi is not None else None)
    u_o = np.where(new_dom.mask, u_o, 0.0)
    cyl_o = np.ascontiguousarray(_from_tail_first(cyl, direction))
    dens = dirichlet_energy_density(new_dom, u_o)
    e_cyl = h ** N * float(dens[cyl_o].sum())
    return CutExtension(new_dom, ScalarField(dom.spec, u_o), i, s,
                        stats.eps_t[i] ** (1.0 / (N - 1)), cyl_o, e_cyl)


def build_cut_extension(dom, eig, t, direction, stats=None):
    """Omega~(t) = Omega+(t) union cylinder, and the extended eigenfunction.

    The cylinder has the cross-section of the slice at t and length
    sigma(t) = eps(t)^(1/(N-1)) rounded to a whole number of cells (at
    least one).  On it u~ decreases linearly from u(t, .) to zero.
    """
    stats = stats or slice_statistics(dom, eig, direction)
    return _cut(dom, eig, stats, stats.index(t))


def rayleigh_quotient(dom, values):
    op = dirichlet_operator(dom)
    x = op.gather(values)
    return float(x @ (op.A @ x)) / float(x @ x)


@dataclass
class RayleighCheck:
    rq_tilde: float
    lambda_tilde: float
    lambda_before: float
    c3_ratio: float
    c2_ratio: float
    ok: bool


def rayleigh_bound_check(dom, eig, t, direction, tol=1e-11, stats=None):
    """lambda_1(Omega~) <= R(u~) and the measured C3, C2 ratios."""
    stats = stats or slice_statistics(dom, eig, direction)
    ext = build_cut_extension(dom, eig, t, direction, stats)
    rq = rayleigh_quotient(ext.domain, ext.u_tilde.values)
    if ext.cells == 0:
        lam = eig.lambda1
    else:
        lam = solve_first_eigen(ext.domain, tol, "direct").lambda1
    i = ext.index
    N = dom.dim
    scale = stats.eps_t[i] ** (1.0 / (N - 1)) * stats.delta_t[i]
    c3 = (rq - eig.lambda1) / scale if scale > 0 else float("nan")
    c2 = ext.cylinder_energy / scale if scale > 0 else float("nan")
    ok = lam <= rq * (1 + 1e-6)
    return RayleighCheck(rq, lam, eig.lambda1, c3, c2, ok)


@dataclass
class TailCutResult:
    direction: tuple
    t_star: float
    label: str
    cut_domain: GridDomain
    rescaled: GridDomain
    lambda_before: float
    lambda_after: float
    F_tilde_before: float
    F_tilde_after: float
    eps_t: float = float("nan")
    delta_t: float = float("nan")
    m_t: float = float("nan")
    rq_tilde: float = float("nan")
    lambda_tilde: float = float("nan")
    diameter_before: float = float("nan")
    diameter_after: float = float("nan")
    accepted: bool = False
    note: str = ""

    def row(self):
        ax, s = self.direction
        return {"direction": f"{'+' if s > 0 else '-'}e{ax + 1}",
                "t_star": self.t_star, "label": self.label,
                "eps": self.eps_t, "delta": self.delta_t, "m": self.m_t,
                "lambda_before": self.lambda_before,
                "lambda_after": self.lambda_after,
                "F_tilde_before": self.F_tilde_before,
                "F_tilde_after": self.F_tilde_after,
                "diameter": self.diameter_after, "accepted": self.accepted}


SURGERY_COLUMNS = ["direction", "t_star", "label", "eps", "delta", "m",
                   "lambda_before", "lambda_after", "F_tilde_before",
                   "F_tilde_after", "diameter", "accepted"]


def f_tilde(dom, lam, params):
    """Scale-invariant lambda_1 + eps V (volume for lambda, cell measure
    for V, matching how each is discretized)."""
    N = dom.dim
    val = lam * dom.volume ** (2.0 / N)
    if params.epsilon > 0:
        val += params.epsilon * riesz_energy(dom, params.alpha) * \
            dom.measure ** (-(N + params.alpha) / N)
    return val


def _tail_limit(dom, direction, center=None):
    """Signed coordinate bounding the tail region: one unit-measure ball
    radius beyond the best-ball centre."""
    ax, sign = direction
    if center is None:
        center = fraenkel_asymmetry(dom)[1].center
    c = np.asarray(getattr(center, "center", center), float)[ax]
    rbar = unit_measure_radius(dom.dim, 1.0)
    return sign * c - rbar


def apply_tail_cut(dom, eig, direction, C4=DEFAULT_C4, params=None,
                   tol=1e-10, measure_tol=0.02, center=None):
    """Cut the tail in ``direction`` at the largest cond3 slice, rescale
    to unit volume and re-solve.

    A cut that would raise lambda_1 or F~ beyond slack is not applied; the
    result then has ``accepted=False`` and keeps the input domain.
    """
    params = params or PenaltyParams()
    N = dom.dim
    direction = _direction(direction, N)
    if abs(dom.volume - 1) > measure_tol:
        raise PreconditionError("domain must have unit measure within tolerance")
    if not is_connected(dom):
        raise PreconditionError("surgery needs a connected domain")
    stats = slice_statistics(dom, eig, direction)
    limit = _tail_limit(dom, direction, center)
    lam0 = eig.lambda1
    F0 = f_tilde(dom, lam0, params)
    d0 = diameter(dom)
    cand = [i for i in range(len(stats.t))
            if stats.t[i] <= limit + 1e-12 and stats.eps_t[i] > 0
            and stats.m_t[i] > 0
            and classify_trichotomy(stats, stats.t[i], C4) == "cond3"]
    if not cand:
        return TailCutResult(direction, float("nan"), NO_TAIL, dom, dom,
                             lam0, lam0, F0, F0, diameter_before=d0,
                             diameter_after=d0, accepted=False,
                             note="condition (3) never holds in the tail")
    i = max(cand, key=lambda j: (stats.m_t[j], j))
    ext = _cut(dom, eig, stats, i)
    rq = rayleigh_quotient(ext.domain, ext.u_tilde.values)
    lam_t = solve_first_eigen(ext.domain, tol, "direct").lambda1
    t = (1.0 / ext.domain.volume) ** (1.0 / N)
    ctr = ext.domain.centroid()
    try:
        hat = dilate(ext.domain, t, ctr)
    except BoundsError:
        raise BoundsError("rescaled cut domain leaves the grid box")
    lam1 = solve_first_eigen(hat, tol, "direct").lambda1
    F1 = f_tilde(hat, lam1, params)
    res = TailCutResult(direction, float(stats.t[i]), "cond3", ext.domain, hat,
                        lam0, lam1, F0, F1, float(stats.eps_t[i]),
                        float(stats.delta_t[i]), float(stats.m_t[i]), rq,
                        lam_t, d0, diameter(hat), True)
    if lam1 > lam0 + slack(lam0) or F1 > F0 + slack(F0):
        log.warning("cut in direction %s at t=%.4f raises lambda_1 or F~; "
                    "not applied", direction, res.t_star)
        res.accepted = False
        res.note = "rejected: functional increased"
    return res


@dataclass
class SweepResult:
    result: GridDomain
    log: list
    lambda_initial: float
    lambda_final: float
    F_tilde_initial: float
    F_tilde_final: float
    diameter_initial: float
    diameter_final: float
    c4_sensitivity: dict = field(default_factory=dict)


def surgery_sweep(dom, params=None, C4=DEFAULT_C4, directions=None, tol=1e-10,
                  sensitivity=(5.0, 10.0, 20.0)):
    """Tail cuts in -e1, +e1, ..., +eN, each on the previous result.

    ``c4_sensitivity`` records, for each C4 in ``sensitivity``, the labels
    the first pass would produce on the input domain.
    """
    params = params or PenaltyParams()
    N = dom.dim
    directions = directions or sweep_directions(N)
    eig = solve_first_eigen(dom, tol, "direct")
    lam_init = eig.lambda1
    F_init = f_tilde(dom, lam_init, params)
    d_init = diameter(dom)
    sens = {}
    ball_c = fraenkel_asymmetry(dom)[1].center
    for c in sensitivity:
        labels = []
        for dvec in directions:
            st = slice_statistics(dom, eig, dvec)
            lim = _tail_limit(dom, dvec, ball_c)
            labels.append(any(
                st.t[i] <= lim and st.eps_t[i] > 0 and st.m_t[i] > 0
                and classify_trichotomy(st, st.t[i], c) == "cond3"
                for i in range(len(st.t))))
        sens[c] = labels
    cur = dom
    logs = []
    for dvec in directions:
        r = apply_tail_cut(cur, eig, dvec, C4, params, tol)
        logs.append(r)
        if r.accepted:
            cur = r.rescaled
            eig = solve_first_eigen(cur, tol, "direct")
    return SweepResult(cur, logs, lam_init, eig.lambda1, F_init,
                       f_tilde(cur, eig.lambda1, params), d_init, diameter(cur),
                       sens)
