"""Composite functionals, ball references and inequality checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .errors import DegenerateError, DomainError, PreconditionError
from .fields import solve_first_eigen, solve_torsion
from .geometry import (GridSpec, NecklaceSpec, diameter, fraenkel_asymmetry,
                       is_connected, make_ball, make_necklace, BallSpec,
                       unit_ball_volume, unit_measure_radius)
from .riesz import riesz_energy

ASYM_RATIO_THRESHOLD = 0.02


def slack(ref):
    """Inequality slack max(1e-6, 1e-3 |ref|)."""
    return max(1e-6, 1e-3 * abs(ref))


# --------------------------------------------------------------------------
# ball references
# --------------------------------------------------------------------------

def ball_torsion_energy(N, measure=1.0):
    """E(B) = -omega_N R^(N+2) / (2N(N+2)) for the ball of given measure."""
    R = unit_measure_radius(N, measure)
    return -unit_ball_volume(N) * R ** (N + 2) / (2 * N * (N + 2))


def bessel_first_zero(nu):
    if float(nu).is_integer():
        return float(special.jn_zeros(int(nu), 1)[0])
    # first zero lies in (nu, nu + 2 sqrt(nu + 1) + 2]
    return optimize.brentq(lambda x: special.jv(nu, x), max(nu, 1e-3) + 1e-6,
                           nu + 2 * math.sqrt(nu + 1) + 2.5, xtol=1e-15)


def ball_eigenvalue(N, measure=1.0):
    """lambda_1 of the ball of given measure: (j_{N/2-1,1} / R)^2."""
    R = unit_measure_radius(N, measure)
    return (bessel_first_zero(N / 2 - 1) / R) ** 2


def _lens_measure(N, r, R=1.0):
    """|B_R(0) cap B_R(z)| for |z| = r."""
    if N == 2:
        return 2 * R * R * np.arccos(r / (2 * R)) - 0.5 * r * np.sqrt(4 * R * R - r * r)
    if N == 3:
        return np.pi * (4 * R + r) * (2 * R - r) ** 2 / 12
    raise DomainError("dimension must be 2 or 3")


def ball_riesz_energy(N, alpha, measure=1.0):
    """V_alpha of the ball: |S^(N-1)| int_0^(2R) r^(alpha-1) |B cap (B+r e)| dr.

    The r^(alpha - 1) endpoint singularity is handled by the algebraic
    weight of QUADPACK; the result is accurate to ~1e-13.
    """
    if not 0 < alpha < N + 2:
        raise DomainError("alpha out of range")
    R = unit_measure_radius(N, measure)
    sphere = N * unit_ball_volume(N)
    val, _ = integrate.quad(lambda r: _lens_measure(N, r), 0.0, 2.0,
                            weight="alg", wvar=(alpha - 1, 0.0),
                            epsabs=0, epsrel=1e-13, limit=200)
    return sphere * val * R ** (N + alpha)


# --------------------------------------------------------------------------
# penalty and reports
# --------------------------------------------------------------------------

def f_eta(s, eta):
    """Piecewise-linear volume penalty: slope eta below 1, 1/eta above."""
    if not 0 < eta < 1:
        raise DomainError("eta must lie in (0, 1)")
    s = np.asarray(s, float)
    if np.any(s < 0):
        raise DomainError("measure must be nonnegative")
    out = np.where(s <= 1, eta * (s - 1), (s - 1) / eta)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PenaltyParams:
    eta: float = 0.5
    epsilon: float = 0.0
    alpha: float = 1.5
    R: float = 2.0

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise DomainError("eta must lie in (0, 1)")
        if not self.epsilon >= 0:
            raise DomainError("epsilon must be nonnegative")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not self.R > 0:
            raise DomainError("container radius must be positive")


def penalty_lower_bound(N, R, eta):
    """omega_N^((N+2)/N) E(B) R^(N+2) - eta with B of unit measure."""
    return unit_ball_volume(N) ** ((N + 2) / N) * ball_torsion_energy(N) * R ** (N + 2) - eta


@dataclass
class FunctionalReport:
    measure: float
    E: float
    V: float
    F: float
    G: float
    lambda1: float = None
    F_tilde: float = None
    asymmetry: float = None
    deficits: dict = field(default_factory=dict)
    params: PenaltyParams = None

    def as_dict(self):
        d = {k: getattr(self, k) for k in ("measure", "E", "lambda1", "V", "F",
                                            "F_tilde", "G", "asymmetry")}
        d.update({f"deficit_{k}": v for k, v in self.deficits.items()})
        return d


_EVAL_CACHE = {}


def _cached(dom, name, fn):
    key = (dom.key(), name)
    if key not in _EVAL_CACHE:
        if len(_EVAL_CACHE) > 512:
            _EVAL_CACHE.clear()
        _EVAL_CACHE[key] = fn()
    return _EVAL_CACHE[key]


def torsion_energy(dom, tol=1e-8, method="cg"):
    return _cached(dom, ("E", tol), lambda: solve_torsion(dom, tol, method).energy)


def first_eigenvalue(dom, tol=1e-8, method="cg"):
    return _cached(dom, ("lam", tol),
                   lambda: solve_first_eigen(dom, tol, method).lambda1)


def riesz(dom, alpha):
    return _cached(dom, ("V", float(alpha)), lambda: riesz_energy(dom, alpha))


def evaluate_all(dom, params, with_eigen=True, with_asymmetry=True,
                 enforce_container=False, tol=1e-8, method="cg"):
    """Assemble every scalar of the report for one domain."""
    if enforce_container:
        pts = dom.points()
        if len(pts) and np.linalg.norm(pts, axis=1).max() + dom.h * math.sqrt(dom.dim) / 2 > params.R:
            raise PreconditionError("domain does not fit in the container ball")
    m = dom.volume
    E = torsion_energy(dom, tol, method)
    V = riesz(dom, params.alpha)
    F = E + params.epsilon * V
    G = F + f_eta(m, params.eta)
    lam = Ft = None
    if with_eigen:
        lam = first_eigenvalue(dom, tol, method)
        Ft = lam + params.epsilon * V
    A = fraenkel_asymmetry(dom)[0] if with_asymmetry else None
    return FunctionalReport(m, E, V, F, G, lam, Ft, A, {}, params)


# --------------------------------------------------------------------------
# deficits
# --------------------------------------------------------------------------

@dataclass
class DeficitReport:
    name: str
    deficit: float
    relative: float
    asymmetry: float
    ratio: float = None
    ok: bool = True


def _deficit(name, value, ref, dom, asymmetry):
    A = fraenkel_asymmetry(dom)[0] if asymmetry is None else asymmetry
    d = value - ref
    ratio = d / A ** 2 if A > ASYM_RATIO_THRESHOLD else None
    return DeficitReport(name, d, d / abs(ref), A, ratio, d >= -slack(ref))


def saint_venant_deficit(dom, asymmetry=None, tol=1e-8):
    """E(Omega)|Omega|^(-(N+2)/N) - E(B)|B|^(-(N+2)/N)."""
    N = dom.dim
    val = torsion_energy(dom, tol) * dom.volume ** (-(N + 2) / N)
    return _deficit("saint_venant", val, ball_torsion_energy(N), dom, asymmetry)


def faber_krahn_deficit(dom, asymmetry=None, tol=1e-8):
    """|Omega|^(2/N) lambda_1(Omega) - |B|^(2/N) lambda_1(B)."""
    N = dom.dim
    val = first_eigenvalue(dom, tol) * dom.volume ** (2 / N)
    return _deficit("faber_krahn", val, ball_eigenvalue(N), dom, asymmetry)


def riesz_deficit(dom, alpha, asymmetry=None):
    """V(B)|B|^(-(N+alpha)/N) - V(Omega)|Omega|^(-(N+alpha)/N)."""
    N = dom.dim
    val = riesz(dom, alpha) * dom.measure ** (-(N + alpha) / N)
    ref = ball_riesz_energy(N, alpha)
    r = _deficit("riesz", -val, -ref, dom, asymmetry)
    return r


def kohler_jobin_check(dom, tol=1e-8):
    """lambda_1(Omega)/lambda_1(B) against (E(B)/E(Omega))^(2/(N+2)),
    with B the ball of the same measure."""
    if not is_connected(dom):
        raise PreconditionError("Kohler-Jobin check needs a connected domain")
    N = dom.dim
    m = dom.volume
    lhs = first_eigenvalue(dom, tol) / ball_eigenvalue(N, m)
    rhs = (ball_torsion_energy(N, m) / torsion_energy(dom, tol)) ** (2 / (N + 2))
    return float(lhs), float(rhs), bool(lhs >= rhs - slack(rhs))


# --------------------------------------------------------------------------
# scaling maps and the margin function
# --------------------------------------------------------------------------

def mass_to_epsilon_eigen(m, N, alpha):
    if not m > 0:
        raise DomainError("mass must be positive")
    t = m ** (1.0 / N)
    return t ** (N + alpha + 2)


def mass_to_epsilon_torsion(m, N, alpha):
    if not m > 0:
        raise DomainError("mass must be positive")
    t = m ** (1.0 / N)
    return t ** (alpha - 2)


def _ratio(t, p, N):
    """(1 - t^p)/(1 - t^N) evaluated without cancellation near t = 1."""
    t = np.asarray(t, float)
    out = np.full(t.shape, p / N)
    inner = t < 1
    lt = np.log(np.where(t[inner] > 0, t[inner], 1.0))
    num = np.where(t[inner] > 0, -np.expm1(p * lt), 1.0)
    den = np.where(t[inner] > 0, -np.expm1(N * lt), 1.0)
    out[inner] = num / den
    return out


def margin_function(t, P, Q, N, alpha):
    """u(t) = (P(1 - t^(N+2)) - Q(1 - t^(N+alpha)))/(1 - t^N), u(1) by its limit."""
    return P * _ratio(t, N + 2, N) - Q * _ratio(t, N + alpha, N)


def penalty_margin(P, Q, N, alpha, grid=1000):
    """Infimum of u over [0, 1]: uniform grid scan, then bounded refinement
    around the best grid point."""
    if not P > 0 or not Q >= 0:
        raise DomainError("need P > 0 and Q >= 0")
    if grid < 1000:
        raise DomainError("grid must have at least 1000 points")
    t = np.linspace(0.0, 1.0, grid + 1)
    u = margin_function(t, P, Q, N, alpha)
    i = int(np.argmin(u))
    best_t, best_u = float(t[i]), float(u[i])
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, grid)]
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda s: float(margin_function(np.array([s]), P, Q, N, alpha)[0]),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if res.fun < best_u:
            best_t, best_u = float(res.x), float(res.fun)
    return best_u, best_t


def margin_constants(N, alpha, samples=100001):
    """m_f = min f and M_g = max g over [0, 1] for f(t) = (1-t^(N+2))/(1-t^N)
    and g(t) = (1-t^(N+alpha))/(1-t^N), by dense sampling."""
    t = np.linspace(0.0, 1.0, samples)
    return float(_ratio(t, N + 2, N).min()), float(_ratio(t, N + alpha, N).max())


# --------------------------------------------------------------------------
# necklace competition
# --------------------------------------------------------------------------

@dataclass
class NecklaceBounds:
    delta: float
    epsilon: float
    k: int
    lower_ball_side: float       # E(B) + eps d(delta)^(alpha-N)
    upper_necklace_side: float   # k^(-2/N)E(B) + eps k^(-alpha/N)V(B) + eps (k-1)/(k q^(N-alpha))
    necklace_wins: bool
    F_ball: float
    F_necklace: float
    E_ball: float
    V_ball: float
    E_necklace: float
    V_necklace: float
    analytic_ball: float         # E(B) + eps V(B) with closed-form references
    analytic_necklace: float     # same for the necklace incl. point-mass cross terms
    q: float
    in_regime: bool

    def flip_epsilon(self):
        """Crossing of the two (affine in eps) numeric energies."""
        dv = self.V_ball - self.V_necklace
        if dv <= 0:
            return math.inf
        return (self.E_necklace - self.E_ball) / dv


def necklace_geometry(delta, N=2, gap_factor=6.0, n_per_radius=16):
    """k, necklace spec and grid used for the numeric comparison."""
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    k = int(math.floor(delta ** (-N) + 1e-12))
    if k < 2:
        raise DegenerateError("k = floor(delta^-N) < 2")
    neck = NecklaceSpec.from_measure(k, 1.0, N)
    q = gap_factor * 2 * neck.r
    neck = NecklaceSpec.from_measure(k, 1.0, N, q=q)
    h = neck.r / n_per_radius
    side = neck.length() + 4 * neck.r
    n = int(math.ceil(side / h))
    n += n % 2
    return k, neck, GridSpec.centered(N, n, n * h)


def necklace_cross_energy(neck, alpha):
    """Point-mass interaction sum_{i != j} m^2 / |x_i - x_j|^(N - alpha)."""
    c = neck.ball_centers()
    m = neck.total / neck.k
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    off = ~np.eye(neck.k, dtype=bool)
    return float(np.sum(m * m * d[off] ** (alpha - neck.dim)))


def necklace_bounds(delta, epsilon, N=2, alpha=1.5, gap_factor=6.0,
                    n_per_radius=16, tol=1e-8):
    """Ball versus k = floor(delta^-N) separated balls at unit total measure.

    Numeric energies come from rasterized sets; the analytic sides are the
    lower bound E(B) + eps d^(alpha-N) (d the length of the tangent chain
    of k balls, an upper bound for the diameter of connected competitors)
    and the necklace upper estimate with unit constants.
    """
    if not epsilon >= 0:
        raise DomainError("epsilon must be nonnegative")
    k, neck, spec = necklace_geometry(delta, N, gap_factor, n_per_radius)
    in_regime = N - 1 < alpha < N
    dom_neck = make_necklace(spec, neck)
    rb = unit_measure_radius(N)
    bspec = GridSpec.centered(N, int(math.ceil(2.5 * rb / spec.h)) + 2,
                              (int(math.ceil(2.5 * rb / spec.h)) + 2) * spec.h)
    dom_ball = make_ball(bspec, BallSpec((0.0,) * N, rb))
    E_b = torsion_energy(dom_ball, tol)
    V_b = riesz(dom_ball, alpha)
    E_n = torsion_energy(dom_neck, tol)
    V_n = riesz(dom_neck, alpha)
    EB = ball_torsion_energy(N)
    VB = ball_riesz_energy(N, alpha)
    chain = NecklaceSpec.from_measure(k, 1.0, N).length()
    lower = EB + epsilon * chain ** (alpha - N)
    upper = (k ** (-2 / N) * EB + epsilon * k ** (-alpha / N) * VB
             + epsilon * (k - 1) / (k * neck.q ** (N - alpha)))
    an_ball = EB + epsilon * VB
    an_neck = (k ** (-2 / N) * EB + epsilon * (k ** (-alpha / N) * VB
                                                + necklace_cross_energy(neck, alpha)))
    Fb = E_b + epsilon * V_b
    Fn = E_n + epsilon * V_n
    return NecklaceBounds(delta, epsilon, k, lower, upper, bool(Fn < Fb), Fb, Fn,
                          E_b, V_b, E_n, V_n, an_ball, an_neck, neck.q, in_regime)


def necklace_flip_point(delta, N=2, alpha=1.5, eps_max=10.0, tol=1e-6, **kw):
    """Bisection in eps on the sign of F(necklace) - F(ball).

    Returns (eps_flip, bounds at eps_flip) or (inf, None) if the necklace
    never wins below ``eps_max``.
    """
    base = necklace_bounds(delta, 0.0, N, alpha, **kw)

    def gap(eps):
        return (base.E_necklace + eps * base.V_necklace) - (base.E_ball + eps * base.V_ball)

    if gap(eps_max) >= 0:
        return math.inf, None
    lo, hi = 0.0, eps_max
    while hi - lo > tol * max(hi, 1e-12):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            hi = mid
        else:
            lo = mid
    return hi, necklace_bounds(delta, hi, N, alpha, **kw)
