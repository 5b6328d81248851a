"""Shape-gradient descent over planar star-shaped Fourier boundaries."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage, optimize

from .errors import (DomainError, InsufficientBoundaryError, RieszLabError,
                     SolverError)
from .fields import boundary_flux, solve_first_eigen, solve_torsion
from .functionals import (PenaltyParams, ball_eigenvalue, ball_riesz_energy,
                          ball_torsion_energy, f_eta)
from .geometry import GridSpec, StarBoundary, fraenkel_asymmetry, rasterize_star
from .riesz import riesz_energy, riesz_potential

log = logging.getLogger(__name__)

FUNCTIONALS = ("F", "F_tilde", "G")


@dataclass(frozen=True)
class DescentConfig:
    """Descent settings.

    ``volume="project"`` evaluates the scale-invariant form of the
    functional and rescales R to the target area after every step;
    ``"penalty"`` (forced for ``functional="G"``) optimizes R as well and
    relies on f_eta.  The finite-difference step for each coefficient is
    max(1e-3, fd_factor * h / R).  Convergence means the gradient fell
    below ``gtol`` times its first value, an accepted step lowered the
    functional by less than ``ftol`` relative, or an unshrunk step moved
    every coefficient by less than ``tol``.  Backtracking underflow counts
    as convergence once the gradient is below ``noise_gtol`` times its
    first value (the remaining slope is rasterization noise), and as
    stagnation otherwise.
    """

    params: PenaltyParams = PenaltyParams()
    functional: str = "F"
    max_mode: int = 4
    step_rule: str = "backtracking"
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_move: float = 0.05
    volume: str = "project"
    max_iter: int = 40
    tol: float = 1e-4
    gtol: float = 1e-2
    ftol: float = 1e-10
    noise_gtol: float = 0.1
    n: int = 96
    side: float = 2.6
    fd_factor: float = 2.0
    solver: str = "direct"
    solver_tol: float = 1e-9
    target: float = 1.0
    trace_asymmetry: bool = True
    trace_residual: bool = False

    def __post_init__(self):
        if self.functional not in FUNCTIONALS:
            raise DomainError(f"functional must be one of {FUNCTIONALS}")
        if self.max_mode < 2:
            raise DomainError("max_mode must be at least 2")
        if not self.initial_step > 0 or not 0 < self.shrink < 1:
            raise DomainError("invalid step rule")
        if not self.tol > 0 or not self.gtol >= 0 or not self.fd_factor > 0:
            raise DomainError("tolerances and fd_factor must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise DomainError("step rule must be fixed or backtracking")
        if self.volume not in ("project", "penalty"):
            raise DomainError("volume handling must be project or penalty")
        if self.functional == "G" and self.volume != "penalty":
            object.__setattr__(self, "volume", "penalty")

    def grid(self):
        return GridSpec.centered(2, self.n, self.side)


@dataclass
class Evaluation:
    J: float
    E: float
    V: float
    lambda1: float
    volume: float
    measure: float
    dom: object


@dataclass
class TraceRecord:
    iteration: int
    F: float
    E: float
    V: float
    lambda1: float
    measure: float
    asymmetry: float
    residual_std: float
    step: float

    def row(self):
        return [self.iteration, self.F, self.E, self.V, self.measure,
                self.asymmetry, self.residual_std, self.step]


TRACE_COLUMNS = ["iteration", "F", "E", "V", "measure", "asymmetry",
                 "residual_std", "step"]


@dataclass
class DescentResult:
    final: StarBoundary
    trace: list
    status: str
    iterations: int
    final_evaluation: Evaluation = None
    residual: object = None


def penalty_eta_limit(N, alpha, epsilon, functional="F"):
    """Largest eta for which the unit ball is stationary-from-below in G.

    Below measure 1 the penalty slope eta must be smaller than the rate at
    which the unpenalized functional of balls decreases with measure,
    -d/dm (E + eps V)(B_m) at m = 1, otherwise G-descent shrinks the set.
    """
    rep = epsilon * (N + alpha) / N * ball_riesz_energy(N, alpha)
    if functional == "F_tilde":
        att = 2.0 / N * ball_eigenvalue(N)
    else:
        att = -(N + 2) / N * ball_torsion_energy(N)
    return att - rep


# --------------------------------------------------------------------------
# functional evaluation
# --------------------------------------------------------------------------

def evaluate_boundary(boundary, config):
    """Rasterize ``boundary`` and evaluate the configured functional."""
    dom = rasterize_star(boundary, config.grid())
    p = config.params
    N = 2
    vol = dom.volume
    meas = dom.measure
    V = riesz_energy(dom, p.alpha) if p.epsilon > 0 else 0.0
    E = lam = float("nan")
    scale = config.volume == "project"
    if config.functional in ("F", "G"):
        E = solve_torsion(dom, config.solver_tol, config.solver).energy
    if config.functional == "F_tilde":
        lam = solve_first_eigen(dom, config.solver_tol, config.solver).lambda1
    if scale:
        # torsion and eigenvalue see the sub-cell boundary, the Riesz term
        # the occupied cells; normalize each by its own measure
        Vn = V * meas ** (-(N + p.alpha) / N)
        if config.functional == "F_tilde":
            J = lam * vol ** (2 / N) + p.epsilon * Vn
        else:
            J = E * vol ** (-(N + 2) / N) + p.epsilon * Vn
    else:
        base = lam if config.functional == "F_tilde" else E
        J = base + p.epsilon * V + f_eta(vol, p.eta)
    return Evaluation(float(J), E, V, lam, vol, meas, dom)


def _pack(boundary, config):
    K = config.max_mode
    a = np.pad(np.asarray(boundary.a), (0, max(0, K - boundary.max_mode)))
    b = np.pad(np.asarray(boundary.b), (0, max(0, K - boundary.max_mode)))
    x = np.concatenate([a[1:K], b[1:K]])
    if config.volume == "penalty":
        x = np.append(x, math.log(boundary.R))
    return x


def _unpack(x, start, config):
    K = config.max_mode
    a = np.zeros(K)
    b = np.zeros(K)
    if start.max_mode >= 1:
        a[0], b[0] = start.a[0], start.b[0]
    a[1:K] = x[:K - 1]
    b[1:K] = x[K - 1:2 * K - 2]
    R = math.exp(x[-1]) if config.volume == "penalty" else start.R
    bd = StarBoundary(R, start.center, a, b)
    if config.volume == "project":
        bd = bd.scaled_to_area(config.target)
    return bd


def fd_step(boundary, config):
    h = config.side / config.n
    return max(1e-3, config.fd_factor * h / boundary.R)


def shape_gradient(boundary, config, return_values=False):
    """Central finite-difference gradient with respect to the free
    coefficients (a_2..a_K, b_2..b_K, and log R in penalty mode)."""
    x0 = _pack(boundary, config)
    da = fd_step(boundary, config)
    g = np.zeros_like(x0)
    for i in range(len(x0)):
        step = da
        if config.volume == "penalty" and i == len(x0) - 1:
            step = min(da, 0.02)
        try:
            xp = x0.copy()
            xp[i] += step
            xm = x0.copy()
            xm[i] -= step
            jp = evaluate_boundary(_unpack(xp, boundary, config), config).J
            jm = evaluate_boundary(_unpack(xm, boundary, config), config).J
        except SolverError as exc:
            exc.index = i
            raise
        g[i] = (jp - jm) / (2 * step)
    return g


# --------------------------------------------------------------------------
# descent
# --------------------------------------------------------------------------

def _record(it, ev, config, step):
    A = float("nan")
    if config.trace_asymmetry:
        A = fraenkel_asymmetry(ev.dom)[0]
    res = float("nan")
    if config.trace_residual:
        try:
            res = optimality_residual(ev.dom, config.params).relative_std
        except RieszLabError:
            pass
    return TraceRecord(it, ev.J, ev.E, ev.V, ev.lambda1, ev.volume, A, res, step)


def _fit_scale(x, start, config, ev, width=0.15):
    """Exact 1-D minimization of the penalized functional over log R.

    f_eta has a kink at measure 1, so finite differences in log R straddle
    it and a gradient step oscillates around it; a bounded scalar search
    locates the penalized optimum in the scale variable directly.
    """
    def J(lr):
        xx = x.copy()
        xx[-1] = lr
        try:
            return evaluate_boundary(_unpack(xx, start, config), config).J
        except (RieszLabError, ValueError):
            return float("inf")

    lr0 = x[-1]
    res = optimize.minimize_scalar(J, bounds=(lr0 - width, lr0 + width),
                                   method="bounded", options={"xatol": 1e-4})
    if res.fun < ev.J:
        x = x.copy()
        x[-1] = res.x
        bd = _unpack(x, start, config)
        return x, bd, evaluate_boundary(bd, config)
    return x, _unpack(x, start, config), ev


def descend(start, config):
    """Steepest descent with Armijo backtracking (or fixed steps).

    In penalty mode the shape coefficients take gradient steps and the
    scale is set by an exact line minimization after each step.
    """
    x = _pack(start, config)
    bd = _unpack(x, start, config)
    ev = evaluate_boundary(bd, config)
    penalty = config.volume == "penalty"
    if penalty:
        x, bd, ev = _fit_scale(x, start, config, ev)
    trace = [_record(0, ev, config, 0.0)]
    step = config.initial_step
    status = "max_iter"
    it = 0
    g0 = None
    for it in range(1, config.max_iter + 1):
        try:
            g = shape_gradient(bd, config)
        except SolverError:
            raise
        except RieszLabError as exc:
            # a finite-difference probe left the admissible star shapes
            status = "degenerate"
            log.info("gradient probe failed at iteration %d: %s", it, exc)
            break
        if penalty:
            g[-1] = 0.0
        gmax = float(np.max(np.abs(g)))
        g0 = gmax if g0 is None else g0
        if gmax <= config.gtol * g0 and it > 1 or gmax == 0:
            status = "converged"
            break
        s = min(step, config.max_move / gmax)
        s_try = s
        accepted = False
        while True:
            xn = x - s * g
            try:
                bn = _unpack(xn, start, config)
                en = evaluate_boundary(bn, config)
            except (RieszLabError, ValueError):
                en = None
            if config.step_rule == "fixed" and en is not None:
                accepted = True
                break
            if en is not None and en.J <= ev.J - config.armijo * s * float(g @ g):
                accepted = True
                break
            s *= config.shrink
            if s < 1e-6 * config.initial_step * min(1.0, config.max_move / gmax):
                break
        if not accepted:
            status = "converged" if gmax <= config.noise_gtol * g0 else "stagnated"
            log.info("backtracking underflow at iteration %d (gradient ratio %.3g)",
                     it, gmax / g0)
            break
        if penalty:
            xn, bn, en = _fit_scale(xn, start, config, en)
        dx = float(np.max(np.abs(xn - x)))
        flat = ev.J - en.J <= config.ftol * abs(ev.J)
        x, bd, ev = xn, bn, en
        trace.append(_record(it, ev, config, s))
        step = s / config.shrink
        if flat or dx < config.tol and s == s_try:
            status = "converged"
            break
    res = None
    try:
        res = optimality_residual(ev.dom, config.params)
    except RieszLabError:
        pass
    return DescentResult(bd, trace, status, it, ev, res)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

@dataclass
class OptimalityReport:
    Lambda: float
    residuals: np.ndarray
    points: np.ndarray
    relative_std: float
    coupling: float


def optimality_residual(dom, params, coupling=1.0, tol=1e-10, min_samples=8):
    """Boundary samples of q_u^2 - coupling * eps * v minus their mean.

    q_u is the torsion flux and v the Riesz potential, interpolated to the
    flux sample points.  ``coupling=1`` is the stated optimality
    condition; the first variation of E + eps V with E = -1/2 int w and
    V the double integral gives ``coupling=4``.
    """
    sol = solve_torsion(dom, tol, "direct")
    flux = boundary_flux(sol, dom)
    if len(flux.q) < min_samples:
        raise InsufficientBoundaryError(
            f"only {len(flux.q)} boundary samples")
    q2 = flux.q ** 2
    if params.epsilon > 0:
        pot = riesz_potential(dom, params.alpha).v
        idx = (flux.points - np.asarray(dom.spec.origin)) / dom.h - 0.5
        v = ndimage.map_coordinates(pot, idx.T, order=1, mode="nearest")
        val = q2 - coupling * params.epsilon * v
    else:
        val = q2
    Lam = float(val.mean())
    resid = val - Lam
    return OptimalityReport(Lam, resid, flux.points,
                            float(resid.std() / abs(Lam)), coupling)


@dataclass
class SphericalNorms:
    l2_sq: float
    h_half_sq: float
    spectrum: np.ndarray   # |c_k|^2 for k = 1..K (complex coefficients, both signs summed)


def nearly_spherical_norms(boundary):
    """l2_sq = R int phi^2 dtheta = pi R sum (a_k^2 + b_k^2);
    h_half_sq = pi R sum (1 + k)(a_k^2 + b_k^2)."""
    a = np.asarray(boundary.a)
    b = np.asarray(boundary.b)
    k = np.arange(1, len(a) + 1)
    p = a * a + b * b
    R = boundary.R
    return SphericalNorms(float(math.pi * R * p.sum()),
                          float(math.pi * R * ((1 + k) * p).sum()), p / 2)


@dataclass
class DeficitFit:
    mode: int
    amplitudes: np.ndarray
    e_deficits: np.ndarray
    v_deficits: np.ndarray
    e_slope: float
    e_r2: float
    v_slope: float
    v_r2: float
    excluded: list


def _loglog_fit(x, y):
    lx, ly = np.log(x), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1 - float(((ly - pred) ** 2).sum()) / ss if ss > 0 else 1.0
    return float(coef[0]), r2


def deficit_quadratic_fit(mode, amplitudes, params=None, n=256, side=2.4,
                          tol=1e-10):
    """Log-log slopes of the scale-invariant E- and V-deficits of
    r = R(1 + a cos(k theta)) against a.  Deficits are taken relative to
    the rasterized ball on the same grid so that the systematic part of
    the discretization error cancels."""
    params = params or PenaltyParams()
    amps = np.asarray(amplitudes, float)
    if len(amps) < 5:
        raise DomainError("need at least 5 amplitudes")
    if np.any(amps < 0) or np.any(amps > 0.2):
        raise DomainError("amplitudes must lie in [0, 0.2]")
    spec = GridSpec.centered(2, n, side)
    alpha = params.alpha
    N = 2

    def scaled(a):
        coeffs = np.zeros(mode)
        coeffs[mode - 1] = a
        bd = StarBoundary(1.0, (0.0, 0.0), coeffs, np.zeros(mode)).scaled_to_area(1.0)
        dom = rasterize_star(bd, spec)
        E = solve_torsion(dom, tol, "direct").energy * dom.volume ** (-(N + 2) / N)
        V = riesz_energy(dom, alpha) * dom.measure ** (-(N + alpha) / N)
        return E, V

    E0, V0 = scaled(0.0)
    ed, vd, keep, excluded = [], [], [], []
    for a in amps:
        if a == 0:
            excluded.append((a, "zero amplitude"))
            continue
        E, V = scaled(a)
        de, dv = E - E0, V0 - V
        if de <= 0 or dv <= 0:
            excluded.append((a, "non-positive deficit"))
            continue
        keep.append(a)
        ed.append(de)
        vd.append(dv)
    keep = np.asarray(keep)
    if len(keep) < 2:
        raise DomainError("fewer than two usable amplitudes")
    es, er = _loglog_fit(keep, np.asarray(ed))
    vs, vr = _loglog_fit(keep, np.asarray(vd))
    return DeficitFit(mode, keep, np.asarray(ed), np.asarray(vd), es, er, vs, vr,
                      excluded)


@dataclass
class ThresholdEstimate:
    functional: str
    modes: tuple
    amplitudes: tuple
    ratios: np.ndarray     # [mode, amplitude] attractive deficit / Riesz deficit
    bracket: tuple         # (min, max) over amplitudes of the min over modes

    @property
    def epsilon(self):
        return self.bracket[0]


def stability_threshold(functional="F_tilde", alpha=1.5, modes=(2, 3, 4),
                        amplitudes=(0.03, 0.06, 0.1), n=192, side=2.4,
                        tol=1e-10):
    """Measured epsilon below which the unit disk is stable against every
    tested single-mode perturbation.

    For each mode and amplitude the scale-invariant attractive deficit
    (E or lambda_1) is divided by the Riesz deficit; the smallest ratio
    over modes is the epsilon at which that perturbation stops paying.
    The bracket spans the amplitudes, so it brackets the small-amplitude
    limit when the deficits are close to quadratic.
    """
    if functional not in ("F", "F_tilde"):
        raise DomainError("threshold defined for F and F_tilde")
    spec = GridSpec.centered(2, n, side)
    N = 2

    def values(k, a):
        coeffs = np.zeros(k)
        coeffs[k - 1] = a
        bd = StarBoundary(1.0, (0.0, 0.0), coeffs, np.zeros(k)).scaled_to_area(1.0)
        dom = rasterize_star(bd, spec)
        if functional == "F":
            att = solve_torsion(dom, tol, "direct").energy * dom.volume ** (-(N + 2) / N)
        else:
            att = solve_first_eigen(dom, tol, "direct").lambda1 * dom.volume ** (2 / N)
        V = riesz_energy(dom, alpha) * dom.measure ** (-(N + alpha) / N)
        return att, V

    A0, V0 = values(2, 0.0)
    ratios = np.full((len(modes), len(amplitudes)), np.inf)
    for i, k in enumerate(modes):
        for j, a in enumerate(amplitudes):
            A, V = values(k, a)
            dv = V0 - V
            if dv > 0:
                ratios[i, j] = (A - A0) / dv
    per_amp = ratios.min(axis=0)
    return ThresholdEstimate(functional, tuple(modes), tuple(amplitudes), ratios,
                             (float(per_amp.min()), float(per_amp.max())))


def perturbed_start(seed, a2=0.15, max_mode=4, jitter=0.02, target=1.0):
    """Seeded start: mode-2 amplitude ``a2`` at a random phase plus small
    random higher modes, rescaled to the target area."""
    rng = np.random.default_rng(seed)
    a = np.zeros(max_mode)
    b = np.zeros(max_mode)
    ph = rng.uniform(0, np.pi)
    a[1], b[1] = a2 * math.cos(2 * ph), a2 * math.sin(2 * ph)
    if max_mode > 2:
        a[2:] = rng.uniform(-jitter, jitter, max_mode - 2)
        b[2:] = rng.uniform(-jitter, jitter, max_mode - 2)
    return StarBoundary(1.0, (0.0, 0.0), a, b).scaled_to_area(target)
