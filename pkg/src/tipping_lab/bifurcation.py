"""Steady states, pseudo-arclength continuation, folds, stability.

Everything here is dimension-agnostic: the same machinery traces the scalar
learned-drift curves and the 79-node discretized density equation.  Tangents
are secants (adequate at these sizes and free of bordered solves), correction
is damped Newton on the augmented system, and the arclength step adapts to
corrector behavior.  Newton's linear solve goes through lstsq, so residuals
with a structurally rank-deficient Jacobian (conservative discretizations)
still produce the minimum-norm step instead of blowing up.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import NumericalError


class NewtonError(NumericalError):
    """Non-convergence; carries the last iterate and its residual norm."""

    def __init__(self, message, last_x=None, residual_norm=None):
        super().__init__(message)
        self.last_x = last_x
        self.residual_norm = residual_norm


@dataclass
class SteadyState:
    state: np.ndarray
    g: float
    leading_eig: float = np.nan
    stable: bool = False


@dataclass
class Branch:
    points: List[SteadyState]
    ds: float
    direction: int
    ds_used: List[float] = field(default_factory=list)  # per-point step target
    note: str = ""

    def __len__(self):
        return len(self.points)

    def gs(self):
        return np.array([p.g for p in self.points])


@dataclass(frozen=True)
class FoldPoint:
    state: np.ndarray
    g: float
    bracket: Tuple[int, int]  # branch indices straddling the tangent flip
    dg_ds: float = 0.0


@dataclass(frozen=True)
class Stability:
    leading_eig: float
    stable: bool
    marginal: bool


def fd_jacobian(f, x, fx=None):
    """Forward-difference Jacobian, per-column step 1e-6 * (1 + |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x)) if fx is None else np.asarray(fx)
    jac = np.empty((f0.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        jac[:, i] = (np.asarray(f(xp)) - f0) / h
    return jac


def _eval_residual(residual, x):
    """Residual evaluation that maps model blow-ups to 'infeasible' (None)."""
    try:
        fx = np.atleast_1d(np.asarray(residual(x), dtype=np.float64))
    except NumericalError:
        return None
    if not np.isfinite(fx).all():
        return None
    return fx


def _newton(residual, x0, tol, max_iter=50, jacobian=None):
    """Damped Newton; returns (x, iterations, residual_norm)."""
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    fx = _eval_residual(residual, x)
    if fx is None:
        raise NewtonError("residual undefined at start", last_x=x,
                          residual_norm=np.inf)
    norm = np.abs(fx).max()
    for it in range(max_iter):
        if norm < tol:
            return x, it, norm
        try:
            jac = fd_jacobian(residual, x, fx) if jacobian is None \
                else np.atleast_2d(jacobian(x))
        except NumericalError:
            raise NewtonError("Jacobian undefined near iterate", last_x=x,
                              residual_norm=norm)
        if not np.isfinite(jac).all():
            raise NewtonError("Jacobian not finite", last_x=x, residual_norm=norm)
        step = np.linalg.lstsq(jac, -fx, rcond=None)[0]
        lam = 1.0
        for _ in range(9):  # full step plus 8 halvings
            x_try = x + lam * step
            f_try = _eval_residual(residual, x_try)
            if f_try is not None and np.abs(f_try).max() < norm:
                x, fx, norm = x_try, f_try, np.abs(f_try).max()
                break
            lam *= 0.5
        else:
            raise NewtonError(
                "line search stalled at residual %.3e" % norm,
                last_x=x, residual_norm=norm,
            )
    if norm < tol:
        return x, max_iter, norm
    raise NewtonError(
        "no convergence in %d iterations, residual %.3e" % (max_iter, norm),
        last_x=x, residual_norm=norm,
    )


def newton_solve(residual, x0, tol: float = 1e-10, max_iter: int = 50,
                 jacobian=None):
    """Damped Newton root of residual(x) = 0 started at x0.

    jacobian, when given, is a callable x -> matrix (e.g. a network's exact
    input gradient); otherwise forward finite differences.
    """
    x, _, _ = _newton(residual, x0, tol, max_iter, jacobian)
    return x


def find_zeros_1d(f, interval, n_scan: int = 200):
    """All roots of a scalar function found by uniform scan plus bisection.

    An empty list is a valid outcome (no steady states left).  Roots are
    bisected to 1e-10 and deduplicated.
    """
    if n_scan < 10:
        raise ValueError("n_scan must be at least 10")
    lo, hi = interval
    xs = np.linspace(lo, hi, n_scan)
    fs = np.array([f(x) for x in xs], dtype=np.float64)
    roots = [float(x) for x, v in zip(xs, fs) if v == 0.0]
    for i in range(n_scan - 1):
        if fs[i] == 0.0 or fs[i + 1] == 0.0 or np.sign(fs[i]) == np.sign(fs[i + 1]):
            continue
        a, b, fa = xs[i], xs[i + 1], fs[i]
        while b - a > 1e-10:
            m = 0.5 * (a + b)
            fm = f(m)
            if fm == 0.0:
                a = b = m
                break
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b = m
        roots.append(0.5 * (a + b))
    roots.sort()
    out = []
    for r in roots:
        if not out or abs(r - out[-1]) > 1e-8:
            out.append(r)
    return out


def stability(jac) -> Stability:
    """Leading eigenvalue of a steady-state Jacobian and its verdict.

    Scalar input is the drift slope; matrices get a dense eigensolve.  A
    leading eigenvalue within 1e-6 of zero is flagged marginal (fold).
    """
    arr = np.atleast_2d(np.asarray(jac, dtype=np.float64))
    if arr.shape[0] != arr.shape[1]:
        raise ValueError("Jacobian must be square")
    if arr.shape == (1, 1):
        lead = float(arr[0, 0])
    else:
        lead = float(np.max(np.linalg.eigvals(arr).real))
    return Stability(leading_eig=lead, stable=lead < 0.0, marginal=abs(lead) < 1e-6)


def _classify(residual, state, g, stability_jacobian):
    if stability_jacobian is not None:
        jac = stability_jacobian(state, g)
    else:
        jac = fd_jacobian(lambda s: np.atleast_1d(residual(s, g)), state)
    return stability(jac)


def continue_branch(residual, seed: SteadyState, ds: float, n_steps: int,
                    direction: int = 1, newton_tol: float = 1e-8,
                    stability_jacobian: Optional[Callable] = None) -> Branch:
    """Pseudo-arclength continuation of residual(state, g) = 0 from seed.

    The first step bootstraps with natural (parameter) continuation toward
    g + direction*ds; afterwards the predictor extrapolates along the secant
    tangent and the corrector is Newton on [residual; tangent . delta - ds].
    The step halves when the corrector fails, grows 20% on fast convergence,
    and is clamped to [ds/32, 4*ds]; underflow truncates the branch with a
    note.  Each accepted point gets a stability verdict (stability_jacobian
    overrides the default finite-difference Jacobian of the residual, e.g.
    to project out a conserved mode).
    """
    x0 = np.atleast_1d(np.asarray(seed.state, dtype=np.float64))
    dim = x0.shape[0]
    verdict = _classify(residual, x0, seed.g, stability_jacobian)
    points = [SteadyState(state=x0.copy(), g=float(seed.g),
                          leading_eig=verdict.leading_eig, stable=verdict.stable)]
    ds_used = [0.0]

    # bootstrap: natural continuation one parameter step away
    dg = direction * ds
    for _ in range(6):
        try:
            x1, _, _ = _newton(lambda s: np.atleast_1d(residual(s, seed.g + dg)),
                               x0, newton_tol)
            break
        except NewtonError:
            dg *= 0.5
    else:
        return Branch(points, ds, direction, ds_used,
                      note="bootstrap failed: no nearby solution in g")
    y_prev = np.concatenate([x0, [seed.g]])
    y = np.concatenate([x1, [seed.g + dg]])
    tangent = (y - y_prev) / np.linalg.norm(y - y_prev)
    verdict = _classify(residual, x1, seed.g + dg, stability_jacobian)
    points.append(SteadyState(state=x1.copy(), g=float(seed.g + dg),
                              leading_eig=verdict.leading_eig, stable=verdict.stable))
    ds_used.append(abs(dg))

    ds_cur = ds
    note = ""
    while len(points) < n_steps:
        y_pred = y + ds_cur * tangent

        def aug(z):
            r = np.atleast_1d(residual(z[:dim], z[dim]))
            return np.concatenate([r, [tangent @ (z - y) - ds_cur]])

        try:
            z, iters, _ = _newton(aug, y_pred, newton_tol)
        except NewtonError:
            ds_cur *= 0.5
            if ds_cur < ds / 32.0:
                note = "arclength step underflow at g=%.6f" % y[dim]
                break
            continue
        tangent = (z - y) / np.linalg.norm(z - y)
        ds_used.append(float(ds_cur))
        y = z
        verdict = _classify(residual, z[:dim], z[dim], stability_jacobian)
        points.append(SteadyState(state=z[:dim].copy(), g=float(z[dim]),
                                  leading_eig=verdict.leading_eig,
                                  stable=verdict.stable))
        if iters <= 3:
            ds_cur = min(ds_cur * 1.2, 4.0 * ds)
    return Branch(points, ds, direction, ds_used, note=note)


def _fold_system(residual, dim, c):
    """Extended system for an exact fold solve: F = 0, J v = 0, c.v = 1.

    J v by central differences; the evaluation floor of the forward variant
    (~1e-8) would sit above the solve tolerance.
    """

    def system(z):
        x, g, v = z[:dim], z[dim], z[dim + 1:]
        fx = np.atleast_1d(residual(x, g))
        vn = np.linalg.norm(v)
        h = 1e-6 * (1.0 + np.abs(x).max()) / max(vn, 1e-12)
        jv = (np.atleast_1d(residual(x + h * v, g))
              - np.atleast_1d(residual(x - h * v, g))) / (2.0 * h)
        return np.concatenate([fx, jv, [c @ v - 1.0]])

    return system


def detect_fold(branch: Branch, residual=None) -> FoldPoint:
    """Locate the turning point where the tangent's g-component flips sign.

    Refinement: quadratic fit of g against chordal arclength around the
    bracket; when the residual is supplied the fold is then solved exactly
    (state, g, null vector) from that starting guess.
    """
    if len(branch) < 3:
        raise ValueError("need at least 3 branch points to look for a fold")
    states = np.array([np.atleast_1d(p.state) for p in branch.points])
    gs = branch.gs()
    dg = np.diff(gs)
    flips = [i for i in range(len(dg) - 1)
             if dg[i] == 0.0 or np.sign(dg[i]) != np.sign(dg[i + 1])]
    if not flips:
        raise NumericalError("no fold on branch: parameter is monotone")
    i = flips[0]
    bracket = (i, i + 2)

    # chordal arclength through the three points around the flip
    ys = np.hstack([states[i:i + 3], gs[i:i + 3, None]])
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ys, axis=0), axis=1))])
    coef = np.polyfit(s, gs[i:i + 3], 2)
    s_star = float(np.clip(-coef[1] / (2.0 * coef[0]), s[0], s[-1]))
    g_star = float(np.polyval(coef, s_star))
    x_star = np.array([
        np.polyval(np.polyfit(s, states[i:i + 3, k], 2), s_star)
        for k in range(states.shape[1])
    ])
    dg_ds = float(2.0 * coef[0] * s_star + coef[1])

    if residual is None:
        return FoldPoint(state=x_star, g=g_star, bracket=bracket, dg_ds=dg_ds)

    # exact refinement: null direction seeded with the state-space secant
    dim = states.shape[1]
    v0 = states[i + 2] - states[i]
    nv = np.linalg.norm(v0)
    v0 = np.ones(dim) if nv == 0 else v0 / nv
    c = v0.copy()
    z0 = np.concatenate([x_star, [g_star], v0])
    try:
        z = newton_solve(_fold_system(residual, dim, c), z0, tol=1e-8)
    except NewtonError as err:
        # the FD noise floor of J v can stall the line search just above
        # tol; a stall this deep still pins the fold far below 1e-6 in g
        if err.last_x is None or err.residual_norm > 1e-6:
            raise
        z = err.last_x
    return FoldPoint(state=z[:dim], g=float(z[dim]), bracket=bracket, dg_ds=0.0)


def export_branch_csv(branch: Branch, path, summary=None):
    """Write ordered (g, summary, leading_eig, stable) records for plotting."""
    if summary is None:
        summary = lambda s: float(np.atleast_1d(s)[0]) if np.atleast_1d(s).size == 1 \
            else float(np.mean(s))
    with open(path, "w") as fh:
        fh.write("g,summary,leading_eig,stable\n")
        for p in branch.points:
            fh.write("%.12g,%.12g,%.12g,%d\n"
                     % (p.g, summary(p.state), p.leading_eig, int(p.stable)))
