"""Closed mesoscopic density equation and its conservative finite-difference solver.

The agent density rho(t, x) on [-1, 1] obeys

    rho_t = (sigma^2/2) rho_xx + (mu rho)_x + (J+ + J-) delta(x)

with homogeneous Dirichlet boundaries, drift mu(x) = gamma x - nu+ eps+
- nu- eps-, diffusivity sigma^2 = nu+ eps+^2 + nu- eps-^2, and boundary
fluxes J+- re-injected at the origin (agents reset to 0 after acting).

The arrival rates close on the density itself: the perceived action rates
are the rates at which probability leaves through the decision boundaries,
i.e. the boundary fluxes, so nu+- = nu_ex+- + g * J+-.  Since J+- scale
with sigma^2, which itself depends on the rates, the pair (nu+, nu-)
solves a 2x2 linear system at every evaluation; its determinant hitting
zero is the closure blow-up (imminent bubble).  The cruder strip-mass
closure nu = nu_ex / (1 - g * strip mass) is kept as a separate diagnostic
(closure_rates); it underestimates the feedback because the Dirichlet
condition starves the jump-reach bands [1-eps+, 1] and [-1, -1+|eps-|].

Numerics: conservative Lax-Wendroff fluxes for the advective part, centered
differences for diffusion, all mass leaving through the boundary faces put
back into the node at x=0 within the same step, so the pre-clipping update
conserves mass to machine precision.  Lax-Wendroff is dispersive near sharp
features; negatives are clipped and the field renormalized to unit mass.
"""

from dataclasses import dataclass

import numpy as np

from .abm import AbmParams
from .errors import NumericalError


@dataclass(frozen=True)
class Grid1D:
    """Equispaced nodes on [-1, 1] with a node exactly at the origin."""

    n_points: int
    x: np.ndarray
    dx: float

    @classmethod
    def uniform(cls, n_points: int = 81):
        if n_points < 5 or n_points % 2 == 0:
            raise ValueError("n_points must be odd and >= 5 so a node sits at x=0")
        x = np.linspace(-1.0, 1.0, n_points)
        return cls(n_points=n_points, x=x, dx=2.0 / (n_points - 1))

    @property
    def center_index(self) -> int:
        return (self.n_points - 1) // 2


@dataclass
class FpState:
    rho: np.ndarray
    t: float
    grid: Grid1D

    def mass(self) -> float:
        return float(np.trapezoid(self.rho, self.grid.x))


@dataclass(frozen=True)
class FpCoefficients:
    sigma2: float
    mu: np.ndarray  # per node
    j_plus: float
    j_minus: float
    nu_plus: float
    nu_minus: float

    @property
    def source_mass(self) -> float:
        return self.j_plus + self.j_minus


def strip_integral(x, rho, lo: float, hi: float) -> float:
    """Trapezoid of rho over [lo, hi] with linear interpolation at the cuts."""
    if hi <= lo:
        raise ValueError("empty strip")
    n = 257  # strip is a couple of cells wide; fixed fine resampling is cheap
    xs = np.linspace(lo, hi, n)
    return float(np.trapezoid(np.interp(xs, x, rho), xs))


def closure_rates(state: FpState, params: AbmParams):
    """Strip-mass arrival rates nu+- = nu_ex+- / (1 - g * strip mass).

    Mean-field estimate: the action rate is the jump intensity times the
    mass sitting within one jump of the boundary.  The denominator hitting
    zero means the self-excitation feeds back faster than agents drain the
    strip: the closure blows up (imminent bubble).
    """
    x = state.grid.x
    s_plus = strip_integral(x, state.rho, 1.0 - params.eps_up, 1.0)
    s_minus = strip_integral(x, state.rho, -1.0, -1.0 + abs(params.eps_dn))
    out = []
    for nu_ex, s in ((params.nu_ex_up, s_plus), (params.nu_ex_dn, s_minus)):
        denom = 1.0 - params.g * s
        if denom <= 1e-12:
            raise NumericalError(
                "closure blow-up: g * strip mass = %.6f >= 1" % (params.g * s)
            )
        out.append(nu_ex / denom)
    return out[0], out[1]


def _boundary_slope(rho, dx, side: str) -> float:
    # one-sided 3-point (second-order) first derivative at the boundary node
    if side == "right":
        return (3.0 * rho[-1] - 4.0 * rho[-2] + rho[-3]) / (2.0 * dx)
    return (-3.0 * rho[0] + 4.0 * rho[1] - rho[2]) / (2.0 * dx)


def fp_coefficients(state: FpState, params: AbmParams) -> FpCoefficients:
    """Diffusivity, drift profile and boundary fluxes for the current density.

    The action rates perceived by the agents are the boundary fluxes, so
    nu+- = nu_ex+- + g * J+- with J+- = (sigma^2/2) s+-, s+- the inward
    density slopes at the boundaries.  sigma^2 depends on the rates, which
    makes this a 2x2 linear system; it is solved in closed form.
    """
    dx = state.grid.dx
    s_p = -_boundary_slope(state.rho, dx, "right")
    s_m = _boundary_slope(state.rho, dx, "left")
    e2p = params.eps_up**2
    e2m = params.eps_dn**2
    a_p = 0.5 * params.g * s_p
    a_m = 0.5 * params.g * s_m
    det = 1.0 - a_p * e2p - a_m * e2m
    if det <= 1e-12:
        raise NumericalError(
            "closure blow-up: g/2 * (s+ eps+^2 + s- eps-^2) = %.6f >= 1"
            % (a_p * e2p + a_m * e2m)
        )
    nu_p = (params.nu_ex_up * (1.0 - a_m * e2m) + params.nu_ex_dn * a_p * e2m) / det
    nu_m = (params.nu_ex_dn * (1.0 - a_p * e2p) + params.nu_ex_up * a_m * e2p) / det
    sigma2 = nu_p * e2p + nu_m * e2m
    if sigma2 <= 0 or nu_p <= 0 or nu_m <= 0:
        raise NumericalError("closure produced non-positive rates; state degenerate")
    mu = params.gamma * state.grid.x - nu_p * params.eps_up - nu_m * params.eps_dn
    d = sigma2 / 2.0
    return FpCoefficients(
        sigma2=sigma2, mu=mu, j_plus=d * s_p, j_minus=d * s_m,
        nu_plus=nu_p, nu_minus=nu_m,
    )


def cfl_dt(coeff: FpCoefficients, grid: Grid1D, safety: float = 0.8) -> float:
    """Largest admissible step for the explicit update."""
    mu_max = float(np.abs(coeff.mu).max())
    adv = grid.dx / mu_max if mu_max > 0 else np.inf
    dif = grid.dx**2 / coeff.sigma2 if coeff.sigma2 > 0 else np.inf
    return safety * min(adv, dif)


def _face_fluxes(rho, mu, sigma2, dx, dt):
    # total flux J = -(sigma^2/2) rho_x - mu rho at the n-1 faces;
    # advective part (speed c = -mu) gets the Lax-Wendroff correction,
    # dt = 0 gives the plain centered face flux
    c = -mu
    c_face = 0.5 * (c[:-1] + c[1:])
    adv = 0.5 * (c[:-1] * rho[:-1] + c[1:] * rho[1:]) \
        - 0.5 * (dt / dx) * c_face**2 * (rho[1:] - rho[:-1])
    dif = -(sigma2 / 2.0) * (rho[1:] - rho[:-1]) / dx
    return adv + dif


def lax_wendroff_step(state: FpState, params: AbmParams, dt: float) -> FpState:
    """One conservative step of the closed density equation.

    The mass that the discrete flux update pushes through the two boundary
    faces is added back to the node at x=0 within the same step (the
    continuum limit of that quantity is J+ + J-), so total mass is conserved
    exactly before the clipping correction.  Negative values are then clipped
    and the field renormalized to unit mass.
    """
    grid = state.grid
    coeff = fp_coefficients(state, params)
    admissible = cfl_dt(coeff, grid)
    if dt > admissible:
        raise NumericalError(
            "CFL violated: dt = %g exceeds admissible %g" % (dt, admissible)
        )
    rho = state.rho.copy()
    flux = _face_fluxes(rho, coeff.mu, coeff.sigma2, grid.dx, dt)
    rho[1:-1] -= (dt / grid.dx) * (flux[1:] - flux[:-1])
    rho[0] = 0.0
    rho[-1] = 0.0
    # exact compensation: what left through the outermost interior faces
    rho[grid.center_index] += (dt / grid.dx) * (flux[-1] - flux[0])
    np.clip(rho, 0.0, None, out=rho)
    total = np.trapezoid(rho, grid.x)
    if total <= 0:
        raise NumericalError("density collapsed to zero mass")
    rho /= total
    return FpState(rho=rho, t=state.t + dt, grid=grid)


def fp_rhs(rho, g: float, params: AbmParams):
    """Interior time derivative in flux-difference form plus the origin source.

    The interior stencil is algebraically the centered second-order one;
    writing it as face-flux differences makes the re-injected source exactly
    the discrete boundary outflux, so the returned vector sums to zero and
    is the steady-state residual of the conservative time stepper (up to its
    dt-dependent dispersion correction).  Input must respect the Dirichlet
    zeros at both ends; output has length n_points - 2.  g overrides
    params.g.
    """
    rho = np.asarray(rho, dtype=np.float64)
    grid = Grid1D.uniform(rho.shape[0])
    p = AbmParams(
        n_agents=params.n_agents, gamma=params.gamma,
        eps_up=params.eps_up, eps_dn=params.eps_dn,
        nu_ex_up=params.nu_ex_up, nu_ex_dn=params.nu_ex_dn, g=g,
        dt_internal=params.dt_internal, dt_report=params.dt_report,
    )
    state = FpState(rho=rho, t=0.0, grid=grid)
    coeff = fp_coefficients(state, p)
    dx = grid.dx
    flux = _face_fluxes(rho, coeff.mu, coeff.sigma2, dx, 0.0)
    out = -(flux[1:] - flux[:-1]) / dx
    out[grid.center_index - 1] += (flux[-1] - flux[0]) / dx
    return out


def steady_residual(u, g: float, params: AbmParams):
    """Steady-state root function on the interior nodes with unit mass pinned.

    fp_rhs sums to zero identically (discrete mass conservation), so its
    Jacobian carries the constant left null vector and its roots come in
    one-parameter families of steady profiles of every mass.  The redundant
    center-node equation (the one fed by the reinjection source) is traded
    for the unit-mass condition, which isolates the physical root.
    """
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0] + 2
    grid = Grid1D.uniform(n)
    rho = np.zeros(n)
    rho[1:-1] = u
    out = fp_rhs(rho, g, params)
    out[grid.center_index - 1] = grid.dx * u.sum() - 1.0
    return out


def dynamics_jacobian(u, g: float, params: AbmParams):
    """Jacobian of fp_rhs restricted to the zero-sum (mass-preserving) modes.

    The full Jacobian always owns a structural zero eigenvalue from mass
    conservation; stability on the unit-mass leaf is decided by the spectrum
    on the complement, so the constant direction is projected out before the
    eigensolve.  Forward finite differences, step 1e-6 * (1 + |u_i|).
    """
    u = np.asarray(u, dtype=np.float64)
    m = u.shape[0]
    n = m + 2

    def f(v):
        rho = np.zeros(n)
        rho[1:-1] = v
        return fp_rhs(rho, g, params)

    f0 = f(u)
    jac = np.empty((m, m))
    for i in range(m):
        h = 1e-6 * (1.0 + abs(u[i]))
        up = u.copy()
        up[i] += h
        jac[:, i] = (f(up) - f0) / h
    # Householder frame whose first column is the constant vector; the rest
    # spans the zero-sum subspace
    e = np.zeros(m)
    e[0] = 1.0
    v = np.ones(m) / np.sqrt(m) - e
    v /= np.linalg.norm(v)
    house = np.eye(m) - 2.0 * np.outer(v, v)
    q = house[:, 1:]
    return q.T @ jac @ q


def integrate(state: FpState, params: AbmParams, t_end: float,
              safety: float = 0.8, record_every: float = 0.0):
    """March lax_wendroff_step with the adaptive CFL dt until t_end.

    Returns (final state, list of recorded (t, rho) pairs); record_every = 0
    records only the final state.
    """
    records = []
    next_record = record_every if record_every > 0 else np.inf
    while state.t < t_end - 1e-12:
        coeff = fp_coefficients(state, params)
        dt = min(cfl_dt(coeff, state.grid, safety), t_end - state.t)
        state = lax_wendroff_step(state, params, dt)
        if state.t >= next_record - 1e-12:
            records.append((state.t, state.rho.copy()))
            next_record += record_every
    if not records or records[-1][0] < state.t - 1e-12:
        records.append((state.t, state.rho.copy()))
    return state, records


def gaussian_state(grid: Grid1D, m0: float, s0: float) -> FpState:
    """Unit-mass truncated-gaussian initial density with Dirichlet zeros."""
    rho = np.exp(-0.5 * ((grid.x - m0) / s0) ** 2)
    rho[0] = 0.0
    rho[-1] = 0.0
    return FpState(rho=rho / np.trapezoid(rho, grid.x), t=0.0, grid=grid)


def mean_preference(rho, grid: Grid1D) -> float:
    """First moment of the density, the macroscopic order parameter."""
    return float(np.trapezoid(grid.x * rho, grid.x))
