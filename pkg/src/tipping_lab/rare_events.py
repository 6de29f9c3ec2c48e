"""Escape-time statistics for 1-D diffusions: Monte Carlo and quadrature.

The Monte Carlo route tabulates the coefficients on a grid and hands paths to
the compiled Euler-Maruyama kernel.  The quadrature route rescales to unit
diffusivity, builds the drift potential, and integrates the absorbing-interval
occupation density; the reflecting-side bound is pushed outward until the mean
stops moving.  Exponent guards (max subtraction) run everywhere an e^{beta U}
appears.
"""

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import _kernels
from .errors import NumericalError

_N_TAB = 2049  # coefficient table resolution for the MC kernel


@dataclass
class EscapeConfig:
    a: float
    b: float
    x0: float
    h: float = 1e-3
    max_steps: int = 10**8
    n_trajectories: int = 10**4
    seed: int = 0

    def __post_init__(self):
        if not (self.a < self.x0 < self.b):
            raise ValueError("need a < x0 < b")
        if self.h <= 0 or self.max_steps < 1 or self.n_trajectories < 1:
            raise ValueError("nonsensical escape configuration")


@dataclass
class EscapeStats:
    samples: np.ndarray  # uncensored exit times
    mean: float
    std: float
    n_censored: int
    n_total: int
    exit_right_fraction: float

    @property
    def lower_bound_biased(self) -> bool:
        """True when censored paths make the reported mean a lower bound."""
        return self.n_censored > 0


def _eval_on(fn, x):
    out = np.asarray(fn(x), dtype=np.float64)
    if out.shape != x.shape:  # scalar-only callable
        out = np.array([float(fn(s)) for s in x])
    return out


def mc_escape(drift: Callable, diffusivity, config: EscapeConfig) -> EscapeStats:
    """First-exit times of dX = mu dt + sigma dW from (a, b) by Euler-Maruyama.

    diffusivity may be a callable or a constant.  The exit time is the last
    step still inside the interval; paths that never leave within max_steps
    are counted as censored, never silently dropped.
    """
    grid = np.linspace(config.a, config.b, _N_TAB)
    drift_tab = _eval_on(drift, grid)
    if callable(diffusivity):
        sig_tab = _eval_on(diffusivity, grid)
    else:
        sig_tab = np.full(_N_TAB, float(diffusivity))
    if not (np.isfinite(drift_tab).all() and np.isfinite(sig_tab).all()):
        raise ValueError("coefficients must be finite on [a, b]")
    seeds = np.random.SeedSequence(config.seed).generate_state(
        config.n_trajectories).astype(np.int64)
    taus, censored, exit_right = _kernels.em_escape(
        config.x0, seeds, config.h, config.max_steps, config.a, config.b,
        grid, drift_tab, sig_tab)
    kept = taus[~censored]
    n_censored = int(censored.sum())
    if kept.size == 0:
        raise NumericalError(
            "all %d paths censored at max_steps = %d; raise max_steps"
            % (config.n_trajectories, config.max_steps)
        )
    return EscapeStats(
        samples=kept,
        mean=float(kept.mean()),
        std=float(kept.std(ddof=1)) if kept.size > 1 else 0.0,
        n_censored=n_censored,
        n_total=config.n_trajectories,
        exit_right_fraction=float(exit_right[~censored].mean()),
    )


# ---------------------------------------------------------------------------
# potential and quadrature


def effective_potential(drift: Callable, sigma: float, x_grid, x_ref: float):
    """U_e(x) = -int_{x_ref}^x mu(s) / (sigma^2/2) ds on a uniform grid."""
    x_grid = np.asarray(x_grid, dtype=np.float64)
    steps = np.diff(x_grid)
    if x_grid.size < 3 or np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
        raise ValueError("potential grid must be uniform with >= 3 nodes")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not (x_grid[0] <= x_ref <= x_grid[-1]):
        raise ValueError("reference point outside the grid")
    integrand = -_eval_on(drift, x_grid) / (0.5 * sigma**2)
    cum = cumulative_simpson(integrand, dx=steps[0], initial=0.0)
    return cum - np.interp(x_ref, x_grid, cum)


def g_function(u, beta: float, x0: float, a: float, b: float) -> float:
    """Exit-side weight G(x0) = int_{x0}^b e^{beta U} / int_a^b e^{beta U}.

    u holds the potential sampled uniformly on [a, b].  The max exponent is
    subtracted before exponentiation, which also makes the value exactly
    invariant to shifting the potential by a constant.
    """
    u = np.asarray(u, dtype=np.float64)
    if beta <= 0 or not a < b or u.size < 3:
        raise ValueError("need beta > 0, a < b and >= 3 potential samples")
    if not (a <= x0 <= b):
        raise ValueError("x0 outside [a, b]")
    x = np.linspace(a, b, u.size)
    w = np.exp(beta * (u - u.max()))
    denom = float(simpson(w, dx=x[1] - x[0]))
    if not np.isfinite(denom) or denom <= 0.0:
        raise NumericalError(
            "exponent range defeats the quadrature; rescale to unit "
            "diffusivity before computing exit weights"
        )
    # integrate the tail directly (right to left) so a steep potential on
    # the far side cannot cancel the small upper-end contribution away
    tail = cumulative_simpson(w[::-1], dx=x[1] - x[0], initial=0.0)[::-1]
    return float(min(1.0, np.interp(x0, x, tail) / denom))


def ito_rescale(drift: Callable, sigma: float):
    """Unit-diffusivity change of variables y = x / sigma.

    Returns (drift in y, new sigma = 1): dy = sigma^-1 mu(sigma y) dt + dW.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if sigma == 1.0:
        return drift, 1.0

    def drift_y(y):
        return np.asarray(drift(np.asarray(y) * sigma)) / sigma

    return drift_y, 1.0


@dataclass
class QuadConfig:
    z: float  # start point and potential reference (the stable root)
    a: float
    b: float
    beta: float = 2.0
    n_nodes: int = 512
    expand_step: float = 0.25
    expand_tol: float = 1e-3
    absorb: str = "upper"  # which end the escape is measured through

    def __post_init__(self):
        if self.beta <= 0 or not self.a < self.b or self.n_nodes < 64:
            raise ValueError("need beta > 0, a < b, n_nodes >= 64")
        if not (self.a < self.z < self.b):
            raise ValueError("start point must lie inside (a, b)")
        if self.absorb not in ("upper", "lower"):
            raise ValueError("absorb must be 'upper' or 'lower'")
        # expand_step == 0 keeps both bounds fixed (both ends absorbing)
        if self.expand_step < 0 or self.expand_tol <= 0:
            raise ValueError("expansion step and tolerance must be positive")


def _tau_from_potential(y, u, beta, y0):
    """Mean exit time of the absorbing interval from the sampled potential.

    Occupation-density form: rho(y; y0) = beta e^{-beta U(y)} *
    [theta(y0-y) S(a,y) G(y0) + theta(y-y0) S(a,y0) G(y)] with
    S the e^{+beta U} integral; all exponents max-subtracted.
    """
    u_max = u.max()
    u_min = u.min()
    scale_log = beta * (u_max - u_min)
    if scale_log > 700.0:
        raise NumericalError(
            "potential range too deep for the quadrature (exp overflow)"
        )
    dx = y[1] - y[0]
    grow = np.exp(beta * (u - u_max))
    cum = cumulative_simpson(grow, dx=dx, initial=0.0)
    # tail integrals S(y, b) summed right to left: subtracting cum from its
    # total would cancel catastrophically when the reflecting side is steep
    tail = cumulative_simpson(grow[::-1], dx=dx, initial=0.0)[::-1]
    s_ab = cum[-1]
    if s_ab <= 0 or not np.isfinite(s_ab):
        raise NumericalError("degenerate scale-function integral")
    s_a_x0 = np.interp(y0, y, cum)
    tail_x0 = np.interp(y0, y, tail)
    boltz = np.exp(-beta * (u - u_min))
    rho = boltz * np.where(y <= y0, cum * tail_x0, s_a_x0 * tail) / s_ab
    return float(beta * np.exp(scale_log) * simpson(rho, dx=dx))


def _tau_refined(drift_y, y_a, y_b, y0, beta, n_nodes):
    """Richardson doubling of the node count until 1e-4 relative change."""
    prev = None
    n = int(n_nodes) | 1
    for _ in range(12):
        y = np.linspace(y_a, y_b, n)
        u = effective_potential(drift_y, np.sqrt(2.0), y, y0)
        tau = _tau_from_potential(y, u, beta, y0)
        if prev is not None and abs(tau - prev) <= 1e-4 * abs(tau):
            return tau
        prev = tau
        n = 2 * n - 1
    raise NumericalError("quadrature did not converge under node doubling")


def mean_escape_quadrature(drift: Callable, sigma: float,
                           config: QuadConfig) -> float:
    """Mean escape time by the occupation-density quadrature.

    Works in the unit-diffusivity variable y = x/sigma with the plain drift
    potential and beta = 2.  The non-absorbing bound is pushed outward until
    the answer moves by less than expand_tol relative; failure to settle
    within 50 expansions raises (some coarse variables genuinely do not
    converge this way).
    """
    drift_y, _ = ito_rescale(drift, sigma)
    y_a, y_b, y0 = config.a / sigma, config.b / sigma, config.z / sigma
    step = config.expand_step / sigma
    tau = _tau_refined(drift_y, y_a, y_b, y0, config.beta, config.n_nodes)
    if config.expand_step == 0.0:
        return tau
    for _ in range(50):
        if config.absorb == "upper":
            y_a -= step
        else:
            y_b += step
        tau_next = _tau_refined(drift_y, y_a, y_b, y0, config.beta,
                                config.n_nodes)
        if abs(tau_next - tau) <= config.expand_tol * abs(tau_next):
            return tau_next
        tau = tau_next
    raise NumericalError(
        "escape-time quadrature does not converge as the reflecting bound "
        "expands"
    )


def constant_diffusivity(sigma_fn: Callable, lo: float, hi: float,
                         n: int = 101) -> float:
    """Median diffusivity over [lo, hi]; aborts if it is not roughly constant.

    The quadrature route assumes state-independent sigma; more than 10%
    spread around the median means that assumption is broken and Monte Carlo
    should be used instead.
    """
    grid = np.linspace(lo, hi, n)
    vals = _eval_on(sigma_fn, grid)
    med = float(np.median(vals))
    if med <= 0:
        raise NumericalError("diffusivity median is non-positive")
    if np.max(np.abs(vals - med)) > 0.10 * med:
        raise NumericalError(
            "diffusivity varies by more than 10%% over the box "
            "(max dev %.3f of median); use the Monte Carlo route"
            % (np.max(np.abs(vals - med)) / med)
        )
    return med


# ---------------------------------------------------------------------------
# export


def save_escape_samples(path, stats: EscapeStats, config: EscapeConfig):
    """One exit time per line, plus a JSON summary next to it."""
    np.savetxt(path, stats.samples, fmt="%.17g")
    summary = {
        "mean": stats.mean,
        "std": stats.std,
        "n_total": stats.n_total,
        "n_censored": stats.n_censored,
        "exit_right_fraction": stats.exit_right_fraction,
        "lower_bound_biased": stats.lower_bound_biased,
        "config": asdict(config),
    }
    with open(str(path) + ".summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary
