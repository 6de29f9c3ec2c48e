"""Microscopic market model: mean-reverting trader preferences with jumps.

Each of n_agents traders carries a preference X in (-1, 1).  Between reporting
windows the preference decays exponentially at rate gamma and receives Poisson
batches of up jumps (size eps_up > 0) and down jumps (size eps_dn < 0).  Jump
arrival rates are nu_ex plus a herding term g times the buy/sell rate measured
over the PREVIOUS reporting window, so feedback enters with one window of lag.
Crossing +1 books a buy, crossing -1 books a sell, and either way the
preference resets to 0.

High-level design choices
- internal step dt_internal applies the decay exactly (multiply by
  exp(-gamma dt)) and aggregates all jumps of the step before the threshold
  sweep; dt_report must be an integer multiple of dt_internal.
- rates are frozen across a window; a window is one kernel call
  (see _kernels.abm_window) so the hot loop never leaves compiled code.
- every random draw is tied to a SeedSequence: one uint32 per window plus one
  for the initial draw, which makes trajectories bit-reproducible per backend
  (and across backends, since both consume identical streams).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import NumericalError

# quantile levels for the coarse trajectory summary: 19 lower-tail levels,
# mirrored upper tail (p_i = 1 - p_{38-i}), 37 in total
_LOWER = [
    0.0005, 0.001, 0.002, 0.003, 0.004, 0.005, 0.0075, 0.01, 0.02, 0.03,
    0.04, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5,
]
PERCENTILES = np.array(_LOWER + [1.0 - p for p in reversed(_LOWER[:-1])])
N_COARSE = PERCENTILES.size + 2  # quantiles plus the two market rates


@dataclass
class AbmParams:
    """Model parameters; defaults follow the reference parameter set."""

    n_agents: int = 50_000
    gamma: float = 1.0
    eps_up: float = 0.075
    eps_dn: float = -0.072
    nu_ex_up: float = 20.0
    nu_ex_dn: float = 20.0
    g: float = 40.0
    dt_internal: float = 0.01
    dt_report: float = 0.25

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.eps_up <= 0 or self.eps_dn >= 0:
            raise ValueError("jump sizes must satisfy eps_up > 0 > eps_dn")
        if self.eps_up >= 2.0 or self.eps_dn <= -2.0:
            raise ValueError("jump sizes must be smaller than the domain width")
        if self.nu_ex_up < 0 or self.nu_ex_dn < 0 or self.g < 0:
            raise ValueError("rates must be nonnegative")
        if self.dt_internal <= 0 or self.dt_report <= 0:
            raise ValueError("time steps must be positive")
        ratio = self.dt_report / self.dt_internal
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                "dt_report must be an integer multiple of dt_internal, got ratio %g"
                % ratio
            )

    @property
    def n_sub(self) -> int:
        return int(round(self.dt_report / self.dt_internal))


@dataclass(frozen=True)
class MarketRates:
    """Buy/sell crossings per agent per unit time over one window."""

    buy: float
    sell: float

    def as_array(self):
        return np.array([self.buy, self.sell])


ZERO_RATES = MarketRates(0.0, 0.0)


@dataclass
class InitialCondition:
    kind: str  # gaussian | triangular | explicit
    m0: float = 0.0
    s0: float = 0.4
    lo: float = -1.0
    mode: float = -0.6
    hi: float = 1.0
    prefs: Optional[np.ndarray] = None

    @classmethod
    def gaussian(cls, m0, s0):
        return cls(kind="gaussian", m0=m0, s0=s0)

    @classmethod
    def triangular(cls, lo, mode, hi):
        return cls(kind="triangular", lo=lo, mode=mode, hi=hi)

    @classmethod
    def explicit(cls, prefs):
        return cls(kind="explicit", prefs=np.asarray(prefs, dtype=np.float64))

    def draw(self, n, rng):
        """Sample n preferences strictly inside (-1, 1).

        Gaussian draws landing outside the open interval are resampled, not
        clipped, so the initial profile keeps its shape near the boundaries.
        """
        if self.kind == "gaussian":
            x = rng.normal(self.m0, self.s0, size=n)
            bad = (x <= -1.0) | (x >= 1.0)
            while bad.any():
                x[bad] = rng.normal(self.m0, self.s0, size=int(bad.sum()))
                bad = (x <= -1.0) | (x >= 1.0)
            return x
        if self.kind == "triangular":
            x = rng.triangular(self.lo, self.mode, self.hi, size=n)
            bad = (x <= -1.0) | (x >= 1.0)
            while bad.any():
                x[bad] = rng.triangular(self.lo, self.mode, self.hi, size=int(bad.sum()))
                bad = (x <= -1.0) | (x >= 1.0)
            return x
        if self.kind == "explicit":
            if self.prefs is None or self.prefs.shape[0] != n:
                raise ValueError("explicit initial condition must carry n preferences")
            if np.abs(self.prefs).max() >= 1.0:
                raise ValueError("explicit preferences must lie inside (-1, 1)")
            return self.prefs.copy()
        raise ValueError("unknown initial condition kind %r" % self.kind)


@dataclass
class Observables:
    density: np.ndarray  # (n_bins,) trapezoid-normalized histogram density
    mean: float
    coarse: np.ndarray  # (39,) quantiles at PERCENTILES plus buy/sell rates


@dataclass
class AbmTrajectory:
    """Reporting-window time series of one run (or an ensemble average)."""

    times: np.ndarray  # (F,)
    densities: np.ndarray  # (F, n_bins)
    means: np.ndarray  # (F,)
    rates: np.ndarray  # (F, 2) buy/sell rates of the window ending at times[f]
    coarse: Optional[np.ndarray]  # (F, 39) or None for averaged trajectories
    g: float
    n_agents: int
    stopped_early: bool = False
    prefs_history: Optional[np.ndarray] = None  # (F, n_agents) when kept
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.times.shape[0]


def bin_centers(n_bins: int = 81):
    """Equally spaced density-grid centers spanning [-1, 1]."""
    if n_bins < 3:
        raise ValueError("need at least 3 bins")
    return np.linspace(-1.0, 1.0, n_bins)


def observables(prefs, rates: MarketRates, n_bins: int = 81) -> Observables:
    """Histogram density, mean preference and the 39-dim coarse summary.

    The density lives on n_bins equally spaced centers over [-1, 1] (spacing
    dx = 2/(n_bins-1); outermost bins stick out by dx/2) and is normalized so
    its trapezoid integral over the centers equals 1.  The coarse summary is
    the 37 preference quantiles at PERCENTILES followed by the two rates.
    """
    centers = bin_centers(n_bins)
    dx = 2.0 / (n_bins - 1)
    edges = np.linspace(-1.0 - dx / 2, 1.0 + dx / 2, n_bins + 1)
    counts, _ = np.histogram(prefs, bins=edges)
    density = counts.astype(np.float64)
    total = np.trapezoid(density, centers)
    if total > 0:
        density /= total
    quant = np.quantile(prefs, PERCENTILES)
    coarse = np.concatenate([quant, [rates.buy, rates.sell]])
    return Observables(density=density, mean=float(np.mean(prefs)), coarse=coarse)


def step_window(prefs, rates_prev: MarketRates, params: AbmParams, seed: int) -> MarketRates:
    """Advance one reporting window in place and return the window's rates.

    Jump rates for the whole window come from rates_prev (one-window lag):
    nu = nu_ex + g * r_prev, converted to per-internal-step Poisson means.
    """
    lam_up = (params.nu_ex_up + params.g * rates_prev.buy) * params.dt_internal
    lam_dn = (params.nu_ex_dn + params.g * rates_prev.sell) * params.dt_internal
    decay = np.exp(-params.gamma * params.dt_internal)
    buys, sells = _kernels.abm_window(
        prefs, int(seed), params.n_sub, decay, lam_up, lam_dn,
        params.eps_up, params.eps_dn,
    )
    if not np.isfinite(prefs).all():
        raise NumericalError("non-finite preference after window step; state corrupted")
    denom = params.n_agents * params.dt_report
    return MarketRates(buy=buys / denom, sell=sells / denom)


def simulate(
    params: AbmParams,
    init: InitialCondition,
    t_end: float,
    seed,
    n_bins: int = 81,
    stop_threshold: Optional[float] = None,
    stop_mode: str = "abs",
    keep_prefs: bool = False,
) -> AbmTrajectory:
    """Run one trajectory, recording observables every dt_report.

    Frame 0 is the initial state (zero rates); afterwards one frame per
    window.  When stop_threshold is set the run ends at the first frame whose
    mean preference crosses it (stop_mode "abs": |mean| >= thr; "upper":
    mean >= thr); the crossing frame is kept.
    """
    n_windows = int(round(t_end / params.dt_report))
    if n_windows < 1:
        raise ValueError("t_end shorter than one reporting window: empty trajectory")
    if stop_mode not in ("abs", "upper"):
        raise ValueError("stop_mode must be 'abs' or 'upper'")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    words = ss.generate_state(n_windows + 1, dtype=np.uint32)
    rng = np.random.default_rng(np.random.SeedSequence(int(words[0])))
    prefs = init.draw(params.n_agents, rng)

    times = [0.0]
    obs = observables(prefs, ZERO_RATES, n_bins)
    densities = [obs.density]
    means = [obs.mean]
    rates_hist = [ZERO_RATES.as_array()]
    coarse = [obs.coarse]
    prefs_hist = [prefs.copy()] if keep_prefs else None

    rates = ZERO_RATES
    stopped = False
    for w in range(n_windows):
        rates = step_window(prefs, rates, params, int(words[w + 1]))
        obs = observables(prefs, rates, n_bins)
        times.append((w + 1) * params.dt_report)
        densities.append(obs.density)
        means.append(obs.mean)
        rates_hist.append(rates.as_array())
        coarse.append(obs.coarse)
        if keep_prefs:
            prefs_hist.append(prefs.copy())
        if stop_threshold is not None:
            crossed = (
                abs(obs.mean) >= stop_threshold
                if stop_mode == "abs"
                else obs.mean >= stop_threshold
            )
            if crossed:
                stopped = True
                break

    return AbmTrajectory(
        times=np.array(times),
        densities=np.array(densities),
        means=np.array(means),
        rates=np.array(rates_hist),
        coarse=np.array(coarse),
        g=params.g,
        n_agents=params.n_agents,
        stopped_early=stopped,
        prefs_history=np.array(prefs_hist) if keep_prefs else None,
    )


def ensemble_average_density(trajectories) -> AbmTrajectory:
    """Average aligned frames across realizations of the same setup.

    Trajectories may have stopped at different frames; the common horizon is
    truncated to the shortest one.  Quantile summaries are not averaged (set
    to None); density, mean and rates are.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    g = trajectories[0].g
    n_agents = trajectories[0].n_agents
    for tr in trajectories:
        if tr.g != g:
            raise ValueError("cannot average trajectories with different g")
    n = min(tr.n_frames for tr in trajectories)
    times = trajectories[0].times[:n]
    for tr in trajectories:
        if not np.allclose(tr.times[:n], times):
            raise ValueError("trajectories have mismatched reporting times")
    return AbmTrajectory(
        times=times.copy(),
        densities=np.mean([tr.densities[:n] for tr in trajectories], axis=0),
        means=np.mean([tr.means[:n] for tr in trajectories], axis=0),
        rates=np.mean([tr.rates[:n] for tr in trajectories], axis=0),
        coarse=None,
        g=g,
        n_agents=n_agents,
        stopped_early=any(tr.stopped_early for tr in trajectories),
        meta={"n_averaged": len(trajectories)},
    )
