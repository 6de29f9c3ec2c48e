import json
import subprocess
import sys

import numpy as np
import pytest

from tipping_lab.errors import NumericalError
from tipping_lab.rare_events import (
    EscapeConfig,
    EscapeStats,
    QuadConfig,
    _tau_from_potential,
    _tau_refined,
    constant_diffusivity,
    effective_potential,
    g_function,
    ito_rescale,
    mc_escape,
    mean_escape_quadrature,
    save_escape_samples,
)


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _ou(x):
    return -np.asarray(x, dtype=float)


def _double_well(x):
    x = np.asarray(x, dtype=float)
    return x - x**3


@pytest.fixture(scope="module")
def double_well_stats():
    # well at -1, barrier top at 0; escape over a barrier of height 1/4
    cfg = EscapeConfig(a=-3.0, b=0.0, x0=-1.0, h=2e-3, max_steps=2 * 10**6,
                       n_trajectories=400, seed=3)
    return mc_escape(_double_well, 0.4, cfg)


# ---------------------------------------------------------------------------
# configs


def test_escape_config_validation():
    with pytest.raises(ValueError):
        EscapeConfig(a=0.0, b=1.0, x0=0.0, h=1e-3)
    with pytest.raises(ValueError):
        EscapeConfig(a=-1.0, b=1.0, x0=2.0, h=1e-3)
    with pytest.raises(ValueError):
        EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=0.0)
    with pytest.raises(ValueError):
        EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, n_trajectories=0)


def test_quad_config_validation():
    with pytest.raises(ValueError):
        QuadConfig(z=0.0, a=-1.0, b=1.0, beta=0.0)
    with pytest.raises(ValueError):
        QuadConfig(z=0.0, a=1.0, b=-1.0)
    with pytest.raises(ValueError):
        QuadConfig(z=0.0, a=-1.0, b=1.0, n_nodes=32)
    with pytest.raises(ValueError):
        QuadConfig(z=2.0, a=-1.0, b=1.0)
    with pytest.raises(ValueError):
        QuadConfig(z=0.0, a=-1.0, b=1.0, absorb="sideways")
    with pytest.raises(ValueError):
        QuadConfig(z=0.0, a=-1.0, b=1.0, expand_step=-0.1)


# ---------------------------------------------------------------------------
# Monte Carlo escape


def test_brownian_exit_identity():
    # <tau> = (b - x0)(x0 - a) / sigma^2 = 1 here
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, n_trajectories=10**4,
                       seed=11)
    stats = mc_escape(_zero, 1.0, cfg)
    assert stats.n_censored == 0
    assert abs(stats.mean - 1.0) < 0.05
    assert stats.samples.size == 10**4
    assert (stats.samples > 0).all()


def test_brownian_exit_identity_arbitrary_interval():
    # same identity away from the symmetric case, tighter step so the
    # overshoot bias sits below the Monte Carlo noise
    a, b, x0, sig = -0.6, 1.4, 0.9, 1.0
    cfg = EscapeConfig(a=a, b=b, x0=x0, h=1e-4, n_trajectories=4000, seed=21)
    stats = mc_escape(_zero, sig, cfg)
    expected = (b - x0) * (x0 - a) / sig**2
    se = stats.std / np.sqrt(stats.samples.size)
    assert abs(stats.mean - expected) < 3.0 * se + 0.02 * expected


def test_escape_time_vanishes_near_boundary():
    means = []
    for eps in (0.1, 0.01):
        cfg = EscapeConfig(a=-1.0, b=1.0, x0=1.0 - eps, h=1e-4,
                           n_trajectories=2000, seed=4)
        means.append(mc_escape(_zero, 1.0, cfg).mean)
    assert means[1] < means[0] < 0.25


def test_exit_side_fraction_matches_ruin_probability():
    # driftless: P(exit right) = (x0 - a) / (b - a)
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.5, h=1e-3, n_trajectories=4000,
                       seed=9)
    stats = mc_escape(_zero, 1.0, cfg)
    assert abs(stats.exit_right_fraction - 0.75) < 0.03


def test_all_censored_raises():
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, max_steps=5,
                       n_trajectories=50, seed=1)
    with pytest.raises(NumericalError, match="max_steps"):
        mc_escape(_zero, 1.0, cfg)


def test_partial_censoring_is_flagged():
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, max_steps=300,
                       n_trajectories=500, seed=2)
    stats = mc_escape(_zero, 1.0, cfg)
    assert 0 < stats.n_censored < 500
    assert stats.lower_bound_biased
    assert stats.samples.size == 500 - stats.n_censored
    assert stats.mean < 0.3  # censored mean is a (biased) lower bound
    unbiased = EscapeStats(np.ones(3), 1.0, 0.1, 0, 3, 0.5)
    assert not unbiased.lower_bound_biased


def test_mc_escape_deterministic():
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, n_trajectories=300,
                       seed=77)
    s1 = mc_escape(_zero, 1.0, cfg)
    s2 = mc_escape(_zero, 1.0, cfg)
    assert np.array_equal(s1.samples, s2.samples)


def test_backend_parity_for_escape_kernel():
    code = (
        "import os, numpy as np\n"
        "os.environ['TIPPING_LAB_BACKEND'] = %r\n"
        "from tipping_lab import active_backend\n"
        "import tipping_lab.rare_events as re_\n"
        "assert active_backend() == %r\n"
        "cfg = re_.EscapeConfig(a=-1.0, b=1.0, x0=0.2, h=1e-3,"
        " n_trajectories=200, seed=13)\n"
        "s = re_.mc_escape(lambda x: -np.asarray(x, dtype=float), 0.8, cfg)\n"
        "print(s.samples.tobytes().hex())\n"
        "print(s.n_censored, s.exit_right_fraction)\n"
    )
    outs = []
    for backend in ("numba", "numpy"):
        res = subprocess.run(
            [sys.executable, "-c", code % (backend, backend)],
            capture_output=True, text=True, check=True,
        )
        outs.append(res.stdout)
    assert outs[0] == outs[1]


def test_callable_and_constant_diffusivity_agree():
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, n_trajectories=200,
                       seed=8)
    s_const = mc_escape(_ou, 0.7, cfg)
    s_callable = mc_escape(_ou, lambda x: np.full_like(np.asarray(x, float), 0.7),
                           cfg)
    assert np.array_equal(s_const.samples, s_callable.samples)


def test_mc_escape_rejects_nonfinite_coefficients():
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, n_trajectories=10)
    with np.errstate(divide="ignore"):
        with pytest.raises(ValueError):
            mc_escape(lambda x: 1.0 / np.asarray(x, dtype=float), 1.0, cfg)


# ---------------------------------------------------------------------------
# potential


def test_effective_potential_ou_quadratic():
    grid = np.linspace(-2.0, 2.0, 401)
    u = effective_potential(_ou, np.sqrt(2.0), grid, 0.0)
    assert np.max(np.abs(u - grid**2 / 2)) < 1e-8


def test_effective_potential_double_well():
    # mu = -U' with U = (x^2 - 1)^2 / 4 recovers U up to the reference shift
    grid = np.linspace(-1.6, 1.6, 1601)
    u = effective_potential(_double_well, np.sqrt(2.0), grid, 0.0)
    exact = (grid**2 - 1.0) ** 2 / 4.0
    exact -= 0.25  # U(0)
    assert np.max(np.abs(u - exact)) < 1e-6
    assert abs(np.interp(0.0, grid, u)) < 1e-12


def test_effective_potential_reference_and_grid_checks():
    grid = np.linspace(-1.0, 1.0, 101)
    u = effective_potential(_ou, np.sqrt(2.0), grid, 0.5)
    assert abs(np.interp(0.5, grid, u)) < 1e-12
    with pytest.raises(ValueError):
        effective_potential(_ou, np.sqrt(2.0), grid, 2.0)
    with pytest.raises(ValueError):
        effective_potential(_ou, 0.0, grid, 0.0)
    with pytest.raises(ValueError):
        effective_potential(_ou, 1.0, np.array([0.0, 0.1, 0.5]), 0.0)


# ---------------------------------------------------------------------------
# exit-side weight


def test_g_function_degenerate_limits():
    u = np.linspace(-2, 2, 301) ** 2
    assert abs(g_function(u, 2.0, -2.0, -2.0, 2.0) - 1.0) < 1e-12
    assert g_function(u, 2.0, 2.0, -2.0, 2.0) == 0.0


def test_g_function_constant_potential():
    g = g_function(np.zeros(101), 2.0, 0.5, -1.0, 1.0)
    assert abs(g - 0.25) < 1e-12


def test_g_function_shift_invariance_and_monotonicity():
    u = np.linspace(-2, 2, 301) ** 2
    g1 = g_function(u, 2.0, 0.3, -2.0, 2.0)
    g2 = g_function(u + 123.456, 2.0, 0.3, -2.0, 2.0)
    assert abs(g1 - g2) < 1e-12
    vals = [g_function(u, 2.0, x0, -2.0, 2.0)
            for x0 in np.linspace(-2.0, 2.0, 17)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(vals[i + 1] <= vals[i] + 1e-14 for i in range(len(vals) - 1))


def test_g_function_validation():
    with pytest.raises(ValueError):
        g_function(np.zeros(101), 0.0, 0.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        g_function(np.zeros(101), 1.0, 0.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        g_function(np.zeros(101), 1.0, 5.0, -1.0, 1.0)


# ---------------------------------------------------------------------------
# quadrature


def test_quadrature_brownian_identity():
    cfg = QuadConfig(z=0.0, a=-1.0, b=1.0, n_nodes=512, expand_step=0.0)
    tau = mean_escape_quadrature(_zero, 1.0, cfg)
    assert abs(tau - 1.0) < 0.01


def test_quadrature_matches_mc_for_ou():
    cfg = QuadConfig(z=0.0, a=-3.0, b=0.5, n_nodes=257, expand_step=0.5,
                     expand_tol=1e-3)
    tau_q = mean_escape_quadrature(_ou, 0.5, cfg)
    mc_cfg = EscapeConfig(a=-3.0, b=0.5, x0=0.0, h=1e-3,
                          n_trajectories=2 * 10**4, seed=7)
    tau_mc = mc_escape(_ou, 0.5, mc_cfg).mean
    assert abs(tau_q - tau_mc) / tau_mc < 0.10


def test_quadrature_matches_kramers_double_integral():
    # independent oracle: <tau> = beta int_z^b e^{beta U} int_a^y e^{-beta U}
    from scipy.integrate import quad

    def inner(y):
        return quad(lambda s: np.exp(-(s * s)), -12.0, y, limit=200)[0]

    oracle = quad(lambda y: 2.0 * np.exp(y * y) * inner(y), 0.0, 1.0,
                  limit=200)[0]
    cfg = QuadConfig(z=0.0, a=-3.0, b=0.5, n_nodes=257, expand_step=0.5,
                     expand_tol=1e-4)
    tau = mean_escape_quadrature(_ou, 0.5, cfg)
    assert abs(tau - oracle) / oracle < 1e-3


def test_quadrature_reference_shift_invariance():
    y = np.linspace(-3.0, 1.0, 513)
    u = y**2 / 2
    t1 = _tau_from_potential(y, u, 2.0, 0.0)
    t2 = _tau_from_potential(y, u + 7.25, 2.0, 0.0)
    assert abs(t1 - t2) / t1 < 1e-10


def test_quadrature_expansion_converges_for_double_well(double_well_stats):
    cfg = QuadConfig(z=-1.0, a=-2.0, b=0.0, n_nodes=257, expand_step=0.25,
                     expand_tol=1e-3)
    tau = mean_escape_quadrature(_double_well, 0.4, cfg)
    # Euler-Maruyama overshoot bias keeps the MC mean a few percent high
    assert abs(tau - double_well_stats.mean) / double_well_stats.mean < 0.15


def test_quadrature_nonconvergent_expansion_raises():
    # outward drift pins reflected mass at the moving bound: no limit exists
    cfg = QuadConfig(z=0.0, a=-1.0, b=1.0, n_nodes=129, expand_step=0.25,
                     expand_tol=1e-3)
    with pytest.raises(NumericalError, match="converge"):
        mean_escape_quadrature(lambda x: np.asarray(x, dtype=float), 1.0, cfg)


def test_quadrature_overflow_guard():
    y = np.linspace(-1.0, 1.0, 129)
    with pytest.raises(NumericalError, match="deep"):
        _tau_from_potential(y, 400.0 * y**2, 2.0, 0.0)


def test_steep_reflecting_side_does_not_cancel():
    # the far-side potential dominates e^{beta U}; the tiny upper-end tail
    # integral must survive in float arithmetic
    y = np.linspace(-6.0, 1.0, 2049)
    tau = _tau_from_potential(y, y**2 / 2, 2.0, 0.0)
    assert tau > 1.0
    assert np.isfinite(tau)


# ---------------------------------------------------------------------------
# rescaling


def test_ito_rescale_ou_scale_invariance():
    drift_y, sigma_y = ito_rescale(_ou, 2.0)
    assert sigma_y == 1.0
    y = np.linspace(-2, 2, 11)
    assert np.allclose(drift_y(y), -y, rtol=0, atol=1e-15)


def test_ito_rescale_identity_at_unit_sigma():
    drift_y, sigma_y = ito_rescale(_ou, 1.0)
    assert drift_y is _ou and sigma_y == 1.0
    with pytest.raises(ValueError):
        ito_rescale(_ou, 0.0)


def test_ito_rescale_preserves_escape_times():
    sig = 0.5
    cfg = EscapeConfig(a=-3.0, b=0.5, x0=0.0, h=1e-3, n_trajectories=2000,
                       seed=5)
    s_orig = mc_escape(_ou, sig, cfg)
    drift_y, sigma_y = ito_rescale(_ou, sig)
    cfg_y = EscapeConfig(a=-3.0 / sig, b=0.5 / sig, x0=0.0, h=1e-3,
                         n_trajectories=2000, seed=5)
    s_resc = mc_escape(drift_y, sigma_y, cfg_y)
    assert abs(s_orig.mean - s_resc.mean) / s_orig.mean < 0.02


# ---------------------------------------------------------------------------
# deep-well statistics


def test_deep_well_escape_is_near_exponential(double_well_stats):
    stats = double_well_stats
    assert stats.n_censored == 0
    ratio = stats.std / stats.mean
    assert 0.7 < ratio < 1.3
    # exponential law: median = ln 2 * mean
    med = np.median(stats.samples)
    assert 0.4 * stats.mean < med < 1.0 * stats.mean


# ---------------------------------------------------------------------------
# diffusivity reduction


def test_constant_diffusivity_median():
    assert constant_diffusivity(lambda x: np.full_like(np.asarray(x, float), 0.5),
                                -1.0, 1.0) == 0.5
    wobble = constant_diffusivity(
        lambda x: 0.5 + 0.02 * np.sin(np.asarray(x, dtype=float)), -1.0, 1.0)
    assert abs(wobble - 0.5) < 0.03


def test_constant_diffusivity_aborts_on_state_dependence():
    with pytest.raises(NumericalError, match="Monte Carlo"):
        constant_diffusivity(lambda x: 0.3 + 0.3 * np.asarray(x, float),
                             0.0, 1.0)
    with pytest.raises(NumericalError):
        constant_diffusivity(lambda x: np.full_like(np.asarray(x, float), -1.0),
                             0.0, 1.0)


# ---------------------------------------------------------------------------
# export


def test_save_escape_samples_roundtrip(tmp_path):
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-3, n_trajectories=100,
                       seed=42)
    stats = mc_escape(_zero, 1.0, cfg)
    path = tmp_path / "taus.txt"
    summary = save_escape_samples(path, stats, cfg)
    back = np.loadtxt(path)
    assert np.array_equal(back, stats.samples)
    with open(str(path) + ".summary.json") as fh:
        on_disk = json.load(fh)
    assert on_disk == json.loads(json.dumps(summary))
    assert on_disk["n_total"] == 100
    assert on_disk["config"]["seed"] == 42
    assert on_disk["lower_bound_biased"] is False
