import numpy as np
import pytest

from tipping_lab.abm import AbmParams, AbmTrajectory, bin_centers
from tipping_lab.errors import DataIntegrityError, NumericalError
from tipping_lab.fokker_planck import Grid1D, fp_rhs, gaussian_state, integrate
from tipping_lab.ml import DenseNet, SdeNets, forward
from tipping_lab.surrogates import (
    FEATURE_NAMES,
    FeatureTable,
    SdePath,
    SdeSurrogate,
    build_feature_table,
    build_sde_dataset,
    downsample_table,
    fit_ipde_fnn,
    fit_ipde_rff,
    heun_integrate,
    ipde_rhs,
    load_feature_table,
    load_sde_dataset,
    r2_score,
    save_feature_table,
    save_sde_dataset,
    sde_simulate,
    smooth,
)

N_BINS = 81


# ---------------------------------------------------------------------------
# smoothing


def test_smooth_constant_field_unchanged():
    rho = np.full(20, 0.5)
    assert np.array_equal(smooth(rho), rho)


def test_smooth_spreads_interior_spike():
    rho = np.zeros(11)
    rho[5] = 2.0
    out = smooth(rho)
    assert out[4] == 0.5 and out[5] == 1.0 and out[6] == 0.5
    assert np.all(out[:4] == 0.0) and np.all(out[7:] == 0.0)


def test_smooth_mass_leakage_bound():
    rng = np.random.default_rng(2)
    rho = rng.uniform(0, 1, 30)
    dx = 1.0
    lost = abs(smooth(rho)[1:-1].sum() - rho[1:-1].sum()) * dx
    assert lost <= 0.25 * (rho[1] + rho[-2]) * dx + 1e-12


def test_smooth_needs_three_nodes():
    with pytest.raises(ValueError):
        smooth(np.ones(2))


# ---------------------------------------------------------------------------
# feature table


def _toy_trajectory(densities, times=None, g=40.0):
    densities = np.asarray(densities, dtype=np.float64)
    n_frames = densities.shape[0]
    if times is None:
        times = 0.25 * np.arange(n_frames)
    x = bin_centers(densities.shape[1])
    means = np.array([np.trapezoid(x * d, x) for d in densities])
    return AbmTrajectory(times=np.asarray(times, float), densities=densities,
                         means=means, rates=np.zeros((n_frames, 2)),
                         coarse=None, g=g, n_agents=0)


def test_linear_density_gives_zero_curvature():
    x = bin_centers(N_BINS)
    frame = 0.5 + 0.1 * x
    traj = _toy_trajectory(np.tile(frame, (6, 1)))
    table = build_feature_table([traj], stop_threshold=1.0)
    idx = dict((n, i) for i, n in enumerate(FEATURE_NAMES))
    assert np.max(np.abs(table.features[:, idx["rho_xx"]])) < 1e-12
    assert np.max(np.abs(table.features[:, idx["rho_x"]] - 0.1)) < 1e-10


def test_constant_in_time_gives_zero_targets():
    frame = np.exp(-bin_centers(N_BINS) ** 2)
    table = build_feature_table([_toy_trajectory(np.tile(frame, (8, 1)))],
                                stop_threshold=1.0)
    assert np.max(np.abs(table.targets)) == 0.0


def test_frame_bookkeeping_row_count():
    rng = np.random.default_rng(0)
    dens = 0.5 + 0.01 * rng.uniform(size=(58, N_BINS))
    table = build_feature_table([_toy_trajectory(dens)], stop_threshold=1.0)
    assert table.n_rows == 55 * 79
    assert set(np.unique(table.frame)) == set(range(2, 57))


def test_stop_threshold_truncates_frames():
    x = bin_centers(N_BINS)
    calm = np.exp(-((x - 0.05) ** 2) / 0.08)
    calm /= np.trapezoid(calm, x)
    tipped = np.exp(-((x - 0.8) ** 2) / 0.02)
    tipped /= np.trapezoid(tipped, x)
    dens = np.vstack([np.tile(calm, (10, 1)), np.tile(tipped, (5, 1))])
    table = build_feature_table([_toy_trajectory(dens)])
    # frames 10+ have |mean| >= 0.4 and never appear, frame 9 lacks a target
    assert table.frame.max() == 8


def test_short_trajectory_skipped_with_warning():
    frame = np.exp(-bin_centers(N_BINS) ** 2)
    short = _toy_trajectory(np.tile(frame, (3, 1)))
    good = _toy_trajectory(np.tile(frame, (8, 1)))
    with pytest.warns(UserWarning):
        table = build_feature_table([short, good], stop_threshold=1.0)
    assert set(np.unique(table.replica)) == {1}
    with pytest.raises(ValueError):
        build_feature_table([short], stop_threshold=1.0)


def test_strip_integrals_match_trapezoid():
    x = bin_centers(N_BINS)
    frame = np.exp(-x**2)
    table = build_feature_table([_toy_trajectory(np.tile(frame, (6, 1)))],
                                stop_threshold=1.0)
    dx = x[1] - x[0]
    idx = dict((n, i) for i, n in enumerate(FEATURE_NAMES))
    assert np.allclose(table.features[:, idx["i_plus"]],
                       np.trapezoid(frame[-3:], dx=dx), atol=1e-15)
    assert np.allclose(table.features[:, idx["i_minus"]],
                       np.trapezoid(frame[:3], dx=dx), atol=1e-15)


def test_downsample_is_deterministic():
    rng = np.random.default_rng(1)
    dens = 0.5 + 0.01 * rng.uniform(size=(20, N_BINS))
    table = build_feature_table([_toy_trajectory(dens)], stop_threshold=1.0)
    small = downsample_table(table, n_max=100, seed=3)
    again = downsample_table(table, n_max=100, seed=3)
    assert small.n_rows == 100
    assert np.array_equal(small.features, again.features)
    assert downsample_table(table, n_max=10**6) is table


# ---------------------------------------------------------------------------
# learned tendency surrogate (trained on smooth solver data)


@pytest.fixture(scope="module")
def solver_table():
    grid = Grid1D.uniform(N_BINS)
    trajs = []
    for g in (38.0, 40.0, 42.0):
        params = AbmParams(g=g)
        for m0 in (0.0, 0.15):
            _, recs = integrate(gaussian_state(grid, m0, 0.3), params,
                                t_end=4.0, record_every=0.1)
            times = np.array([t for t, _ in recs])
            dens = smooth(np.array([r for _, r in recs]))
            trajs.append(_toy_trajectory(dens, times=times, g=g))
    return build_feature_table(trajs)


@pytest.fixture(scope="module")
def rff_surrogate(solver_table):
    return fit_ipde_rff(solver_table, mask=np.ones(7, dtype=bool),
                        n_neurons=300, seed=0)


def test_rff_surrogate_fits_in_sample(solver_table, rff_surrogate):
    rows = np.column_stack([solver_table.ard_matrix(),
                            solver_table.features[:, 7]])
    pred = forward(rff_surrogate.net, rows)[:, 0]
    assert r2_score(pred, solver_table.targets) > 0.98
    mae = np.mean(np.abs(pred - solver_table.targets))
    close = np.abs(pred - solver_table.targets) <= 5.0 * max(mae, 1e-15)
    assert close.mean() >= 0.95


def test_fnn_surrogate_fits_in_sample(solver_table):
    from tipping_lab.ml import TrainConfig
    small = downsample_table(solver_table, n_max=4000, seed=1)
    surr = fit_ipde_fnn(small, mask=np.ones(7, dtype=bool), hidden=(10, 10),
                        config=TrainConfig(max_iters=40, seed=2))
    rows = np.column_stack([small.ard_matrix(), small.features[:, 7]])
    pred = forward(surr.net, rows)[:, 0]
    assert r2_score(pred, small.targets) > 0.98
    assert surr.meta["train_seconds"] > 0


def test_ipde_rhs_matches_training_rows(solver_table, rff_surrogate):
    # pick one stored frame and re-evaluate it through the full-grid wrapper
    sel = (solver_table.replica == 2) & (solver_table.frame == 10)
    rho = np.zeros(N_BINS)
    rho[1:-1] = solver_table.features[sel, 1]
    g = solver_table.features[sel, 7][0]
    out = ipde_rhs(rho, g, rff_surrogate)
    assert out[0] == 0.0 and out[-1] == 0.0
    err = np.abs(out[1:-1] - solver_table.targets[sel])
    mae = rff_surrogate.meta["train_mae"]
    assert (err <= 5.0 * mae).mean() >= 0.9


def test_ipde_rhs_zero_density_bounded(rff_surrogate):
    out = ipde_rhs(np.zeros(N_BINS), 40.0, rff_surrogate)
    assert np.isfinite(out).all()
    assert np.max(np.abs(out)) < 10.0 * rff_surrogate.meta["target_max"]


def test_ipde_rhs_warns_on_extrapolation(rff_surrogate):
    spike = np.zeros(N_BINS)
    spike[N_BINS // 2] = 100.0
    with pytest.warns(UserWarning):
        ipde_rhs(spike, 40.0, rff_surrogate)


def test_heun_on_analytic_rhs_matches_lax_wendroff():
    grid = Grid1D.uniform(N_BINS)
    params = AbmParams(g=40.0)
    state0 = gaussian_state(grid, 0.1, 0.3)

    def analytic(rho, g):
        out = np.zeros_like(rho)
        out[1:-1] = fp_rhs(rho, g, params)
        return out

    heun = heun_integrate(state0.rho, 40.0, analytic, dt=1e-3, t_end=5.0,
                          record_every=1000)
    lw, _ = integrate(state0, params, t_end=5.0)
    assert np.max(np.abs(heun.fields[-1] - lw.rho)) < 1e-2
    assert np.max(np.abs(heun.masses - 1.0)) < 1e-3


def test_heun_step_halving_converges():
    grid = Grid1D.uniform(N_BINS)
    params = AbmParams(g=40.0)
    rho0 = gaussian_state(grid, 0.1, 0.3).rho

    def analytic(rho, g):
        out = np.zeros_like(rho)
        out[1:-1] = fp_rhs(rho, g, params)
        return out

    coarse = heun_integrate(rho0, 40.0, analytic, dt=2e-3, t_end=5.0,
                            record_every=10**9)
    fine = heun_integrate(rho0, 40.0, analytic, dt=1e-3, t_end=5.0,
                          record_every=10**9)
    assert np.max(np.abs(coarse.fields[-1] - fine.fields[-1])) < 1e-3


def test_heun_learned_surrogate_short_horizon(rff_surrogate):
    grid = Grid1D.uniform(N_BINS)
    rho0 = smooth(gaussian_state(grid, 0.1, 0.3).rho)
    traj = heun_integrate(rho0, 40.0, rff_surrogate, dt=1e-3, t_end=2.0,
                          record_every=200)
    assert np.all(traj.masses >= 0.9) and np.all(traj.masses <= 1.1)
    assert traj.fields.shape[0] == len(traj.times)


def test_heun_mass_guard_aborts():
    blow_up = lambda rho, g: np.full_like(rho, 1.0)
    with pytest.raises(NumericalError):
        heun_integrate(np.full(N_BINS, 0.5), 40.0, blow_up, dt=0.05,
                       t_end=10.0)


# ---------------------------------------------------------------------------
# coarse SDE surrogate


def _linear_sde_surrogate(drift_w, sigma):
    drift = DenseNet(sizes=[2, 1], weights=[np.array([[drift_w, 0.0]])],
                     biases=[np.zeros(1)], activations=["identity"],
                     trainable=[True])
    bias = -40.0 if sigma == 0.0 else np.log(np.expm1(sigma))
    diff = DenseNet(sizes=[2, 1], weights=[np.zeros((1, 2))],
                    biases=[np.array([bias])], activations=["softplus"],
                    trainable=[True])
    return SdeSurrogate(nets=SdeNets(drift=drift, diff=diff),
                        coarse_tag="mean", x_range=(-5.0, 5.0),
                        g_range=(0.0, 100.0))


def test_sde_simulate_deterministic_decay():
    surr = _linear_sde_surrogate(-1.0, 0.0)
    path = sde_simulate(surr, x0=1.0, g=40.0, h=1e-3, t_end=1.0, seed=0)
    assert not path.exploded
    assert np.max(np.abs(path.values - np.exp(-path.times))) < 1e-2


def test_sde_simulate_seed_reproducible():
    surr = _linear_sde_surrogate(-1.0, 0.3)
    a = sde_simulate(surr, 0.2, 40.0, h=0.01, t_end=2.0, seed=11)
    b = sde_simulate(surr, 0.2, 40.0, h=0.01, t_end=2.0, seed=11)
    assert np.array_equal(a.values, b.values)
    c = sde_simulate(surr, 0.2, 40.0, h=0.01, t_end=2.0, seed=12)
    assert not np.array_equal(a.values, c.values)


def test_sde_increment_variance_calibration():
    surr = _linear_sde_surrogate(0.0, 0.5)
    h = 0.01
    path = sde_simulate(surr, 0.0, 40.0, h=h, t_end=1000.0, seed=7)
    increments = np.diff(path.values)
    assert increments.size == 10**5
    var = increments.var()
    assert abs(var - h * 0.25) < 0.05 * h * 0.25


def test_sde_simulate_flags_explosion():
    surr = _linear_sde_surrogate(50.0, 0.0)
    with pytest.warns(UserWarning):
        path = sde_simulate(surr, 1.0, 40.0, h=0.25, t_end=100.0, seed=0)
    assert path.exploded
    assert path.values.size < 401
    assert np.isfinite(path.values).all()


def test_sde_simulate_warns_outside_box():
    surr = _linear_sde_surrogate(-1.0, 0.1)
    with pytest.warns(UserWarning):
        sde_simulate(surr, x0=7.0, g=40.0, h=0.01, t_end=0.1, seed=0)


# ---------------------------------------------------------------------------
# pair datasets


def test_pair_extraction_counts():
    times = 0.25 * np.arange(12)
    vals = np.sin(times)
    out = build_sde_dataset([(times, vals, 41.0)], h=0.25)
    assert len(out) == 1
    assert out[0].shape == (11, 4)
    assert np.allclose(out[0][:, 3], 41.0)
    assert np.allclose(out[0][:, 2], 0.25)


def test_pair_extraction_constant_series():
    times = 0.5 * np.arange(9)
    out = build_sde_dataset([(times, np.full(9, 0.3), 44.0)], h=0.5)
    assert np.max(np.abs(out[0][:, 1] - out[0][:, 0])) == 0.0


def test_pair_extraction_rejects_mixed_spacing():
    times = np.array([0.0, 0.25, 0.6, 0.85])
    with pytest.raises(ValueError):
        build_sde_dataset([(times, np.zeros(4), 40.0)], h=0.25)


# ---------------------------------------------------------------------------
# persistence


def test_feature_table_round_trip(tmp_path, solver_table):
    small = downsample_table(solver_table, n_max=500, seed=0)
    path = tmp_path / "table.csv"
    manifest = save_feature_table(path, small, meta={"note": "test"})
    assert manifest["meta"]["note"] == "test"
    back = load_feature_table(path)
    assert np.array_equal(back.features, small.features)
    assert np.array_equal(back.targets, small.targets)
    assert np.array_equal(back.replica, small.replica)
    assert np.array_equal(back.frame, small.frame)


def test_feature_table_tamper_detected(tmp_path, solver_table):
    small = downsample_table(solver_table, n_max=50, seed=0)
    path = tmp_path / "table.csv"
    save_feature_table(path, small)
    with open(path, "a") as fh:
        fh.write("0,0,0,0,0,0,0,0,0,0,0\n")
    with pytest.raises(DataIntegrityError):
        load_feature_table(path)


def test_sde_dataset_round_trip(tmp_path):
    times = 0.25 * np.arange(20)
    series = [(times, np.cos(times) * 0.1, 40.0),
              (times, np.sin(times) * 0.1, 45.0)]
    trajs = build_sde_dataset(series, h=0.25)
    path = tmp_path / "pairs.csv"
    save_sde_dataset(path, trajs, meta={"h": 0.25})
    back = load_sde_dataset(path)
    assert len(back) == 2
    for a, b in zip(trajs, back):
        assert np.array_equal(a, b)
